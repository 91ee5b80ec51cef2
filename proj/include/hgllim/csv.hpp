#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hgllim/error.hpp"
#include "hgllim/linalg.hpp"

namespace hgllim::csv {

/// Shortest round-trip decimal form, '.' separator regardless of locale.
inline std::string format(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

inline std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

/// Splits one CSV record; supports double-quoted fields with "" escapes.
inline std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

struct Table {
    std::string source;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line;  // 1-based source line of each row

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw DataError(source + ": missing column '" + name + "'");
    }
    bool has(const std::string& name) const {
        for (const auto& h : header)
            if (h == name) return true;
        return false;
    }
    std::size_t size() const { return rows.size(); }
};

/// Parses text with a header row. '#' lines and blank lines are skipped;
/// rows whose field count differs from the header are reported together.
inline Table parse(const std::string& text, const std::string& source = "csv") {
    Table t;
    t.source = source;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    std::vector<std::size_t> bad;
    while (std::getline(in, raw)) {
        ++lineno;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        if (raw.empty() || raw[0] == '#') continue;
        auto fields = split(raw);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size()) {
            bad.push_back(lineno);
            continue;
        }
        t.rows.push_back(std::move(fields));
        t.line.push_back(lineno);
    }
    if (t.header.empty()) throw DataError(source + ": no header row");
    if (!bad.empty()) {
        std::string msg = source + ": wrong field count on line(s)";
        for (std::size_t i = 0; i < bad.size() && i < 20; ++i) msg += " " + std::to_string(bad[i]);
        if (bad.size() > 20) msg += " ...";
        throw DataError(msg);
    }
    return t;
}

inline Table read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
}

inline bool parse_double(const std::string& s, double& out) {
    std::size_t b = 0, e = s.size();
    while (b < e && s[b] == ' ') ++b;
    while (e > b && s[e - 1] == ' ') --e;
    if (b < e && s[b] == '+') ++b;
    const auto res = std::from_chars(s.data() + b, s.data() + e, out);
    return res.ec == std::errc() && res.ptr == s.data() + e && b < e;
}

/// Numeric columns as a (#columns x #rows) matrix; every unparsable line is listed.
inline Matrix numeric(const Table& t, const std::vector<std::string>& columns) {
    std::vector<std::size_t> idx;
    for (const auto& c : columns) idx.push_back(t.column(c));
    Matrix out(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(t.size()));
    std::vector<std::size_t> bad;
    for (std::size_t r = 0; r < t.size(); ++r) {
        for (std::size_t j = 0; j < idx.size(); ++j) {
            double v = 0.0;
            if (!parse_double(t.rows[r][idx[j]], v) || !std::isfinite(v)) {
                bad.push_back(t.line[r]);
                break;
            }
            out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r)) = v;
        }
    }
    if (!bad.empty()) {
        std::string msg = t.source + ": non-numeric value on line(s)";
        for (std::size_t i = 0; i < bad.size() && i < 20; ++i) msg += " " + std::to_string(bad[i]);
        if (bad.size() > 20) msg += " ...";
        throw DataError(msg);
    }
    return out;
}

/// Builds CSV text with LF line endings.
class Writer {
public:
    void comment(const std::string& line) { out_ += "# " + line + "\n"; }
    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ += ',';
            out_ += quote(fields[i]);
        }
        out_ += '\n';
    }
    const std::string& str() const { return out_; }
    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write " + path);
        f << out_;
        if (!f) throw DataError("short write to " + path);
    }

private:
    std::string out_;
};

}  // namespace hgllim::csv
