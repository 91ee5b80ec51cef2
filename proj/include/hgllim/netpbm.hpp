#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "hgllim/error.hpp"
#include "hgllim/hog.hpp"

namespace hgllim::netpbm {

namespace detail {

class Reader {
public:
    explicit Reader(std::string bytes) : s_(std::move(bytes)) {}

    void skip_space() {
        while (pos_ < s_.size()) {
            if (s_[pos_] == '#') {
                while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    long number(const std::string& what) {
        skip_space();
        const std::size_t start = pos_;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        if (start == pos_) throw DataError("netpbm: expected " + what);
        return std::stol(s_.substr(start, pos_ - start));
    }

    std::string take(std::size_t n) {
        if (pos_ + n > s_.size()) throw DataError("netpbm: truncated pixel data");
        std::string out = s_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    void single_space() {
        if (pos_ >= s_.size() || !std::isspace(static_cast<unsigned char>(s_[pos_])))
            throw DataError("netpbm: malformed header");
        ++pos_;
    }

    const std::string& bytes() const { return s_; }

private:
    std::string s_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Decodes P2/P3 (ASCII) and P5/P6 (binary) PGM/PPM with maxval up to 65535.
inline Image decode(std::string bytes) {
    detail::Reader in(std::move(bytes));
    if (in.bytes().size() < 2 || in.bytes()[0] != 'P') throw DataError("netpbm: missing magic");
    const char kind = in.bytes()[1];
    if (kind != '2' && kind != '3' && kind != '5' && kind != '6') throw DataError("netpbm: unsupported variant");
    in.take(2);
    Image img;
    img.width = in.number("width");
    img.height = in.number("height");
    const long maxval = in.number("maxval");
    if (img.width < 1 || img.height < 1 || maxval < 1 || maxval > 65535) throw DataError("netpbm: bad header values");
    img.channels = (kind == '3' || kind == '6') ? 3 : 1;
    const auto count = static_cast<std::size_t>(img.width * img.height * img.channels);
    img.pixels.resize(count);
    const double scale = 1.0 / static_cast<double>(maxval);
    if (kind == '2' || kind == '3') {
        for (std::size_t i = 0; i < count; ++i) img.pixels[i] = static_cast<double>(in.number("sample")) * scale;
    } else {
        in.single_space();
        const std::size_t width = maxval > 255 ? 2 : 1;
        const std::string raw = in.take(count * width);
        for (std::size_t i = 0; i < count; ++i) {
            unsigned v = static_cast<unsigned char>(raw[i * width]);
            if (width == 2) v = (v << 8) | static_cast<unsigned char>(raw[i * width + 1]);
            img.pixels[i] = static_cast<double>(v) * scale;
        }
    }
    for (double& p : img.pixels) p = std::min(p, 1.0);
    return img;
}

inline Image read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open image " + path);
    return decode(std::string(std::istreambuf_iterator<char>(f), {}));
}

/// Writes 8-bit binary PGM (1 channel) or PPM (3 channels).
inline void write(const std::string& path, const Image& img) {
    img.check();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write image " + path);
    f << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
    for (double p : img.pixels) f.put(static_cast<char>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)));
    if (!f) throw DataError("short write to " + path);
}

}  // namespace hgllim::netpbm
