#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"

#include "hgllim/csv.hpp"
#include "hgllim/error.hpp"

namespace hgllim {

inline constexpr const char* kVersion = "0.1.0";

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

/// Hash of a sequence of files, each contributing its name length, name and contents.
inline std::string hash_files(const std::vector<std::string>& paths) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : paths) {
        std::ifstream f(p, std::ios::binary);
        if (!f) throw DataError("cannot open " + p);
        const std::string bytes{std::istreambuf_iterator<char>(f), {}};
        h = fnv1a(std::to_string(bytes.size()) + ":", h);
        h = fnv1a(bytes, h);
    }
    return hex64(h);
}

/// Everything needed to rerun an experiment: the command line plus the
/// resolved hyperparameters, inputs hash and tool version.
struct ExperimentManifest {
    std::string command;
    std::vector<std::string> argv;
    std::string dataset_hash;
    long long K = 0;
    long long L_t = 0;
    long long L_w = 0;
    std::string variant;
    double sigma_frac = 0.0;
    double epsilon = 0.0;
    std::vector<std::uint64_t> seeds;
    unsigned threads = 1;
    std::string version = kVersion;
    std::string started;  // UTC, ISO 8601
    double wall_seconds = 0.0;

    void stamp_start() {
        const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
        started = buf;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["command"] = command;
        j["argv"] = argv;
        j["dataset_hash"] = dataset_hash;
        j["K"] = K;
        j["L_t"] = L_t;
        j["L_w"] = L_w;
        j["variant"] = variant;
        j["sigma_frac"] = sigma_frac;
        j["epsilon"] = epsilon;
        j["seeds"] = seeds;
        j["threads"] = threads;
        j["version"] = version;
        j["started"] = started;
        j["wall_seconds"] = wall_seconds;
        return j;
    }

    /// One "# key=value" comment per field, for embedding at the top of a CSV report.
    void embed(csv::Writer& w) const {
        const nlohmann::json j = to_json();
        for (auto it = j.begin(); it != j.end(); ++it) w.comment(it.key() + "=" + it.value().dump());
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write " + path);
        f << to_json().dump(2) << '\n';
    }
};

}  // namespace hgllim
