#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "json.hpp"

#include "hgllim/error.hpp"
#include "hgllim/model.hpp"

namespace hgllim::io {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::uint32_t kFeatureFormatVersion = 1;

/// Feature matrix container: descriptors stored one sample per row.
struct FeatureFile {
    FeatureLayout layout = FeatureLayout::generic;
    Matrix features;  // D x N, column n is sample n
};

namespace detail {

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

class Writer {
public:
    void magic(std::string_view m) { out_.append(m); }
    template <class T>
    void scalar(T v) {
        v = to_little(v);
        out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void u32(std::uint32_t v) { scalar(v); }
    void u64(std::uint64_t v) { scalar(v); }
    void f64(double v) { scalar(v); }
    void vector(const Vector& v) {
        for (Index i = 0; i < v.size(); ++i) f64(v[i]);
    }
    void row_major(const Matrix& m) {
        for (Index r = 0; r < m.rows(); ++r)
            for (Index c = 0; c < m.cols(); ++c) f64(m(r, c));
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    Reader(std::string_view bytes, std::string what) : in_(bytes), what_(std::move(what)) {}

    void magic(std::string_view m) {
        if (in_.substr(0, m.size()) != m)
            throw DataError(what_ + ": not a " + std::string(m) + " container (bad magic)");
        in_.remove_prefix(m.size());
    }
    template <class T>
    T scalar() {
        if (in_.size() < sizeof(T)) throw DataError(what_ + ": truncated");
        T v;
        std::memcpy(&v, in_.data(), sizeof(T));
        in_.remove_prefix(sizeof(T));
        return to_little(v);
    }
    std::uint32_t u32() { return scalar<std::uint32_t>(); }
    std::uint64_t u64() { return scalar<std::uint64_t>(); }
    double f64() { return scalar<double>(); }
    Index dim(const char* name, std::uint64_t limit = std::uint64_t{1} << 32) {
        const std::uint64_t v = u64();
        if (v > limit) throw DataError(what_ + ": implausible " + name + " " + std::to_string(v));
        return static_cast<Index>(v);
    }
    Vector vector(Index n) {
        need(n);
        Vector v(n);
        for (Index i = 0; i < n; ++i) v[i] = f64();
        return v;
    }
    Matrix row_major(Index rows, Index cols) {
        need(rows * cols);
        Matrix m(rows, cols);
        for (Index r = 0; r < rows; ++r)
            for (Index c = 0; c < cols; ++c) m(r, c) = f64();
        return m;
    }
    void finish() const {
        if (!in_.empty()) throw DataError(what_ + ": " + std::to_string(in_.size()) + " trailing bytes");
    }

private:
    void need(Index doubles) const {
        if (static_cast<std::uint64_t>(in_.size()) / 8 < static_cast<std::uint64_t>(doubles))
            throw DataError(what_ + ": truncated");
    }
    std::string_view in_;
    std::string what_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    return {std::istreambuf_iterator<char>(f), {}};
}

inline void spit(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("short write to " + path);
}

}  // namespace detail

/// "HGLM" | u32 version | u32 feature layout | u32 shift dims | u64 K, D, L_t, L_w |
/// per component: c, Gamma, pi, A, b, diag(Sigma) as little-endian f64, matrices row-major.
inline std::string encode_model(const InverseModel& m) {
    validate(m);
    detail::Writer w;
    w.magic("HGLM");
    w.u32(kModelFormatVersion);
    w.u32(static_cast<std::uint32_t>(m.layout.feature_layout));
    w.u32(m.layout.shift_dims);
    w.u64(static_cast<std::uint64_t>(m.num_components()));
    w.u64(static_cast<std::uint64_t>(m.input_dim));
    w.u64(static_cast<std::uint64_t>(m.latent.observed_dim));
    w.u64(static_cast<std::uint64_t>(m.latent.latent_dim));
    for (const auto& c : m.components) {
        w.vector(c.mean);
        w.row_major(c.cov);
        w.f64(c.prior);
        w.row_major(c.map);
        w.vector(c.offset);
        w.vector(c.noise);
    }
    return w.take();
}

inline InverseModel decode_model(std::string_view bytes) {
    detail::Reader r(bytes, "model file");
    r.magic("HGLM");
    const std::uint32_t version = r.u32();
    if (version != kModelFormatVersion)
        throw DataError("model file: unsupported format version " + std::to_string(version));
    InverseModel m;
    const std::uint32_t layout = r.u32();
    if (layout > static_cast<std::uint32_t>(FeatureLayout::phog_1888_v1))
        throw DataError("model file: unknown feature layout " + std::to_string(layout));
    m.layout.feature_layout = static_cast<FeatureLayout>(layout);
    m.layout.shift_dims = r.u32();
    const Index K = r.dim("K", 1u << 20);
    m.input_dim = r.dim("D", 1u << 24);
    m.latent.observed_dim = r.dim("L_t", 1u << 12);
    m.latent.latent_dim = r.dim("L_w", 1u << 12);
    const Index L = m.latent.total();
    const Index D = m.input_dim;
    for (Index k = 0; k < K; ++k) {
        InverseComponent c;
        c.mean = r.vector(L);
        c.cov = r.row_major(L, L);
        c.prior = r.f64();
        c.map = r.row_major(D, L);
        c.offset = r.vector(D);
        c.noise = r.vector(D);
        m.components.push_back(std::move(c));
    }
    r.finish();
    try {
        validate(m);
    } catch (const ContractError& e) {
        throw DataError(std::string("model file: ") + e.what());
    }
    return m;
}

inline void save_model(const std::string& path, const InverseModel& m) { detail::spit(path, encode_model(m)); }
inline InverseModel load_model(const std::string& path) { return decode_model(detail::slurp(path)); }

/// "HGFX" | u32 version | u32 feature layout | u64 N | u64 D | N x D row-major f64.
inline std::string encode_features(const FeatureFile& f) {
    detail::Writer w;
    w.magic("HGFX");
    w.u32(kFeatureFormatVersion);
    w.u32(static_cast<std::uint32_t>(f.layout));
    w.u64(static_cast<std::uint64_t>(f.features.cols()));
    w.u64(static_cast<std::uint64_t>(f.features.rows()));
    w.row_major(f.features.transpose());
    return w.take();
}

inline FeatureFile decode_features(std::string_view bytes) {
    detail::Reader r(bytes, "feature file");
    r.magic("HGFX");
    const std::uint32_t version = r.u32();
    if (version != kFeatureFormatVersion)
        throw DataError("feature file: unsupported format version " + std::to_string(version));
    FeatureFile f;
    const std::uint32_t layout = r.u32();
    if (layout > static_cast<std::uint32_t>(FeatureLayout::phog_1888_v1))
        throw DataError("feature file: unknown feature layout " + std::to_string(layout));
    f.layout = static_cast<FeatureLayout>(layout);
    const Index N = r.dim("N");
    const Index D = r.dim("D", 1u << 24);
    f.features = r.row_major(N, D).transpose();
    r.finish();
    return f;
}

inline void save_features(const std::string& path, const FeatureFile& f) { detail::spit(path, encode_features(f)); }
inline FeatureFile load_features(const std::string& path) { return decode_features(detail::slurp(path)); }

/// Human-readable mirror of the binary model, for debugging.
inline nlohmann::json model_to_json(const InverseModel& m) {
    auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    auto mat = [&](const Matrix& a) {
        nlohmann::json rows = nlohmann::json::array();
        for (Index r = 0; r < a.rows(); ++r) rows.push_back(vec(a.row(r).transpose()));
        return rows;
    };
    nlohmann::json j;
    j["format"] = "HGLM";
    j["version"] = kModelFormatVersion;
    j["feature_layout"] = static_cast<std::uint32_t>(m.layout.feature_layout);
    j["shift_dims"] = m.layout.shift_dims;
    j["K"] = m.num_components();
    j["D"] = m.input_dim;
    j["L_t"] = m.latent.observed_dim;
    j["L_w"] = m.latent.latent_dim;
    j["components"] = nlohmann::json::array();
    for (const auto& c : m.components) {
        nlohmann::json cj;
        cj["mean"] = vec(c.mean);
        cj["cov"] = mat(c.cov);
        cj["prior"] = c.prior;
        cj["map"] = mat(c.map);
        cj["offset"] = vec(c.offset);
        cj["noise"] = vec(c.noise);
        j["components"].push_back(std::move(cj));
    }
    return j;
}

}  // namespace hgllim::io
