#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "hgllim/error.hpp"
#include "hgllim/linalg.hpp"

namespace hgllim {

/// Interleaved raster with intensities in [0, 1]; 1 (grey) or 3 (RGB) channels.
struct Image {
    Eigen::Index width = 0;
    Eigen::Index height = 0;
    int channels = 1;
    std::vector<double> pixels;  // row-major, channel-interleaved

    double at(Eigen::Index x, Eigen::Index y, int ch = 0) const {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + ch)];
    }

    void check() const {
        if (width < 1 || height < 1) throw ContractError("image: empty raster");
        if (channels != 1 && channels != 3) throw ContractError("image: expected 1 or 3 channels");
        if (pixels.size() != static_cast<std::size_t>(width * height * channels))
            throw ContractError("image: pixel buffer does not match extent");
    }
};

/// Axis-aligned rectangle in pixel units; (x, y) is the top-left corner.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    Box shifted(double dx, double dy) const { return {x + dx, y + dy, w, h}; }
    bool intersects(const Image& img) const {
        return x < static_cast<double>(img.width) && y < static_cast<double>(img.height) && x + w > 0.0 && y + h > 0.0;
    }
};

inline constexpr Eigen::Index kPatchSize = 64;
inline constexpr int kOrientationBins = 8;
inline constexpr std::array<int, 3> kCellSizes = {32, 16, 8};
inline constexpr double kBlockEpsilon = 1e-5;

constexpr Eigen::Index phog_dim() {
    Eigen::Index d = 0;
    for (int s : kCellSizes) {
        const Eigen::Index blocks = kPatchSize / s - 1;
        d += blocks * blocks * 4 * kOrientationBins;
    }
    return d;
}
inline constexpr Eigen::Index kPhogDim = phog_dim();
static_assert(kPhogDim == 1888);

/// 64 x 64 grey patch, row-major in the matrix sense: patch(row, col).
using Patch = Matrix;

namespace detail {

/// Mirror index into [0, n) without repeating the border pixel.
inline Eigen::Index reflect(Eigen::Index i, Eigen::Index n) {
    if (n == 1) return 0;
    const Eigen::Index period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

inline Matrix luma(const Image& img) {
    Matrix g(img.height, img.width);
    for (Eigen::Index y = 0; y < img.height; ++y)
        for (Eigen::Index x = 0; x < img.width; ++x)
            g(y, x) = img.channels == 1 ? img.at(x, y)
                                        : 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
    return g;
}

}  // namespace detail

/// 256-level histogram equalization. A single-level input is returned unchanged.
inline Patch equalize(const Patch& p) {
    std::array<Eigen::Index, 256> hist{};
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> level(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const int q = static_cast<int>(std::lround(std::clamp(p.data()[i], 0.0, 1.0) * 255.0));
        level.data()[i] = q;
        ++hist[static_cast<std::size_t>(q)];
    }
    std::array<Eigen::Index, 256> cdf{};
    Eigen::Index run = 0;
    Eigen::Index cdf_min = -1;
    for (std::size_t b = 0; b < 256; ++b) {
        run += hist[b];
        cdf[b] = run;
        if (cdf_min < 0 && hist[b] > 0) cdf_min = run;
    }
    const Eigen::Index total = p.size();
    Patch out(p.rows(), p.cols());
    if (cdf_min == total) {
        for (Eigen::Index i = 0; i < p.size(); ++i) out.data()[i] = level.data()[i] / 255.0;
        return out;
    }
    const double denom = static_cast<double>(total - cdf_min);
    for (Eigen::Index i = 0; i < p.size(); ++i)
        out.data()[i] = static_cast<double>(cdf[static_cast<std::size_t>(level.data()[i])] - cdf_min) / denom;
    return out;
}

/// Crop `box` out of `img`, convert to grey, resample to 64 x 64 and equalize.
///
/// Samples falling outside the image are mirrored back in, which is the
/// same as cropping the clamped box and mirror-padding the deficit.
inline Patch preprocess(const Image& img, const Box& box) {
    img.check();
    if (!std::isfinite(box.x) || !std::isfinite(box.y) || !std::isfinite(box.w) || !std::isfinite(box.h))
        throw ContractError("preprocess: non-finite box");
    if (box.w <= 0.0 || box.h <= 0.0 || box.w * box.h < 4.0) throw ContractError("preprocess: box area below 4 px^2");
    if (!box.intersects(img)) throw OutOfBoundsError("preprocess: box does not intersect the image");
    const Matrix grey = detail::luma(img);
    Patch p(kPatchSize, kPatchSize);
    const double sx = box.w / static_cast<double>(kPatchSize);
    const double sy = box.h / static_cast<double>(kPatchSize);
    for (Eigen::Index r = 0; r < kPatchSize; ++r) {
        const double fy = box.y + (static_cast<double>(r) + 0.5) * sy - 0.5;
        const double y0 = std::floor(fy);
        const double ty = fy - y0;
        const auto iy = static_cast<Eigen::Index>(y0);
        const Eigen::Index ya = detail::reflect(iy, img.height);
        const Eigen::Index yb = detail::reflect(iy + 1, img.height);
        for (Eigen::Index c = 0; c < kPatchSize; ++c) {
            const double fx = box.x + (static_cast<double>(c) + 0.5) * sx - 0.5;
            const double x0 = std::floor(fx);
            const double tx = fx - x0;
            const auto ix = static_cast<Eigen::Index>(x0);
            const Eigen::Index xa = detail::reflect(ix, img.width);
            const Eigen::Index xb = detail::reflect(ix + 1, img.width);
            const double top = (1.0 - tx) * grey(ya, xa) + tx * grey(ya, xb);
            const double bottom = (1.0 - tx) * grey(yb, xa) + tx * grey(yb, xb);
            p(r, c) = (1.0 - ty) * top + ty * bottom;
        }
    }
    return equalize(p);
}

namespace detail {

/// HOG at one cell size: (n-1)^2 blocks of 2 x 2 cells, row-major, L2-normalized.
inline void hog_level(const Matrix& mag, const Matrix& bin_pos, int cell, double* out) {
    const Eigen::Index n = kPatchSize / cell;
    std::vector<double> hist(static_cast<std::size_t>(n * n * kOrientationBins), 0.0);
    auto vote = [&](Eigen::Index cy, Eigen::Index cx, int b, double w) {
        if (cy < 0 || cx < 0 || cy >= n || cx >= n) return;
        hist[static_cast<std::size_t>((cy * n + cx) * kOrientationBins + b)] += w;
    };
    for (Eigen::Index r = 0; r < kPatchSize; ++r) {
        const double v = (static_cast<double>(r) + 0.5) / cell - 0.5;
        const double v0 = std::floor(v);
        const double tv = v - v0;
        const auto cy = static_cast<Eigen::Index>(v0);
        for (Eigen::Index c = 0; c < kPatchSize; ++c) {
            const double m = mag(r, c);
            if (m == 0.0) continue;
            const double u = (static_cast<double>(c) + 0.5) / cell - 0.5;
            const double u0 = std::floor(u);
            const double tu = u - u0;
            const auto cx = static_cast<Eigen::Index>(u0);
            const double o = bin_pos(r, c);
            const double o0 = std::floor(o);
            const double to = o - o0;
            const int b0 = static_cast<int>(o0) % kOrientationBins;
            const int b1 = (b0 + 1) % kOrientationBins;
            const std::array<double, 4> ws = {(1 - tv) * (1 - tu), (1 - tv) * tu, tv * (1 - tu), tv * tu};
            const std::array<Eigen::Index, 4> ys = {cy, cy, cy + 1, cy + 1};
            const std::array<Eigen::Index, 4> xs = {cx, cx + 1, cx, cx + 1};
            for (int j = 0; j < 4; ++j) {
                if (ws[j] == 0.0) continue;
                vote(ys[j], xs[j], b0, m * ws[j] * (1.0 - to));
                if (to > 0.0) vote(ys[j], xs[j], b1, m * ws[j] * to);
            }
        }
    }
    constexpr int block_len = 4 * kOrientationBins;
    for (Eigen::Index by = 0; by + 1 < n; ++by) {
        for (Eigen::Index bx = 0; bx + 1 < n; ++bx) {
            double* blk = out + (by * (n - 1) + bx) * block_len;
            int i = 0;
            for (Eigen::Index dy = 0; dy < 2; ++dy)
                for (Eigen::Index dx = 0; dx < 2; ++dx)
                    for (int b = 0; b < kOrientationBins; ++b)
                        blk[i++] = hist[static_cast<std::size_t>(((by + dy) * n + bx + dx) * kOrientationBins + b)];
            double sq = 0.0;
            for (int j = 0; j < block_len; ++j) sq += blk[j] * blk[j];
            const double norm = std::sqrt(sq + kBlockEpsilon * kBlockEpsilon);
            for (int j = 0; j < block_len; ++j) blk[j] /= norm;
        }
    }
}

}  // namespace detail

/// Pyramid HOG of a 64 x 64 patch: cell sizes 32, 16, 8 concatenated coarse to fine.
///
/// Gradients use [-1, 0, 1] with replicated borders; orientation is unsigned,
/// with 8 bins centred on multiples of 22.5 degrees.
inline Vector phog(const Patch& patch) {
    if (patch.rows() != kPatchSize || patch.cols() != kPatchSize)
        throw ContractError("phog: patch must be 64x64, got " + std::to_string(patch.rows()) + "x" +
                            std::to_string(patch.cols()));
    if (!patch.allFinite()) throw ContractError("phog: non-finite patch");
    const Eigen::Index n = kPatchSize;
    Matrix mag(n, n), bin_pos(n, n);
    constexpr double bin_width = 180.0 / kOrientationBins;
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < n; ++c) {
            const double gx = patch(r, std::min(c + 1, n - 1)) - patch(r, std::max<Eigen::Index>(c - 1, 0));
            const double gy = patch(std::min(r + 1, n - 1), c) - patch(std::max<Eigen::Index>(r - 1, 0), c);
            mag(r, c) = std::hypot(gx, gy);
            double deg = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
            if (deg < 0.0) deg += 180.0;
            if (deg >= 180.0) deg -= 180.0;
            bin_pos(r, c) = deg / bin_width;
        }
    }
    Vector out(kPhogDim);
    double* dst = out.data();
    for (int s : kCellSizes) {
        detail::hog_level(mag, bin_pos, s, dst);
        const Eigen::Index blocks = kPatchSize / s - 1;
        dst += blocks * blocks * 4 * kOrientationBins;
    }
    return out;
}

/// preprocess + phog.
inline Vector extract_descriptor(const Image& img, const Box& box) { return phog(preprocess(img, box)); }

}  // namespace hgllim
