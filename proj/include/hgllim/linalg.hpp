#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "hgllim/error.hpp"

namespace hgllim {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)

/// Condition-number cap applied to every SPD factorization.
inline constexpr double kDefaultConditionCap = 1e14;

/// Pairwise summation; the result does not depend on how the caller chunked work.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 16) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double pairwise_sum(const Vector& v) { return pairwise_sum(std::span<const double>(v.data(), v.size())); }

/// log(sum(exp(v))). Returns -inf when every entry is -inf.
inline double log_sum_exp(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

inline double log_sum_exp(const Vector& v) { return log_sum_exp(std::span<const double>(v.data(), v.size())); }

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Cholesky factor of a symmetric positive-definite matrix.
///
/// Factorization is attempted on the matrix as given; on failure (or when
/// the squared ratio of extreme Cholesky pivots exceeds the condition cap)
/// a diagonal jitter of 1e-8 * trace / dim is added and the attempt is
/// repeated, growing the jitter tenfold each time, for at most three retries.
class SpdFactor {
public:
    SpdFactor() = default;

    static SpdFactor factor(const Matrix& m, const std::string& what, std::ptrdiff_t component = -1,
                            double condition_cap = kDefaultConditionCap) {
        if (m.rows() != m.cols()) throw ContractError(what + ": matrix is not square");
        SpdFactor f;
        if (m.rows() == 0) return f;
        if (!m.allFinite()) throw IllConditionedError(what + ": non-finite entries", component);
        const Matrix sym = symmetrized(m);
        const double base = std::max(std::abs(sym.trace()) / static_cast<double>(sym.rows()),
                                     std::numeric_limits<double>::min());
        for (int attempt = 0; attempt <= 3; ++attempt) {
            Matrix trial = sym;
            double jitter = 0.0;
            if (attempt > 0) {
                jitter = 1e-8 * base * std::pow(10.0, attempt - 1);
                trial.diagonal().array() += jitter;
            }
            f.llt_.compute(trial);
            if (f.llt_.info() != Eigen::Success) continue;
            const auto d = f.llt_.matrixLLT().diagonal();
            const double lo = d.minCoeff();
            const double hi = d.maxCoeff();
            if (!(lo > 0.0) || !std::isfinite(hi)) continue;
            if ((hi / lo) * (hi / lo) > condition_cap) continue;
            f.jitter_ = jitter;
            f.logdet_ = 2.0 * d.array().log().sum();
            f.dim_ = trial.rows();
            return f;
        }
        throw IllConditionedError(what + ": matrix is not numerically positive definite", component);
    }

    Eigen::Index dim() const noexcept { return dim_; }
    double log_det() const noexcept { return logdet_; }
    double jitter() const noexcept { return jitter_; }

    /// Lower-triangular factor L with M = L L^T.
    Matrix lower() const { return dim_ == 0 ? Matrix() : Matrix(llt_.matrixL()); }

    template <typename Rhs>
    Matrix solve(const Eigen::MatrixBase<Rhs>& rhs) const {
        if (dim_ == 0) return Matrix(0, rhs.cols());
        return llt_.solve(rhs);
    }

    Matrix inverse() const { return symmetrized(solve(Matrix::Identity(dim_, dim_))); }

    /// Squared Mahalanobis norm v^T M^-1 v.
    double mahalanobis(const Vector& v) const {
        if (dim_ == 0) return 0.0;
        const Vector w = llt_.matrixL().solve(v);
        return w.squaredNorm();
    }

    /// log N(x; mean, M).
    double log_gaussian(const Vector& x, const Vector& mean) const {
        return -0.5 * (static_cast<double>(dim_) * kLog2Pi + logdet_ + mahalanobis(x - mean));
    }

private:
    Eigen::LLT<Matrix> llt_;
    Eigen::Index dim_ = 0;
    double logdet_ = 0.0;
    double jitter_ = 0.0;
};

/// True when a Cholesky factorization of the symmetrized matrix succeeds unjittered.
inline bool is_spd(const Matrix& m) {
    if (m.rows() != m.cols()) return false;
    if (m.rows() == 0) return true;
    Eigen::LLT<Matrix> llt(symmetrized(m));
    return llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all();
}

/// log N(x; mean, diag(var)).
inline double log_gaussian_diag(const Vector& x, const Vector& mean, const Vector& var) {
    const auto r = (x - mean).array();
    return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + var.array().log().sum() + (r.square() / var.array()).sum());
}

}  // namespace hgllim
