#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hgllim/error.hpp"
#include "hgllim/linalg.hpp"

namespace hgllim {

using Index = Eigen::Index;

/// Output layout: L = observed_dim + latent_dim. latent_dim == 0 is plain GLLiM.
struct LatentSpec {
    Index observed_dim = 1;
    Index latent_dim = 0;

    Index total() const noexcept { return observed_dim + latent_dim; }
    bool hybrid() const noexcept { return latent_dim > 0; }
    friend bool operator==(const LatentSpec&, const LatentSpec&) = default;
};

/// Descriptor layout tags recorded in model and feature containers.
enum class FeatureLayout : std::uint32_t {
    generic = 0,
    phog_1888_v1 = 1,  // levels coarse->fine, blocks row-major, 2x2 cells row-major, 8 bins
};

/// How the observed output block is partitioned: the last `shift_dims`
/// observed entries are a bounding-box shift, the rest are angles.
struct ModelLayout {
    FeatureLayout feature_layout = FeatureLayout::generic;
    std::uint32_t shift_dims = 0;
    friend bool operator==(const ModelLayout&, const ModelLayout&) = default;
};

/// One affine component of the low-to-high mixture.
struct InverseComponent {
    double prior = 1.0;  // pi_k
    Vector mean;         // c_k, L
    Matrix cov;          // Gamma_k, L x L
    Matrix map;          // A_k, D x L
    Vector offset;       // b_k, D
    Vector noise;        // diagonal of Sigma_k, D
};

/// Parameters of the inverse (low-to-high) mixture of affine maps.
struct InverseModel {
    LatentSpec latent;
    Index input_dim = 0;
    ModelLayout layout;
    std::vector<InverseComponent> components;

    Index num_components() const noexcept { return static_cast<Index>(components.size()); }
    Index output_dim() const noexcept { return latent.total(); }
};

/// Throws ContractError describing the first violated invariant.
inline void validate(const InverseModel& m) {
    const Index L = m.latent.total();
    const Index D = m.input_dim;
    const Index Lt = m.latent.observed_dim;
    const Index Lw = m.latent.latent_dim;
    if (Lt < 1 || Lw < 0) throw ContractError("model: observed dimension must be >= 1");
    if (D < 1) throw ContractError("model: input dimension must be >= 1");
    if (m.components.empty()) throw ContractError("model: no components");
    if (m.layout.shift_dims > static_cast<std::uint32_t>(Lt)) throw ContractError("model: shift dims exceed observed dims");
    double total = 0.0;
    for (std::size_t k = 0; k < m.components.size(); ++k) {
        const auto& c = m.components[k];
        const std::string tag = "model component " + std::to_string(k) + ": ";
        if (c.mean.size() != L || c.cov.rows() != L || c.cov.cols() != L || c.map.rows() != D || c.map.cols() != L ||
            c.offset.size() != D || c.noise.size() != D)
            throw ContractError(tag + "dimension mismatch");
        if (!(c.prior > 0.0) || !std::isfinite(c.prior)) throw ContractError(tag + "prior must be positive");
        if (!(c.noise.array() > 0.0).all() || !c.noise.allFinite()) throw ContractError(tag + "noise must be positive");
        if (!c.mean.allFinite() || !c.cov.allFinite() || !c.map.allFinite() || !c.offset.allFinite())
            throw ContractError(tag + "non-finite parameters");
        if (Lw > 0) {
            if (!c.mean.tail(Lw).isZero(0.0)) throw ContractError(tag + "latent mean must be pinned to zero");
            if (c.cov.bottomRightCorner(Lw, Lw) != Matrix::Identity(Lw, Lw))
                throw ContractError(tag + "latent covariance must be pinned to identity");
            if (!c.cov.topRightCorner(Lt, Lw).isZero(0.0) || !c.cov.bottomLeftCorner(Lw, Lt).isZero(0.0))
                throw ContractError(tag + "covariance must be block diagonal");
        }
        total += c.prior;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ContractError("model: priors do not sum to one");
}

/// One component of the forward (high-to-low) predictive mixture.
struct ForwardComponent {
    double prior = 1.0;  // pi*_k
    Vector mean;         // c*_k, D
    Matrix map;          // A*_k, L x D
    Vector offset;       // b*_k, L
    Matrix cov;          // Sigma*_k, L x L
};

class ForwardModel;
ForwardModel derive_forward(const InverseModel& model, double condition_cap);

/// Forward predictive mixture derived from an InverseModel.
///
/// Gamma*_k = Sigma_k + A_k Gamma_k A_k^T is diagonal plus rank L. It is
/// held in that structured form and evaluated with the Woodbury identity
/// and the matrix determinant lemma; gamma_star() materializes it densely.
/// Instances are immutable and all caches are filled at construction.
class ForwardModel {
public:
    Index num_components() const noexcept { return static_cast<Index>(components_.size()); }
    Index input_dim() const noexcept { return input_dim_; }
    const LatentSpec& latent() const noexcept { return latent_; }
    const ModelLayout& layout() const noexcept { return layout_; }
    const ForwardComponent& component(Index k) const { return components_.at(static_cast<std::size_t>(k)); }

    Matrix gamma_star(Index k) const {
        const auto& s = cache_.at(static_cast<std::size_t>(k));
        Matrix g = s.map * s.gamma * s.map.transpose();
        g.diagonal() += s.noise;
        return symmetrized(g);
    }

    /// log N(y; c*_k, Gamma*_k).
    double log_input_density(Index k, const Vector& y) const {
        const auto& s = cache_[static_cast<std::size_t>(k)];
        const auto& f = components_[static_cast<std::size_t>(k)];
        const Vector u = y - f.mean;
        const Vector z = f.cov * (s.map.transpose() * u.cwiseQuotient(s.noise));
        const Vector r = u - s.map * z;
        const double quad = (r.array().square() / s.noise.array()).sum() + z.dot(s.gamma_factor.solve(z).col(0));
        return -0.5 * (static_cast<double>(input_dim_) * kLog2Pi + s.log_det_gamma_star + quad);
    }

    /// log N(x; A*_k y + b*_k, Sigma*_k).
    double log_output_density(Index k, const Vector& x, const Vector& y) const {
        const auto& f = components_[static_cast<std::size_t>(k)];
        return cache_[static_cast<std::size_t>(k)].cov_factor.log_gaussian(x, f.map * y + f.offset);
    }

private:
    friend ForwardModel derive_forward(const InverseModel& model, double condition_cap);

    struct Cache {
        Vector noise;         // diag Sigma_k
        Matrix map;           // A_k
        Matrix gamma;         // Gamma_k
        SpdFactor gamma_factor;
        SpdFactor cov_factor;  // Sigma*_k
        double log_det_gamma_star = 0.0;
    };

    LatentSpec latent_;
    ModelLayout layout_;
    Index input_dim_ = 0;
    std::vector<ForwardComponent> components_;
    std::vector<Cache> cache_;
};

/// Analytic inverse-to-forward conversion.
inline ForwardModel derive_forward(const InverseModel& model, double condition_cap = kDefaultConditionCap) {
    validate(model);
    ForwardModel fwd;
    fwd.latent_ = model.latent;
    fwd.layout_ = model.layout;
    fwd.input_dim_ = model.input_dim;
    for (std::size_t k = 0; k < model.components.size(); ++k) {
        const auto& c = model.components[k];
        const auto kk = static_cast<std::ptrdiff_t>(k);
        const double nmin = c.noise.minCoeff();
        const double nmax = c.noise.maxCoeff();
        if (nmax / nmin > condition_cap) throw IllConditionedError("derive_forward: noise covariance", kk);

        ForwardModel::Cache s;
        s.noise = c.noise;
        s.map = c.map;
        s.gamma = c.cov;
        s.gamma_factor = SpdFactor::factor(c.cov, "derive_forward: prior covariance", kk, condition_cap);
        const Matrix gamma_inv = s.gamma_factor.inverse();
        const Matrix weighted = c.noise.cwiseInverse().asDiagonal() * c.map;  // Sigma^-1 A
        const Matrix precision = gamma_inv + c.map.transpose() * weighted;
        const SpdFactor pf = SpdFactor::factor(precision, "derive_forward: posterior precision", kk, condition_cap);

        ForwardComponent f;
        f.prior = c.prior;
        f.mean = c.map * c.mean + c.offset;
        f.cov = pf.inverse();
        f.map = f.cov * weighted.transpose();
        f.offset = f.cov * (gamma_inv * c.mean - weighted.transpose() * c.offset);

        s.cov_factor = SpdFactor::factor(f.cov, "derive_forward: forward covariance", kk, condition_cap);
        s.log_det_gamma_star = c.noise.array().log().sum() + s.gamma_factor.log_det() + pf.log_det();
        fwd.components_.push_back(std::move(f));
        fwd.cache_.push_back(std::move(s));
    }
    return fwd;
}

/// log pi*_k + log N(y; c*_k, Gamma*_k) for every k.
inline Vector forward_log_marginals(const ForwardModel& fwd, const Vector& y) {
    if (y.size() != fwd.input_dim())
        throw ContractError("forward: input has dimension " + std::to_string(y.size()) + ", model expects " +
                            std::to_string(fwd.input_dim()));
    if (!y.allFinite()) throw DegenerateInputError("forward: non-finite input");
    Vector out(fwd.num_components());
    for (Index k = 0; k < fwd.num_components(); ++k)
        out[k] = std::log(fwd.component(k).prior) + fwd.log_input_density(k, y);
    return out;
}

/// Posterior component weights nu*_k(y), computed in the log domain.
inline Vector forward_weights(const ForwardModel& fwd, const Vector& y) {
    const Vector logp = forward_log_marginals(fwd, y);
    const double norm = log_sum_exp(logp);
    if (!std::isfinite(norm)) throw DegenerateInputError("forward_weights: every component density underflowed");
    return (logp.array() - norm).exp().matrix();
}

/// E[x | y] under the forward mixture. Entries [0, L_t) are the observed
/// prediction; the trailing L_w entries are latent coordinates (nuisance).
inline Vector predict_mean(const ForwardModel& fwd, const Vector& y) {
    const Vector nu = forward_weights(fwd, y);
    Vector x = Vector::Zero(fwd.latent().total());
    for (Index k = 0; k < fwd.num_components(); ++k) {
        const auto& f = fwd.component(k);
        x += nu[k] * (f.map * y + f.offset);
    }
    return x;
}

/// log p(x, y) = log sum_k pi_k N(y; A_k x + b_k, Sigma_k) N(x; c_k, Gamma_k).
inline double joint_log_density(const InverseModel& model, const Vector& x, const Vector& y) {
    if (x.size() != model.output_dim() || y.size() != model.input_dim)
        throw ContractError("joint_log_density: dimension mismatch");
    Vector terms(model.num_components());
    for (Index k = 0; k < model.num_components(); ++k) {
        const auto& c = model.components[static_cast<std::size_t>(k)];
        const SpdFactor g = SpdFactor::factor(c.cov, "joint_log_density: prior covariance", k);
        terms[k] = std::log(c.prior) + log_gaussian_diag(y, c.map * x + c.offset, c.noise) + g.log_gaussian(x, c.mean);
    }
    return log_sum_exp(terms);
}

/// log p(y) + log p(x | y) from the forward parameters.
inline double forward_joint_log_density(const ForwardModel& fwd, const Vector& x, const Vector& y) {
    if (x.size() != fwd.latent().total()) throw ContractError("forward_joint_log_density: dimension mismatch");
    Vector terms = forward_log_marginals(fwd, y);
    for (Index k = 0; k < fwd.num_components(); ++k) terms[k] += fwd.log_output_density(k, x, y);
    return log_sum_exp(terms);
}

}  // namespace hgllim
