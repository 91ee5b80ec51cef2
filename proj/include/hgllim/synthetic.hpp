#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "hgllim/error.hpp"
#include "hgllim/linalg.hpp"
#include "hgllim/model.hpp"
#include "hgllim/training_set.hpp"

namespace hgllim::synthetic {

/// Knobs for drawing a random, valid InverseModel.
struct RandomModelOptions {
    Index num_components = 3;
    Index input_dim = 20;
    LatentSpec latent{2, 0};
    double target_spread = 4.0;  // std of component centers c_k^t
    double target_scale = 1.0;   // std inside a component (Gamma_k^t ~ scale^2)
    double map_scale = 1.0;      // std of entries of A_k^t
    double latent_map_scale = 1.0;  // std of entries of A_k^w
    double offset_scale = 2.0;   // std of entries of b_k
    double noise_scale = 0.1;    // Sigma_k diagonal ~ noise_scale^2 * U(0.5, 1.5)
    bool equal_priors = false;
};

inline InverseModel random_model(const RandomModelOptions& opt, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0.5, 1.5);
    const Index lt = opt.latent.observed_dim;
    const Index lw = opt.latent.latent_dim;
    const Index L = lt + lw;
    const Index D = opt.input_dim;
    InverseModel m;
    m.latent = opt.latent;
    m.input_dim = D;
    double total = 0.0;
    for (Index k = 0; k < opt.num_components; ++k) {
        InverseComponent c;
        c.prior = opt.equal_priors ? 1.0 : u(rng);
        total += c.prior;
        c.mean = Vector::Zero(L);
        for (Index i = 0; i < lt; ++i) c.mean[i] = opt.target_spread * g(rng);
        Matrix q(lt, lt);
        for (Index i = 0; i < lt; ++i)
            for (Index j = 0; j < lt; ++j) q(i, j) = 0.3 * g(rng);
        c.cov = Matrix::Identity(L, L);
        c.cov.topLeftCorner(lt, lt) =
            opt.target_scale * opt.target_scale * symmetrized(q * q.transpose() + Matrix::Identity(lt, lt));
        c.map.resize(D, L);
        for (Index j = 0; j < L; ++j) {
            const double scale = j < lt ? opt.map_scale : opt.latent_map_scale;
            for (Index i = 0; i < D; ++i) c.map(i, j) = scale * g(rng);
        }
        c.offset.resize(D);
        for (Index i = 0; i < D; ++i) c.offset[i] = opt.offset_scale * g(rng);
        c.noise.resize(D);
        for (Index i = 0; i < D; ++i) c.noise[i] = opt.noise_scale * opt.noise_scale * u(rng);
        m.components.push_back(std::move(c));
    }
    for (auto& c : m.components) c.prior /= total;
    return m;
}

/// A model plus how many samples to draw from it.
struct GeneratorSpec {
    InverseModel model;
    std::uint64_t seed = 0;
    Index count = 0;
};

/// Observed pairs plus the hidden variables that produced them.
struct Sample {
    TrainingSet data;           // y_n and t_n
    std::vector<Index> component;  // z_n
    Matrix latent;              // w_n, L_w x N
    Matrix output;              // x_n = [t_n; w_n], L x N
};

/// Draws z ~ Cat(pi), x ~ N(c_z, Gamma_z), y = A_z x + b_z + e, e ~ N(0, Sigma_z).
inline Sample sample(const GeneratorSpec& spec) {
    validate(spec.model);
    const auto& m = spec.model;
    const Index N = spec.count;
    const Index L = m.latent.total();
    const Index lt = m.latent.observed_dim;
    const Index D = m.input_dim;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> g;
    std::vector<double> priors;
    for (const auto& c : m.components) priors.push_back(c.prior);
    std::discrete_distribution<Index> pick(priors.begin(), priors.end());
    std::vector<Matrix> chol;
    for (const auto& c : m.components) chol.push_back(Eigen::LLT<Matrix>(c.cov).matrixL());

    Sample out;
    out.data.inputs.resize(D, N);
    out.data.targets.resize(lt, N);
    out.output.resize(L, N);
    out.latent.resize(m.latent.latent_dim, N);
    out.component.resize(static_cast<std::size_t>(N));
    for (Index n = 0; n < N; ++n) {
        const Index k = pick(rng);
        const auto& c = m.components[static_cast<std::size_t>(k)];
        Vector xi(L);
        for (Index i = 0; i < L; ++i) xi[i] = g(rng);
        const Vector x = c.mean + chol[static_cast<std::size_t>(k)] * xi;
        Vector e(D);
        for (Index i = 0; i < D; ++i) e[i] = std::sqrt(c.noise[i]) * g(rng);
        out.component[static_cast<std::size_t>(n)] = k;
        out.output.col(n) = x;
        out.latent.col(n) = x.tail(m.latent.latent_dim);
        out.data.targets.col(n) = x.head(lt);
        out.data.inputs.col(n) = c.map * x + c.offset + e;
    }
    return out;
}

/// Brute-force posterior summaries from a dense grid over w.
struct OraclePosterior {
    Vector resp;          // p(Z = k | y, t)
    Matrix latent_mean;   // E[w | y, t, Z = k], L_w x K
    double log_marginal = 0.0;  // log p(y, t)
    double normalization_error = 0.0;
};

/// Grid evaluation of p(w, Z = k | y, t) by direct evaluation of the joint.
///
/// The grid spans [-half_width, half_width]^L_w with `points` nodes per
/// axis. The normalization error compares the integral on the full grid
/// against the grid with every other node removed, together with the
/// integral of the N(0, I) prior; above 1e-3 the oracle refuses.
inline OraclePosterior oracle_posterior(const InverseModel& m, const Vector& y, const Vector& t, Index points = 401,
                                        double half_width = 8.0) {
    validate(m);
    const Index lw = m.latent.latent_dim;
    const Index lt = m.latent.observed_dim;
    const Index K = m.num_components();
    if (lw > 2) throw ContractError("oracle_posterior: L_w must be <= 2");
    if (m.input_dim > 8) throw ContractError("oracle_posterior: D must be <= 8");
    if (y.size() != m.input_dim || t.size() != lt) throw ContractError("oracle_posterior: dimension mismatch");
    if (points < 5 || points % 2 == 0) throw ContractError("oracle_posterior: points must be odd and >= 5");

    const double h = 2.0 * half_width / static_cast<double>(points - 1);
    const Index nodes = lw == 0 ? 1 : (lw == 1 ? points : points * points);
    auto node = [&](Index i) {
        Vector w(lw);
        if (lw >= 1) w[0] = -half_width + h * static_cast<double>(i % points);
        if (lw == 2) w[1] = -half_width + h * static_cast<double>(i / points);
        return w;
    };
    auto coarse = [&](Index i) {
        const Index a = i % points;
        const Index b = i / points;
        return a % 2 == 0 && (lw < 2 || b % 2 == 0);
    };
    const double cell = std::pow(h, static_cast<double>(lw));
    const double log_cell = std::log(cell);
    const double log_cell_coarse = std::log(std::pow(2.0 * h, static_cast<double>(lw)));

    OraclePosterior out;
    out.resp.resize(K);
    out.latent_mean = Matrix::Zero(lw, K);
    Vector log_mass(K);
    double worst = 0.0;
    double prior_mass = 0.0;
    for (Index i = 0; i < nodes; ++i) prior_mass += std::exp(-0.5 * node(i).squaredNorm() - 0.5 * lw * kLog2Pi) * cell;
    if (lw > 0) worst = std::abs(prior_mass - 1.0);

    for (Index k = 0; k < K; ++k) {
        const auto& c = m.components[static_cast<std::size_t>(k)];
        const Matrix gt = c.cov.topLeftCorner(lt, lt);
        const Eigen::LLT<Matrix> gl(gt);
        const Vector dt = gl.matrixL().solve(t - c.mean.head(lt));
        const double log_t = -0.5 * (lt * kLog2Pi + 2.0 * Matrix(gl.matrixL()).diagonal().array().log().sum() +
                                     dt.squaredNorm());
        std::vector<double> logf(static_cast<std::size_t>(nodes));
        for (Index i = 0; i < nodes; ++i) {
            const Vector w = node(i);
            Vector x(lt + lw);
            x << t, w;
            const double log_w = -0.5 * (lw * kLog2Pi + w.squaredNorm());
            const double log_y = log_gaussian_diag(y, c.map * x + c.offset, c.noise);
            logf[static_cast<std::size_t>(i)] = std::log(c.prior) + log_t + log_w + log_y;
        }
        const double full = log_sum_exp(logf) + (lw > 0 ? log_cell : 0.0);
        std::vector<double> half;
        for (Index i = 0; i < nodes; ++i)
            if (coarse(i)) half.push_back(logf[static_cast<std::size_t>(i)]);
        const double halved = log_sum_exp(half) + (lw > 0 ? log_cell_coarse : 0.0);
        if (lw > 0) worst = std::max(worst, std::abs(std::expm1(halved - full)));
        log_mass[k] = full;
        const double top = full - (lw > 0 ? log_cell : 0.0);
        Vector acc = Vector::Zero(lw);
        for (Index i = 0; i < nodes; ++i) acc += std::exp(logf[static_cast<std::size_t>(i)] - top) * node(i);
        out.latent_mean.col(k) = acc;
    }
    out.normalization_error = worst;
    if (worst > 1e-3)
        throw DataError("oracle_posterior: grid too coarse, normalization error " + std::to_string(worst) +
                        " (increase points or half_width)");
    out.log_marginal = log_sum_exp(log_mass);
    out.resp = (log_mass.array() - out.log_marginal).exp().matrix();
    return out;
}

}  // namespace hgllim::synthetic
