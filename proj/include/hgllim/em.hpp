#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "hgllim/error.hpp"
#include "hgllim/linalg.hpp"
#include "hgllim/model.hpp"
#include "hgllim/parallel.hpp"
#include "hgllim/training_set.hpp"

namespace hgllim {

struct TrainingConfig {
    Index num_components = 1;
    LatentSpec latent;
    int max_iterations = 200;
    double tolerance = 1e-6;  // relative log-likelihood change
    // Sigma_k diagonal floor: max(abs, rel * mean input variance).
    double noise_floor_abs = 1e-7;
    double noise_floor_rel = 1e-7;
    // Gamma_k^t eigenvalue floor: max(abs, rel * mean target variance).
    double target_floor_abs = 1e-7;
    double target_floor_rel = 1e-7;
    double empty_threshold = 1.0;  // effective sample count below which a component is empty
    int max_reinitializations = 3;
    std::uint64_t seed = 0;
    int init_iterations = 20;  // diagonal GMM EM iterations during initialization
    int kmeans_iterations = 10;
    int kmeans_restarts = 5;  // k-means++ runs per attempt; lowest inertia wins
    int kmeans_retries = 3;
    unsigned threads = 1;
    bool diagonal_target_cov = false;
    double condition_cap = kDefaultConditionCap;
    double consistency_tolerance = 1e-6;  // allowed relative log-likelihood drop
    ModelLayout layout;

    void check() const {
        if (num_components < 1) throw ContractError("config: K must be >= 1");
        if (latent.observed_dim < 1 || latent.latent_dim < 0) throw ContractError("config: invalid latent spec");
        if (max_iterations < 1) throw ContractError("config: max_iterations must be >= 1");
        if (!(tolerance > 0.0)) throw ContractError("config: tolerance must be > 0");
        if (init_iterations < 0 || kmeans_iterations < 0 || kmeans_retries < 0)
            throw ContractError("config: negative iteration budget");
    }
};

/// Posterior assignment probabilities r (N x K) and their column sums.
struct Responsibilities {
    Matrix r;
    Vector counts;

    Index num_samples() const noexcept { return r.rows(); }
    Index num_components() const noexcept { return r.cols(); }

    /// rho_nk = r_nk / sum_n r_nk; all-zero columns stay zero.
    Matrix normalized() const {
        Matrix rho = r;
        for (Index k = 0; k < r.cols(); ++k) {
            if (counts[k] > 0.0) rho.col(k) /= counts[k];
        }
        return rho;
    }

    static Responsibilities from(Matrix r) {
        Responsibilities out;
        out.counts.resize(r.cols());
        for (Index k = 0; k < r.cols(); ++k)
            out.counts[k] = pairwise_sum(std::span<const double>(r.col(k).data(), static_cast<std::size_t>(r.rows())));
        out.r = std::move(r);
        return out;
    }
};

/// Gaussian posterior of W given (y_n, t_n, Z_n = k). Empty when L_w = 0.
struct LatentPosterior {
    std::vector<Matrix> cov;   // S_k^w, L_w x L_w
    std::vector<Matrix> mean;  // mu_nk^w stored column-wise, L_w x N

    bool empty() const noexcept { return cov.empty(); }
};

struct ZPosterior {
    Responsibilities resp;
    double log_likelihood = 0.0;
    Vector sample_log_likelihood;  // log sum_k pi_k p(y_n, t_n | Z=k)
};

struct GmmUpdate {
    std::vector<double> prior;
    std::vector<Vector> mean;  // c_k^t
    std::vector<Matrix> cov;   // Gamma_k^t
    std::vector<bool> empty;
};

struct MappingUpdate {
    std::vector<Matrix> map;
    std::vector<Vector> offset;
    std::vector<Vector> noise;
};

struct Floors {
    double noise = 1e-7;
    double target = 1e-7;
};

inline Floors compute_floors(const TrainingSet& data, const TrainingConfig& cfg) {
    auto mean_variance = [](const Matrix& m) {
        if (m.cols() == 0 || m.rows() == 0) return 0.0;
        const Vector mu = m.rowwise().mean();
        return ((m.colwise() - mu).array().square().rowwise().sum() / static_cast<double>(m.cols())).mean();
    };
    return {std::max(cfg.noise_floor_abs, cfg.noise_floor_rel * mean_variance(data.inputs)),
            std::max(cfg.target_floor_abs, cfg.target_floor_rel * mean_variance(data.targets))};
}

enum class IterationEvent { none, reinitialized, dropped };

struct IterationRecord {
    int iteration = 0;
    double log_likelihood = 0.0;
    std::vector<double> counts;
    IterationEvent event = IterationEvent::none;
};

struct TrainingResult {
    InverseModel model;
    std::vector<IterationRecord> history;
    bool converged = false;
    int reinitializations = 0;
    int dropped = 0;
};

namespace detail {

inline void check_compatible(const InverseModel& model, const TrainingSet& data) {
    data.check();
    if (data.input_dim() != model.input_dim)
        throw DataError("input dimension " + std::to_string(data.input_dim()) + " does not match model dimension " +
                        std::to_string(model.input_dim));
    if (data.target_dim() != model.latent.observed_dim)
        throw DataError("target dimension " + std::to_string(data.target_dim()) + " does not match model dimension " +
                        std::to_string(model.latent.observed_dim));
}

/// Per-component quantities shared by the E-W and E-Z steps.
struct ComponentTerms {
    SpdFactor target_factor;  // Gamma_k^t
    Matrix latent_cov;        // S_k^w
    Matrix latent_gain;       // S_k^w A_k^w^T Sigma_k^-1
    double log_det_phi = 0.0;
};

template <bool Hybrid>
ComponentTerms component_terms(const InverseModel& model, Index k, double condition_cap) {
    const auto& c = model.components[static_cast<std::size_t>(k)];
    const Index lt = model.latent.observed_dim;
    ComponentTerms out;
    out.target_factor = SpdFactor::factor(c.cov.topLeftCorner(lt, lt), "target covariance", k, condition_cap);
    out.log_det_phi = c.noise.array().log().sum();
    if constexpr (Hybrid) {
        const Index lw = model.latent.latent_dim;
        if (lw > 0) {
            const auto aw = c.map.rightCols(lw);
            const Matrix weighted = c.noise.cwiseInverse().asDiagonal() * aw;  // Sigma^-1 A^w
            const Matrix precision = Matrix::Identity(lw, lw) + aw.transpose() * weighted;
            const SpdFactor pf = SpdFactor::factor(precision, "latent posterior precision", k, condition_cap);
            out.latent_cov = pf.inverse();
            out.latent_gain = out.latent_cov * weighted.transpose();
            out.log_det_phi += pf.log_det();
        }
    }
    return out;
}

template <bool Hybrid>
LatentPosterior e_step_w(const InverseModel& model, const TrainingSet& data, unsigned threads,
                         double condition_cap = kDefaultConditionCap) {
    const Index lw = model.latent.latent_dim;
    if (!Hybrid || lw == 0) throw ContractError("e_step_w: called with L_w = 0; the E-W step does not exist");
    check_compatible(model, data);
    const Index K = model.num_components();
    const Index lt = model.latent.observed_dim;
    LatentPosterior out;
    out.cov.resize(static_cast<std::size_t>(K));
    out.mean.resize(static_cast<std::size_t>(K));
    parallel_for(static_cast<std::size_t>(K), threads, [&](std::size_t k) {
        const auto& c = model.components[k];
        const ComponentTerms terms = component_terms<Hybrid>(model, static_cast<Index>(k), condition_cap);
        Matrix residual = data.inputs - c.map.leftCols(lt) * data.targets;
        residual.colwise() -= c.offset;
        out.cov[k] = terms.latent_cov;
        out.mean[k] = terms.latent_gain * residual;
    });
    return out;
}

template <bool Hybrid>
ZPosterior e_step_z(const InverseModel& model, const TrainingSet& data, unsigned threads,
                    double condition_cap = kDefaultConditionCap) {
    check_compatible(model, data);
    const Index K = model.num_components();
    const Index N = data.size();
    const Index D = model.input_dim;
    const Index lt = model.latent.observed_dim;
    std::vector<ComponentTerms> terms;
    terms.reserve(static_cast<std::size_t>(K));
    for (Index k = 0; k < K; ++k) terms.push_back(component_terms<Hybrid>(model, k, condition_cap));

    Matrix logr(N, K);
    Vector sample_ll(N);
    parallel_for(static_cast<std::size_t>(N), threads, [&](std::size_t ni) {
        const auto n = static_cast<Index>(ni);
        const Vector y = data.inputs.col(n);
        const Vector t = data.targets.col(n);
        Vector row(K);
        for (Index k = 0; k < K; ++k) {
            const auto& c = model.components[static_cast<std::size_t>(k)];
            const auto& tk = terms[static_cast<std::size_t>(k)];
            const Vector e = y - c.map.leftCols(lt) * t - c.offset;
            double quad = 0.0;
            if constexpr (Hybrid) {
                if (model.latent.latent_dim > 0) {
                    const Vector mu = tk.latent_gain * e;
                    const Vector r = e - c.map.rightCols(model.latent.latent_dim) * mu;
                    quad = (r.array().square() / c.noise.array()).sum() + mu.squaredNorm();
                } else {
                    quad = (e.array().square() / c.noise.array()).sum();
                }
            } else {
                quad = (e.array().square() / c.noise.array()).sum();
            }
            const double log_y = -0.5 * (static_cast<double>(D) * kLog2Pi + tk.log_det_phi + quad);
            row[k] = std::log(c.prior) + tk.target_factor.log_gaussian(t, c.mean.head(lt)) + log_y;
        }
        const double norm = log_sum_exp(row);
        if (!std::isfinite(norm)) throw DegenerateInputError("e_step_z: non-finite log-density", static_cast<std::ptrdiff_t>(n));
        sample_ll[n] = norm;
        logr.row(n) = (row.array() - norm).exp().matrix().transpose();
    });
    ZPosterior out;
    out.resp = Responsibilities::from(std::move(logr));
    out.log_likelihood = pairwise_sum(sample_ll);
    out.sample_log_likelihood = std::move(sample_ll);
    return out;
}

/// Clips eigenvalues of a symmetric matrix from below; the constrained
/// maximizer of the Gaussian likelihood under cov >= floor * I.
inline Matrix clip_covariance(const Matrix& cov, double floor, bool diagonal) {
    if (diagonal) {
        Matrix out = Matrix::Zero(cov.rows(), cov.cols());
        for (Index i = 0; i < cov.rows(); ++i) out(i, i) = std::max(cov(i, i), floor);
        return out;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() == Eigen::Success && eig.eigenvalues().minCoeff() >= floor) return cov;
    const Vector clipped = eig.eigenvalues().cwiseMax(floor);
    return symmetrized(eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose());
}

inline GmmUpdate m_step_gmm(const TrainingSet& data, const Responsibilities& resp, const Floors& floors,
                            double empty_threshold, bool diagonal) {
    const Index K = resp.num_components();
    const Index N = resp.num_samples();
    if (N != data.size()) throw ContractError("m_step_gmm: responsibilities do not match data");
    GmmUpdate out;
    double total = 0.0;
    for (Index k = 0; k < K; ++k) total += resp.counts[k];
    for (Index k = 0; k < K; ++k) {
        const double count = resp.counts[k];
        out.empty.push_back(count < empty_threshold);
        out.prior.push_back(count / total);
        if (!(count > 0.0)) {
            out.mean.push_back(Vector::Zero(data.target_dim()));
            out.cov.push_back(Matrix::Identity(data.target_dim(), data.target_dim()) * floors.target);
            continue;
        }
        const Vector rho = resp.r.col(k) / count;
        const Vector mean = data.targets * rho;
        const Matrix centered = data.targets.colwise() - mean;
        const Matrix cov = centered * rho.asDiagonal() * centered.transpose();
        out.mean.push_back(mean);
        out.cov.push_back(clip_covariance(symmetrized(cov), floors.target, diagonal));
    }
    return out;
}

struct AffineFit {
    Matrix map;
    Vector offset;
    Vector residual;  // sum_n rho_n (y_n - A x_n - b)^2, per input dimension
};

/// Weighted affine regression y ~ A x + b with an extra second-moment term
/// `extra` added to the normal equations: A = Y X^T (extra + X X^T)^-1.
inline AffineFit fit_affine(const Matrix& Y, const Matrix& X, const Vector& rho, const Matrix& extra, Index k,
                            double condition_cap) {
    const Index N = Y.cols();
    const Vector xbar = X * rho;
    const Vector ybar = Y * rho;
    const Matrix xc = X.colwise() - xbar;
    const Matrix wxc = rho.asDiagonal() * xc.transpose();  // N x L
    const Matrix cross = Y * wxc - ybar * wxc.colwise().sum();
    const Matrix second = symmetrized(xc * wxc + extra);
    const SpdFactor f = SpdFactor::factor(second, "m_step_mapping: (S^x + X X^T)", k, condition_cap);
    AffineFit out;
    out.map = f.solve(cross.transpose()).transpose();
    out.offset = ybar - out.map * xbar;
    out.residual = Vector::Zero(Y.rows());
    constexpr Index block = 512;
    for (Index start = 0; start < N; start += block) {
        const Index len = std::min(block, N - start);
        Matrix r = Y.middleCols(start, len) - out.map * X.middleCols(start, len);
        r.colwise() -= out.offset;
        out.residual += r.array().square().matrix() * rho.segment(start, len);
    }
    return out;
}

template <bool Hybrid>
MappingUpdate m_step_mapping(const TrainingSet& data, const Responsibilities& resp, const LatentPosterior& lat,
                             Index latent_dim, const Floors& floors, unsigned threads,
                             double condition_cap = kDefaultConditionCap) {
    const Index K = resp.num_components();
    const Index N = resp.num_samples();
    const Index lt = data.target_dim();
    const Index lw = Hybrid ? latent_dim : 0;
    if (N != data.size()) throw ContractError("m_step_mapping: responsibilities do not match data");
    if (lw > 0 && (lat.cov.size() != static_cast<std::size_t>(K) || lat.mean.size() != static_cast<std::size_t>(K)))
        throw ContractError("m_step_mapping: latent posterior does not match responsibilities");
    MappingUpdate out;
    out.map.resize(static_cast<std::size_t>(K));
    out.offset.resize(static_cast<std::size_t>(K));
    out.noise.resize(static_cast<std::size_t>(K));
    parallel_for(static_cast<std::size_t>(K), threads, [&](std::size_t ks) {
        const auto k = static_cast<Index>(ks);
        const Index L = lt + lw;
        if (!(resp.counts[k] > 0.0)) {
            out.map[ks] = Matrix::Zero(data.input_dim(), L);
            out.offset[ks] = Vector::Zero(data.input_dim());
            out.noise[ks] = Vector::Constant(data.input_dim(), floors.noise);
            return;
        }
        const Vector rho = resp.r.col(k) / resp.counts[k];
        Matrix extra = Matrix::Zero(L, L);
        AffineFit fit;
        if constexpr (Hybrid) {
            if (lw > 0) {
                Matrix X(L, N);
                X.topRows(lt) = data.targets;
                X.bottomRows(lw) = lat.mean[ks];
                extra.bottomRightCorner(lw, lw) = lat.cov[ks];
                fit = fit_affine(data.inputs, X, rho, extra, k, condition_cap);
                const auto aw = fit.map.rightCols(lw);
                fit.residual += (aw * lat.cov[ks]).cwiseProduct(aw).rowwise().sum();
            } else {
                fit = fit_affine(data.inputs, data.targets, rho, extra, k, condition_cap);
            }
        } else {
            fit = fit_affine(data.inputs, data.targets, rho, extra, k, condition_cap);
        }
        out.map[ks] = std::move(fit.map);
        out.offset[ks] = std::move(fit.offset);
        out.noise[ks] = fit.residual.cwiseMax(floors.noise);
    });
    return out;
}

inline void apply(InverseModel& model, const GmmUpdate& g) {
    const Index lt = model.latent.observed_dim;
    const Index lw = model.latent.latent_dim;
    for (std::size_t k = 0; k < model.components.size(); ++k) {
        auto& c = model.components[k];
        c.prior = g.prior[k];
        c.mean.head(lt) = g.mean[k];
        c.mean.tail(lw).setZero();
        c.cov.setZero();
        c.cov.topLeftCorner(lt, lt) = g.cov[k];
        c.cov.bottomRightCorner(lw, lw).setIdentity();
    }
}

inline void apply(InverseModel& model, const MappingUpdate& m) {
    for (std::size_t k = 0; k < model.components.size(); ++k) {
        auto& c = model.components[k];
        c.map = m.map[k];
        c.offset = m.offset[k];
        c.noise = m.noise[k];
    }
}

/// Indices sorted lexicographically by joint sample value, so that
/// initialization does not depend on the order samples were supplied in.
inline std::vector<Index> canonical_order(const Matrix& joint) {
    std::vector<Index> idx(static_cast<std::size_t>(joint.cols()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
        for (Index d = 0; d < joint.rows(); ++d) {
            if (joint(d, a) < joint(d, b)) return true;
            if (joint(d, b) < joint(d, a)) return false;
        }
        return false;
    });
    return idx;
}

/// k-means++ seeding plus Lloyd refinement. Returns hard labels, or an
/// empty vector when the data cannot support K distinct clusters.
inline std::vector<Index> kmeans(const Matrix& z, Index K, std::mt19937_64& rng, int iterations, unsigned threads,
                                 double* inertia = nullptr) {
    const Index N = z.cols();
    Matrix centers(z.rows(), K);
    std::uniform_int_distribution<Index> first(0, N - 1);
    centers.col(0) = z.col(first(rng));
    Vector d2 = (z.colwise() - Vector(centers.col(0))).colwise().squaredNorm().transpose();
    for (Index k = 1; k < K; ++k) {
        const double total = pairwise_sum(d2);
        if (!(total > 0.0)) return {};
        const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        double acc = 0.0;
        Index pick = N - 1;
        for (Index n = 0; n < N; ++n) {
            acc += d2[n];
            if (acc > u && d2[n] > 0.0) {
                pick = n;
                break;
            }
        }
        if (!(d2[pick] > 0.0)) return {};
        centers.col(k) = z.col(pick);
        d2 = d2.cwiseMin((z.colwise() - Vector(centers.col(k))).colwise().squaredNorm().transpose());
    }
    std::vector<Index> label(static_cast<std::size_t>(N), 0);
    for (int it = 0; it <= iterations; ++it) {
        parallel_for(static_cast<std::size_t>(N), threads, [&](std::size_t n) {
            Index best = 0;
            (centers.colwise() - z.col(static_cast<Index>(n))).colwise().squaredNorm().minCoeff(&best);
            label[n] = best;
        });
        if (it == iterations) break;
        Matrix sums = Matrix::Zero(z.rows(), K);
        Vector count = Vector::Zero(K);
        for (Index n = 0; n < N; ++n) {
            sums.col(label[static_cast<std::size_t>(n)]) += z.col(n);
            count[label[static_cast<std::size_t>(n)]] += 1.0;
        }
        for (Index k = 0; k < K; ++k)
            if (count[k] > 0.0) centers.col(k) = sums.col(k) / count[k];
    }
    std::vector<bool> used(static_cast<std::size_t>(K), false);
    for (Index l : label) used[static_cast<std::size_t>(l)] = true;
    if (std::find(used.begin(), used.end(), false) != used.end()) return {};
    if (inertia) {
        Vector d(N);
        for (Index n = 0; n < N; ++n) d[n] = (z.col(n) - centers.col(label[static_cast<std::size_t>(n)])).squaredNorm();
        *inertia = pairwise_sum(d);
    }
    return label;
}

/// Diagonal-covariance GMM EM started from hard labels; returns N x K responsibilities.
inline Matrix diagonal_gmm(const Matrix& z, const std::vector<Index>& label, Index K, int iterations, unsigned threads) {
    const Index N = z.cols();
    const Index dim = z.rows();
    constexpr double var_floor = 1e-6;  // z is standardized
    Matrix r = Matrix::Zero(N, K);
    for (Index n = 0; n < N; ++n) r(n, label[static_cast<std::size_t>(n)]) = 1.0;
    Vector weight(K);
    Matrix mean(dim, K);
    Matrix var(dim, K);
    for (int it = 0;; ++it) {
        // M-step
        for (Index k = 0; k < K; ++k) {
            const double nk = r.col(k).sum();
            weight[k] = std::max(nk, 1e-300) / static_cast<double>(N);
            if (nk <= 1e-12) {
                mean.col(k) = z.col(0);
                var.col(k).setOnes();
                continue;
            }
            mean.col(k) = z * r.col(k) / nk;
            var.col(k) = ((z.colwise() - Vector(mean.col(k))).array().square().matrix() * r.col(k) / nk)
                             .cwiseMax(var_floor);
        }
        // E-step
        parallel_for(static_cast<std::size_t>(N), threads, [&](std::size_t ni) {
            const auto n = static_cast<Index>(ni);
            Vector row(K);
            for (Index k = 0; k < K; ++k)
                row[k] = std::log(weight[k]) + log_gaussian_diag(z.col(n), mean.col(k), var.col(k));
            const double norm = log_sum_exp(row);
            r.row(n) = (row.array() - norm).exp().matrix().transpose();
        });
        if (it >= iterations) break;
    }
    return r;
}

/// Leading `count` eigenpairs of R R^T for a D x N matrix R.
inline std::pair<Matrix, Vector> leading_eigenpairs(const Matrix& R, Index count, std::uint64_t seed) {
    const Index D = R.rows();
    if (D <= 256) {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(R * R.transpose());
        Matrix vecs = eig.eigenvectors().rightCols(count).rowwise().reverse();
        Vector vals = eig.eigenvalues().tail(count).reverse().cwiseMax(0.0);
        return {vecs, vals};
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Matrix q(D, count);
    for (Index j = 0; j < count; ++j)
        for (Index i = 0; i < D; ++i) q(i, j) = g(rng);
    for (int it = 0; it < 60; ++it) {
        Matrix next = R * (R.transpose() * q);
        Eigen::HouseholderQR<Matrix> qr(next);
        q = qr.householderQ() * Matrix::Identity(D, count);
    }
    const Matrix proj = R.transpose() * q;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(proj.transpose() * proj);
    Matrix vecs = (q * eig.eigenvectors()).rowwise().reverse();
    Vector vals = eig.eigenvalues().reverse().cwiseMax(0.0);
    return {vecs, vals};
}

struct InitResult {
    InverseModel model;
    Responsibilities resp;
};

template <bool Hybrid>
InitResult init_params(const TrainingSet& data, const TrainingConfig& cfg) {
    cfg.check();
    data.check();
    const Index N = data.size();
    const Index K = cfg.num_components;
    const Index lt = cfg.latent.observed_dim;
    const Index lw = Hybrid ? cfg.latent.latent_dim : 0;
    const Index D = data.input_dim();
    if (!Hybrid && cfg.latent.latent_dim > 0) throw ContractError("init_params: latent dims need the hybrid path");
    if (data.target_dim() != lt)
        throw DataError("targets have " + std::to_string(data.target_dim()) + " rows, config declares L_t = " +
                        std::to_string(lt));
    if (N <= K)
        throw InsufficientDataError("init_params: need more samples (" + std::to_string(N) + ") than components (" +
                                    std::to_string(K) + ")");
    const Floors floors = compute_floors(data, cfg);

    Matrix joint(lt + D, N);
    joint.topRows(lt) = data.targets;
    joint.bottomRows(D) = data.inputs;
    const std::vector<Index> order = canonical_order(joint);
    Matrix z(joint.rows(), N);
    for (Index i = 0; i < N; ++i) z.col(i) = joint.col(order[static_cast<std::size_t>(i)]);
    const Vector mu = z.rowwise().mean();
    Vector sd = ((z.colwise() - mu).array().square().rowwise().sum() / static_cast<double>(N)).sqrt().matrix();
    for (Index d = 0; d < sd.size(); ++d)
        if (!(sd[d] > 0.0)) sd[d] = 1.0;
    z = (z.colwise() - mu).array().colwise() / sd.array();

    Matrix canonical_r;
    for (int attempt = 0; attempt <= cfg.kmeans_retries; ++attempt) {
        std::mt19937_64 rng(cfg.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(attempt));
        std::vector<Index> label;
        if (K == 1) {
            label.assign(static_cast<std::size_t>(N), 0);
        } else {
            double best = std::numeric_limits<double>::infinity();
            for (int run = 0; run < std::max(1, cfg.kmeans_restarts); ++run) {
                double inertia = 0.0;
                auto candidate = kmeans(z, K, rng, cfg.kmeans_iterations, cfg.threads, &inertia);
                if (!candidate.empty() && inertia < best) {
                    best = inertia;
                    label = std::move(candidate);
                }
            }
            if (label.empty()) continue;
        }
        Matrix r = diagonal_gmm(z, label, K, cfg.init_iterations, cfg.threads);
        const Vector counts = r.colwise().sum().transpose();
        if ((counts.array() < cfg.empty_threshold).any()) {
            if (attempt < cfg.kmeans_retries) continue;
            // last resort: the k-means partition itself, which has no empty cluster
            r.setZero();
            for (Index n = 0; n < N; ++n) r(n, label[static_cast<std::size_t>(n)]) = 1.0;
        }
        canonical_r = std::move(r);
        break;
    }
    if (canonical_r.size() == 0)
        throw InsufficientDataError("init_params: k-means++ could not find " + std::to_string(K) +
                                    " distinct clusters (duplicate samples?)");
    Matrix r(N, K);
    for (Index i = 0; i < N; ++i) r.row(order[static_cast<std::size_t>(i)]) = canonical_r.row(i);
    InitResult out;
    out.resp = Responsibilities::from(std::move(r));

    InverseModel& model = out.model;
    model.latent = {lt, lw};
    model.input_dim = D;
    model.layout = cfg.layout;
    model.components.resize(static_cast<std::size_t>(K));
    for (auto& c : model.components) {
        c.mean = Vector::Zero(lt + lw);
        c.cov = Matrix::Zero(lt + lw, lt + lw);
        c.map = Matrix::Zero(D, lt + lw);
    }
    apply(model, m_step_gmm(data, out.resp, floors, 0.0, cfg.diagonal_target_cov));

    parallel_for(static_cast<std::size_t>(K), cfg.threads, [&](std::size_t ks) {
        const auto k = static_cast<Index>(ks);
        auto& c = model.components[ks];
        const Vector rho = out.resp.r.col(k) / out.resp.counts[k];
        const AffineFit fit = fit_affine(data.inputs, data.targets, rho, Matrix::Zero(lt, lt), k, cfg.condition_cap);
        c.map.leftCols(lt) = fit.map;
        c.offset = fit.offset;
        Vector noise = fit.residual;
        if (lw > 0) {
            Matrix resid = data.inputs - fit.map * data.targets;
            resid.colwise() -= fit.offset;
            resid = resid * rho.cwiseSqrt().asDiagonal();
            const auto [vecs, vals] = leading_eigenpairs(resid, lw, cfg.seed + static_cast<std::uint64_t>(k));
            const double rest = std::max(0.0, (noise.sum() - vals.sum()) / static_cast<double>(std::max<Index>(1, D - lw)));
            const Vector scale = (vals.array() - rest).max(1e-3 * vals.array()).sqrt().matrix();
            c.map.rightCols(lw) = vecs * scale.asDiagonal();
            noise -= c.map.rightCols(lw).array().square().rowwise().sum().matrix();
        }
        c.noise = noise.cwiseMax(floors.noise);
    });
    return out;
}

template <bool Hybrid>
TrainingResult run_em(InverseModel model, const TrainingSet& data, const TrainingConfig& cfg) {
    cfg.check();
    check_compatible(model, data);
    validate(model);
    TrainingResult result;
    const Floors floors = compute_floors(data, cfg);
    const Index N = data.size();
    const Index lt = model.latent.observed_dim;
    const Index lw = model.latent.latent_dim;
    std::vector<int> reinit_count(model.components.size(), 0);
    double previous = std::numeric_limits<double>::quiet_NaN();
    bool compare = false;

    for (int iteration = 0;; ++iteration) {
        LatentPosterior lat;
        if (Hybrid && lw > 0) lat = e_step_w<Hybrid>(model, data, cfg.threads, cfg.condition_cap);
        ZPosterior z = e_step_z<Hybrid>(model, data, cfg.threads, cfg.condition_cap);
        IterationRecord rec;
        rec.iteration = iteration;
        rec.log_likelihood = z.log_likelihood;
        rec.counts.assign(z.resp.counts.data(), z.resp.counts.data() + z.resp.counts.size());
        if (!std::isfinite(z.log_likelihood)) throw TrainingFailedError("train: log-likelihood is not finite");
        if (compare) {
            if (z.log_likelihood < previous - cfg.consistency_tolerance * std::abs(previous))
                throw ConsistencyError("train: log-likelihood decreased from " + std::to_string(previous) + " to " +
                                       std::to_string(z.log_likelihood) + " at iteration " +
                                       std::to_string(iteration));
            if (std::abs(z.log_likelihood - previous) < cfg.tolerance * std::abs(previous)) {
                result.history.push_back(std::move(rec));
                result.converged = true;
                break;
            }
        }
        if (iteration >= cfg.max_iterations) {
            result.history.push_back(std::move(rec));
            break;
        }

        // empty components: reinitialize at the worst-explained samples, drop after repeated failure
        std::vector<Index> empty;
        for (Index k = 0; k < model.num_components(); ++k)
            if (z.resp.counts[k] < cfg.empty_threshold) empty.push_back(k);
        if (!empty.empty()) {
            std::vector<Index> worst(static_cast<std::size_t>(N));
            std::iota(worst.begin(), worst.end(), Index{0});
            std::stable_sort(worst.begin(), worst.end(), [&](Index a, Index b) {
                return z.sample_log_likelihood[a] < z.sample_log_likelihood[b];
            });
            std::vector<bool> drop(model.components.size(), false);
            std::size_t next = 0;
            bool dropped_any = false;
            for (Index k : empty) {
                auto ks = static_cast<std::size_t>(k);
                if (reinit_count[ks] >= cfg.max_reinitializations) {
                    drop[ks] = true;
                    dropped_any = true;
                    continue;
                }
                ++reinit_count[ks];
                ++result.reinitializations;
                const Index n = worst[std::min(next++, worst.size() - 1)];
                Index donor = -1;
                double best = -1.0;
                for (Index j = 0; j < model.num_components(); ++j) {
                    if (z.resp.counts[j] < cfg.empty_threshold) continue;
                    if (z.resp.r(n, j) > best) {
                        best = z.resp.r(n, j);
                        donor = j;
                    }
                }
                if (donor < 0) throw TrainingFailedError("train: every component collapsed");
                const auto src = model.components[static_cast<std::size_t>(donor)];
                auto& c = model.components[ks];
                c.mean.setZero();
                c.mean.head(lt) = data.targets.col(n);
                c.cov = src.cov;
                c.map = src.map;
                c.noise = src.noise;
                c.offset = data.inputs.col(n) - src.map.leftCols(lt) * data.targets.col(n);
                c.prior = std::max(c.prior, 1.0 / static_cast<double>(N));
            }
            if (dropped_any) {
                std::vector<InverseComponent> kept;
                std::vector<int> kept_count;
                for (std::size_t k = 0; k < model.components.size(); ++k) {
                    if (drop[k]) {
                        ++result.dropped;
                        continue;
                    }
                    kept.push_back(model.components[k]);
                    kept_count.push_back(reinit_count[k]);
                }
                if (kept.empty()) throw TrainingFailedError("train: every component collapsed");
                model.components = std::move(kept);
                reinit_count = std::move(kept_count);
            }
            double total = 0.0;
            for (const auto& c : model.components) total += c.prior;
            for (auto& c : model.components) c.prior /= total;
            rec.event = dropped_any ? IterationEvent::dropped : IterationEvent::reinitialized;
            result.history.push_back(std::move(rec));
            compare = false;
            continue;
        }

        result.history.push_back(std::move(rec));
        apply(model, m_step_gmm(data, z.resp, floors, cfg.empty_threshold, cfg.diagonal_target_cov));
        apply(model, m_step_mapping<Hybrid>(data, z.resp, lat, lw, floors, cfg.threads, cfg.condition_cap));
        previous = z.log_likelihood;
        compare = true;
    }
    result.model = std::move(model);
    return result;
}

template <bool Hybrid>
TrainingResult train(const TrainingSet& data, const TrainingConfig& cfg) {
    return run_em<Hybrid>(init_params<Hybrid>(data, cfg).model, data, cfg);
}

}  // namespace detail

/// Latent posterior moments (E-W step). Contract error when L_w = 0.
inline LatentPosterior e_step_w(const InverseModel& model, const TrainingSet& data, unsigned threads = 1) {
    return detail::e_step_w<true>(model, data, threads);
}

/// Responsibilities and observed-data log-likelihood (E-Z step).
inline ZPosterior e_step_z(const InverseModel& model, const TrainingSet& data, unsigned threads = 1) {
    if (model.latent.hybrid()) return detail::e_step_z<true>(model, data, threads);
    return detail::e_step_z<false>(model, data, threads);
}

/// pi_k, c_k^t, Gamma_k^t from responsibilities (M-GMM step).
inline GmmUpdate m_step_gmm(const TrainingSet& data, const Responsibilities& resp, const TrainingConfig& cfg) {
    return detail::m_step_gmm(data, resp, compute_floors(data, cfg), cfg.empty_threshold, cfg.diagonal_target_cov);
}

/// A_k, b_k, Sigma_k from responsibilities and latent moments (M-mapping step).
inline MappingUpdate m_step_mapping(const TrainingSet& data, const Responsibilities& resp, const LatentPosterior& lat,
                                    const TrainingConfig& cfg) {
    const Floors floors = compute_floors(data, cfg);
    if (cfg.latent.hybrid())
        return detail::m_step_mapping<true>(data, resp, lat, cfg.latent.latent_dim, floors, cfg.threads,
                                            cfg.condition_cap);
    return detail::m_step_mapping<false>(data, resp, lat, 0, floors, cfg.threads, cfg.condition_cap);
}

inline detail::InitResult init_params(const TrainingSet& data, const TrainingConfig& cfg) {
    if (cfg.latent.hybrid()) return detail::init_params<true>(data, cfg);
    return detail::init_params<false>(data, cfg);
}

/// EM training. L_w = 0 runs a path with the latent machinery compiled out.
inline TrainingResult train(const TrainingSet& data, const TrainingConfig& cfg) {
    if (cfg.latent.hybrid()) return detail::train<true>(data, cfg);
    return detail::train<false>(data, cfg);
}

/// EM started from a given model instead of the GMM initialization.
inline TrainingResult train_from(const InverseModel& start, const TrainingSet& data, const TrainingConfig& cfg) {
    if (start.latent != cfg.latent) throw ContractError("train_from: model layout does not match config");
    if (cfg.latent.hybrid()) return detail::run_em<true>(start, data, cfg);
    return detail::run_em<false>(start, data, cfg);
}

struct BicScore {
    double log_likelihood = 0.0;
    Index free_parameters = 0;
    double bic = 0.0;
    double normalized = 0.0;  // bic / (N * (D + L_t))
};

inline Index free_parameter_count(const InverseModel& model) {
    const Index K = model.num_components();
    const Index lt = model.latent.observed_dim;
    const Index L = model.latent.total();
    const Index D = model.input_dim;
    return (K - 1) + K * (lt + lt * (lt + 1) / 2 + D * L + D + D);
}

inline BicScore bic(const InverseModel& model, const TrainingSet& data, unsigned threads = 1) {
    BicScore out;
    out.log_likelihood = e_step_z(model, data, threads).log_likelihood;
    out.free_parameters = free_parameter_count(model);
    const auto N = static_cast<double>(data.size());
    out.bic = -2.0 * out.log_likelihood + static_cast<double>(out.free_parameters) * std::log(N);
    out.normalized = out.bic / (N * static_cast<double>(data.input_dim() + data.target_dim()));
    return out;
}

}  // namespace hgllim
