#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hgllim/em.hpp"
#include "hgllim/hog.hpp"
#include "hgllim/model.hpp"
#include "hgllim/pipeline.hpp"
#include "hgllim/serialize.hpp"
#include "hgllim/synthetic.hpp"

namespace hgllim::experiments {

inline double observed_mae(const ForwardModel& fwd, const TrainingSet& d) {
    std::vector<double> err;
    for (Index n = 0; n < d.size(); ++n) {
        const Vector x = predict_mean(fwd, d.inputs.col(n));
        for (Index j = 0; j < d.target_dim(); ++j) err.push_back(x[j] - d.targets(j, n));
    }
    return error_metrics(std::move(err)).mae;
}

// ---------------------------------------------------------------- EM monotonicity

struct MonotonicityResult {
    int fixtures = 0;
    double worst_relative_drop = 0.0;  // max over fixtures and iterations of (prev - cur) / |prev|
    int iterations = 0;
};

/// Trains 20 seeded fixtures (K in {1,2,3,5}, D in {5,20}, L_w in {0,1,2}) and records
/// the largest relative log-likelihood drop between consecutive regular iterations.
inline MonotonicityResult em_monotonicity(int fixtures = 20) {
    const Index Ks[] = {1, 2, 3, 5};
    const Index Ds[] = {5, 20};
    MonotonicityResult out;
    out.fixtures = fixtures;
    for (int i = 0; i < fixtures; ++i) {
        const Index K = Ks[i % 4];
        const Index D = Ds[(i / 4) % 2];
        const Index lw = i % 3;
        synthetic::RandomModelOptions opt;
        opt.num_components = K;
        opt.input_dim = D;
        opt.latent = {2, lw};
        opt.noise_scale = 0.3;
        const auto s = synthetic::sample({synthetic::random_model(opt, 1000 + i), static_cast<std::uint64_t>(2000 + i), 600});
        TrainingConfig cfg;
        cfg.num_components = K;
        cfg.latent = {2, lw};
        cfg.seed = static_cast<std::uint64_t>(i);
        cfg.max_iterations = 100;
        cfg.tolerance = 1e-12;
        cfg.consistency_tolerance = std::numeric_limits<double>::infinity();
        const TrainingResult r = train(s.data, cfg);
        for (std::size_t t = 1; t < r.history.size(); ++t) {
            if (r.history[t - 1].event != IterationEvent::none) continue;
            const double prev = r.history[t - 1].log_likelihood;
            out.worst_relative_drop =
                std::max(out.worst_relative_drop, (prev - r.history[t].log_likelihood) / std::abs(prev));
            ++out.iterations;
        }
    }
    return out;
}

// ---------------------------------------------------------------- quadrature oracle

struct OracleEquivalenceResult {
    double max_resp_error = 0.0;
    double max_latent_error = 0.0;
    double max_loglik_error = 0.0;
    int points = 0;
};

/// Compares closed-form E-steps with grid quadrature on small fixtures (D <= 8, L_w <= 2).
inline OracleEquivalenceResult oracle_equivalence() {
    struct Fixture {
        Index K, D, lt, lw;
        std::uint64_t seed;
    };
    const Fixture fixtures[] = {{2, 4, 1, 1, 7}, {3, 6, 2, 1, 8}, {2, 4, 1, 2, 9}, {2, 8, 1, 2, 10}, {1, 5, 2, 1, 11}};
    OracleEquivalenceResult out;
    for (const auto& f : fixtures) {
        synthetic::RandomModelOptions opt;
        opt.num_components = f.K;
        opt.input_dim = f.D;
        opt.latent = {f.lt, f.lw};
        opt.noise_scale = 0.5;
        opt.target_spread = 1.0;
        const InverseModel m = synthetic::random_model(opt, f.seed);
        const auto s = synthetic::sample({m, f.seed + 100, 8});
        const ZPosterior z = e_step_z(m, s.data);
        const LatentPosterior lat = e_step_w(m, s.data);
        const Index points = f.lw == 1 ? 801 : 201;
        for (Index n = 0; n < s.data.size(); ++n) {
            const auto o = synthetic::oracle_posterior(m, s.data.inputs.col(n), s.data.targets.col(n), points, 8.0);
            out.max_resp_error = std::max(out.max_resp_error, (o.resp - z.resp.r.row(n).transpose()).cwiseAbs().maxCoeff());
            for (Index k = 0; k < f.K; ++k)
                out.max_latent_error = std::max(
                    out.max_latent_error,
                    (o.latent_mean.col(k) - lat.mean[static_cast<std::size_t>(k)].col(n)).cwiseAbs().maxCoeff());
            out.max_loglik_error =
                std::max(out.max_loglik_error, std::abs(o.log_marginal - z.sample_log_likelihood[n]));
            ++out.points;
        }
    }
    return out;
}

// ---------------------------------------------------------------- factorization

/// Largest relative gap between log p(x, y) from the inverse model and
/// log p(y) + log p(x | y) from the derived forward model.
inline double factorization_gap(int points_per_fixture = 20) {
    double worst = 0.0;
    int fixture = 0;
    for (Index K : {1, 3}) {
        for (Index D : {5, 20}) {
            for (Index lw : {0, 2}) {
                synthetic::RandomModelOptions opt;
                opt.num_components = K;
                opt.input_dim = D;
                opt.latent = {2, lw};
                opt.noise_scale = 0.3;
                const InverseModel m = synthetic::random_model(opt, static_cast<std::uint64_t>(300 + fixture));
                const ForwardModel fwd = derive_forward(m);
                const auto s = synthetic::sample({m, static_cast<std::uint64_t>(400 + fixture), points_per_fixture});
                for (Index n = 0; n < points_per_fixture; ++n) {
                    const Vector x = s.output.col(n);
                    const Vector y = s.data.inputs.col(n);
                    const double a = joint_log_density(m, x, y);
                    const double b = forward_joint_log_density(fwd, x, y);
                    worst = std::max(worst, std::abs(a - b) / std::abs(a));
                }
                ++fixture;
            }
        }
    }
    return worst;
}

// ---------------------------------------------------------------- parameter recovery

struct RecoveryResult {
    double oracle_mae = 0.0;
    double trained_mae = 0.0;
    int iterations = 0;
};

/// Known model K=3, D=20, L_t=2, L_w=1 (seed 11), 5000 training samples, 2000 held out.
inline RecoveryResult parameter_recovery(unsigned threads = 1) {
    synthetic::RandomModelOptions opt;
    opt.num_components = 3;
    opt.input_dim = 20;
    opt.latent = {2, 1};
    const InverseModel truth = synthetic::random_model(opt, 11);
    const auto tr = synthetic::sample({truth, 11, 5000});
    const auto te = synthetic::sample({truth, 12, 2000});
    TrainingConfig cfg;
    cfg.num_components = 3;
    cfg.latent = {2, 1};
    cfg.seed = 11;
    cfg.threads = threads;
    const TrainingResult r = train(tr.data, cfg);
    RecoveryResult out;
    out.oracle_mae = observed_mae(derive_forward(truth), te.data);
    out.trained_mae = observed_mae(derive_forward(r.model), te.data);
    out.iterations = static_cast<int>(r.history.size()) - 1;
    return out;
}

// ---------------------------------------------------------------- hybrid benefit

struct HybridTrial {
    double plain_mae = 0.0;
    double hybrid_mae = 0.0;
};

/// Generator with one nuisance output dimension; L_w = 1 versus L_w = 0 on held-out observed MAE.
inline HybridTrial hybrid_benefit(std::uint64_t seed, unsigned threads = 1) {
    synthetic::RandomModelOptions opt;
    opt.num_components = 3;
    opt.input_dim = 20;
    opt.latent = {2, 1};
    const InverseModel truth = synthetic::random_model(opt, 500 + seed);
    const auto tr = synthetic::sample({truth, 600 + seed, 2000});
    const auto te = synthetic::sample({truth, 700 + seed, 1000});
    TrainingConfig cfg;
    cfg.num_components = 3;
    cfg.seed = seed;
    cfg.threads = threads;
    HybridTrial out;
    cfg.latent = {2, 0};
    out.plain_mae = observed_mae(derive_forward(train(tr.data, cfg).model), te.data);
    cfg.latent = {2, 1};
    out.hybrid_mae = observed_mae(derive_forward(train(tr.data, cfg).model), te.data);
    return out;
}

// ---------------------------------------------------------------- BIC model selection

struct BicSweepPoint {
    Index K = 0;
    std::optional<BicScore> score;  // empty when training failed
    std::string error;
};

/// Trains K = 1..8 on data from a K=4 generator (D=10, L_t=2, N=1000) and returns every score.
inline std::vector<BicSweepPoint> bic_sweep_trial(std::uint64_t seed, unsigned threads = 1) {
    synthetic::RandomModelOptions opt;
    opt.num_components = 4;
    opt.input_dim = 10;
    opt.latent = {2, 0};
    const InverseModel truth = synthetic::random_model(opt, 100 + seed);
    const auto tr = synthetic::sample({truth, 200 + seed, 1000});
    std::vector<BicSweepPoint> out;
    for (Index K = 1; K <= 8; ++K) {
        BicSweepPoint p;
        p.K = K;
        TrainingConfig cfg;
        cfg.num_components = K;
        cfg.latent = {2, 0};
        cfg.seed = seed;
        cfg.threads = threads;
        try {
            const TrainingResult r = train(tr.data, cfg);
            p.score = bic(r.model, tr.data, threads);
        } catch (const Error& e) {
            p.error = e.what();
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline Index bic_argmin(const std::vector<BicSweepPoint>& sweep) {
    Index best = 0;
    double value = std::numeric_limits<double>::infinity();
    for (const auto& p : sweep)
        if (p.score && p.score->bic < value) {
            value = p.score->bic;
            best = p.K;
        }
    return best;
}

// ---------------------------------------------------------------- descriptor

struct DescriptorResult {
    int patches = 0;
    int wrong_length = 0;
    double constant_max_abs = 0.0;
    double min_entry = 0.0;
    double max_block_norm = 0.0;
};

inline DescriptorResult descriptor_checks(int patches = 1000, std::uint64_t seed = 1) {
    DescriptorResult out;
    out.patches = patches;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    out.min_entry = std::numeric_limits<double>::infinity();
    for (int i = 0; i < patches; ++i) {
        Patch p(kPatchSize, kPatchSize);
        for (Index j = 0; j < p.size(); ++j) p.data()[j] = u(rng);
        const Vector y = phog(p);
        if (y.size() != 1888) ++out.wrong_length;
        out.min_entry = std::min(out.min_entry, y.minCoeff());
        for (Index b = 0; b + 32 <= y.size(); b += 32) out.max_block_norm = std::max(out.max_block_norm, y.segment(b, 32).norm());
    }
    const Vector z = phog(Patch::Constant(kPatchSize, kPatchSize, 0.5));
    out.constant_max_abs = z.size() == 1888 ? z.cwiseAbs().maxCoeff() : std::numeric_limits<double>::infinity();
    return out;
}

// ---------------------------------------------------------------- synthetic pose world

/// Descriptor generator standing in for images: x = [angles; shift; latent]
/// maps to y = A_z x + b_z + e + c, with z the most probable component of x
/// under the generator's Gaussian mixture. The shift coordinates are the
/// corrective shift, i.e. minus the box misalignment. The clutter term c
/// mimics background entering a misaligned box: a fixed per-sample direction
/// scaled by clutter * ||shift|| / shift_sigma.
struct PoseWorld {
    InverseModel truth;
    Index num_angles = 1;
    double shift_sigma = 6.4;  // pixels; sigma_frac 0.1 of a 64 px box
    double clutter = 2.0;
    std::vector<SpdFactor> prior_factor;

    struct Options {
        Index num_components = 4;
        Index input_dim = 20;
        Index num_angles = 1;
        Index latent_dim = 1;
        double angle_spread = 20.0;
        double angle_scale = 6.0;
        double shift_sigma = 6.4;
        double noise_scale = 0.5;
        double clutter = 2.0;
    };

    static PoseWorld make(const Options& o, std::uint64_t seed) {
        synthetic::RandomModelOptions r;
        r.num_components = o.num_components;
        r.input_dim = o.input_dim;
        r.latent = {o.num_angles + 2, o.latent_dim};
        r.target_spread = o.angle_spread;
        r.target_scale = o.angle_scale;
        r.noise_scale = o.noise_scale;
        r.map_scale = 0.2;
        r.equal_priors = true;
        PoseWorld w;
        w.truth = synthetic::random_model(r, seed);
        w.truth.layout.shift_dims = 2;
        w.num_angles = o.num_angles;
        w.shift_sigma = o.shift_sigma;
        w.clutter = o.clutter;
        const Index a = o.num_angles;
        for (auto& c : w.truth.components) {
            c.mean.segment(a, 2).setZero();
            c.cov.middleRows(a, 2).setZero();
            c.cov.middleCols(a, 2).setZero();
            c.cov.block(a, a, 2, 2) = Matrix::Identity(2, 2) * o.shift_sigma * o.shift_sigma;
            w.prior_factor.push_back(SpdFactor::factor(c.cov, "pose world"));
        }
        validate(w.truth);
        return w;
    }

    Index component_of(const Vector& x) const {
        Index best = 0;
        double top = -std::numeric_limits<double>::infinity();
        for (Index k = 0; k < truth.num_components(); ++k) {
            const auto& c = truth.components[static_cast<std::size_t>(k)];
            const double v = std::log(c.prior) + prior_factor[static_cast<std::size_t>(k)].log_gaussian(x, c.mean);
            if (v > top) {
                top = v;
                best = k;
            }
        }
        return best;
    }

    /// `noise` holds 2D standard normals: sensor noise, then the clutter direction.
    Vector descriptor(const Vector& x, const Vector& noise) const {
        const auto& c = truth.components[static_cast<std::size_t>(component_of(x))];
        const Index D = truth.input_dim;
        const double mis = clutter * x.segment(num_angles, 2).norm() / shift_sigma;
        return c.map * x + c.offset + (noise.head(D) + mis * noise.tail(D)).cwiseProduct(c.noise.cwiseSqrt());
    }

    /// Draws an aligned pose x (shift block zero) from the generator's prior.
    Vector draw_pose(std::mt19937_64& rng) const {
        std::vector<double> priors;
        for (const auto& c : truth.components) priors.push_back(c.prior);
        std::discrete_distribution<std::size_t> pick(priors.begin(), priors.end());
        const auto& c = truth.components[pick(rng)];
        std::normal_distribution<double> g;
        Vector xi(c.mean.size());
        for (Index i = 0; i < xi.size(); ++i) xi[i] = g(rng);
        Vector x = c.mean + Matrix(Eigen::LLT<Matrix>(c.cov).matrixL()) * xi;
        x.segment(num_angles, 2).setZero();
        return x;
    }

    Vector draw_noise(std::mt19937_64& rng) const {
        std::normal_distribution<double> g;
        Vector e(2 * truth.input_dim);
        for (Index i = 0; i < e.size(); ++i) e[i] = g(rng);
        return e;
    }

    /// Training set: poses with Gaussian misalignment labels, observed block = [angles; shift].
    TrainingSet training_set(Index n, std::uint64_t seed, bool with_shift = true) const {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g;
        TrainingSet d;
        const Index lt = num_angles + (with_shift ? 2 : 0);
        d.inputs.resize(truth.input_dim, n);
        d.targets.resize(lt, n);
        for (Index i = 0; i < n; ++i) {
            Vector x = draw_pose(rng);
            if (with_shift) {
                x[num_angles] = shift_sigma * g(rng);
                x[num_angles + 1] = shift_sigma * g(rng);
            }
            d.inputs.col(i) = descriptor(x, draw_noise(rng));
            d.targets.col(i) = x.head(lt);
        }
        return d;
    }
};

struct ClosedLoopResult {
    int trials = 0;
    int shrinking = 0;             // ||x_b|| at iteration 2 < ||x_b|| at iteration 1
    double mae_one = 0.0;          // pose MAE after 1 iteration
    double mae_two = 0.0;          // pose MAE after 2 iterations
};

/// Iterative pose and shift prediction on descriptors generated from a known model with a known injected misalignment.
inline ClosedLoopResult closed_loop(int trials = 100, std::uint64_t seed = 5, unsigned threads = 1) {
    PoseWorld::Options o;
    const PoseWorld world = PoseWorld::make(o, seed);
    TrainingConfig cfg;
    cfg.num_components = o.num_components;
    cfg.latent = {o.num_angles + 2, o.latent_dim};
    cfg.layout.shift_dims = 2;
    cfg.seed = seed;
    cfg.threads = threads;
    const ForwardModel fwd = derive_forward(train(world.training_set(4000, seed + 1), cfg).model);

    ClosedLoopResult out;
    out.trials = trials;
    std::mt19937_64 rng(seed + 2);
    std::normal_distribution<double> g;
    std::vector<double> e1, e2;
    for (int t = 0; t < trials; ++t) {
        const Vector pose = world.draw_pose(rng);
        const Vector noise = world.draw_noise(rng);
        const Box truth{96.0, 96.0, 64.0, 64.0};
        const Box start = truth.shifted(world.shift_sigma * g(rng), world.shift_sigma * g(rng));
        auto extract = [&](const Box& b) -> std::optional<Vector> {
            Vector x = pose;
            x[world.num_angles] = truth.x - b.x;
            x[world.num_angles + 1] = truth.y - b.y;
            return world.descriptor(x, noise);
        };
        const PredictionOutput p = iterative_predict(extract, start, fwd, 0.0, 2);
        if (p.shift_norms.size() == 2 && p.shift_norms[1] < p.shift_norms[0]) ++out.shrinking;
        for (Index a = 0; a < world.num_angles; ++a) {
            e1.push_back(p.angle_trace.front()[a] - pose[a]);
            e2.push_back(p.angle_trace.back()[a] - pose[a]);
        }
    }
    out.mae_one = error_metrics(e1).mae;
    out.mae_two = error_metrics(e2).mae;
    return out;
}

/// Synthetic pose dataset on top of a PoseWorld: each person carries a fixed
/// latent appearance vector, boxes live on a 256 x 256 canvas.
struct SyntheticPoseSource {
    const PoseWorld* world = nullptr;
    std::vector<Vector> pose;    // aligned x per sample (person latent included)
    std::vector<Vector> noise;
    std::vector<Box> truth;
    double canvas = 256.0;

    std::vector<std::optional<Vector>> operator()(std::size_t i, std::span<const Box> boxes) const {
        std::vector<std::optional<Vector>> out;
        for (const Box& b : boxes) {
            if (!(b.x < canvas && b.y < canvas && b.x + b.w > 0.0 && b.y + b.h > 0.0)) {
                out.emplace_back();
                continue;
            }
            Vector x = pose[i];
            x[world->num_angles] = truth[i].x - b.x;
            x[world->num_angles + 1] = truth[i].y - b.y;
            out.emplace_back(world->descriptor(x, noise[i]));
        }
        return out;
    }
};

struct SyntheticPoseData {
    PoseDataset data;
    SyntheticPoseSource source;
};

/// `persons` people with `per_person` samples each; person p has latent w_p shared by its samples.
inline SyntheticPoseData synthetic_pose_data(const PoseWorld& world, int persons, int per_person, std::uint64_t seed,
                                             double person_spread = 2.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    SyntheticPoseData out;
    out.source.world = &world;
    for (Index a = 0; a < world.num_angles; ++a) out.data.angle_names.push_back("angle" + std::to_string(a));
    const Index lw = world.truth.latent.latent_dim;
    for (int p = 0; p < persons; ++p) {
        Vector w(lw);
        for (Index j = 0; j < lw; ++j) w[j] = person_spread * g(rng);
        for (int s = 0; s < per_person; ++s) {
            Vector x = world.draw_pose(rng);
            x.tail(lw) = w;
            PoseSample ps;
            ps.image = "synthetic";
            ps.box = {96.0, 96.0, 64.0, 64.0};
            ps.angles = x.head(world.num_angles);
            ps.person = "p" + std::to_string(p);
            out.data.samples.push_back(ps);
            out.source.pose.push_back(std::move(x));
            out.source.noise.push_back(world.draw_noise(rng));
            out.source.truth.push_back(ps.box);
        }
    }
    return out;
}

// ---------------------------------------------------------------- determinism

/// Trains the same fixture with 1 and `threads` workers and compares the serialized bytes.
inline bool thread_count_determinism(unsigned threads = 4) {
    synthetic::RandomModelOptions opt;
    opt.num_components = 4;
    opt.input_dim = 30;
    opt.latent = {2, 2};
    const auto s = synthetic::sample({synthetic::random_model(opt, 77), 78, 3000});
    TrainingConfig cfg;
    cfg.num_components = 4;
    cfg.latent = {2, 2};
    cfg.seed = 79;
    cfg.threads = 1;
    const std::string a = io::encode_model(train(s.data, cfg).model);
    cfg.threads = threads;
    const std::string b = io::encode_model(train(s.data, cfg).model);
    return a == b;
}

}  // namespace hgllim::experiments
