#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hgllim/em.hpp"
#include "hgllim/error.hpp"
#include "hgllim/hog.hpp"
#include "hgllim/model.hpp"
#include "hgllim/parallel.hpp"

namespace hgllim {

/// One annotated face: box, angles in degrees, person id for grouping.
struct PoseSample {
    std::string image;
    Box box;
    Vector angles;
    std::string person;
    std::optional<Box> truth_box;
};

struct PoseDataset {
    std::vector<std::string> angle_names;
    std::vector<PoseSample> samples;

    std::size_t size() const noexcept { return samples.size(); }
    void check() const {
        if (angle_names.empty()) throw DataError("dataset: no angle columns");
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (samples[i].angles.size() != static_cast<Index>(angle_names.size()))
                throw DataError("dataset: sample " + std::to_string(i) + " has the wrong number of angles");
            if (!samples[i].angles.allFinite()) throw DataError("dataset: non-finite angle in sample " + std::to_string(i));
        }
    }
};

/// Seeded generator for stream `stream` of sample `index`; independent of evaluation order.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

struct ShiftDraw {
    Box box;
    Vector label;  // corrective shift, -delta
};

/// Displaces the box by delta ~ N(0, diag((sigma_frac w)^2, (sigma_frac h)^2)); the label is -delta.
inline ShiftDraw simulate_shift(const Box& box, double sigma_frac, std::mt19937_64& rng) {
    if (!(sigma_frac >= 0.0)) throw ContractError("simulate_shift: sigma_frac must be >= 0");
    ShiftDraw out;
    out.label = Vector::Zero(2);
    out.box = box;
    if (sigma_frac == 0.0) return out;
    std::normal_distribution<double> g;
    const double dx = sigma_frac * box.w * g(rng);
    const double dy = sigma_frac * box.h * g(rng);
    out.box = box.shifted(dx, dy);
    out.label << -dx, -dy;
    return out;
}

struct PredictionOutput {
    Vector angles;        // x_h
    Vector shift;         // cumulative applied shift, empty for pose-only models
    Vector latent;        // diagnostic
    Box box;              // final box
    int iterations = 0;
    bool diverged = false;
    std::vector<double> shift_norms;  // ||x_b|| predicted at each iteration
    std::vector<Vector> angle_trace;  // x_h predicted at each iteration
};

/// Splits a predicted output vector according to the model layout.
inline void split_output(const ForwardModel& fwd, const Vector& x, Vector& angles, Vector& shift, Vector& latent) {
    const Index lt = fwd.latent().observed_dim;
    const auto s = static_cast<Index>(fwd.layout().shift_dims);
    angles = x.head(lt - s);
    shift = x.segment(lt - s, s);
    latent = x.tail(fwd.latent().latent_dim);
}

/// Single-shot prediction from one descriptor.
inline PredictionOutput predict_once(const ForwardModel& fwd, const Vector& y) {
    PredictionOutput out;
    split_output(fwd, predict_mean(fwd, y), out.angles, out.shift, out.latent);
    out.iterations = 1;
    out.shift_norms.push_back(out.shift.norm());
    out.angle_trace.push_back(out.angles);
    return out;
}

/// Iterative pose and box-shift prediction.
///
/// `extract(box)` returns the descriptor at `box`, or nullopt once the box
/// no longer overlaps the image; the last valid prediction is then kept and
/// `diverged` is set.
template <class Extractor>
PredictionOutput iterative_predict(const Extractor& extract, const Box& box, const ForwardModel& fwd,
                                   double epsilon = 0.5, int max_iters = 2) {
    if (fwd.layout().shift_dims != 2)
        throw ContractError("iterative_predict: model has no bounding-box shift outputs");
    if (max_iters < 1) throw ContractError("iterative_predict: max_iters must be >= 1");
    PredictionOutput out;
    out.box = box;
    out.shift = Vector::Zero(2);
    for (int it = 0; it < max_iters; ++it) {
        const std::optional<Vector> y = extract(out.box);
        if (!y) {
            out.diverged = true;
            if (it == 0) throw OutOfBoundsError("iterative_predict: initial box is outside the image");
            break;
        }
        Vector angles, xb, latent;
        split_output(fwd, predict_mean(fwd, *y), angles, xb, latent);
        out.angles = std::move(angles);
        out.latent = std::move(latent);
        out.shift += xb;
        out.box = out.box.shifted(xb[0], xb[1]);
        out.iterations = it + 1;
        out.shift_norms.push_back(xb.norm());
        out.angle_trace.push_back(out.angles);
        if (xb.norm() <= epsilon) break;
    }
    return out;
}

struct AngleMetrics {
    std::string angle;
    double mae = 0.0;
    double std = 0.0;   // population std of |error|
    double rmse = 0.0;
    Index n = 0;
};

/// MAE, STD of |error| and RMSE. Sorted before summation so the result does not depend on order.
inline AngleMetrics error_metrics(std::vector<double> abs_errors, std::string name = {}) {
    AngleMetrics m;
    m.angle = std::move(name);
    m.n = static_cast<Index>(abs_errors.size());
    if (abs_errors.empty()) return m;
    for (double& e : abs_errors) e = std::abs(e);
    std::sort(abs_errors.begin(), abs_errors.end());
    const double n = static_cast<double>(abs_errors.size());
    m.mae = pairwise_sum(abs_errors) / n;
    std::vector<double> sq(abs_errors.size()), dev(abs_errors.size());
    for (std::size_t i = 0; i < abs_errors.size(); ++i) {
        sq[i] = abs_errors[i] * abs_errors[i];
        dev[i] = (abs_errors[i] - m.mae) * (abs_errors[i] - m.mae);
    }
    m.rmse = std::sqrt(pairwise_sum(sq) / n);
    m.std = std::sqrt(pairwise_sum(dev) / n);
    return m;
}

enum class Variant { pose, pose_d, pose_bb, pose_bb_d };

inline bool has_shift(Variant v) { return v == Variant::pose_bb || v == Variant::pose_bb_d; }
inline bool has_latent(Variant v) { return v == Variant::pose_d || v == Variant::pose_bb_d; }

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::pose: return "gllim_pose";
        case Variant::pose_d: return "hgllim_pose";
        case Variant::pose_bb: return "gllim_pose_bb";
        case Variant::pose_bb_d: return "hgllim_pose_bb";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    for (Variant v : {Variant::pose, Variant::pose_d, Variant::pose_bb, Variant::pose_bb_d})
        if (variant_name(v) == s) return v;
    throw ContractError("unknown variant '" + s + "' (expected gllim_pose, hgllim_pose, gllim_pose_bb, hgllim_pose_bb)");
}

struct EvalConfig {
    Variant variant = Variant::pose;
    TrainingConfig training;       // num_components, seed and numerics; output layout is set per variant
    Index latent_dim = 0;          // used by the -d variants
    double sigma_frac = 0.1;       // training shift spread for the bb variants
    double test_sigma_frac = -1.0;  // test box perturbation; negative means sigma_frac
    int augment = 1;               // shifted copies per training sample (bb variants)
    double epsilon = 0.5;
    int max_iters = 2;
    std::uint64_t seed = 0;        // shift draws
    unsigned threads = 1;          // folds run in parallel
    FeatureLayout feature_layout = FeatureLayout::phog_1888_v1;

    double test_sigma() const { return test_sigma_frac < 0.0 ? sigma_frac : test_sigma_frac; }
};

struct EvaluationReport {
    std::vector<AngleMetrics> metrics;
    std::vector<std::optional<PredictionOutput>> predictions;  // per sample; empty when skipped
    std::vector<std::string> warnings;
    Index folds = 0;
};

/// TrainingConfig for one variant: L_t = #angles (+2 with shifts), L_w per variant.
inline TrainingConfig variant_config(const EvalConfig& cfg, Index num_angles) {
    TrainingConfig t = cfg.training;
    const Index s = has_shift(cfg.variant) ? 2 : 0;
    t.latent = {num_angles + s, has_latent(cfg.variant) ? cfg.latent_dim : 0};
    if (has_latent(cfg.variant) && cfg.latent_dim < 1) throw ContractError("variant " + variant_name(cfg.variant) + " needs L_w >= 1");
    t.layout = {cfg.feature_layout, static_cast<std::uint32_t>(s)};
    t.threads = 1;
    return t;
}

namespace detail {

struct TrainingRows {
    std::vector<Vector> inputs;
    std::vector<Vector> targets;
    std::vector<std::size_t> owner;  // sample index
};

/// Descriptors and targets for every training row, computed once and shared by all folds.
template <class Source>
TrainingRows training_rows(const PoseDataset& data, const Source& source, const EvalConfig& cfg,
                           std::vector<std::string>& warnings) {
    const bool shifts = has_shift(cfg.variant);
    const std::size_t copies = shifts ? static_cast<std::size_t>(std::max(1, cfg.augment)) : 1;
    std::vector<std::vector<std::optional<Vector>>> feats(data.size());
    std::vector<std::vector<Vector>> labels(data.size());
    parallel_for(data.size(), cfg.threads, [&](std::size_t i) {
        const auto& s = data.samples[i];
        std::vector<Box> boxes;
        if (shifts) {
            auto rng = sample_rng(cfg.seed, i, 0);
            for (std::size_t c = 0; c < copies; ++c) {
                ShiftDraw d = simulate_shift(s.box, cfg.sigma_frac, rng);
                boxes.push_back(d.box);
                labels[i].push_back(std::move(d.label));
            }
        } else {
            boxes.push_back(s.box);
        }
        feats[i] = source(i, std::span<const Box>(boxes));
    });
    TrainingRows rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t c = 0; c < feats[i].size(); ++c) {
            if (!feats[i][c]) {
                warnings.push_back("sample " + std::to_string(i) + ": training box outside the image, row dropped");
                continue;
            }
            Vector t(data.samples[i].angles.size() + (shifts ? 2 : 0));
            t.head(data.samples[i].angles.size()) = data.samples[i].angles;
            if (shifts) t.tail(2) = labels[i][c];
            rows.inputs.push_back(std::move(*feats[i][c]));
            rows.targets.push_back(std::move(t));
            rows.owner.push_back(i);
        }
    }
    return rows;
}

}  // namespace detail

/// Cross-validated evaluation: samples with fold[i] == f are predicted by a model
/// trained on every row whose sample is in another fold. Folds run in parallel.
///
/// `source(i, boxes)` returns one optional descriptor per box for sample i.
template <class Source>
EvaluationReport evaluate_folds(const PoseDataset& data, const Source& source, const EvalConfig& cfg,
                                const std::vector<Index>& fold) {
    data.check();
    if (fold.size() != data.size()) throw ContractError("evaluate: fold assignment does not match the dataset");
    const Index num_angles = static_cast<Index>(data.angle_names.size());
    const TrainingConfig tcfg = variant_config(cfg, num_angles);
    EvaluationReport report;
    const detail::TrainingRows rows = detail::training_rows(data, source, cfg, report.warnings);
    if (rows.inputs.empty()) throw InsufficientDataError("evaluate: no usable training rows");
    const Index D = rows.inputs.front().size();

    std::vector<Index> fold_ids(fold.begin(), fold.end());
    std::sort(fold_ids.begin(), fold_ids.end());
    fold_ids.erase(std::unique(fold_ids.begin(), fold_ids.end()), fold_ids.end());
    if (fold_ids.size() < 2) throw InsufficientDataError("evaluate: need at least two folds");
    report.folds = static_cast<Index>(fold_ids.size());
    report.predictions.resize(data.size());

    std::vector<std::vector<std::string>> fold_warnings(fold_ids.size());
    parallel_for(fold_ids.size(), cfg.threads, [&](std::size_t f) {
        const Index id = fold_ids[f];
        std::vector<Index> train_rows;
        for (std::size_t r = 0; r < rows.owner.size(); ++r)
            if (fold[rows.owner[r]] != id) train_rows.push_back(static_cast<Index>(r));
        TrainingSet ts;
        ts.inputs.resize(D, static_cast<Index>(train_rows.size()));
        ts.targets.resize(tcfg.latent.observed_dim, static_cast<Index>(train_rows.size()));
        for (std::size_t j = 0; j < train_rows.size(); ++j) {
            ts.inputs.col(static_cast<Index>(j)) = rows.inputs[static_cast<std::size_t>(train_rows[j])];
            ts.targets.col(static_cast<Index>(j)) = rows.targets[static_cast<std::size_t>(train_rows[j])];
        }
        const ForwardModel fwd = derive_forward(train(ts, tcfg).model, tcfg.condition_cap);

        const double test_sigma = cfg.test_sigma();
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (fold[i] != id) continue;
            auto rng = sample_rng(cfg.seed, i, 1u << 20);
            const Box start = simulate_shift(data.samples[i].box, test_sigma, rng).box;
            auto extract = [&](const Box& b) -> std::optional<Vector> {
                const Box one[1] = {b};
                return source(i, std::span<const Box>(one)).front();
            };
            try {
                if (has_shift(cfg.variant)) {
                    report.predictions[i] = iterative_predict(extract, start, fwd, cfg.epsilon, cfg.max_iters);
                } else {
                    const auto y = extract(start);
                    if (!y) throw OutOfBoundsError("test box outside the image");
                    report.predictions[i] = predict_once(fwd, *y);
                    report.predictions[i]->box = start;
                }
            } catch (const OutOfBoundsError&) {
                fold_warnings[f].push_back("sample " + std::to_string(i) + ": test box outside the image, skipped");
            }
        }
    });
    for (auto& w : fold_warnings) report.warnings.insert(report.warnings.end(), w.begin(), w.end());

    for (Index a = 0; a < num_angles; ++a) {
        std::vector<double> err;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (report.predictions[i]) err.push_back(report.predictions[i]->angles[a] - data.samples[i].angles[a]);
        report.metrics.push_back(error_metrics(std::move(err), data.angle_names[static_cast<std::size_t>(a)]));
    }
    return report;
}

/// Folds by person id (leave-one-person-out), in sorted id order.
inline std::vector<Index> person_folds(const PoseDataset& data, std::vector<std::string>* warnings = nullptr) {
    std::map<std::string, Index> ids;
    for (const auto& s : data.samples) ids.emplace(s.person, 0);
    if (ids.size() < 2) throw InsufficientDataError("leave-one-out needs at least two persons");
    Index next = 0;
    for (auto& [name, id] : ids) {
        id = next++;
        if (warnings && name.empty()) warnings->push_back("samples without a person id form their own fold");
    }
    std::vector<Index> fold;
    for (const auto& s : data.samples) fold.push_back(ids.at(s.person));
    return fold;
}

/// Leave-one-person-out evaluation.
template <class Source>
EvaluationReport evaluate_loo(const PoseDataset& data, const Source& source, const EvalConfig& cfg) {
    std::vector<std::string> w;
    const auto fold = person_folds(data, &w);
    EvaluationReport r = evaluate_folds(data, source, cfg, fold);
    r.warnings.insert(r.warnings.begin(), w.begin(), w.end());
    return r;
}

/// Same number of folds as persons, but samples assigned uniformly at random.
template <class Source>
EvaluationReport evaluate_random_split(const PoseDataset& data, const Source& source, const EvalConfig& cfg) {
    const auto by_person = person_folds(data);
    const Index folds = *std::max_element(by_person.begin(), by_person.end()) + 1;
    std::vector<Index> fold(data.size());
    for (std::size_t i = 0; i < fold.size(); ++i) fold[i] = static_cast<Index>(i) % folds;
    std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);
    std::shuffle(fold.begin(), fold.end(), rng);
    return evaluate_folds(data, source, cfg, fold);
}

}  // namespace hgllim
