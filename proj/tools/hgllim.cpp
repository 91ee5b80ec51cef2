// hgllim command-line tool: extract, train, predict, evaluate, bic-sweep, synth, inspect.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hgllim/csv.hpp"
#include "hgllim/dataset.hpp"
#include "hgllim/em.hpp"
#include "hgllim/hog.hpp"
#include "hgllim/manifest.hpp"
#include "hgllim/model.hpp"
#include "hgllim/parallel.hpp"
#include "hgllim/pipeline.hpp"
#include "hgllim/serialize.hpp"
#include "hgllim/synthetic.hpp"
#if HGLLIM_HAVE_OPENCV
#include "hgllim/opencv_io.hpp"
#endif

namespace fs = std::filesystem;
using namespace hgllim;

namespace {

using Clock = std::chrono::steady_clock;

ImageDecoder default_decoder() {
#if HGLLIM_HAVE_OPENCV
    return opencv_decode;
#else
    return {};
#endif
}

std::string join(const std::vector<std::string>& v, char sep) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + v[i];
    return s;
}

std::vector<std::string> target_names(Index lt, std::uint32_t shift_dims, const std::vector<std::string>& given) {
    if (!given.empty()) {
        if (static_cast<Index>(given.size()) != lt)
            throw ContractError("--names has " + std::to_string(given.size()) + " entries, model has L_t=" + std::to_string(lt));
        return given;
    }
    std::vector<std::string> out;
    for (Index i = 0; i < lt - static_cast<Index>(shift_dims); ++i) out.push_back("t" + std::to_string(i));
    if (shift_dims == 2) {
        out.push_back("shift_x");
        out.push_back("shift_y");
    }
    return out;
}

struct Targets {
    std::vector<std::string> names;
    Matrix values;  // L_t x N
};

Targets read_targets(const std::string& path, const std::vector<std::string>& columns) {
    const csv::Table t = csv::read(path);
    Targets out;
    out.names = columns.empty() ? t.header : columns;
    if (out.names.empty()) throw DataError(path + ": no target columns");
    out.values = csv::numeric(t, out.names);
    return out;
}

TrainingSet load_training(const std::string& features, const std::string& targets, const std::vector<std::string>& columns,
                          Index declared_dim, FeatureLayout& layout, std::vector<std::string>& names) {
    const io::FeatureFile f = io::load_features(features);
    if (declared_dim > 0 && f.features.rows() != declared_dim)
        throw DataError(features + ": descriptors have D=" + std::to_string(f.features.rows()) + " but --d is " +
                        std::to_string(declared_dim));
    Targets t = read_targets(targets, columns);
    if (t.values.cols() != f.features.cols())
        throw DataError(targets + ": " + std::to_string(t.values.cols()) + " target rows but " + features + " holds " +
                        std::to_string(f.features.cols()) + " descriptors");
    TrainingSet d;
    d.inputs = f.features;
    d.targets = std::move(t.values);
    d.check();
    layout = f.layout;
    names = std::move(t.names);
    return d;
}

ExperimentManifest manifest_for(const std::string& command, const std::vector<std::string>& argv,
                                const std::vector<std::string>& inputs) {
    ExperimentManifest m;
    m.command = command;
    m.argv = argv;
    m.dataset_hash = inputs.empty() ? std::string{} : hash_files(inputs);
    m.stamp_start();
    return m;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------- extract

struct ExtractArgs {
    std::string boxes;
    std::string out;
};

int cmd_extract(const ExtractArgs& a, unsigned threads) {
    const csv::Table t = csv::read(a.boxes);
    const Matrix box = csv::numeric(t, {"x", "y", "w", "h"});
    const std::size_t pcol = t.column("path");
    const auto base = fs::path(a.boxes).parent_path();
    const ImageDecoder decoder = default_decoder();
    io::FeatureFile f;
    f.layout = FeatureLayout::phog_1888_v1;
    f.features.resize(kPhogDim, static_cast<Index>(t.size()));
    std::vector<std::string> failed(t.size());
    parallel_for(t.size(), threads, [&](std::size_t r) {
        const fs::path p = t.rows[r][pcol];
        const auto c = static_cast<Index>(r);
        try {
            const Image img = load_image(p.is_absolute() ? p.string() : (base / p).string(), decoder);
            f.features.col(c) = extract_descriptor(img, Box{box(0, c), box(1, c), box(2, c), box(3, c)});
        } catch (const Error& e) {
            failed[r] = e.what();
        }
    });
    std::string msg;
    int bad = 0;
    for (std::size_t r = 0; r < t.size(); ++r) {
        if (failed[r].empty()) continue;
        if (bad++ < 20) msg += "\n  line " + std::to_string(t.line[r]) + ": " + failed[r];
    }
    if (bad) throw DataError(a.boxes + ": " + std::to_string(bad) + " row(s) could not be extracted" + msg);
    io::save_features(a.out, f);
    std::cerr << "extracted " << t.size() << " descriptors of length " << kPhogDim << " to " << a.out << '\n';
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string features;
    std::string targets;
    std::vector<std::string> columns;
    std::string out;
    std::string history;
    Index k = 1;
    Index lw = 0;
    Index declared_dim = 0;
    unsigned shift_dims = 0;
    std::uint64_t seed = 0;
    int max_iter = 200;
    double tol = 1e-6;
};

void write_history(const std::string& path, const TrainingResult& r, const ExperimentManifest& m) {
    csv::Writer w;
    m.embed(w);
    w.row({"iteration", "log_likelihood", "event", "counts"});
    for (const auto& h : r.history) {
        std::vector<std::string> counts;
        for (double c : h.counts) counts.push_back(csv::format(c));
        const char* ev = h.event == IterationEvent::reinitialized ? "reinitialized"
                         : h.event == IterationEvent::dropped     ? "dropped"
                                                                  : "";
        w.row({std::to_string(h.iteration), csv::format(h.log_likelihood), ev, join(counts, ' ')});
    }
    w.save(path);
}

int cmd_train(const TrainArgs& a, unsigned threads, const std::vector<std::string>& argv) {
    const auto t0 = Clock::now();
    ExperimentManifest m = manifest_for("train", argv, {a.features, a.targets});
    FeatureLayout layout{};
    std::vector<std::string> names;
    const TrainingSet d = load_training(a.features, a.targets, a.columns, a.declared_dim, layout, names);
    if (a.shift_dims != 0 && a.shift_dims != 2) throw ContractError("--shift-dims must be 0 or 2");
    if (static_cast<Index>(a.shift_dims) > d.target_dim())
        throw ContractError("--shift-dims 2 needs at least two target columns");
    TrainingConfig cfg;
    cfg.num_components = a.k;
    cfg.latent = {d.target_dim(), a.lw};
    cfg.seed = a.seed;
    cfg.max_iterations = a.max_iter;
    cfg.tolerance = a.tol;
    cfg.threads = threads;
    cfg.layout = {layout, a.shift_dims};
    const TrainingResult r = train(d, cfg);
    io::save_model(a.out, r.model);

    m.K = a.k;
    m.L_t = d.target_dim();
    m.L_w = a.lw;
    m.seeds = {a.seed};
    m.threads = resolve_threads(threads);
    m.wall_seconds = seconds_since(t0);
    write_history(a.history.empty() ? a.out + ".history.csv" : a.history, r, m);
    m.save(a.out + ".manifest.json");
    std::cerr << "trained K=" << r.model.num_components() << " L_t=" << d.target_dim() << " L_w=" << a.lw << " on "
              << d.size() << " samples: " << r.history.size() << " iterations, log-likelihood "
              << (r.history.empty() ? 0.0 : r.history.back().log_likelihood) << (r.converged ? ", converged" : "")
              << '\n';
    return 0;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
    std::string model;
    std::string features;
    std::string boxes;
    std::string targets;
    std::vector<std::string> names;
    std::string out;
    bool iterative = false;
    double epsilon = 0.5;
    int max_iters = 2;
};

int cmd_predict(const PredictArgs& a, unsigned threads) {
    const InverseModel model = io::load_model(a.model);
    const ForwardModel fwd = derive_forward(model);
    const Index lt = model.latent.observed_dim;
    const auto names = target_names(lt, model.layout.shift_dims, a.names);
    if (a.iterative && model.layout.shift_dims != 2)
        throw ContractError("--iterative needs a model with bounding-box shift outputs; " + a.model + " is pose-only");
    if (a.iterative == a.boxes.empty())
        throw ContractError(a.iterative ? "--iterative needs --boxes" : "--boxes is only used with --iterative");
    if (!a.iterative && a.features.empty()) throw ContractError("predict needs --features or --iterative --boxes");

    std::vector<PredictionOutput> preds;
    if (!a.iterative) {
        const io::FeatureFile f = io::load_features(a.features);
        if (f.features.cols() > 0 && f.features.rows() != model.input_dim)
            throw DataError("dimension mismatch: model " + a.model + " expects D=" + std::to_string(model.input_dim) +
                            " but " + a.features + " has D=" + std::to_string(f.features.rows()));
        preds.resize(static_cast<std::size_t>(f.features.cols()));
        parallel_for(preds.size(), threads, [&](std::size_t i) {
            preds[i] = predict_once(fwd, f.features.col(static_cast<Index>(i)));
        });
    } else {
        if (model.input_dim != kPhogDim)
            throw DataError("dimension mismatch: model " + a.model + " expects D=" + std::to_string(model.input_dim) +
                            " but image descriptors have D=" + std::to_string(kPhogDim));
        const csv::Table t = csv::read(a.boxes);
        const Matrix box = csv::numeric(t, {"x", "y", "w", "h"});
        const std::size_t pcol = t.column("path");
        const auto base = fs::path(a.boxes).parent_path();
        const ImageDecoder decoder = default_decoder();
        preds.resize(t.size());
        parallel_for(t.size(), threads, [&](std::size_t r) {
            const fs::path p = t.rows[r][pcol];
            const Image img = load_image(p.is_absolute() ? p.string() : (base / p).string(), decoder);
            const auto c = static_cast<Index>(r);
            auto extract = [&](const Box& b) -> std::optional<Vector> {
                if (!b.intersects(img)) return std::nullopt;
                return extract_descriptor(img, b);
            };
            preds[r] = iterative_predict(extract, Box{box(0, c), box(1, c), box(2, c), box(3, c)}, fwd, a.epsilon,
                                         a.max_iters);
        });
    }

    csv::Writer w;
    std::vector<std::string> head = {"row"};
    head.insert(head.end(), names.begin(), names.end());
    if (a.iterative) head.insert(head.end(), {"iterations", "diverged", "x", "y", "w", "h"});
    w.row(head);
    std::vector<std::vector<double>> err(static_cast<std::size_t>(lt));
    std::optional<Targets> truth;
    if (!a.targets.empty()) {
        truth = read_targets(a.targets, std::vector<std::string>(names.begin(), names.end() - model.layout.shift_dims));
        if (truth->values.cols() != static_cast<Index>(preds.size()))
            throw DataError(a.targets + ": " + std::to_string(truth->values.cols()) + " rows but " +
                            std::to_string(preds.size()) + " predictions");
    }
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& p = preds[i];
        std::vector<std::string> row = {std::to_string(i)};
        for (Index j = 0; j < p.angles.size(); ++j) row.push_back(csv::format(p.angles[j]));
        for (Index j = 0; j < p.shift.size(); ++j) row.push_back(csv::format(p.shift[j]));
        if (a.iterative)
            row.insert(row.end(), {std::to_string(p.iterations), p.diverged ? "1" : "0", csv::format(p.box.x),
                                   csv::format(p.box.y), csv::format(p.box.w), csv::format(p.box.h)});
        w.row(row);
        if (truth)
            for (Index j = 0; j < truth->values.rows(); ++j)
                err[static_cast<std::size_t>(j)].push_back(p.angles[j] - truth->values(j, static_cast<Index>(i)));
    }
    w.save(a.out);
    if (truth)
        for (Index j = 0; j < truth->values.rows(); ++j) {
            const AngleMetrics m = error_metrics(err[static_cast<std::size_t>(j)], truth->names[static_cast<std::size_t>(j)]);
            std::cerr << "MAE " << m.angle << " = " << csv::format(m.mae) << " (RMSE " << csv::format(m.rmse) << ", N "
                      << m.n << ")\n";
        }
    std::cerr << "wrote " << preds.size() << " predictions to " << a.out << '\n';
    return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string dataset;
    std::string prima;
    std::vector<std::string> angles;
    std::string variant = "gllim_pose";
    std::string protocol = "loo";
    Index k = 50;
    Index lw = 0;
    double sigma_frac = 0.1;
    double test_sigma_frac = -1.0;
    int augment = 1;
    double epsilon = 0.5;
    int max_iters = 2;
    std::uint64_t seed = 0;
    std::string out;
    std::string predictions;
};

int cmd_evaluate(const EvaluateArgs& a, unsigned threads, const std::vector<std::string>& argv) {
    const auto t0 = Clock::now();
    if (a.dataset.empty() == a.prima.empty()) throw ContractError("give exactly one of --dataset and --prima");
    const PoseDataset data = a.dataset.empty() ? prima_dataset(a.prima) : read_pose_csv(a.dataset, a.angles);
    std::vector<std::string> inputs;
    if (!a.dataset.empty()) inputs.push_back(a.dataset);
    for (const auto& s : data.samples) inputs.push_back(s.image);
    ExperimentManifest m = manifest_for("evaluate", argv, inputs);

    EvalConfig cfg;
    cfg.variant = parse_variant(a.variant);
    cfg.training.num_components = a.k;
    cfg.training.seed = a.seed;
    cfg.latent_dim = a.lw;
    cfg.sigma_frac = a.sigma_frac;
    cfg.test_sigma_frac = a.test_sigma_frac;
    cfg.augment = a.augment;
    cfg.epsilon = a.epsilon;
    cfg.max_iters = a.max_iters;
    cfg.seed = a.seed;
    cfg.threads = threads;
    if (a.protocol != "loo" && a.protocol != "random") throw ContractError("--protocol must be loo or random");

    const ImageFeatureSource source(data, default_decoder());
    const EvaluationReport r =
        a.protocol == "loo" ? evaluate_loo(data, source, cfg) : evaluate_random_split(data, source, cfg);
    for (const auto& msg : r.warnings) std::cerr << "warning: " << msg << '\n';

    const Index lw = has_latent(cfg.variant) ? a.lw : 0;
    m.K = a.k;
    m.L_t = static_cast<long long>(data.angle_names.size()) + (has_shift(cfg.variant) ? 2 : 0);
    m.L_w = lw;
    m.variant = variant_name(cfg.variant);
    m.sigma_frac = cfg.sigma_frac;
    m.epsilon = cfg.epsilon;
    m.seeds = {a.seed};
    m.threads = resolve_threads(threads);
    m.wall_seconds = seconds_since(t0);

    csv::Writer w;
    m.embed(w);
    w.row({"variant", "angle", "MAE", "STD", "RMSE", "N", "K", "L_w", "seed"});
    for (const auto& am : r.metrics) {
        w.row({m.variant, am.angle, csv::format(am.mae), csv::format(am.std), csv::format(am.rmse), std::to_string(am.n),
               std::to_string(a.k), std::to_string(lw), std::to_string(a.seed)});
        std::cerr << m.variant << ' ' << am.angle << ": MAE " << am.mae << ", STD " << am.std << ", RMSE " << am.rmse
                  << " (N " << am.n << ")\n";
    }
    w.save(a.out);
    m.save(a.out + ".json");

    if (!a.predictions.empty()) {
        csv::Writer p;
        m.embed(p);
        std::vector<std::string> head = {"index", "person"};
        for (const auto& n : data.angle_names) head.insert(head.end(), {n, n + "_pred"});
        head.insert(head.end(), {"iterations", "diverged"});
        p.row(head);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto& pr = r.predictions[i];
            std::vector<std::string> row = {std::to_string(i), data.samples[i].person};
            for (Index j = 0; j < data.samples[i].angles.size(); ++j)
                row.insert(row.end(), {csv::format(data.samples[i].angles[j]), pr ? csv::format(pr->angles[j]) : ""});
            row.insert(row.end(), {pr ? std::to_string(pr->iterations) : "0", pr && pr->diverged ? "1" : "0"});
            p.row(row);
        }
        p.save(a.predictions);
    }
    return 0;
}

// ---------------------------------------------------------------- bic-sweep

struct SweepArgs {
    std::string features;
    std::string targets;
    std::vector<std::string> columns;
    std::vector<Index> ks = {1, 5, 25, 50, 100};
    Index lw = 0;
    std::uint64_t seed = 0;
    int max_iter = 200;
    std::string out;
};

int cmd_bic_sweep(const SweepArgs& a, unsigned threads, const std::vector<std::string>& argv) {
    const auto t0 = Clock::now();
    ExperimentManifest m = manifest_for("bic-sweep", argv, {a.features, a.targets});
    FeatureLayout layout{};
    std::vector<std::string> names;
    const TrainingSet d = load_training(a.features, a.targets, a.columns, 0, layout, names);

    csv::Writer body;
    body.row({"K", "log_likelihood", "parameters", "BIC", "normalized", "MAE", "seconds", "error"});
    Index best = 0;
    double best_bic = std::numeric_limits<double>::infinity();
    for (Index k : a.ks) {
        const auto tk = Clock::now();
        TrainingConfig cfg;
        cfg.num_components = k;
        cfg.latent = {d.target_dim(), a.lw};
        cfg.seed = a.seed;
        cfg.max_iterations = a.max_iter;
        cfg.threads = threads;
        cfg.layout.feature_layout = layout;
        try {
            const InverseModel model = train(d, cfg).model;
            const BicScore s = bic(model, d, threads);
            const ForwardModel fwd = derive_forward(model);
            std::vector<double> err;
            for (Index n = 0; n < d.size(); ++n) {
                const Vector x = predict_mean(fwd, d.inputs.col(n));
                for (Index j = 0; j < d.target_dim(); ++j) err.push_back(x[j] - d.targets(j, n));
            }
            body.row({std::to_string(k), csv::format(s.log_likelihood), std::to_string(s.free_parameters),
                      csv::format(s.bic), csv::format(s.normalized), csv::format(error_metrics(err).mae),
                      csv::format(seconds_since(tk)), ""});
            if (s.bic < best_bic) {
                best_bic = s.bic;
                best = k;
            }
            std::cerr << "K=" << k << ": BIC " << s.bic << '\n';
        } catch (const Error& e) {
            body.row({std::to_string(k), "", "", "", "", "", csv::format(seconds_since(tk)), e.what()});
            std::cerr << "K=" << k << ": failed: " << e.what() << '\n';
        }
    }
    m.K = best;
    m.L_t = d.target_dim();
    m.L_w = a.lw;
    m.seeds = {a.seed};
    m.threads = resolve_threads(threads);
    m.wall_seconds = seconds_since(t0);
    csv::Writer w;
    m.embed(w);
    w.comment("argmin_K=" + std::to_string(best));
    m.save(a.out + ".json");
    const std::string text = w.str() + body.str();
    std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
    if (!(f << text)) throw DataError("cannot write " + a.out);
    if (best == 0) throw Error("bic-sweep: every K failed");
    std::cerr << "argmin K = " << best << '\n';
    return 0;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    Index k = 3;
    Index d = 20;
    Index lt = 2;
    Index lw = 1;
    Index n = 5000;
    std::uint64_t seed = 11;
    double noise = 0.1;
    std::string out;
};

int cmd_synth(const SynthArgs& a, const std::vector<std::string>& argv) {
    synthetic::RandomModelOptions opt;
    opt.num_components = a.k;
    opt.input_dim = a.d;
    opt.latent = {a.lt, a.lw};
    opt.noise_scale = a.noise;
    if (!(a.noise >= 0.0)) throw ContractError("--noise must be >= 0");
    InverseModel truth = synthetic::random_model(opt, a.seed);
    if (a.noise == 0.0)
        for (auto& c : truth.components) c.noise.setConstant(1e-300);
    const synthetic::Sample s = synthetic::sample({truth, a.seed + 1, a.n});

    fs::create_directories(a.out);
    const fs::path dir = a.out;
    io::save_features((dir / "features.hgfx").string(), {FeatureLayout::generic, s.data.inputs});
    io::save_model((dir / "truth.hglm").string(), truth);

    csv::Writer t;
    std::vector<std::string> head;
    for (Index j = 0; j < a.lt; ++j) head.push_back("t" + std::to_string(j));
    t.row(head);
    for (Index n = 0; n < a.n; ++n) {
        std::vector<std::string> row;
        for (Index j = 0; j < a.lt; ++j) row.push_back(csv::format(s.data.targets(j, n)));
        t.row(row);
    }
    t.save((dir / "targets.csv").string());

    csv::Writer h;
    head = {"component"};
    for (Index j = 0; j < a.lw; ++j) head.push_back("w" + std::to_string(j));
    h.row(head);
    for (Index n = 0; n < a.n; ++n) {
        std::vector<std::string> row = {std::to_string(s.component[static_cast<std::size_t>(n)])};
        for (Index j = 0; j < a.lw; ++j) row.push_back(csv::format(s.latent(j, n)));
        h.row(row);
    }
    h.save((dir / "hidden.csv").string());

    ExperimentManifest m = manifest_for("synth generate", argv, {});
    m.K = a.k;
    m.L_t = a.lt;
    m.L_w = a.lw;
    m.seeds = {a.seed, a.seed + 1};
    m.save((dir / "manifest.json").string());
    std::cerr << "wrote " << a.n << " samples (D=" << a.d << ", L_t=" << a.lt << ", L_w=" << a.lw << ", K=" << a.k
              << ") to " << a.out << '\n';
    return 0;
}

// ---------------------------------------------------------------- inspect

int cmd_inspect(const std::string& model, const std::string& resave) {
    const InverseModel m = io::load_model(model);
    if (!resave.empty()) io::save_model(resave, m);
    std::cout << io::model_to_json(m).dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid GLLiM regression and head-pose estimation"};
    app.require_subcommand(1);
    unsigned threads = 0;
    app.add_option("--threads", threads, "Worker threads (0 = all cores)")->envname("HGLLIM_THREADS");
    const std::vector<std::string> args(argv, argv + argc);

    ExtractArgs ex;
    auto* extract = app.add_subcommand("extract", "Pyramid-HOG descriptors for a list of image boxes");
    extract->add_option("--boxes", ex.boxes, "CSV with path,x,y,w,h")->required()->check(CLI::ExistingFile);
    extract->add_option("--out", ex.out, "Output feature file (.hgfx)")->required();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model with EM");
    train_cmd->add_option("--features", tr.features, "Feature file (.hgfx)")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--targets", tr.targets, "Target CSV")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--columns", tr.columns, "Target columns (default: all)")->delimiter(',');
    train_cmd->add_option("--k", tr.k, "Number of components")->check(CLI::PositiveNumber);
    train_cmd->add_option("--lw", tr.lw, "Latent output dimension")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--d", tr.declared_dim, "Expected descriptor dimension");
    train_cmd->add_option("--shift-dims", tr.shift_dims, "Trailing target columns that are box shifts (0 or 2)");
    train_cmd->add_option("--seed", tr.seed);
    train_cmd->add_option("--max-iter", tr.max_iter)->check(CLI::PositiveNumber);
    train_cmd->add_option("--tol", tr.tol);
    train_cmd->add_option("--history", tr.history, "History CSV (default: <out>.history.csv)");
    train_cmd->add_option("--out", tr.out, "Model file (.hglm)")->required();

    PredictArgs pr;
    auto* predict = app.add_subcommand("predict", "Predict targets with a trained model");
    predict->add_option("--model", pr.model)->required()->check(CLI::ExistingFile);
    predict->add_option("--features", pr.features, "Feature file (.hgfx)")->check(CLI::ExistingFile);
    predict->add_flag("--iterative", pr.iterative, "Joint pose and box-shift refinement on images");
    predict->add_option("--boxes", pr.boxes, "CSV with path,x,y,w,h (with --iterative)")->check(CLI::ExistingFile);
    predict->add_option("--epsilon", pr.epsilon, "Stop when the predicted shift is this small (pixels)");
    predict->add_option("--max-iters", pr.max_iters)->check(CLI::PositiveNumber);
    predict->add_option("--targets", pr.targets, "Ground-truth CSV; prints MAE per target")->check(CLI::ExistingFile);
    predict->add_option("--names", pr.names, "Names of the target columns")->delimiter(',');
    predict->add_option("--out", pr.out, "Predictions CSV")->required();

    EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "Cross-validated head-pose evaluation");
    evaluate->add_option("--dataset", ev.dataset, "Dataset CSV (path,x,y,w,h,person,angles...)")->check(CLI::ExistingFile);
    evaluate->add_option("--prima", ev.prima, "Prima-style directory")->check(CLI::ExistingDirectory);
    evaluate->add_option("--angles", ev.angles, "Angle columns (default: all after person)")->delimiter(',');
    evaluate->add_option("--variant", ev.variant, "gllim_pose, hgllim_pose, gllim_pose_bb or hgllim_pose_bb");
    evaluate->add_option("--protocol", ev.protocol, "loo (leave one person out) or random");
    evaluate->add_option("--k", ev.k)->check(CLI::PositiveNumber);
    evaluate->add_option("--lw", ev.lw)->check(CLI::NonNegativeNumber);
    evaluate->add_option("--sigma-frac", ev.sigma_frac, "Training shift spread as a fraction of the box size");
    evaluate->add_option("--test-sigma-frac", ev.test_sigma_frac, "Test box perturbation (default: --sigma-frac)");
    evaluate->add_option("--augment", ev.augment, "Shifted copies per training sample")->check(CLI::PositiveNumber);
    evaluate->add_option("--epsilon", ev.epsilon);
    evaluate->add_option("--max-iters", ev.max_iters)->check(CLI::PositiveNumber);
    evaluate->add_option("--seed", ev.seed);
    evaluate->add_option("--predictions", ev.predictions, "Per-sample predictions CSV");
    evaluate->add_option("--out", ev.out, "Report CSV")->required();

    SweepArgs sw;
    auto* sweep = app.add_subcommand("bic-sweep", "Train over a list of K and report BIC");
    sweep->add_option("--features", sw.features)->required()->check(CLI::ExistingFile);
    sweep->add_option("--targets", sw.targets)->required()->check(CLI::ExistingFile);
    sweep->add_option("--columns", sw.columns)->delimiter(',');
    sweep->add_option("--ks", sw.ks, "Comma-separated K values")->delimiter(',');
    sweep->add_option("--lw", sw.lw)->check(CLI::NonNegativeNumber);
    sweep->add_option("--seed", sw.seed);
    sweep->add_option("--max-iter", sw.max_iter)->check(CLI::PositiveNumber);
    sweep->add_option("--out", sw.out)->required();

    SynthArgs sy;
    auto* synth = app.add_subcommand("synth", "Synthetic fixtures");
    synth->require_subcommand(1);
    auto* generate = synth->add_subcommand("generate", "Sample a random model and write a dataset plus hidden truth");
    generate->add_option("--k", sy.k)->check(CLI::PositiveNumber);
    generate->add_option("--d", sy.d)->check(CLI::PositiveNumber);
    generate->add_option("--lt", sy.lt)->check(CLI::PositiveNumber);
    generate->add_option("--lw", sy.lw)->check(CLI::NonNegativeNumber);
    generate->add_option("--n", sy.n)->check(CLI::NonNegativeNumber);
    generate->add_option("--seed", sy.seed);
    generate->add_option("--noise", sy.noise, "Input noise std (0 = noiseless)");
    generate->add_option("--out", sy.out, "Output directory")->required();

    std::string inspect_model, inspect_resave;
    auto* inspect = app.add_subcommand("inspect", "Print a model as JSON");
    inspect->add_option("--model", inspect_model)->required()->check(CLI::ExistingFile);
    inspect->add_option("--resave", inspect_resave, "Write the decoded model back to this path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*extract) return cmd_extract(ex, threads);
        if (*train_cmd) return cmd_train(tr, threads, args);
        if (*predict) return cmd_predict(pr, threads);
        if (*evaluate) return cmd_evaluate(ev, threads, args);
        if (*sweep) return cmd_bic_sweep(sw, threads, args);
        if (*generate) return cmd_synth(sy, args);
        if (*inspect) return cmd_inspect(inspect_model, inspect_resave);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
    return 2;
}
