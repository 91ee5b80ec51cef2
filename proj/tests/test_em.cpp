#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "hgllim/em.hpp"
#include "hgllim/synthetic.hpp"
#include "test_util.hpp"

namespace {

using namespace hgllim;
using hgllim::testing::dense_log_gaussian;

InverseModel make_truth(std::uint64_t seed, Index K, Index D, Index lt, Index lw, double noise = 0.1) {
    synthetic::RandomModelOptions opt;
    opt.num_components = K;
    opt.input_dim = D;
    opt.latent = {lt, lw};
    opt.noise_scale = noise;
    return synthetic::random_model(opt, seed);
}

TrainingConfig config(Index K, Index lt, Index lw, std::uint64_t seed = 1) {
    TrainingConfig cfg;
    cfg.num_components = K;
    cfg.latent = {lt, lw};
    cfg.seed = seed;
    return cfg;
}

/// Weighted least-squares fit of y ~ A t + b, solved through the augmented design matrix.
std::pair<Matrix, Vector> least_squares(const TrainingSet& d) {
    const Index N = d.size();
    Matrix design(N, d.target_dim() + 1);
    design.leftCols(d.target_dim()) = d.targets.transpose();
    design.col(d.target_dim()).setOnes();
    const Matrix coef = design.colPivHouseholderQr().solve(d.inputs.transpose());
    return {coef.topRows(d.target_dim()).transpose(), coef.row(d.target_dim()).transpose()};
}

double mean_abs_error(const ForwardModel& fwd, const TrainingSet& d) {
    double s = 0.0;
    for (Index n = 0; n < d.size(); ++n)
        s += (predict_mean(fwd, d.inputs.col(n)).head(d.target_dim()) - d.targets.col(n)).cwiseAbs().sum();
    return s / static_cast<double>(d.size() * d.target_dim());
}

// ---------------------------------------------------------------- E-W step

TEST(EStepW, ZeroLatentMapGivesPrior) {
    InverseModel m = make_truth(1, 2, 5, 1, 2);
    for (auto& c : m.components) c.map.rightCols(2).setZero();
    const auto s = synthetic::sample({m, 2, 50});
    const LatentPosterior lat = e_step_w(m, s.data);
    for (Index k = 0; k < 2; ++k) {
        EXPECT_TRUE(lat.cov[k].isApprox(Matrix::Identity(2, 2), 0.0));
        EXPECT_EQ(lat.mean[k].cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(EStepW, ScalarAlgebra) {
    InverseModel m;
    m.latent = {1, 1};
    m.input_dim = 1;
    const double a = 1.7, sigma2 = 0.4, at = 0.5, b = 0.2;
    Matrix cov = Matrix::Identity(2, 2);
    Matrix map(1, 2);
    map << at, a;
    m.components.push_back({1.0, Vector::Zero(2), cov, map, Vector::Constant(1, b), Vector::Constant(1, sigma2)});
    TrainingSet d;
    d.inputs = Matrix::Constant(1, 1, 2.0);
    d.targets = Matrix::Constant(1, 1, 0.3);
    const LatentPosterior lat = e_step_w(m, d);
    const double S = 1.0 / (1.0 + a * a / sigma2);
    EXPECT_NEAR(lat.cov[0](0, 0), S, 1e-15);
    EXPECT_NEAR(lat.mean[0](0, 0), S * a / sigma2 * (2.0 - at * 0.3 - b), 1e-14);
}

TEST(EStepW, MatchesDirectTranscription) {
    const InverseModel m = make_truth(5, 2, 6, 1, 2, 0.7);
    const auto s = synthetic::sample({m, 6, 40});
    const LatentPosterior lat = e_step_w(m, s.data);
    for (Index k = 0; k < 2; ++k) {
        const auto& c = m.components[k];
        const Matrix sigma_inv = Matrix(c.noise.asDiagonal()).inverse();
        const Matrix aw = c.map.rightCols(2);
        const Matrix S = (Matrix::Identity(2, 2) + aw.transpose() * sigma_inv * aw).inverse();
        EXPECT_LT((lat.cov[k] - S).cwiseAbs().maxCoeff(), 1e-10);
        for (Index n = 0; n < 40; ++n) {
            const Vector mu =
                S * aw.transpose() * sigma_inv * (s.data.inputs.col(n) - c.map.col(0) * s.data.targets(0, n) - c.offset);
            EXPECT_LT((lat.mean[k].col(n) - mu).cwiseAbs().maxCoeff(), 1e-10);
        }
    }
}

TEST(EStepW, RefusesPlainModel) {
    const InverseModel m = make_truth(1, 2, 4, 1, 0);
    const auto s = synthetic::sample({m, 1, 10});
    EXPECT_THROW(e_step_w(m, s.data), ContractError);
}

// ---------------------------------------------------------------- E-Z step

/// Dense route: Phi_k = A^w A^w^T + Sigma_k, densities normalized in the log domain.
Matrix dense_responsibilities(const InverseModel& m, const TrainingSet& d, double* loglik) {
    const Index lt = m.latent.observed_dim;
    const Index lw = m.latent.latent_dim;
    Matrix r(d.size(), m.num_components());
    double total = 0.0;
    for (Index n = 0; n < d.size(); ++n) {
        Vector row(m.num_components());
        for (Index k = 0; k < m.num_components(); ++k) {
            const auto& c = m.components[k];
            Matrix phi = Matrix(c.noise.asDiagonal());
            if (lw > 0) phi += c.map.rightCols(lw) * c.map.rightCols(lw).transpose();
            const Vector dk = c.map.leftCols(lt) * d.targets.col(n) + c.offset;
            row[k] = std::log(c.prior) + dense_log_gaussian(d.targets.col(n), c.mean.head(lt), c.cov.topLeftCorner(lt, lt)) +
                     dense_log_gaussian(d.inputs.col(n), dk, phi);
        }
        const double z = row.maxCoeff() + std::log((row.array() - row.maxCoeff()).exp().sum());
        total += z;
        r.row(n) = (row.array() - z).exp().matrix().transpose();
    }
    if (loglik) *loglik = total;
    return r;
}

TEST(EStepZ, SingleComponent) {
    const InverseModel m = make_truth(3, 1, 5, 2, 1);
    const auto s = synthetic::sample({m, 3, 30});
    const ZPosterior z = e_step_z(m, s.data);
    EXPECT_TRUE((z.resp.r.array() == 1.0).all());
}

TEST(EStepZ, IdenticalComponentsSplitEvenly) {
    InverseModel m = make_truth(3, 1, 5, 2, 1);
    m.components[0].prior = 0.5;
    m.components.push_back(m.components[0]);
    const auto s = synthetic::sample({m, 3, 30});
    const ZPosterior z = e_step_z(m, s.data);
    EXPECT_LT((z.resp.r.array() - 0.5).abs().maxCoeff(), 1e-12);
}

TEST(EStepZ, MatchesDenseRouteHybridAndPlain) {
    for (Index lw : {0, 1, 2}) {
        const InverseModel m = make_truth(10 + lw, 3, 7, 2, lw, 0.8);
        const auto s = synthetic::sample({m, 4, 60});
        double ll = 0.0;
        const Matrix expected = dense_responsibilities(m, s.data, &ll);
        const ZPosterior z = e_step_z(m, s.data);
        EXPECT_LT((z.resp.r - expected).cwiseAbs().maxCoeff(), 1e-10) << "L_w=" << lw;
        EXPECT_NEAR(z.log_likelihood, ll, 1e-9 * std::abs(ll));
        EXPECT_LT((z.resp.r.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    }
}

TEST(EStepZ, NonFiniteSampleIsFlagged) {
    const InverseModel m = make_truth(3, 2, 4, 1, 0);
    auto s = synthetic::sample({m, 3, 10});
    s.data.inputs(0, 7) = 1e200;
    try {
        e_step_z(m, s.data);
        FAIL() << "expected DegenerateInputError";
    } catch (const DegenerateInputError& e) {
        EXPECT_EQ(e.sample(), 7);
    }
}

// ---------------------------------------------------------------- M-GMM step

TEST(MStepGmm, UniformResponsibilitiesGiveMoments) {
    const auto s = synthetic::sample({make_truth(2, 1, 3, 2, 0), 9, 200});
    const auto resp = Responsibilities::from(Matrix::Ones(200, 1));
    const GmmUpdate g = m_step_gmm(s.data, resp, config(1, 2, 0));
    const Vector mean = s.data.targets.rowwise().mean();
    const Matrix centered = s.data.targets.colwise() - mean;
    const Matrix cov = centered * centered.transpose() / 200.0;
    EXPECT_LT((g.mean[0] - mean).norm(), 1e-12);
    EXPECT_LT((g.cov[0] - cov).norm(), 1e-12);
    EXPECT_DOUBLE_EQ(g.prior[0], 1.0);
}

TEST(MStepGmm, HardAssignmentsGivePerClusterMoments) {
    const auto s = synthetic::sample({make_truth(4, 2, 3, 2, 0), 5, 300});
    Matrix r = Matrix::Zero(300, 2);
    for (Index n = 0; n < 300; ++n) r(n, s.component[n]) = 1.0;
    const GmmUpdate g = m_step_gmm(s.data, Responsibilities::from(r), config(2, 2, 0));
    for (Index k = 0; k < 2; ++k) {
        std::vector<Index> idx;
        for (Index n = 0; n < 300; ++n)
            if (s.component[n] == k) idx.push_back(n);
        Matrix t(2, static_cast<Index>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i) t.col(static_cast<Index>(i)) = s.data.targets.col(idx[i]);
        const Vector mean = t.rowwise().mean();
        const Matrix c = (t.colwise() - mean) * (t.colwise() - mean).transpose() / static_cast<double>(idx.size());
        EXPECT_LT((g.mean[k] - mean).norm(), 1e-12);
        EXPECT_LT((g.cov[k] - c).norm(), 1e-12);
        EXPECT_NEAR(g.prior[k], static_cast<double>(idx.size()) / 300.0, 1e-15);
    }
}

TEST(MStepGmm, PriorRecovery) {
    const auto s = synthetic::sample({make_truth(4, 1, 3, 1, 0), 5, 100});
    Matrix r(100, 2);
    r.col(0).setConstant(0.3);
    r.col(1).setConstant(0.7);
    const GmmUpdate g = m_step_gmm(s.data, Responsibilities::from(r), config(2, 1, 0));
    EXPECT_NEAR(g.prior[0], 0.3, 1e-15);
    EXPECT_NEAR(g.prior[1], 0.7, 1e-15);
}

TEST(MStepGmm, FlagsEmptyComponents) {
    const auto s = synthetic::sample({make_truth(4, 1, 3, 1, 0), 5, 100});
    Matrix r = Matrix::Zero(100, 2);
    r.col(0).setOnes();
    r(0, 0) = 0.5;
    r(0, 1) = 0.5;
    const GmmUpdate g = m_step_gmm(s.data, Responsibilities::from(r), config(2, 1, 0));
    EXPECT_FALSE(g.empty[0]);
    EXPECT_TRUE(g.empty[1]);
}

// ---------------------------------------------------------------- M-mapping step

TEST(MStepMapping, NoiselessRecoveryPlain) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    const Index N = 100, D = 6, L = 2;
    Matrix A(D, L);
    Vector b(D);
    for (Index i = 0; i < D; ++i) {
        b[i] = g(rng);
        for (Index j = 0; j < L; ++j) A(i, j) = g(rng);
    }
    TrainingSet d;
    d.targets.resize(L, N);
    for (Index n = 0; n < N; ++n)
        for (Index j = 0; j < L; ++j) d.targets(j, n) = 3.0 * g(rng);
    d.inputs = (A * d.targets).colwise() + b;
    const auto resp = Responsibilities::from(Matrix::Ones(N, 1));
    const TrainingConfig cfg = config(1, L, 0);
    const MappingUpdate up = m_step_mapping(d, resp, {}, cfg);
    EXPECT_LT((up.map[0] - A).norm(), 1e-8);
    EXPECT_LT((up.offset[0] - b).norm(), 1e-8);
    const Floors floors = compute_floors(d, cfg);
    EXPECT_LT((up.noise[0].array() - floors.noise).abs().maxCoeff(), 1e-12);
}

/// Straight transcription of the three update formulas with dense matrices.
struct MappingOracle {
    Matrix A;
    Vector b;
    Vector sigma;
};

MappingOracle transcribe_mapping(const TrainingSet& d, const Vector& r, const Matrix& mu, const Matrix& S, double floor) {
    const Index N = d.size();
    const Index lt = d.target_dim();
    const Index lw = mu.rows();
    const Index L = lt + lw;
    const Index D = d.input_dim();
    const Vector rho = r / r.sum();
    Matrix x(L, N);
    x.topRows(lt) = d.targets;
    if (lw > 0) x.bottomRows(lw) = mu;
    Vector xbar = Vector::Zero(L), ybar = Vector::Zero(D);
    for (Index n = 0; n < N; ++n) {
        xbar += rho[n] * x.col(n);
        ybar += rho[n] * d.inputs.col(n);
    }
    Matrix X(L, N), Y(D, N);
    for (Index n = 0; n < N; ++n) {
        X.col(n) = std::sqrt(rho[n]) * (x.col(n) - xbar);
        Y.col(n) = std::sqrt(rho[n]) * (d.inputs.col(n) - ybar);
    }
    Matrix Sx = Matrix::Zero(L, L);
    if (lw > 0) Sx.bottomRightCorner(lw, lw) = S;
    MappingOracle o;
    o.A = Y * X.transpose() * (Sx + X * X.transpose()).inverse();
    o.b = Vector::Zero(D);
    for (Index n = 0; n < N; ++n) o.b += rho[n] * (d.inputs.col(n) - o.A * x.col(n));
    Matrix full = Matrix::Zero(D, D);
    if (lw > 0) full += o.A.rightCols(lw) * S * o.A.rightCols(lw).transpose();
    for (Index n = 0; n < N; ++n) {
        const Vector e = d.inputs.col(n) - o.A * x.col(n) - o.b;
        full += rho[n] * e * e.transpose();
    }
    o.sigma = full.diagonal().cwiseMax(floor);
    return o;
}

TEST(MStepMapping, MatchesTranscriptionHybrid) {
    const InverseModel m = make_truth(15, 2, 6, 1, 2, 0.5);
    const auto s = synthetic::sample({m, 16, 80});
    TrainingConfig cfg = config(2, 1, 2);
    const ZPosterior z = e_step_z(m, s.data);
    const LatentPosterior lat = e_step_w(m, s.data);
    const MappingUpdate up = m_step_mapping(s.data, z.resp, lat, cfg);
    const Floors floors = compute_floors(s.data, cfg);
    for (Index k = 0; k < 2; ++k) {
        const MappingOracle o = transcribe_mapping(s.data, z.resp.r.col(k), lat.mean[k], lat.cov[k], floors.noise);
        EXPECT_LT((up.map[k] - o.A).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((up.offset[k] - o.b).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((up.noise[k] - o.sigma).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(MStepMapping, PlainIsWeightedLeastSquares) {
    const InverseModel m = make_truth(17, 2, 5, 2, 0, 0.5);
    const auto s = synthetic::sample({m, 18, 120});
    const ZPosterior z = e_step_z(m, s.data);
    const MappingUpdate up = m_step_mapping(s.data, z.resp, {}, config(2, 2, 0));
    for (Index k = 0; k < 2; ++k) {
        // weighted normal equations on the augmented design
        const Vector w = z.resp.r.col(k);
        Matrix design(120, 3);
        design.leftCols(2) = s.data.targets.transpose();
        design.col(2).setOnes();
        const Matrix lhs = design.transpose() * w.asDiagonal() * design;
        const Matrix rhs = design.transpose() * w.asDiagonal() * s.data.inputs.transpose();
        const Matrix coef = lhs.ldlt().solve(rhs);
        EXPECT_LT((up.map[k] - coef.topRows(2).transpose()).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LT((up.offset[k] - coef.row(2).transpose()).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(MStepMapping, SingularNormalEquationsNameComponent) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    TrainingSet d;
    d.targets.resize(2, 20);
    for (Index n = 0; n < 20; ++n) d.targets(0, n) = d.targets(1, n) = g(rng);  // collinear targets
    d.inputs = Matrix::Ones(3, 20);
    Matrix r = Matrix::Ones(20, 2);
    TrainingConfig cfg = config(2, 2, 0);
    cfg.condition_cap = 1e5;
    try {
        m_step_mapping(d, Responsibilities::from(r), {}, cfg);
        FAIL() << "expected IllConditionedError";
    } catch (const IllConditionedError& e) {
        EXPECT_EQ(e.component(), 0);
    }
}

// ---------------------------------------------------------------- initialization

TEST(InitParams, SingleComponentMatchesLeastSquares) {
    const auto s = synthetic::sample({make_truth(20, 1, 8, 2, 0, 0.3), 21, 400});
    const auto init = init_params(s.data, config(1, 2, 0));
    const auto [A, b] = least_squares(s.data);
    EXPECT_LT((init.model.components[0].map - A).norm(), 1e-8);
    EXPECT_LT((init.model.components[0].offset - b).norm(), 1e-8);
}

TEST(InitParams, SeparatedClustersAreSplit) {
    synthetic::RandomModelOptions opt;
    opt.num_components = 2;
    opt.input_dim = 6;
    opt.latent = {1, 0};
    opt.target_spread = 10.0;
    opt.equal_priors = true;
    const auto s = synthetic::sample({synthetic::random_model(opt, 4), 5, 600});
    const auto init = init_params(s.data, config(2, 1, 0));
    // hard labels from the generator versus the initial responsibilities
    Matrix mass = Matrix::Zero(2, 2);
    Vector size = Vector::Zero(2);
    for (Index n = 0; n < 600; ++n) {
        mass.row(s.component[n]) += init.resp.r.row(n);
        size[s.component[n]] += 1.0;
    }
    for (Index c = 0; c < 2; ++c) EXPECT_GT(mass.row(c).maxCoeff() / size[c], 0.95);
}

TEST(InitParams, PlainModelHasNoLatentBlock) {
    const auto s = synthetic::sample({make_truth(20, 2, 5, 1, 0), 21, 200});
    const auto init = init_params(s.data, config(2, 1, 0));
    EXPECT_EQ(init.model.output_dim(), 1);
    EXPECT_NO_THROW(validate(init.model));
}

TEST(InitParams, HybridLatentMapIsNonZeroAndPinned) {
    const auto s = synthetic::sample({make_truth(22, 2, 6, 1, 1), 23, 300});
    const auto init = init_params(s.data, config(2, 1, 1));
    EXPECT_NO_THROW(validate(init.model));
    for (const auto& c : init.model.components) EXPECT_GT(c.map.col(1).norm(), 0.0);
}

TEST(InitParams, InsufficientData) {
    const auto s = synthetic::sample({make_truth(20, 2, 5, 1, 0), 21, 3});
    EXPECT_THROW(init_params(s.data, config(3, 1, 0)), InsufficientDataError);
    TrainingSet dup;
    dup.inputs = Matrix::Ones(4, 30);
    dup.targets = Matrix::Ones(1, 30);
    EXPECT_THROW(init_params(dup, config(2, 1, 0)), InsufficientDataError);
}

// ---------------------------------------------------------------- training loop

TEST(Train, SingleComponentConvergesToLeastSquares) {
    const auto s = synthetic::sample({make_truth(30, 1, 10, 2, 0, 0.3), 31, 500});
    const TrainingResult r = train(s.data, config(1, 2, 0));
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.history.size() - 1, 3u);
    const auto [A, b] = least_squares(s.data);
    EXPECT_LT((r.model.components[0].map - A).norm(), 1e-8);
    EXPECT_LT((r.model.components[0].offset - b).norm(), 1e-8);
}

TEST(Train, ParameterRecoveryPlain) {
    const InverseModel truth = make_truth(41, 3, 20, 2, 0);
    const auto train_set = synthetic::sample({truth, 42, 5000});
    const auto test_set = synthetic::sample({truth, 43, 1000});
    const TrainingResult r = train(train_set.data, config(3, 2, 0, 7));
    const double oracle = mean_abs_error(derive_forward(truth), test_set.data);
    const double trained = mean_abs_error(derive_forward(r.model), test_set.data);
    EXPECT_LE(trained, 1.15 * oracle) << "oracle " << oracle << " trained " << trained;
}

TEST(Train, HybridBeatsPlainWithNuisanceDimension) {
    const InverseModel truth = make_truth(51, 2, 15, 1, 1);
    const auto train_set = synthetic::sample({truth, 52, 2000});
    const auto test_set = synthetic::sample({truth, 53, 1000});
    const double plain = mean_abs_error(derive_forward(train(train_set.data, config(2, 1, 0)).model), test_set.data);
    const double hybrid = mean_abs_error(derive_forward(train(train_set.data, config(2, 1, 1)).model), test_set.data);
    EXPECT_LT(hybrid, plain);
}

TEST(Train, MonotoneAndPinned) {
    for (Index lw : {0, 1, 2}) {
        const auto s = synthetic::sample({make_truth(60 + lw, 3, 8, 1, lw, 0.5), 61, 600});
        TrainingConfig cfg = config(3, 1, lw);
        cfg.tolerance = 1e-10;
        cfg.max_iterations = 60;
        const TrainingResult r = train(s.data, cfg);
        for (std::size_t i = 1; i < r.history.size(); ++i) {
            if (r.history[i - 1].event != IterationEvent::none) continue;
            const double prev = r.history[i - 1].log_likelihood;
            EXPECT_GE(r.history[i].log_likelihood, prev - 1e-8 * std::abs(prev)) << "L_w=" << lw << " it " << i;
        }
        for (int its = 1; its <= 4; ++its) {
            cfg.max_iterations = its;
            EXPECT_NO_THROW(validate(train(s.data, cfg).model));
        }
    }
}

TEST(Train, PermutationInvariant) {
    const auto s = synthetic::sample({make_truth(70, 3, 8, 2, 1, 0.4), 71, 500});
    std::vector<Index> perm(500);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
    const TrainingSet shuffled = s.data.subset(perm);
    TrainingConfig cfg = config(3, 2, 1);
    const double a = train(s.data, cfg).history.back().log_likelihood;
    const double b = train(shuffled, cfg).history.back().log_likelihood;
    EXPECT_LT(std::abs(a - b), 1e-8 * std::abs(a));
}

bool same_bits(const InverseModel& a, const InverseModel& b) {
    if (a.components.size() != b.components.size()) return false;
    for (std::size_t k = 0; k < a.components.size(); ++k) {
        const auto& x = a.components[k];
        const auto& y = b.components[k];
        if (x.prior != y.prior || x.mean != y.mean || x.cov != y.cov || x.map != y.map || x.offset != y.offset ||
            x.noise != y.noise)
            return false;
    }
    return true;
}

TEST(Train, ThreadCountInvariant) {
    const auto s = synthetic::sample({make_truth(80, 3, 10, 2, 1, 0.4), 81, 400});
    TrainingConfig cfg = config(3, 2, 1);
    const auto one = train(s.data, cfg);
    cfg.threads = 3;
    const auto three = train(s.data, cfg);
    EXPECT_TRUE(same_bits(one.model, three.model));
}

TEST(Train, HybridPathReducesToPlainBitwise) {
    const auto s = synthetic::sample({make_truth(90, 3, 10, 2, 0, 0.4), 91, 400});
    const TrainingConfig cfg = config(3, 2, 0);
    const auto plain = detail::train<false>(s.data, cfg);
    const auto hybrid = detail::train<true>(s.data, cfg);
    EXPECT_TRUE(same_bits(plain.model, hybrid.model));
    ASSERT_EQ(plain.history.size(), hybrid.history.size());
    for (std::size_t i = 0; i < plain.history.size(); ++i)
        EXPECT_EQ(plain.history[i].log_likelihood, hybrid.history[i].log_likelihood);
}

TEST(Train, EmptyComponentIsReinitializedThenDropped) {
    const InverseModel truth = make_truth(95, 2, 5, 1, 0, 0.3);
    const auto s = synthetic::sample({truth, 96, 400});
    InverseModel start = truth;
    auto far = truth.components[0];
    far.offset.array() += 1e3;  // explains nothing
    far.prior = 0.2;
    start.components.push_back(far);
    for (auto& c : start.components) c.prior = 1.0 / 3.0;

    TrainingConfig cfg = config(3, 1, 0);
    const auto r = train_from(start, s.data, cfg);
    EXPECT_GE(r.reinitializations, 1);
    EXPECT_NO_THROW(validate(r.model));

    cfg.max_reinitializations = 0;
    const auto dropped = train_from(start, s.data, cfg);
    EXPECT_EQ(dropped.dropped, 1);
    EXPECT_EQ(dropped.model.num_components(), 2);
    EXPECT_NO_THROW(validate(dropped.model));
}

// ---------------------------------------------------------------- BIC

TEST(Bic, ScalarParameterCount) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    TrainingSet d;
    d.inputs.resize(1, 300);
    d.targets.resize(1, 300);
    for (Index n = 0; n < 300; ++n) {
        d.targets(0, n) = g(rng);
        d.inputs(0, n) = g(rng);
    }
    const auto r = train(d, config(1, 1, 0));
    const BicScore s = bic(r.model, d);
    EXPECT_EQ(s.free_parameters, 5);
    EXPECT_NEAR(s.bic, -2.0 * s.log_likelihood + 5.0 * std::log(300.0), 1e-9);
    EXPECT_NEAR(s.normalized, s.bic / (300.0 * 2.0), 1e-12);
    EXPECT_NEAR(s.log_likelihood, e_step_z(r.model, d).log_likelihood, 0.0);
}

TEST(Bic, LatentDimensionsCountOnlyThroughMap) {
    InverseModel m = make_truth(1, 4, 7, 2, 3);
    // (K-1) + K * [L_t + L_t(L_t+1)/2 + D*L + 2D]
    EXPECT_EQ(free_parameter_count(m), 3 + 4 * (2 + 3 + 7 * 5 + 14));
}

}  // namespace
