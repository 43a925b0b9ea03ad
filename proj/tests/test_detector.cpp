#include "oracles.hpp"

#include <grood/detector.hpp>
#include <grood/synthetic.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace grood;

namespace {

LinearProbeModel identity_lp(Eigen::Index k, Eigen::Index d) {
    LinearProbeModel lp;
    lp.weights = Matrix::Identity(k, d);
    lp.bias = Vector::Zero(k);
    return lp;
}

NearestMeanModel nm_with(std::initializer_list<std::initializer_list<double>> rows) {
    NearestMeanModel nm;
    nm.means.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index r = 0;
    for (const auto& row : rows) {
        Eigen::Index c = 0;
        for (double v : row) nm.means(r, c++) = v;
        ++r;
    }
    return nm;
}

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

// ID N(0, I) against OOD N(0, 100 I).
GroodModel chi_square_model(std::vector<double> grid, std::size_t mc = 1000000) {
    GroodModel m;
    m.lp = identity_lp(1, 2);
    m.nm = nm_with({{0.0, 0.0}});
    ClassGaussian g;
    m.class_gaussians = {g};
    m.ood.variances = Vec2(100.0, 100.0);
    m.config.mc_samples = mc;
    m.config.seed = 11;
    m.strategies = calibrate(m.class_gaussians, m.ood, grid, m.config);
    return m;
}

// radius^2 of the acceptance disc {log r > mu} in the chi-square setting.
double radius_squared(double mu) { return 2.0 * (0.5 * std::log(1e4) - mu) / 0.99; }

struct Pipeline {
    EmbeddingSet train;
    GroodModel model;
};

const Pipeline& pipeline() {
    static const Pipeline p = [] {
        Pipeline out;
        const auto means = axis_means(6, 3, 4.0);
        std::vector<GaussianBlob> blobs;
        for (int k = 0; k < 3; ++k) blobs.push_back({means[static_cast<std::size_t>(k)], 1.0, 300, k});
        out.train = sample_blobs(6, blobs, 5);
        const auto lp = train_lp(out.train);
        const auto nm = fit_nm(out.train);
        OODPriorConfig cfg;
        cfg.mc_samples = 20000;
        cfg.seed = 3;
        out.model = fit_grood(lp, nm, out.train, default_epsilon_grid(), cfg);
        return out;
    }();
    return p;
}

std::vector<Vector> random_points(std::size_t n, Eigen::Index dim, double spread, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, spread);
    std::vector<Vector> out;
    for (std::size_t i = 0; i < n; ++i) {
        Vector v(dim);
        for (Eigen::Index d = 0; d < dim; ++d) v[d] = normal(rng);
        out.push_back(v);
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------- score_point

TEST(ScorePoint, ClassCoordinates) {
    const auto lp = identity_lp(2, 2);
    const auto nm = nm_with({{5.0, 0.0}, {5.0, -4.0}});
    const Vector x = vec({5.0, 0.0});
    EXPECT_EQ(score_point(lp, nm, x, 0), (ScorePoint{5.0, 1.0}));
    const auto p1 = score_point(lp, nm, x, 1);
    EXPECT_DOUBLE_EQ(p1.lp, 0.0);
    EXPECT_DOUBLE_EQ(p1.nm, 0.2);
}

TEST(ScorePoint, ClassOutOfRange) {
    const auto lp = identity_lp(2, 2);
    const auto nm = nm_with({{5.0, 0.0}, {5.0, -4.0}});
    EXPECT_THROW(score_point(lp, nm, vec({5.0, 0.0}), 2), ValidationError);
    EXPECT_THROW(score_point(lp, nm, vec({5.0, 0.0}), -1), ValidationError);
}

TEST(ScorePoint, DimensionMismatch) {
    const auto lp = identity_lp(2, 3);
    const auto nm = nm_with({{5.0, 0.0}, {5.0, -4.0}});
    EXPECT_THROW(score_point(lp, nm, vec({5.0, 0.0}), 0), ValidationError);
}

TEST(ScorePoint, AllClassesMatchSingle) {
    const auto& p = pipeline();
    for (const auto& x : random_points(20, 6, 3.0, 1)) {
        const auto all = score_points(p.model.lp, p.model.nm, x);
        for (Eigen::Index k = 0; k < 3; ++k) EXPECT_EQ(all[static_cast<std::size_t>(k)], score_point(p.model.lp, p.model.nm, x, k));
    }
}

// ---------------------------------------------------------------- class Gaussians

TEST(FitGaussian, SampleMoments) {
    const std::vector<Vec2> pts{{1, 1}, {1, 3}, {3, 1}, {3, 3}};
    const auto g = fit_gaussian2(pts);
    EXPECT_TRUE(g.mean.isApprox(Vec2(2, 2)));
    EXPECT_TRUE(g.cov.isApprox(Mat2::Identity()));
    EXPECT_FALSE(g.regularized);
    EXPECT_FALSE(g.degenerate);
}

TEST(FitGaussian, IdenticalPointsRegularized) {
    const std::vector<Vec2> pts{{2, 5}, {2, 5}};
    const auto g = fit_gaussian2(pts, 4);
    EXPECT_TRUE(g.regularized);
    EXPECT_TRUE(g.degenerate);
    EXPECT_EQ(g.cov, 1e-9 * Mat2::Identity());
    EXPECT_EQ(g.class_index, 4);
}

TEST(FitGaussian, CollinearPointsGetTraceRidge) {
    const std::vector<Vec2> pts{{0, 0}, {2, 0}};
    const auto g = fit_gaussian2(pts);
    EXPECT_TRUE(g.regularized);
    EXPECT_FALSE(g.degenerate);
    EXPECT_DOUBLE_EQ(g.cov(0, 0), 1.0 + 0.5e-6);
    EXPECT_DOUBLE_EQ(g.cov(1, 1), 0.5e-6);
}

TEST(FitGaussian, SingleSampleRejected) {
    const std::vector<Vec2> pts{{1, 1}};
    EXPECT_THROW(fit_gaussian2(pts), ValidationError);
}

TEST(FitGaussian, ClassGaussiansFromModels) {
    const auto& p = pipeline();
    const auto points = class_score_points(p.model.lp, p.model.nm, p.train);
    ASSERT_EQ(points.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(points[k].size(), 300u);
        Vec2 mean = Vec2::Zero();
        for (const auto& q : points[k]) mean += q;
        mean /= 300.0;
        EXPECT_TRUE(p.model.class_gaussians[k].mean.isApprox(mean, 1e-12));
    }
}

TEST(FitGaussian, AffineConsistency) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Vec2> pts, mapped;
    Mat2 a;
    a << 2.0, 0.5, -0.3, 1.5;
    const Vec2 t(4.0, -1.0);
    for (int i = 0; i < 500; ++i) {
        const Vec2 q(normal(rng), 0.5 * normal(rng) + 0.2);
        pts.push_back(q);
        mapped.push_back(a * q + t);
    }
    const auto g = fit_gaussian2(pts);
    const auto h = fit_gaussian2(mapped);
    EXPECT_LT((h.mean - (a * g.mean + t)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((h.cov - a * g.cov * a.transpose()).cwiseAbs().maxCoeff(), 1e-9);

    // Rejection rates of fresh draws stay calibrated after the map.
    OODPriorConfig cfg;
    cfg.mc_samples = 200000;
    const std::vector<double> grid{0.01, 0.05, 0.1, 0.3};
    const std::vector<ClassGaussian> gs{g}, hs{h};
    const auto sg = calibrate(gs, build_ood_model(std::span<const Vec2>(pts), cfg), grid, cfg);
    const auto ood_h = build_ood_model(std::span<const Vec2>(mapped), cfg);
    const auto sh = calibrate(hs, ood_h, grid, cfg);
    constexpr int n = 50000;
    Gaussian2Sampler sampler(h.mean, h.cov);
    std::mt19937_64 draw(77);
    std::vector<double> fresh(n);
    for (auto& v : fresh) v = log_likelihood_ratio(h, ood_h, sampler(draw));
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const double eps = grid[j];
        double rejected = 0;
        for (double v : fresh) rejected += v <= sh[0].mu_values[j] ? 1.0 : 0.0;
        const double tol = 2.0 * 3.0 * std::sqrt(eps * (1 - eps) / n);
        EXPECT_NEAR(rejected / n, eps, tol) << "eps " << eps;
    }
    EXPECT_EQ(sg.size(), 1u);
}

// ---------------------------------------------------------------- OOD prior

TEST(OodPrior, ConstantValues) {
    const std::vector<Vec2> pts(10, Vec2(10.0, 0.5));
    const auto ood = build_ood_model(std::span<const Vec2>(pts), OODPriorConfig{});
    EXPECT_DOUBLE_EQ(std::sqrt(ood.variances[0]), 30.0);
    EXPECT_DOUBLE_EQ(std::sqrt(ood.variances[1]), 1.5);
}

TEST(OodPrior, NearestRankRange) {
    std::vector<Vec2> pts;
    std::vector<double> lp;
    for (int i = 100; i >= 1; --i) {
        pts.emplace_back(static_cast<double>(i), -0.5);
        lp.push_back(static_cast<double>(i));
    }
    const auto ood = build_ood_model(std::span<const Vec2>(pts), OODPriorConfig{});
    const double range = oracle::nearest_rank_quantile(lp, 0.90);
    EXPECT_EQ(range, 90.0);
    EXPECT_DOUBLE_EQ(std::sqrt(ood.variances[0]), 3.0 * range);
    EXPECT_DOUBLE_EQ(std::sqrt(ood.variances[1]), 1.5);
}

TEST(OodPrior, UsesMagnitudes) {
    const std::vector<Vec2> pts{{-4, 0}, {-4, 0}, {-4, 0}};
    const auto ood = build_ood_model(std::span<const Vec2>(pts), OODPriorConfig{});
    EXPECT_DOUBLE_EQ(ood.variances[0], 144.0);
    EXPECT_DOUBLE_EQ(ood.variances[1], 1e-12);
}

TEST(OodPrior, EmptyRejected) {
    EXPECT_THROW(build_ood_model(std::span<const Vec2>{}, OODPriorConfig{}), ValidationError);
}

// ---------------------------------------------------------------- log ratio

TEST(LogRatio, IdenticalDensitiesGiveZero) {
    ClassGaussian g;
    g.cov << 4.0, 0.0, 0.0, 9.0;
    OODGaussian o;
    o.variances = Vec2(4.0, 9.0);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> normal(0.0, 10.0);
    for (int i = 0; i < 50; ++i) EXPECT_NEAR(log_likelihood_ratio(g, o, Vec2(normal(rng), normal(rng))), 0.0, 1e-12);
}

TEST(LogRatio, OriginMatchesPdfQuotient) {
    ClassGaussian g;
    OODGaussian o;
    o.variances = Vec2(100.0, 100.0);
    const double expected =
        std::log(oracle::normal_pdf({0, 0}, {0, 0}, Mat2::Identity()) / oracle::normal_pdf({0, 0}, {0, 0}, 100.0 * Mat2::Identity()));
    EXPECT_NEAR(log_likelihood_ratio(g, o, Vec2(0, 0)), expected, 1e-12);
    EXPECT_NEAR(log_likelihood_ratio(g, o, Vec2(0, 0)), 4.60517, 1e-5);
}

TEST(LogRatio, MatchesPdfQuotientGeneralCovariance) {
    ClassGaussian g;
    g.mean = Vec2(3.0, 0.7);
    g.cov << 2.0, 0.3, 0.3, 0.05;
    OODGaussian o;
    o.variances = Vec2(81.0, 4.0);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        const Vec2 q(3.0 + 2.0 * normal(rng), 0.7 + 0.3 * normal(rng));
        const double want = std::log(oracle::normal_pdf(q, g.mean, g.cov) / oracle::normal_pdf(q, Vec2::Zero(), o.cov()));
        EXPECT_NEAR(log_likelihood_ratio(g, o, q), want, 1e-9 * std::max(1.0, std::abs(want)));
    }
}

TEST(LogRatio, FarPointBelowOrigin) {
    ClassGaussian g;
    OODGaussian o;
    o.variances = Vec2(100.0, 100.0);
    const double far = log_likelihood_ratio(g, o, Vec2(1000, 0));
    EXPECT_TRUE(std::isfinite(far));
    EXPECT_LT(far, log_likelihood_ratio(g, o, Vec2(0, 0)));
    EXPECT_LT(log_likelihood_ratio(g, o, Vec2(2000, 0)), far);
}

TEST(LogRatio, ContinuousUnderSmallPerturbation) {
    const auto& m = pipeline().model;
    std::mt19937_64 rng(31);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        const auto k = static_cast<std::size_t>(i % 3);
        const auto& g = m.class_gaussians[k];
        const Vec2 q = g.mean + Vec2(3.0 * std::sqrt(g.cov(0, 0)) * normal(rng), 3.0 * std::sqrt(g.cov(1, 1)) * normal(rng));
        Vec2 delta(normal(rng), normal(rng));
        delta *= 1e-6 / delta.norm();
        const double a = log_likelihood_ratio(g, m.ood, q);
        const double b = log_likelihood_ratio(g, m.ood, q + delta);
        ASSERT_TRUE(std::isfinite(a));
        EXPECT_LT(std::abs(a - b), 1e-3);
    }
}

TEST(LogRatio, ClassIndexChecked) {
    const auto& m = pipeline().model;
    EXPECT_THROW(log_likelihood_ratio(m, 3, ScorePoint{}), ValidationError);
}

// ---------------------------------------------------------------- calibrate

TEST(Calibrate, ChiSquareRadius) {
    const auto m = chi_square_model({0.01, 0.05, 0.1, 0.5});
    const double c = radius_squared(m.strategies[0].mu_at(0.05));
    EXPECT_NEAR(c, oracle::chi2_2dof_quantile(0.95), 0.05);
    EXPECT_NEAR(c, 5.991, 0.05);
}

TEST(Calibrate, HalfIsMedian) {
    const auto m = chi_square_model({0.01, 0.05, 0.1, 0.5}, 10001);
    const auto& s = m.strategies[0];
    EXPECT_EQ(s.mu_at(0.5), oracle::nearest_rank_quantile(s.cdf_samples, 0.5));
    EXPECT_EQ(s.mu_at(0.5), s.cdf_samples[5000]);
}

TEST(Calibrate, MuNonDecreasing) {
    const auto m = chi_square_model(default_epsilon_grid(), 5000);
    const auto& mu = m.strategies[0].mu_values;
    ASSERT_EQ(mu.size(), 55u);
    for (std::size_t i = 1; i < mu.size(); ++i) EXPECT_LE(mu[i - 1], mu[i]);
    EXPECT_TRUE(std::is_sorted(m.strategies[0].cdf_samples.begin(), m.strategies[0].cdf_samples.end()));
}

TEST(Calibrate, GridValuesAreQuantiles) {
    const auto m = chi_square_model({0.01, 0.05, 0.1}, 3000);
    const auto& s = m.strategies[0];
    for (std::size_t j = 0; j < 3; ++j)
        EXPECT_EQ(s.mu_values[j], oracle::nearest_rank_quantile(s.cdf_samples, s.epsilon_grid[j]));
}

TEST(Calibrate, InterpolatesBetweenGridPoints) {
    const auto m = chi_square_model({0.1, 0.3}, 2000);
    const auto& s = m.strategies[0];
    EXPECT_DOUBLE_EQ(s.mu_at(0.2), 0.5 * (s.mu_values[0] + s.mu_values[1]));
    EXPECT_DOUBLE_EQ(s.mu_at(0.15), 0.75 * s.mu_values[0] + 0.25 * s.mu_values[1]);
}

TEST(Calibrate, RejectsTooFewSamples) {
    OODPriorConfig cfg;
    cfg.mc_samples = 999;
    const std::vector<ClassGaussian> gs{ClassGaussian{}};
    const std::vector<double> grid{0.05};
    EXPECT_THROW(calibrate(gs, OODGaussian{}, grid, cfg), ValidationError);
}

TEST(Calibrate, RejectsBadGrid) {
    const std::vector<ClassGaussian> gs{ClassGaussian{}};
    OODPriorConfig cfg;
    cfg.mc_samples = 1000;
    for (const std::vector<double>& grid : {std::vector<double>{}, {0.1, 0.05}, {0.0, 0.1}, {0.5, 1.0}, {0.1, 0.1}})
        EXPECT_THROW(calibrate(gs, OODGaussian{}, grid, cfg), ValidationError);
}

TEST(Calibrate, Deterministic) {
    const auto a = chi_square_model({0.05, 0.1}, 5000);
    const auto b = chi_square_model({0.05, 0.1}, 5000);
    EXPECT_EQ(a.strategies[0].cdf_samples, b.strategies[0].cdf_samples);
}

TEST(Calibrate, FreshDrawRejectionRates) {
    // Every grid eps of every fitted class: fresh draws are rejected at rate eps.
    const auto& p = pipeline();
    auto model = p.model;
    OODPriorConfig cfg = model.config;
    cfg.mc_samples = 1000000;
    const std::vector<double> grid{0.001, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 0.9};
    recalibrate(model, grid, cfg);
    constexpr int n = 50000;
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& g = model.class_gaussians[k];
        Gaussian2Sampler sampler(g.mean, g.cov);
        std::mt19937_64 rng(1000 + k);
        std::vector<double> fresh(n);
        for (auto& v : fresh) v = log_likelihood_ratio(g, model.ood, sampler(rng));
        for (double eps : grid) {
            double rejected = 0;
            for (double v : fresh) rejected += v <= model.strategies[k].mu_at(eps) ? 1.0 : 0.0;
            EXPECT_NEAR(rejected / n, eps, 3.0 * std::sqrt(eps * (1 - eps) / n)) << "class " << k << " eps " << eps;
        }
    }
}

// ---------------------------------------------------------------- decide

TEST(Decide, MeanAcceptedInChiSquareSetting) {
    const auto m = chi_square_model({0.01, 0.05, 0.1, 0.3, 0.5});
    const std::vector<double> at_mean{log_likelihood_ratio(m.class_gaussians[0], m.ood, Vec2::Zero())};
    for (double eps : {0.01, 0.05, 0.1, 0.3, 0.5}) EXPECT_TRUE(accepts(m, at_mean, eps));
}

TEST(Decide, ChiSquareRegionIsDisc) {
    const auto m = chi_square_model({0.05});
    const double c = radius_squared(m.strategies[0].mu_at(0.05));
    for (double r2 : {0.0, 1.0, 5.0, 0.98 * c}) {
        const std::vector<double> lr{log_likelihood_ratio(m.class_gaussians[0], m.ood, Vec2(std::sqrt(r2), 0))};
        EXPECT_TRUE(accepts(m, lr, 0.05)) << r2;
    }
    for (double r2 : {1.02 * c, 8.0, 50.0}) {
        const std::vector<double> lr{log_likelihood_ratio(m.class_gaussians[0], m.ood, Vec2(0, std::sqrt(r2)))};
        EXPECT_FALSE(accepts(m, lr, 0.05)) << r2;
    }
}

TEST(Decide, HeldOutClassSamplesAreId) {
    const auto& m = pipeline().model;
    const auto means = axis_means(6, 3, 4.0);
    std::vector<GaussianBlob> blobs;
    for (int k = 0; k < 3; ++k) blobs.push_back({means[static_cast<std::size_t>(k)], 1.0, 400, k});
    const auto test = sample_blobs(6, blobs, 99);
    std::size_t accepted = 0, correct = 0;
    for (const auto& r : test.records) {
        const auto d = decide(m, std::span<const float>(r.vector), 0.05);
        EXPECT_FALSE(d.clamped);
        if (d.in_distribution) {
            ++accepted;
            correct += d.class_index == r.label;
        } else {
            EXPECT_EQ(d.class_index, -1);
        }
    }
    EXPECT_GT(static_cast<double>(accepted) / 1200.0, 0.9);
    EXPECT_GT(static_cast<double>(correct) / static_cast<double>(accepted), 0.97);
}

TEST(Decide, FarPointIsOod) {
    const auto& m = pipeline().model;
    const Vector x = Vector::Constant(6, -6.0);
    const auto pts = score_points(m.lp, m.nm, x);
    for (const auto& q : pts) {
        EXPECT_LT(q.nm, 0.15);
        EXPECT_LT(q.lp, m.class_gaussians[0].mean[0]);
    }
    const auto d = decide(m, x, 0.05);
    EXPECT_FALSE(d.in_distribution);
    EXPECT_EQ(d.class_index, -1);
}

TEST(Decide, EpsilonClamped) {
    const auto& m = pipeline().model;
    const Vector x = m.nm.means.row(0).transpose();
    const auto hi = decide(m, x, 1.0);
    EXPECT_TRUE(hi.clamped);
    EXPECT_EQ(hi.epsilon, 0.99);
    const auto lo = decide(m, x, 0.0);
    EXPECT_TRUE(lo.clamped);
    EXPECT_EQ(lo.epsilon, 1e-3);
    EXPECT_TRUE(clamp_epsilon(m, std::nan("")).second);
}

TEST(Decide, RegionCharacterization) {
    const auto& m = pipeline().model;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> level(1e-3, 0.99);
    for (const auto& x : random_points(500, 6, 3.0, 9)) {
        const double eps = level(rng);
        const auto ratios = log_likelihood_ratios(m, x);
        double margin = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < 3; ++k) margin = std::max(margin, ratios[k] - m.strategies[k].mu_at(eps));
        EXPECT_EQ(decide(m, x, eps).in_distribution, margin > 0) << eps;
    }
}

TEST(Decide, MonotoneNesting) {
    const auto& m = pipeline().model;
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> level(1e-3, 0.99);
    for (const auto& x : random_points(500, 6, 3.0, 10)) {
        double e1 = level(rng), e2 = level(rng);
        if (e1 > e2) std::swap(e1, e2);
        if (decide(m, x, e2).in_distribution) EXPECT_TRUE(decide(m, x, e1).in_distribution);
    }
}

TEST(Decide, UnfittedRejected) {
    GroodModel m;
    m.lp = identity_lp(1, 2);
    m.nm = nm_with({{0.0, 0.0}});
    EXPECT_THROW(decide(m, vec({0.0, 0.0}), 0.05), ValidationError);
    EXPECT_THROW(calibrated_score(m, vec({0.0, 0.0})), ValidationError);
    EXPECT_THROW(predict_class(m, vec({0.0, 0.0})), ValidationError);
}

// ---------------------------------------------------------------- calibrated score

TEST(CalibratedScore, NearOneAtMean) {
    const auto m = chi_square_model({0.01, 0.05});
    const std::vector<double> lr{log_likelihood_ratio(m.class_gaussians[0], m.ood, Vec2::Zero())};
    EXPECT_GT(calibrated_score_from_ratios(m, lr), 0.99);
}

TEST(CalibratedScore, ZeroBelowSupport) {
    const auto& m = pipeline().model;
    std::vector<double> lr;
    for (const auto& s : m.strategies) lr.push_back(s.cdf_samples.front());
    EXPECT_EQ(calibrated_score_from_ratios(m, lr), 0.0);
    for (auto& v : lr) v -= 1.0;
    EXPECT_EQ(calibrated_score_from_ratios(m, lr), 0.0);
}

TEST(CalibratedScore, ThresholdReproducesDecide) {
    const auto& m = pipeline().model;
    std::size_t mismatches = 0, accepted = 0;
    for (const auto& x : random_points(1000, 6, 3.0, 12)) {
        const double score = calibrated_score(m, x);
        for (double eps : m.epsilon_grid()) {
            const bool id = decide(m, x, eps).in_distribution;
            mismatches += (score >= eps) != id;
            accepted += id;
        }
    }
    EXPECT_EQ(mismatches, 0u);
    EXPECT_GT(accepted, 0u);
}

TEST(CalibratedScore, InUnitInterval) {
    const auto& m = pipeline().model;
    for (const auto& x : random_points(200, 6, 5.0, 13)) {
        const double s = calibrated_score(m, x);
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
    }
}

// ---------------------------------------------------------------- predict_class

TEST(PredictClass, WellSeparated) {
    GroodModel m;
    m.lp = identity_lp(2, 2);
    m.nm = nm_with({{0.0, 0.0}, {10.0, 10.0}});
    ClassGaussian g0, g1;
    g0.mean = Vec2(0.0, 1.0);
    g1.class_index = 1;
    g1.mean = Vec2(10.0, 1.0);
    g0.cov = g1.cov = 0.1 * Mat2::Identity();
    m.class_gaussians = {g0, g1};
    m.strategies = calibrate(m.class_gaussians, m.ood, std::vector<double>{0.05}, OODPriorConfig{0.9, 3.0, 1000, 0});
    EXPECT_EQ(predict_class(m, vec({10.0, 10.0})), 1);
    EXPECT_EQ(predict_class(m, vec({0.0, 0.0})), 0);
}

TEST(PredictClass, TiesGoToLowestIndex) {
    GroodModel m;
    m.lp.weights = Matrix::Ones(3, 2);
    m.lp.bias = Vector::Zero(3);
    m.nm = nm_with({{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}});
    m.class_gaussians = {ClassGaussian{}, ClassGaussian{}, ClassGaussian{}};
    m.strategies = calibrate(m.class_gaussians, m.ood, std::vector<double>{0.05}, OODPriorConfig{0.9, 3.0, 1000, 0});
    EXPECT_EQ(predict_class(m, vec({0.3, -0.2})), 0);
}

TEST(PredictClass, AgreesWithTrainingLabels) {
    const auto& p = pipeline();
    std::size_t correct = 0;
    for (const auto& r : p.train.records) correct += predict_class(p.model, std::span<const float>(r.vector)) == r.label;
    EXPECT_GT(static_cast<double>(correct) / static_cast<double>(p.train.size()), 0.97);
}

// ---------------------------------------------------------------- fit_grood

TEST(FitGrood, Shapes) {
    const auto& m = pipeline().model;
    EXPECT_TRUE(m.fitted());
    EXPECT_EQ(m.class_count(), 3);
    EXPECT_EQ(m.dim(), 6);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(m.strategies[k].class_index, static_cast<int>(k));
        EXPECT_EQ(m.strategies[k].cdf_samples.size(), 20000u);
        EXPECT_EQ(m.strategies[k].mu_values.size(), 55u);
    }
}

TEST(FitGrood, OodPriorCoversIdPoints) {
    const auto& p = pipeline();
    const auto points = class_score_points(p.model.lp, p.model.nm, p.train);
    std::vector<double> lp_abs;
    for (const auto& cls : points)
        for (const auto& q : cls) lp_abs.push_back(std::abs(q[0]));
    EXPECT_DOUBLE_EQ(std::sqrt(p.model.ood.variances[0]), 3.0 * oracle::nearest_rank_quantile(lp_abs, 0.9));
}

TEST(FitGrood, Deterministic) {
    const auto& p = pipeline();
    const auto again = fit_grood(p.model.lp, p.model.nm, p.train, default_epsilon_grid(), p.model.config);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(again.strategies[k].mu_values, p.model.strategies[k].mu_values);
        EXPECT_EQ(again.class_gaussians[k].cov, p.model.class_gaussians[k].cov);
    }
}
