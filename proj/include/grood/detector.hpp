#pragma once

// Calibrated OOD detector in the 2-D (LP logit, NM similarity) score space.
//
// Each ID class k gets a bivariate Gaussian fitted to the class-k coordinates
// of its own training samples. OOD scores are modelled by one broad zero-mean
// diagonal Gaussian. Per class, the Neyman-Pearson optimal test accepts x as
// ID when log r_k(x) = log p_k(x | ID) - log p(x | OOD) exceeds mu_k(eps), the
// threshold at which a fraction eps of class-k ID mass is rejected. mu_k(eps)
// is read off a sorted Monte-Carlo sample of log r_k under the class Gaussian.

#include <grood/dataset.hpp>
#include <grood/detail/rank.hpp>
#include <grood/gaussian2d.hpp>
#include <grood/linear_probe.hpp>
#include <grood/nearest_mean.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace grood {

struct OODPriorConfig {
    double range_quantile = 0.90;
    double range_multiplier = 3.0;
    std::size_t mc_samples = 100000;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(range_quantile > 0.0 && range_quantile < 1.0)) throw ValidationError("range_quantile must be in (0, 1)");
        if (!(range_multiplier >= 1.0) || !std::isfinite(range_multiplier)) throw ValidationError("range_multiplier must be >= 1");
        if (mc_samples < 1000) throw ValidationError("mc_samples must be >= 1000 (got " + std::to_string(mc_samples) + ")");
    }
};

/// Calibration table of one class: mu(eps) on a grid plus the sorted
/// Monte-Carlo log-likelihood-ratio sample it was read from.
struct ClassStrategy {
    int class_index = 0;
    std::vector<double> epsilon_grid;
    std::vector<double> mu_values;
    std::vector<double> cdf_samples;

    /// Threshold at eps, linear between grid points. eps must lie in the grid
    /// range; exact grid points return the tabulated value.
    double mu_at(double eps) const {
        auto hi = std::lower_bound(epsilon_grid.begin(), epsilon_grid.end(), eps);
        if (hi == epsilon_grid.end()) return mu_values.back();
        const auto j = static_cast<std::size_t>(hi - epsilon_grid.begin());
        if (*hi == eps || j == 0) return mu_values[j];
        const double t = (eps - epsilon_grid[j - 1]) / (epsilon_grid[j] - epsilon_grid[j - 1]);
        return mu_values[j - 1] + t * (mu_values[j] - mu_values[j - 1]);
    }

    /// Number of samples strictly below v.
    std::size_t count_below(double v) const {
        return static_cast<std::size_t>(std::lower_bound(cdf_samples.begin(), cdf_samples.end(), v) - cdf_samples.begin());
    }

    /// Empirical CDF F(v) = #{s < v} / n.
    double cdf(double v) const {
        return static_cast<double>(count_below(v)) / static_cast<double>(cdf_samples.size());
    }
};

struct GroodModel {
    LinearProbeModel lp;
    NearestMeanModel nm;
    std::vector<ClassGaussian> class_gaussians;
    OODGaussian ood;
    std::vector<ClassStrategy> strategies;
    OODPriorConfig config;

    bool fitted() const noexcept {
        return !class_gaussians.empty() && strategies.size() == class_gaussians.size();
    }
    Eigen::Index class_count() const noexcept { return static_cast<Eigen::Index>(class_gaussians.size()); }
    Eigen::Index dim() const noexcept { return lp.dim(); }
    const std::vector<double>& epsilon_grid() const { return strategies.front().epsilon_grid; }
};

/// 50 log-spaced values on [1e-3, 0.5] followed by 0.6, 0.7, 0.8, 0.9, 0.99.
inline std::vector<double> default_epsilon_grid() {
    std::vector<double> grid;
    const double lo = std::log(1e-3), hi = std::log(0.5);
    for (int i = 0; i < 50; ++i) grid.push_back(std::exp(lo + (hi - lo) * i / 49.0));
    grid.front() = 1e-3;
    grid.back() = 0.5;
    for (double e : {0.6, 0.7, 0.8, 0.9, 0.99}) grid.push_back(e);
    return grid;
}

inline void validate_epsilon_grid(std::span<const double> grid) {
    if (grid.empty()) throw ValidationError("epsilon grid is empty");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0 && grid[i] < 1.0)) throw ValidationError("epsilon grid values must lie in (0, 1)");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw ValidationError("epsilon grid must be strictly ascending");
    }
}

namespace detail {

inline void require_models(const LinearProbeModel& lp, const NearestMeanModel& nm) {
    if (lp.dim() != nm.dim()) throw ValidationError("LP and NM models have different dimensions");
    if (lp.class_count() != nm.class_count()) throw ValidationError("LP and NM models have different class counts");
}

inline void require_fitted(const GroodModel& model) {
    if (!model.fitted()) throw ValidationError("detector model is not fitted");
}

} // namespace detail

/// Class-k coordinates: (k-th logit, k-th NM similarity).
template <typename X>
ScorePoint score_point(const LinearProbeModel& lp, const NearestMeanModel& nm, const X& x, Eigen::Index k) {
    detail::require_models(lp, nm);
    if (k < 0 || k >= lp.class_count())
        throw ValidationError("class index " + std::to_string(k) + " out of range [0, " + std::to_string(lp.class_count()) + ")");
    return {lp_logits(lp, x)[k], nm_similarity(nm, x)[k]};
}

/// Coordinates for every class at once (one projection, one distance pass).
template <typename X>
std::vector<ScorePoint> score_points(const LinearProbeModel& lp, const NearestMeanModel& nm, const X& x) {
    detail::require_models(lp, nm);
    const Vector logits = lp_logits(lp, x);
    const Vector sims = nm_similarity(nm, x);
    std::vector<ScorePoint> out(static_cast<std::size_t>(logits.size()));
    for (Eigen::Index k = 0; k < logits.size(); ++k) out[static_cast<std::size_t>(k)] = {logits[k], sims[k]};
    return out;
}

/// Training points per class, each mapped to its own-class coordinates.
inline std::vector<std::vector<Vec2>> class_score_points(const LinearProbeModel& lp, const NearestMeanModel& nm,
                                                         const EmbeddingSet& id_train) {
    detail::require_models(lp, nm);
    std::vector<std::vector<Vec2>> points(static_cast<std::size_t>(lp.class_count()));
    for (const auto& rec : id_train.records) {
        if (rec.label < 0 || rec.label >= lp.class_count())
            throw ValidationError("training label " + std::to_string(rec.label) + " outside model classes");
        points[static_cast<std::size_t>(rec.label)].push_back(score_point(lp, nm, std::span<const float>(rec.vector), rec.label).vec());
    }
    return points;
}

inline std::vector<ClassGaussian> fit_class_gaussians(std::span<const std::vector<Vec2>> points_per_class) {
    std::vector<ClassGaussian> out;
    out.reserve(points_per_class.size());
    for (std::size_t k = 0; k < points_per_class.size(); ++k)
        out.push_back(fit_gaussian2(points_per_class[k], static_cast<int>(k)));
    return out;
}

inline std::vector<ClassGaussian> fit_class_gaussians(const LinearProbeModel& lp, const NearestMeanModel& nm,
                                                      const EmbeddingSet& id_train) {
    const auto points = class_score_points(lp, nm, id_train);
    return fit_class_gaussians(points);
}

/// Per axis: sigma = multiplier * nearest-rank quantile of |values|, floored at 1e-6.
inline OODGaussian build_ood_model(std::span<const Vec2> id_points, const OODPriorConfig& config) {
    if (id_points.empty()) throw ValidationError("no in-distribution points to size the OOD prior");
    if (!(config.range_quantile > 0.0 && config.range_quantile < 1.0)) throw ValidationError("range_quantile must be in (0, 1)");
    if (!(config.range_multiplier > 0.0)) throw ValidationError("range_multiplier must be > 0");
    OODGaussian ood;
    std::vector<double> magnitudes(id_points.size());
    for (int axis = 0; axis < 2; ++axis) {
        for (std::size_t i = 0; i < id_points.size(); ++i) magnitudes[i] = std::abs(id_points[i][axis]);
        std::sort(magnitudes.begin(), magnitudes.end());
        const double range = detail::sorted_quantile(magnitudes, config.range_quantile);
        const double sigma = std::max(1e-6, config.range_multiplier * range);
        ood.variances[axis] = sigma * sigma;
    }
    return ood;
}

inline OODGaussian build_ood_model(std::span<const ScorePoint> id_points, const OODPriorConfig& config) {
    std::vector<Vec2> pts;
    pts.reserve(id_points.size());
    for (const auto& p : id_points) pts.push_back(p.vec());
    return build_ood_model(std::span<const Vec2>(pts), config);
}

inline double log_likelihood_ratio(const ClassGaussian& id, const OODGaussian& ood, const Vec2& p) {
    return log_pdf(id, p) - log_pdf(ood, p);
}

inline double log_likelihood_ratio(const GroodModel& model, Eigen::Index k, const ScorePoint& p) {
    if (k < 0 || k >= model.class_count()) throw ValidationError("class index " + std::to_string(k) + " out of range");
    return log_likelihood_ratio(model.class_gaussians[static_cast<std::size_t>(k)], model.ood, p.vec());
}

/// One strategy per class. Class k draws config.mc_samples points from its
/// Gaussian using an RNG seeded with (config.seed, k).
inline std::vector<ClassStrategy> calibrate(std::span<const ClassGaussian> gaussians, const OODGaussian& ood,
                                            std::span<const double> epsilon_grid, const OODPriorConfig& config) {
    config.validate();
    validate_epsilon_grid(epsilon_grid);
    std::vector<ClassStrategy> out;
    out.reserve(gaussians.size());
    for (std::size_t k = 0; k < gaussians.size(); ++k) {
        const auto& g = gaussians[k];
        std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                          static_cast<std::uint32_t>(k)};
        std::mt19937_64 rng(seq);
        Gaussian2Sampler sampler(g.mean, g.cov);

        ClassStrategy s;
        s.class_index = static_cast<int>(k);
        s.epsilon_grid.assign(epsilon_grid.begin(), epsilon_grid.end());
        s.cdf_samples.resize(config.mc_samples);
        for (auto& v : s.cdf_samples) v = log_likelihood_ratio(g, ood, sampler(rng));
        std::sort(s.cdf_samples.begin(), s.cdf_samples.end());
        for (double eps : epsilon_grid) s.mu_values.push_back(detail::sorted_quantile(s.cdf_samples, eps));
        out.push_back(std::move(s));
    }
    return out;
}

/// Full fit: class Gaussians, OOD prior sized from the same ID points, and
/// calibration tables.
inline GroodModel fit_grood(const LinearProbeModel& lp, const NearestMeanModel& nm, const EmbeddingSet& id_train,
                            std::span<const double> epsilon_grid, const OODPriorConfig& config = {}) {
    config.validate();
    validate_epsilon_grid(epsilon_grid);
    GroodModel model;
    model.lp = lp;
    model.nm = nm;
    model.config = config;
    const auto points = class_score_points(lp, nm, id_train);
    model.class_gaussians = fit_class_gaussians(points);
    std::vector<Vec2> all;
    for (const auto& cls : points) all.insert(all.end(), cls.begin(), cls.end());
    model.ood = build_ood_model(std::span<const Vec2>(all), config);
    model.strategies = calibrate(model.class_gaussians, model.ood, epsilon_grid, config);
    return model;
}

/// Re-run calibration on an already fitted model with a new grid or config.
inline void recalibrate(GroodModel& model, std::span<const double> epsilon_grid, const OODPriorConfig& config) {
    detail::require_fitted(model);
    model.config = config;
    model.strategies = calibrate(model.class_gaussians, model.ood, epsilon_grid, config);
}

/// log r_k(x) for every class.
template <typename X>
std::vector<double> log_likelihood_ratios(const GroodModel& model, const X& x) {
    detail::require_fitted(model);
    const auto points = score_points(model.lp, model.nm, x);
    std::vector<double> out(points.size());
    for (std::size_t k = 0; k < points.size(); ++k)
        out[k] = log_likelihood_ratio(model.class_gaussians[k], model.ood, points[k].vec());
    return out;
}

/// argmax_k of the class-k Gaussian log-density at the class-k point.
template <typename X>
Eigen::Index predict_class(const GroodModel& model, const X& x) {
    detail::require_fitted(model);
    const auto points = score_points(model.lp, model.nm, x);
    Eigen::Index best = 0;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < points.size(); ++k) {
        const double ll = log_pdf(model.class_gaussians[k], points[k].vec());
        if (ll > best_ll) {
            best_ll = ll;
            best = static_cast<Eigen::Index>(k);
        }
    }
    return best;
}

/// max_k F_k(log r_k(x)); thresholding at a grid eps (accept iff score >= eps)
/// reproduces decide() at that eps.
inline double calibrated_score_from_ratios(const GroodModel& model, std::span<const double> log_ratios) {
    detail::require_fitted(model);
    double best = 0.0;
    for (std::size_t k = 0; k < log_ratios.size(); ++k) best = std::max(best, model.strategies[k].cdf(log_ratios[k]));
    return best;
}

template <typename X>
double calibrated_score(const GroodModel& model, const X& x) {
    const auto ratios = log_likelihood_ratios(model, x);
    return calibrated_score_from_ratios(model, ratios);
}

struct Decision {
    bool in_distribution = false;
    Eigen::Index class_index = -1;  // -1 for OOD
    double epsilon = 0.0;           // level actually used
    bool clamped = false;           // requested eps was outside the calibrated grid
};

/// Clamp eps into the calibrated grid range.
inline std::pair<double, bool> clamp_epsilon(const GroodModel& model, double eps) {
    detail::require_fitted(model);
    const auto& grid = model.epsilon_grid();
    if (!(eps >= grid.front())) return {grid.front(), true};  // also catches NaN
    if (eps > grid.back()) return {grid.back(), true};
    return {eps, false};
}

/// True when some class accepts: log r_k > mu_k(eps). eps must already lie in
/// the grid range (see clamp_epsilon).
inline bool accepts(const GroodModel& model, std::span<const double> log_ratios, double eps) {
    detail::require_fitted(model);
    if (log_ratios.size() != model.strategies.size()) throw ValidationError("expected one log ratio per class");
    for (std::size_t k = 0; k < log_ratios.size(); ++k)
        if (log_ratios[k] > model.strategies[k].mu_at(eps)) return true;
    return false;
}

/// ID iff some class accepts at eps (clamped into the grid range); the class
/// reported for ID samples comes from predict_class.
template <typename X>
Decision decide(const GroodModel& model, const X& x, double eps) {
    const auto [level, clamped] = clamp_epsilon(model, eps);
    const auto ratios = log_likelihood_ratios(model, x);
    Decision d;
    d.epsilon = level;
    d.clamped = clamped;
    d.in_distribution = accepts(model, ratios, level);
    if (d.in_distribution) d.class_index = predict_class(model, x);
    return d;
}

} // namespace grood
