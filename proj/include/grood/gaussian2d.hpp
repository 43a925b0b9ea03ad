#pragma once

// Bivariate normal densities with closed-form 2x2 algebra.

#include <grood/error.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <span>

namespace grood {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Point in the (LP logit, NM similarity) plane.
struct ScorePoint {
    double lp = 0.0;
    double nm = 0.0;

    Vec2 vec() const { return {lp, nm}; }
    friend bool operator==(const ScorePoint&, const ScorePoint&) = default;
};

struct ClassGaussian {
    int class_index = 0;
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
    bool regularized = false;  // ridge added because the ML covariance was near-singular
    bool degenerate = false;   // ML covariance was exactly zero
};

/// Zero-mean, axis-aligned reference density for out-of-distribution scores.
struct OODGaussian {
    Vec2 variances = Vec2::Ones();

    Vec2 mean() const { return Vec2::Zero(); }
    Mat2 cov() const { return variances.asDiagonal(); }
};

inline double det2(const Mat2& m) { return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0); }

inline double min_eigenvalue2(const Mat2& m) {
    const double half_trace = 0.5 * (m(0, 0) + m(1, 1));
    const double half_gap = 0.5 * (m(0, 0) - m(1, 1));
    return half_trace - std::sqrt(half_gap * half_gap + m(0, 1) * m(1, 0));
}

/// log N(p; mean, cov) for a symmetric positive-definite 2x2 covariance.
inline double gaussian_log_pdf(const Vec2& p, const Vec2& mean, const Mat2& cov) {
    const double a = cov(0, 0), b = cov(0, 1), d = cov(1, 1);
    const double det = a * d - b * b;
    const double dx = p[0] - mean[0], dy = p[1] - mean[1];
    const double quad = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
    return -0.5 * quad - std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det);
}

inline double log_pdf(const ClassGaussian& g, const Vec2& p) { return gaussian_log_pdf(p, g.mean, g.cov); }

inline double log_pdf(const OODGaussian& g, const Vec2& p) {
    const double vx = g.variances[0], vy = g.variances[1];
    return -0.5 * (p[0] * p[0] / vx + p[1] * p[1] / vy) - std::log(2.0 * std::numbers::pi) - 0.5 * std::log(vx * vy);
}

/// Maximum-likelihood fit (divide by N). When the smallest eigenvalue is below
/// 1e-9 the covariance gets a ridge of max(1e-9, 1e-6 * trace / 2).
inline ClassGaussian fit_gaussian2(std::span<const Vec2> points, int class_index = 0) {
    if (points.size() < 2) throw ValidationError("class " + std::to_string(class_index) + " needs at least 2 points, has " +
                                                 std::to_string(points.size()));
    const double n = static_cast<double>(points.size());
    ClassGaussian g;
    g.class_index = class_index;
    Vec2 sum = Vec2::Zero();
    for (const auto& p : points) sum += p;
    g.mean = sum / n;
    Mat2 scatter = Mat2::Zero();
    for (const auto& p : points) {
        const Vec2 c = p - g.mean;
        scatter += c * c.transpose();
    }
    g.cov = scatter / n;
    g.cov(1, 0) = g.cov(0, 1);
    g.degenerate = g.cov.isZero(0.0);
    if (min_eigenvalue2(g.cov) < 1e-9) {
        const double ridge = std::max(1e-9, 1e-6 * g.cov.trace() / 2.0);
        g.cov += ridge * Mat2::Identity();
        g.regularized = true;
    }
    if (!std::isfinite(det2(g.cov)) || det2(g.cov) <= 0.0)
        throw NumericError("covariance of class " + std::to_string(class_index) + " is not positive definite");
    return g;
}

/// Draws from N(mean, cov) through the closed-form lower Cholesky factor.
class Gaussian2Sampler {
public:
    Gaussian2Sampler(const Vec2& mean, const Mat2& cov) : mean_(mean) {
        l11_ = std::sqrt(cov(0, 0));
        l21_ = cov(1, 0) / l11_;
        l22_ = std::sqrt(std::max(0.0, cov(1, 1) - l21_ * l21_));
    }

    template <typename Rng>
    Vec2 operator()(Rng& rng) {
        const double z0 = normal_(rng), z1 = normal_(rng);
        return {mean_[0] + l11_ * z0, mean_[1] + l21_ * z0 + l22_ * z1};
    }

private:
    Vec2 mean_;
    double l11_ = 1.0, l21_ = 0.0, l22_ = 1.0;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace grood
