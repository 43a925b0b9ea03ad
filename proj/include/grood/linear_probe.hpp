#pragma once

// Linear probe: multinomial logistic regression on frozen embeddings, trained
// full-batch with L-BFGS and an Armijo backtracking line search.

#include <grood/dataset.hpp>
#include <grood/linalg.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace grood {

struct LPTrainConfig {
    double l2_strength = 1e-3;
    int max_iterations = 1000;
    double gradient_tolerance = 1e-6;
    std::uint64_t seed = 0;
    bool l2_normalize_inputs = false;

    // Optional held-out sweep over l2_candidates; the winner replaces l2_strength.
    bool select_l2_by_validation = false;
    double validation_fraction = 0.1;
    std::vector<double> l2_candidates{1e-4, 1e-3, 1e-2, 1e-1};

    void validate() const {
        if (!(l2_strength >= 0.0) || !std::isfinite(l2_strength)) throw ValidationError("l2_strength must be finite and >= 0");
        if (max_iterations < 1) throw ValidationError("max_iterations must be >= 1");
        if (!(gradient_tolerance > 0.0)) throw ValidationError("gradient_tolerance must be > 0");
        if (select_l2_by_validation) {
            if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
                throw ValidationError("validation_fraction must be in (0, 1)");
            if (l2_candidates.empty()) throw ValidationError("l2_candidates is empty");
            for (double c : l2_candidates)
                if (!(c >= 0.0)) throw ValidationError("l2 candidates must be >= 0");
        }
    }
};

struct LPTrainDiagnostics {
    int iterations = 0;
    double final_loss = 0.0;
    double gradient_max_norm = 0.0;
    bool converged = false;
    std::vector<double> loss_trace;  // objective after each accepted step, starting at the initial point
};

struct LinearProbeModel {
    Matrix weights;  // K x D
    Vector bias;     // K
    LPTrainConfig train_config;
    LPTrainDiagnostics diagnostics;

    Eigen::Index class_count() const noexcept { return weights.rows(); }
    Eigen::Index dim() const noexcept { return weights.cols(); }
};

/// Numerically stable softmax.
inline Vector softmax(const Vector& logits) {
    Vector p = (logits.array() - logits.maxCoeff()).exp();
    return p / p.sum();
}

inline Vector lp_logits(const LinearProbeModel& model, const Vector& x) {
    require_dim(x.size(), model.dim());
    if (model.train_config.l2_normalize_inputs) {
        const double norm = x.norm();
        return model.weights * (norm > 0.0 ? Vector(x / norm) : x) + model.bias;
    }
    return model.weights * x + model.bias;
}

inline Vector lp_logits(const LinearProbeModel& model, std::span<const float> x) {
    require_dim(static_cast<Eigen::Index>(x.size()), model.dim());
    return model.weights * to_vector(x, model.train_config.l2_normalize_inputs) + model.bias;
}

/// Maximum logit, the LP out-of-distribution score.
template <typename X>
double lp_score(const LinearProbeModel& model, const X& x) {
    return lp_logits(model, x).maxCoeff();
}

template <typename X>
Eigen::Index lp_predict(const LinearProbeModel& model, const X& x) {
    return argmax_lowest(lp_logits(model, x));
}

struct LossAndGradient {
    double loss = 0.0;
    Matrix grad_weights;
    Vector grad_bias;
};

namespace detail {

// Mean softmax cross-entropy over rows of X plus (l2/2)||W||_F^2; bias is not
// regularized.
inline LossAndGradient lp_objective(const Matrix& W, const Vector& b, const Matrix& X, std::span<const std::int32_t> y,
                                    double l2) {
    const auto n = X.rows();
    Matrix logits = X * W.transpose();
    logits.rowwise() += b.transpose();

    double data_loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        auto row = logits.row(i);
        const auto yi = static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)]);
        const double top = row.maxCoeff();
        const double shifted_target = row[yi] - top;
        row.array() = (row.array() - top).exp();
        const double total = row.sum();
        data_loss += std::log(total) - shifted_target;
        row /= total;
        row[yi] -= 1.0;  // row now holds p - onehot(y)
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    LossAndGradient out;
    out.loss = data_loss * inv_n + 0.5 * l2 * W.squaredNorm();
    out.grad_weights = inv_n * (logits.transpose() * X) + l2 * W;
    out.grad_bias = inv_n * logits.colwise().sum().transpose();
    return out;
}

inline std::vector<std::int32_t> labels_of(const EmbeddingSet& set) {
    std::vector<std::int32_t> y;
    y.reserve(set.size());
    for (const auto& r : set.records) y.push_back(r.label);
    return y;
}

} // namespace detail

/// Objective value and its exact gradient at the model's current parameters.
inline LossAndGradient lp_loss_and_gradient(const LinearProbeModel& model, const EmbeddingSet& batch, double l2) {
    if (batch.empty()) throw ValidationError("empty batch");
    require_dim(static_cast<Eigen::Index>(batch.dim), model.dim());
    const auto y = detail::labels_of(batch);
    for (auto label : y)
        if (label < 0 || label >= model.class_count()) throw ValidationError("batch label out of range: " + std::to_string(label));
    const Matrix X = design_matrix(batch, model.train_config.l2_normalize_inputs);
    return detail::lp_objective(model.weights, model.bias, X, y, l2);
}

namespace detail {

// L-BFGS over the flattened parameter vector [vec(W); b].
inline LinearProbeModel fit_logistic(const Matrix& X, std::span<const std::int32_t> y, Eigen::Index classes,
                                     const LPTrainConfig& config, double l2) {
    const auto dim = X.cols();
    const auto n_w = classes * dim;
    const auto n_params = n_w + classes;

    auto unpack = [&](const Vector& theta, Matrix& W, Vector& b) {
        W = Eigen::Map<const Matrix>(theta.data(), classes, dim);
        b = theta.tail(classes);
    };
    auto evaluate = [&](const Vector& theta, Vector& grad) {
        Matrix W;
        Vector b;
        unpack(theta, W, b);
        auto lg = lp_objective(W, b, X, y, l2);
        grad.resize(n_params);
        grad.head(n_w) = Eigen::Map<const Vector>(lg.grad_weights.data(), n_w);
        grad.tail(classes) = lg.grad_bias;
        return lg.loss;
    };

    constexpr std::size_t kMemory = 10;
    constexpr double kArmijo = 1e-4;
    constexpr int kMaxBacktracks = 60;

    Vector theta = Vector::Zero(n_params);
    Vector grad;
    double f = evaluate(theta, grad);

    LPTrainDiagnostics diag;
    diag.loss_trace.push_back(f);
    std::deque<Vector> s_hist, y_hist;
    std::deque<double> rho_hist;

    int iter = 0;
    for (; iter < config.max_iterations; ++iter) {
        if (grad.lpNorm<Eigen::Infinity>() < config.gradient_tolerance) break;

        // Two-loop recursion.
        Vector q = grad;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t j = s_hist.size(); j-- > 0;) {
            alpha[j] = rho_hist[j] * s_hist[j].dot(q);
            q -= alpha[j] * y_hist[j];
        }
        if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        for (std::size_t j = 0; j < s_hist.size(); ++j) {
            const double beta = rho_hist[j] * y_hist[j].dot(q);
            q += (alpha[j] - beta) * s_hist[j];
        }
        Vector direction = -q;
        double slope = grad.dot(direction);
        if (!(slope < 0.0)) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            direction = -grad;
            slope = -grad.squaredNorm();
        }

        double step = s_hist.empty() ? std::min(1.0, 1.0 / grad.lpNorm<Eigen::Infinity>()) : 1.0;
        Vector next_theta, next_grad;
        double next_f = f;
        bool accepted = false;
        for (int bt = 0; bt < kMaxBacktracks; ++bt) {
            next_theta = theta + step * direction;
            next_f = evaluate(next_theta, next_grad);
            if (std::isfinite(next_f) && next_f <= f + kArmijo * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // no further decrease representable

        Vector s = next_theta - theta;
        Vector yv = next_grad - grad;
        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            if (s_hist.size() == kMemory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(yv));
            rho_hist.push_back(1.0 / sy);
        }
        theta = std::move(next_theta);
        grad = std::move(next_grad);
        f = next_f;
        diag.loss_trace.push_back(f);
    }

    LinearProbeModel model;
    unpack(theta, model.weights, model.bias);
    model.train_config = config;
    model.train_config.l2_strength = l2;
    diag.iterations = iter;
    diag.final_loss = f;
    diag.gradient_max_norm = grad.lpNorm<Eigen::Infinity>();
    diag.converged = diag.gradient_max_norm < config.gradient_tolerance;
    model.diagnostics = std::move(diag);
    return model;
}

inline double training_accuracy(const LinearProbeModel& model, const Matrix& X, std::span<const std::int32_t> y) {
    Matrix logits = X * model.weights.transpose();
    logits.rowwise() += model.bias.transpose();
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        if (argmax_lowest(logits.row(i).transpose()) == y[static_cast<std::size_t>(i)]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(X.rows());
}

} // namespace detail

/// Fraction of records whose argmax logit equals the label.
inline double lp_accuracy(const LinearProbeModel& model, const EmbeddingSet& set) {
    if (set.empty()) throw ValidationError("empty set");
    const auto y = detail::labels_of(set);
    return detail::training_accuracy(model, design_matrix(set, model.train_config.l2_normalize_inputs), y);
}

/// Deterministic for a fixed config and record order. A run that hits
/// max_iterations returns the last iterate with diagnostics.converged == false.
inline LinearProbeModel train_lp(const EmbeddingSet& train, const LPTrainConfig& config = {}) {
    config.validate();
    if (train.empty()) throw ValidationError("empty training set");
    const auto by_class = train.indices_by_class();
    if (by_class.size() < 2) throw ValidationError("single-class input");
    for (std::size_t k = 0; k < by_class.size(); ++k)
        if (by_class[k].empty()) throw ValidationError("class " + std::to_string(k) + " has no training records");
    for (const auto& r : train.records)
        if (r.label < 0) throw ValidationError("training set contains unlabeled records");

    const auto classes = static_cast<Eigen::Index>(by_class.size());
    const Matrix X = design_matrix(train, config.l2_normalize_inputs);
    const auto y = detail::labels_of(train);

    double l2 = config.l2_strength;
    if (config.select_l2_by_validation) {
        // Stratified seeded hold-out; every class keeps at least one training record.
        std::mt19937_64 rng(config.seed);
        std::vector<char> held(train.size(), 0);
        for (auto idx : by_class) {
            std::shuffle(idx.begin(), idx.end(), rng);
            auto take = static_cast<std::size_t>(std::ceil(config.validation_fraction * static_cast<double>(idx.size())));
            take = std::min(take, idx.size() - 1);
            for (std::size_t j = 0; j < take; ++j) held[idx[j]] = 1;
        }
        std::vector<Eigen::Index> fit_rows, val_rows;
        for (std::size_t i = 0; i < train.size(); ++i) (held[i] ? val_rows : fit_rows).push_back(static_cast<Eigen::Index>(i));
        if (!val_rows.empty()) {
            const Matrix X_fit = X(fit_rows, Eigen::all), X_val = X(val_rows, Eigen::all);
            std::vector<std::int32_t> y_fit, y_val;
            for (auto r : fit_rows) y_fit.push_back(y[static_cast<std::size_t>(r)]);
            for (auto r : val_rows) y_val.push_back(y[static_cast<std::size_t>(r)]);
            double best_acc = -1.0;
            for (double candidate : config.l2_candidates) {
                const auto m = detail::fit_logistic(X_fit, y_fit, classes, config, candidate);
                const double acc = detail::training_accuracy(m, X_val, y_val);
                if (acc > best_acc) {
                    best_acc = acc;
                    l2 = candidate;
                }
            }
        }
    }
    return detail::fit_logistic(X, y, classes, config, l2);
}

} // namespace grood
