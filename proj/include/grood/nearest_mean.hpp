#pragma once

// Nearest-class-mean classifier with the bounded similarity 1 / (1 + d).

#include <grood/dataset.hpp>
#include <grood/linalg.hpp>

namespace grood {

struct NearestMeanModel {
    Matrix means;  // K x D
    bool l2_normalize_inputs = false;

    Eigen::Index class_count() const noexcept { return means.rows(); }
    Eigen::Index dim() const noexcept { return means.cols(); }
};

inline NearestMeanModel fit_nm(const EmbeddingSet& train, bool l2_normalize_inputs = false) {
    if (train.empty()) throw ValidationError("empty training set");
    const auto by_class = train.indices_by_class();
    if (by_class.empty()) throw ValidationError("training set has no labeled records");
    NearestMeanModel model;
    model.l2_normalize_inputs = l2_normalize_inputs;
    model.means = Matrix::Zero(static_cast<Eigen::Index>(by_class.size()), static_cast<Eigen::Index>(train.dim));
    for (std::size_t k = 0; k < by_class.size(); ++k) {
        if (by_class[k].empty()) throw ValidationError("class " + std::to_string(k) + " has no training records");
        Vector sum = Vector::Zero(train.dim);
        for (auto idx : by_class[k]) {
            const auto& v = train.records[idx].vector;
            if (v.size() != train.dim) throw ValidationError("record " + std::to_string(idx) + " has wrong length");
            sum += to_vector(v, l2_normalize_inputs);
        }
        model.means.row(static_cast<Eigen::Index>(k)) = (sum / static_cast<double>(by_class[k].size())).transpose();
    }
    return model;
}

inline Vector nm_distance(const NearestMeanModel& model, const Vector& x) {
    require_dim(x.size(), model.dim());
    Vector q = x;
    if (model.l2_normalize_inputs && q.norm() > 0.0) q /= q.norm();
    return (model.means.rowwise() - q.transpose()).rowwise().norm();
}

inline Vector nm_distance(const NearestMeanModel& model, std::span<const float> x) {
    require_dim(static_cast<Eigen::Index>(x.size()), model.dim());
    return nm_distance(model, to_vector(x));
}

inline Vector similarity_from_distance(const Vector& d) {
    return (1.0 + d.array()).inverse().matrix();
}

template <typename X>
Vector nm_similarity(const NearestMeanModel& model, const X& x) {
    return similarity_from_distance(nm_distance(model, x));
}

/// argmin distance, ties to the lowest class index.
template <typename X>
Eigen::Index nm_predict(const NearestMeanModel& model, const X& x) {
    return argmax_lowest(Vector(-nm_distance(model, x)));
}

} // namespace grood
