#pragma once

#include <grood/dataset.hpp>
#include <grood/error.hpp>

#include <Eigen/Core>

#include <span>
#include <string>

namespace grood {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Promote a stored f32 embedding to f64, optionally L2-normalized. A zero
/// vector is left unchanged when normalizing.
inline Vector to_vector(std::span<const float> x, bool l2_normalize = false) {
    Vector v(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) v[static_cast<Eigen::Index>(i)] = static_cast<double>(x[i]);
    if (l2_normalize) {
        const double norm = v.norm();
        if (norm > 0.0) v /= norm;
    }
    return v;
}

/// N x D design matrix, one row per record.
inline Matrix design_matrix(const EmbeddingSet& set, bool l2_normalize = false) {
    Matrix X(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(set.dim));
    for (std::size_t i = 0; i < set.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = to_vector(set.records[i].vector, l2_normalize).transpose();
    return X;
}

inline void require_dim(Eigen::Index got, Eigen::Index expected) {
    if (got != expected)
        throw ValidationError("dimension mismatch: got " + std::to_string(got) + ", expected " + std::to_string(expected));
}

/// Index of the largest entry; ties resolve to the lowest index.
inline Eigen::Index argmax_lowest(const Vector& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

} // namespace grood
