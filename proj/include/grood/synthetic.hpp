#pragma once

// Seeded Gaussian embedding generators for fixtures, demos, and tests.

#include <grood/dataset.hpp>
#include <grood/linalg.hpp>

#include <cstdint>
#include <random>
#include <span>

namespace grood {

struct GaussianBlob {
    Vector mean;
    double stddev = 1.0;  // isotropic
    std::size_t count = 0;
    std::int32_t label = kOodLabel;
};

/// Appends blob samples to set (set.dim must equal the blob dimension).
template <typename Rng>
void append_blob(EmbeddingSet& set, const GaussianBlob& blob, Rng& rng) {
    require_dim(blob.mean.size(), static_cast<Eigen::Index>(set.dim));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < blob.count; ++i) {
        EmbeddingRecord rec;
        rec.label = blob.label;
        rec.vector.resize(set.dim);
        for (std::uint32_t d = 0; d < set.dim; ++d)
            rec.vector[d] = static_cast<float>(blob.mean[d] + blob.stddev * normal(rng));
        set.records.push_back(std::move(rec));
    }
}

inline EmbeddingSet sample_blobs(std::uint32_t dim, std::span<const GaussianBlob> blobs, std::uint64_t seed) {
    EmbeddingSet set;
    set.dim = dim;
    std::mt19937_64 rng(seed);
    for (const auto& b : blobs) append_blob(set, b, rng);
    return set;
}

/// Class means at `radius` along the first `classes` coordinate axes.
inline std::vector<Vector> axis_means(std::uint32_t dim, std::size_t classes, double radius) {
    std::vector<Vector> means;
    for (std::size_t k = 0; k < classes; ++k) {
        Vector m = Vector::Zero(dim);
        m[static_cast<Eigen::Index>(k % dim)] = radius;
        means.push_back(m);
    }
    return means;
}

/// Small 3-class pool with an OOD cluster and a manifest splitting it; used as
/// the bundled demo data and in CLI tests.
struct DemoFixture {
    EmbeddingSet pool;
    SplitManifest manifest;
};

inline DemoFixture make_demo_fixture(std::uint32_t dim = 8, std::size_t train_per_class = 200,
                                     std::size_t test_per_class = 100, std::size_t ood_count = 300,
                                     std::uint64_t seed = 7) {
    DemoFixture fx;
    fx.pool.dim = dim;
    fx.pool.class_names = {{0, "alpha"}, {1, "beta"}, {2, "gamma"}, {3, "delta"}};
    std::mt19937_64 rng(seed);
    const auto means = axis_means(dim, 3, 4.0);
    for (std::int32_t k = 0; k < 3; ++k) {
        const auto start = fx.pool.size();
        append_blob(fx.pool, {means[static_cast<std::size_t>(k)], 1.0, train_per_class + test_per_class, k}, rng);
        for (std::size_t i = 0; i < train_per_class; ++i) fx.manifest.id_train.push_back(start + i);
        for (std::size_t i = train_per_class; i < train_per_class + test_per_class; ++i) fx.manifest.id_test.push_back(start + i);
    }
    // Held-out class 3 plays the OOD role, far from the ID classes.
    Vector ood_mean = Vector::Constant(dim, -3.0);
    const auto start = fx.pool.size();
    append_blob(fx.pool, {ood_mean, 1.0, ood_count, 3}, rng);
    for (std::size_t i = 0; i < ood_count; ++i) fx.manifest.ood_test.push_back(start + i);
    fx.manifest.name = "demo-3-vs-1";
    fx.manifest.class_names = fx.pool.class_names;
    return fx;
}

} // namespace grood
