#pragma once

// Model files. One self-describing little-endian container for every model:
//   "GMDL" | u32 version | u64 header_bytes | JSON header | u64 n | n x f64
// The JSON header carries shapes and configuration; every floating-point
// parameter lives in the f64 payload so a save/load round trip is bit-exact.

#include <grood/detail/binary_io.hpp>
#include <grood/detector.hpp>
#include <grood/error.hpp>
#include <grood/linear_probe.hpp>
#include <grood/nearest_mean.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace grood {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known, const char* section) {
    if (!j.is_object()) throw ValidationError(std::string(section) + " config must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
            throw ValidationError(std::string("unknown ") + section + " config key '" + key + "'");
}

} // namespace detail

inline void to_json(nlohmann::json& j, const LPTrainConfig& c) {
    j = {{"l2_strength", c.l2_strength},
         {"max_iterations", c.max_iterations},
         {"gradient_tolerance", c.gradient_tolerance},
         {"seed", c.seed},
         {"l2_normalize_inputs", c.l2_normalize_inputs},
         {"select_l2_by_validation", c.select_l2_by_validation},
         {"validation_fraction", c.validation_fraction},
         {"l2_candidates", c.l2_candidates}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, LPTrainConfig& c) {
    detail::reject_unknown_keys(j,
                                {"l2_strength", "max_iterations", "gradient_tolerance", "seed", "l2_normalize_inputs",
                                 "select_l2_by_validation", "validation_fraction", "l2_candidates"},
                                "lp");
    c.l2_strength = j.value("l2_strength", c.l2_strength);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.gradient_tolerance = j.value("gradient_tolerance", c.gradient_tolerance);
    c.seed = j.value("seed", c.seed);
    c.l2_normalize_inputs = j.value("l2_normalize_inputs", c.l2_normalize_inputs);
    c.select_l2_by_validation = j.value("select_l2_by_validation", c.select_l2_by_validation);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.l2_candidates = j.value("l2_candidates", c.l2_candidates);
}

inline void to_json(nlohmann::json& j, const OODPriorConfig& c) {
    j = {{"range_quantile", c.range_quantile},
         {"range_multiplier", c.range_multiplier},
         {"mc_samples", c.mc_samples},
         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, OODPriorConfig& c) {
    detail::reject_unknown_keys(j, {"range_quantile", "range_multiplier", "mc_samples", "seed"}, "ood_prior");
    c.range_quantile = j.value("range_quantile", c.range_quantile);
    c.range_multiplier = j.value("range_multiplier", c.range_multiplier);
    c.mc_samples = j.value("mc_samples", c.mc_samples);
    c.seed = j.value("seed", c.seed);
}

namespace detail {

inline constexpr std::array<char, 4> kModelMagic{'G', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

inline void write_container(std::ostream& out, const nlohmann::json& header, std::span<const double> payload) {
    const std::string text = header.dump();
    out.write(kModelMagic.data(), 4);
    write_le(out, kModelVersion);
    write_le(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_le(out, static_cast<std::uint64_t>(payload.size()));
    for (double v : payload) write_le(out, v);
}

struct Container {
    nlohmann::json header;
    std::vector<double> payload;
};

inline Container read_container(std::istream& in, const std::string& expected_kind) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4) || magic != kModelMagic) throw InputError("not a model file (bad magic)");
    std::uint32_t version = 0;
    std::uint64_t header_bytes = 0, count = 0;
    if (!read_le(in, version)) throw InputError("truncated model header");
    if (version != kModelVersion) throw InputError("unsupported model file version " + std::to_string(version));
    if (!read_le(in, header_bytes) || header_bytes > (1u << 26)) throw InputError("truncated or corrupt model header");
    std::string text(header_bytes, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(header_bytes))) throw InputError("truncated model header");
    Container c;
    try {
        c.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("corrupt model header: ") + e.what());
    }
    if (c.header.value("kind", std::string{}) != expected_kind)
        throw InputError("model file holds '" + c.header.value("kind", std::string{"?"}) + "', expected '" + expected_kind + "'");
    if (!read_le(in, count)) throw InputError("truncated model payload");
    c.payload.resize(static_cast<std::size_t>(count));
    for (auto& v : c.payload)
        if (!read_le(in, v)) throw InputError("truncated model payload");
    return c;
}

class PayloadReader {
public:
    explicit PayloadReader(std::span<const double> data) : data_(data) {}
    double next() {
        if (pos_ >= data_.size()) throw InputError("model payload shorter than its header declares");
        return data_[pos_++];
    }
    void finish() const {
        if (pos_ != data_.size()) throw InputError("model payload longer than its header declares");
    }

private:
    std::span<const double> data_;
    std::size_t pos_ = 0;
};

template <typename Model, typename Writer>
void save_to_path(const Model& model, const std::filesystem::path& path, Writer writer) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write model file: " + path.string());
    writer(out, model);
    if (!out) throw InputError("write failed: " + path.string());
}

inline std::ifstream open_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open model file: " + path.string());
    return in;
}

} // namespace detail

// --- linear probe --------------------------------------------------------

inline void write_model(std::ostream& out, const LinearProbeModel& m) {
    const auto K = m.class_count(), D = m.dim();
    nlohmann::json header{{"kind", "linear_probe"},
                          {"classes", K},
                          {"dim", D},
                          {"config", m.train_config},
                          {"diagnostics",
                           {{"iterations", m.diagnostics.iterations},
                            {"converged", m.diagnostics.converged},
                            {"final_loss", m.diagnostics.final_loss},
                            {"gradient_max_norm", m.diagnostics.gradient_max_norm}}}};
    std::vector<double> payload;
    payload.reserve(static_cast<std::size_t>(K * D + K));
    for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index d = 0; d < D; ++d) payload.push_back(m.weights(k, d));
    for (Eigen::Index k = 0; k < K; ++k) payload.push_back(m.bias[k]);
    detail::write_container(out, header, payload);
}

inline LinearProbeModel read_linear_probe(std::istream& in) {
    auto c = detail::read_container(in, "linear_probe");
    LinearProbeModel m;
    try {
        const auto K = c.header.at("classes").get<Eigen::Index>(), D = c.header.at("dim").get<Eigen::Index>();
        if (K < 1 || D < 1) throw InputError("linear probe header has invalid shape");
        m.train_config = c.header.at("config").get<LPTrainConfig>();
        const auto& diag = c.header.at("diagnostics");
        m.diagnostics.iterations = diag.value("iterations", 0);
        m.diagnostics.converged = diag.value("converged", false);
        m.diagnostics.final_loss = diag.value("final_loss", 0.0);
        m.diagnostics.gradient_max_norm = diag.value("gradient_max_norm", 0.0);
        detail::PayloadReader r(c.payload);
        m.weights.resize(K, D);
        m.bias.resize(K);
        for (Eigen::Index k = 0; k < K; ++k)
            for (Eigen::Index d = 0; d < D; ++d) m.weights(k, d) = r.next();
        for (Eigen::Index k = 0; k < K; ++k) m.bias[k] = r.next();
        r.finish();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("corrupt linear probe header: ") + e.what());
    }
    return m;
}

// --- nearest mean --------------------------------------------------------

inline void write_model(std::ostream& out, const NearestMeanModel& m) {
    const auto K = m.class_count(), D = m.dim();
    nlohmann::json header{{"kind", "nearest_mean"}, {"classes", K}, {"dim", D}, {"l2_normalize_inputs", m.l2_normalize_inputs}};
    std::vector<double> payload;
    payload.reserve(static_cast<std::size_t>(K * D));
    for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index d = 0; d < D; ++d) payload.push_back(m.means(k, d));
    detail::write_container(out, header, payload);
}

inline NearestMeanModel read_nearest_mean(std::istream& in) {
    auto c = detail::read_container(in, "nearest_mean");
    NearestMeanModel m;
    try {
        const auto K = c.header.at("classes").get<Eigen::Index>(), D = c.header.at("dim").get<Eigen::Index>();
        if (K < 1 || D < 1) throw InputError("nearest mean header has invalid shape");
        m.l2_normalize_inputs = c.header.value("l2_normalize_inputs", false);
        detail::PayloadReader r(c.payload);
        m.means.resize(K, D);
        for (Eigen::Index k = 0; k < K; ++k)
            for (Eigen::Index d = 0; d < D; ++d) m.means(k, d) = r.next();
        r.finish();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("corrupt nearest mean header: ") + e.what());
    }
    return m;
}

// --- detector ------------------------------------------------------------
// The LP and NM models are stored in their own files; the detector file
// records their shapes and is re-attached to them on load.

inline void write_model(std::ostream& out, const GroodModel& m) {
    detail::require_fitted(m);
    const auto& grid = m.epsilon_grid();
    nlohmann::json flags = nlohmann::json::array();
    nlohmann::json sample_counts = nlohmann::json::array();
    for (std::size_t k = 0; k < m.class_gaussians.size(); ++k) {
        flags.push_back({{"regularized", m.class_gaussians[k].regularized}, {"degenerate", m.class_gaussians[k].degenerate}});
        sample_counts.push_back(m.strategies[k].cdf_samples.size());
    }
    nlohmann::json header{{"kind", "grood"},           {"classes", m.class_count()}, {"dim", m.dim()},
                          {"config", m.config},         {"grid_size", grid.size()},   {"class_flags", flags},
                          {"cdf_sample_counts", sample_counts}};
    std::vector<double> payload;
    for (const auto& g : m.class_gaussians) {
        payload.insert(payload.end(), {g.mean[0], g.mean[1], g.cov(0, 0), g.cov(0, 1), g.cov(1, 0), g.cov(1, 1)});
    }
    payload.insert(payload.end(), {m.ood.variances[0], m.ood.variances[1]});
    payload.insert(payload.end(), grid.begin(), grid.end());
    for (const auto& s : m.strategies) {
        payload.insert(payload.end(), s.mu_values.begin(), s.mu_values.end());
        payload.insert(payload.end(), s.cdf_samples.begin(), s.cdf_samples.end());
    }
    detail::write_container(out, header, payload);
}

inline GroodModel read_grood(std::istream& in, const LinearProbeModel& lp, const NearestMeanModel& nm) {
    auto c = detail::read_container(in, "grood");
    GroodModel m;
    try {
        const auto K = c.header.at("classes").get<Eigen::Index>();
        const auto D = c.header.at("dim").get<Eigen::Index>();
        if (K != lp.class_count() || K != nm.class_count() || D != lp.dim() || D != nm.dim())
            throw ValidationError("detector model does not match the LP/NM models (classes " + std::to_string(K) + ", dim " +
                                  std::to_string(D) + ")");
        m.lp = lp;
        m.nm = nm;
        m.config = c.header.at("config").get<OODPriorConfig>();
        const auto grid_size = c.header.at("grid_size").get<std::size_t>();
        const auto& flags = c.header.at("class_flags");
        const auto counts = c.header.at("cdf_sample_counts").get<std::vector<std::size_t>>();
        if (flags.size() != static_cast<std::size_t>(K) || counts.size() != static_cast<std::size_t>(K))
            throw InputError("detector header has inconsistent class tables");

        detail::PayloadReader r(c.payload);
        for (Eigen::Index k = 0; k < K; ++k) {
            ClassGaussian g;
            g.class_index = static_cast<int>(k);
            g.mean[0] = r.next();
            g.mean[1] = r.next();
            g.cov(0, 0) = r.next();
            g.cov(0, 1) = r.next();
            g.cov(1, 0) = r.next();
            g.cov(1, 1) = r.next();
            g.regularized = flags[static_cast<std::size_t>(k)].value("regularized", false);
            g.degenerate = flags[static_cast<std::size_t>(k)].value("degenerate", false);
            m.class_gaussians.push_back(g);
        }
        m.ood.variances[0] = r.next();
        m.ood.variances[1] = r.next();
        std::vector<double> grid(grid_size);
        for (auto& e : grid) e = r.next();
        for (Eigen::Index k = 0; k < K; ++k) {
            ClassStrategy s;
            s.class_index = static_cast<int>(k);
            s.epsilon_grid = grid;
            s.mu_values.resize(grid_size);
            for (auto& v : s.mu_values) v = r.next();
            s.cdf_samples.resize(counts[static_cast<std::size_t>(k)]);
            for (auto& v : s.cdf_samples) v = r.next();
            if (s.cdf_samples.empty()) throw InputError("detector class has no calibration samples");
            m.strategies.push_back(std::move(s));
        }
        r.finish();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("corrupt detector header: ") + e.what());
    }
    return m;
}

template <typename Model>
void save_model(const Model& model, const std::filesystem::path& path) {
    detail::save_to_path(model, path, [](std::ostream& out, const Model& m) { write_model(out, m); });
}

inline LinearProbeModel load_linear_probe(const std::filesystem::path& path) {
    auto in = detail::open_model(path);
    return read_linear_probe(in);
}

inline NearestMeanModel load_nearest_mean(const std::filesystem::path& path) {
    auto in = detail::open_model(path);
    return read_nearest_mean(in);
}

inline GroodModel load_grood(const std::filesystem::path& path, const LinearProbeModel& lp, const NearestMeanModel& nm) {
    auto in = detail::open_model(path);
    return read_grood(in, lp, nm);
}

} // namespace grood
