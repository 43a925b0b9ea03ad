#pragma once

// The `grood` command-line tool. Lives in a header so tests can drive it
// in-process through run().

#include <grood/grood.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace grood::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kInputError = 2, kValidationError = 3, kNumericError = 4, kOtherError = 5 };

struct RunConfig {
    std::string embeddings;
    std::string manifest;
    std::string model_dir;
    std::string out;
    LPTrainConfig lp;
    OODPriorConfig ood_prior;
    std::vector<double> epsilon_grid = default_epsilon_grid();
    std::vector<double> eval_epsilons{0.01, 0.05, 0.1};
    std::optional<std::uint64_t> seed;  // when set, drives both lp.seed and ood_prior.seed
};

inline RunConfig config_from_json(const nlohmann::json& doc) {
    static const std::vector<std::string> known{"embeddings", "manifest",     "model_dir",     "out", "lp",
                                                "ood_prior",  "epsilon_grid", "eval_epsilons", "seed"};
    if (!doc.is_object()) throw ValidationError("config must be a JSON object");
    for (const auto& [key, value] : doc.items())
        if (std::find(known.begin(), known.end(), key) == known.end()) throw ValidationError("unknown config key '" + key + "'");
    RunConfig c;
    try {
        c.embeddings = doc.value("embeddings", c.embeddings);
        c.manifest = doc.value("manifest", c.manifest);
        c.model_dir = doc.value("model_dir", c.model_dir);
        c.out = doc.value("out", c.out);
        if (doc.contains("lp")) c.lp = doc.at("lp").get<LPTrainConfig>();
        if (doc.contains("ood_prior")) c.ood_prior = doc.at("ood_prior").get<OODPriorConfig>();
        c.epsilon_grid = doc.value("epsilon_grid", c.epsilon_grid);
        c.eval_epsilons = doc.value("eval_epsilons", c.eval_epsilons);
        if (doc.contains("seed")) c.seed = doc.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed config: ") + e.what());
    }
    if (c.seed) c.lp.seed = c.ood_prior.seed = *c.seed;
    c.lp.validate();
    c.ood_prior.validate();
    validate_epsilon_grid(c.epsilon_grid);
    for (double e : c.eval_epsilons)
        if (!(e > 0.0 && e < 1.0)) throw ValidationError("eval_epsilons values must lie in (0, 1)");
    return c;
}

/// "--lp.l2_strength=0.01" or "--lp.l2_strength 0.01": the value is parsed as
/// JSON when it is valid JSON, else kept as a string.
inline void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& extras) {
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const auto& tok = extras[i];
        if (tok.rfind("--", 0) != 0 || tok.size() == 2) throw ValidationError("unexpected argument '" + tok + "'");
        std::string key = tok.substr(2), value;
        if (const auto eq = key.find('='); eq != std::string::npos) {
            value = key.substr(eq + 1);
            key.resize(eq);
        } else if (i + 1 < extras.size()) {
            value = extras[++i];
        } else {
            throw ValidationError("override '" + tok + "' has no value");
        }
        std::string pointer;
        for (char ch : key) pointer += ch == '.' ? '/' : (ch == '-' ? '_' : ch);
        auto parsed = nlohmann::json::parse(value, nullptr, false);
        doc[nlohmann::json::json_pointer("/" + pointer)] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
    }
}

namespace detail {

inline std::filesystem::path require_path(const std::string& value, const char* what) {
    if (value.empty()) throw ValidationError(std::string("no ") + what + " given");
    return value;
}

struct Paths {
    static std::filesystem::path lp(const RunConfig& c) { return require_path(c.model_dir, "model directory") / "lp.gmdl"; }
    static std::filesystem::path nm(const RunConfig& c) { return require_path(c.model_dir, "model directory") / "nm.gmdl"; }
    static std::filesystem::path grood(const RunConfig& c) { return require_path(c.model_dir, "model directory") / "grood.gmdl"; }
    static std::filesystem::path classes(const RunConfig& c) { return require_path(c.model_dir, "model directory") / "classes.json"; }
};

inline GroodModel load_models(const RunConfig& c) {
    const auto lp = load_linear_probe(Paths::lp(c));
    const auto nm = load_nearest_mean(Paths::nm(c));
    return load_grood(Paths::grood(c), lp, nm);
}

// Dense class index -> display name (the original label when unnamed).
inline std::vector<std::string> load_class_names(const RunConfig& c) {
    const auto path = Paths::classes(c);
    std::ifstream in(path);
    if (!in) throw InputError("cannot open class table: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
        return doc.at("names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError("corrupt class table " + path.string() + ": " + e.what());
    }
}

inline void require_compatible(const GroodModel& m, const EmbeddingSet& set, const char* what) {
    if (static_cast<Eigen::Index>(set.dim) != m.dim())
        throw ValidationError(std::string(what) + " has dim " + std::to_string(set.dim) + ", model expects " + std::to_string(m.dim()));
}

inline SplitSets load_split(const RunConfig& c) {
    const auto set = load_embeddings(require_path(c.embeddings, "embeddings file"));
    const auto manifest = load_manifest(require_path(c.manifest, "manifest"));
    return apply_split(set, manifest);
}

inline nlohmann::json gaussian_json(const ClassGaussian& g) {
    return {{"mean", {g.mean[0], g.mean[1]}},
            {"cov", {{g.cov(0, 0), g.cov(0, 1)}, {g.cov(1, 0), g.cov(1, 1)}}},
            {"regularized", g.regularized}};
}

inline nlohmann::json detector_summary(const GroodModel& m) {
    nlohmann::json gs = nlohmann::json::array();
    for (const auto& g : m.class_gaussians) gs.push_back(gaussian_json(g));
    return {{"classes", m.class_count()},
            {"dim", m.dim()},
            {"class_gaussians", gs},
            {"ood_sigma", {std::sqrt(m.ood.variances[0]), std::sqrt(m.ood.variances[1])}},
            {"ood_prior", m.config},
            {"epsilon_grid_size", m.epsilon_grid().size()}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
}

// Results go to stdout and, when an output directory is configured, to
// `name` inside it.
inline void emit(const RunConfig& c, const char* name, const std::string& text, std::ostream& out) {
    out << text;
    if (c.out.empty()) return;
    std::filesystem::create_directories(c.out);
    write_text(std::filesystem::path(c.out) / name, text);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Commands

inline int cmd_fit(const RunConfig& c, std::ostream& out, std::ostream& err) {
    const auto split = detail::load_split(c);
    const auto dir = detail::require_path(c.model_dir, "model directory");
    const auto lp = train_lp(split.id_train, c.lp);
    if (!lp.diagnostics.converged)
        err << "warning: linear probe stopped after " << lp.diagnostics.iterations << " iterations without converging\n";
    const auto nm = fit_nm(split.id_train, c.lp.l2_normalize_inputs);
    const auto model = fit_grood(lp, nm, split.id_train, c.epsilon_grid, c.ood_prior);

    std::filesystem::create_directories(dir);
    save_model(lp, detail::Paths::lp(c));
    save_model(nm, detail::Paths::nm(c));
    save_model(model, detail::Paths::grood(c));
    std::vector<std::string> names;
    for (std::size_t k = 0; k < split.class_count(); ++k) {
        const auto it = split.id_train.class_names.find(static_cast<std::int32_t>(k));
        names.push_back(it != split.id_train.class_names.end() ? it->second : std::to_string(split.class_map[k]));
    }
    detail::write_text(detail::Paths::classes(c), nlohmann::json{{"class_map", split.class_map}, {"names", names}}.dump(2) + "\n");

    auto summary = detail::detector_summary(model);
    summary["lp"] = {{"iterations", lp.diagnostics.iterations},
                     {"converged", lp.diagnostics.converged},
                     {"final_loss", lp.diagnostics.final_loss},
                     {"gradient_max_norm", lp.diagnostics.gradient_max_norm},
                     {"l2_strength", lp.train_config.l2_strength},
                     {"train_accuracy", lp_accuracy(lp, split.id_train)}};
    summary["class_names"] = names;
    out << summary.dump(2) << '\n';
    return kOk;
}

inline int cmd_calibrate(const RunConfig& c, std::ostream& out, std::ostream&) {
    auto model = detail::load_models(c);
    recalibrate(model, c.epsilon_grid, c.ood_prior);
    save_model(model, detail::Paths::grood(c));
    out << detail::detector_summary(model).dump(2) << '\n';
    return kOk;
}

inline int cmd_score(const RunConfig& c, std::ostream& out, std::ostream&) {
    const auto model = detail::load_models(c);
    const auto set = load_embeddings(detail::require_path(c.embeddings, "embeddings file"));
    detail::require_compatible(model, set, "embeddings file");
    std::ostringstream sink;
    sink << "index,score,predicted_class\n" << std::setprecision(17);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const std::span<const float> x(set.records[i].vector);
        sink << i << ',' << calibrated_score(model, x) << ',' << predict_class(model, x) << '\n';
    }
    detail::emit(c, "scores.csv", sink.str(), out);
    return kOk;
}

inline int cmd_decide(const RunConfig& c, double eps, std::ostream& out, std::ostream& err) {
    const auto model = detail::load_models(c);
    const auto names = detail::load_class_names(c);
    const auto set = load_embeddings(detail::require_path(c.embeddings, "embeddings file"));
    detail::require_compatible(model, set, "embeddings file");
    const auto [level, clamped] = clamp_epsilon(model, eps);
    if (clamped) err << "warning: epsilon " << eps << " is outside the calibrated range; clamped to " << level << '\n';
    std::ostringstream sink;
    sink << "index,verdict,score\n" << std::setprecision(17);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const std::span<const float> x(set.records[i].vector);
        const auto d = decide(model, x, level);
        sink << i << ',' << (d.in_distribution ? names.at(static_cast<std::size_t>(d.class_index)) : "OOD") << ','
             << calibrated_score(model, x) << '\n';
    }
    detail::emit(c, "decisions.csv", sink.str(), out);
    return kOk;
}

struct ScoredSplit {
    std::vector<ScoredSample> id;
    std::vector<double> ood;
    std::vector<ScoredSample> id_max_logit;
};

inline ScoredSplit score_split(const GroodModel& model, const SplitSets& split) {
    if (split.id_test.empty()) throw ValidationError("id_test is empty");
    if (split.ood_test.empty()) throw ValidationError("ood_test is empty");
    if (static_cast<Eigen::Index>(split.class_count()) != model.class_count())
        throw ValidationError("split has " + std::to_string(split.class_count()) + " classes, model has " +
                              std::to_string(model.class_count()));
    detail::require_compatible(model, split.id_test, "embeddings file");
    ScoredSplit s;
    for (const auto& r : split.id_test.records) {
        const std::span<const float> x(r.vector);
        const auto cls = static_cast<std::int32_t>(predict_class(model, x));
        s.id.push_back({calibrated_score(model, x), r.label, cls});
        s.id_max_logit.push_back({lp_score(model.lp, x), r.label, static_cast<std::int32_t>(lp_predict(model.lp, x))});
    }
    for (const auto& r : split.ood_test.records) s.ood.push_back(calibrated_score(model, std::span<const float>(r.vector)));
    return s;
}

inline int cmd_evaluate(const RunConfig& c, std::ostream& out, std::ostream&) {
    const auto model = detail::load_models(c);
    const auto split = detail::load_split(c);
    const auto scored = score_split(model, split);
    const auto report = evaluate_scores(scored.id, scored.ood, c.eval_epsilons, split.class_count());

    std::vector<double> id_scores;
    for (const auto& s : scored.id) id_scores.push_back(s.score);
    auto doc = to_json(report);
    doc["convention"] = "a sample is accepted as in-distribution when score >= threshold";
    doc["score"] = "calibrated";
    doc["counts"] = {{"id_test", scored.id.size()}, {"ood_test", scored.ood.size()}};

    const auto dir = detail::require_path(c.out, "output directory (--out)");
    std::filesystem::create_directories(dir);
    detail::write_text(dir / "report.json", doc.dump(2) + "\n");
    std::ostringstream rejection, roc;
    write_rejection_csv(rejection, report.per_class_rejection);
    write_roc_csv(roc, roc_curve(id_scores, scored.ood));
    detail::write_text(dir / "rejection.csv", rejection.str());
    detail::write_text(dir / "roc.csv", roc.str());
    out << doc.dump(2) << '\n';
    return kOk;
}

/// Per-class ID rejection rates of raw max-logit at one shared threshold
/// (chosen to reject eps of the pooled ID scores) next to GROOD at eps.
inline int cmd_report(const RunConfig& c, std::ostream& out, std::ostream&) {
    const auto model = detail::load_models(c);
    const auto names = detail::load_class_names(c);
    const auto split = detail::load_split(c);
    const auto scored = score_split(model, split);
    std::vector<double> logits;
    for (const auto& s : scored.id_max_logit) logits.push_back(s.score);

    std::ostringstream sink;
    sink << "epsilon,method,threshold";
    for (const auto& n : names) sink << ',' << n;
    sink << ",spread\n" << std::setprecision(6);
    for (double eps : c.eval_epsilons) {
        const double tau = rejection_threshold(logits, eps);
        auto row = [&](const char* method, double threshold, const std::vector<ScoredSample>& samples) {
            const std::vector<double> t{threshold};
            const auto curves = per_class_rejection_curve(samples, t, split.class_count());
            sink << eps << ',' << method << ',' << threshold;
            for (const auto& [label, curve] : curves) sink << ',' << curve[0].second;
            sink << ',' << rejection_spread(curves, 0) << '\n';
        };
        row("max_logit", tau, scored.id_max_logit);
        row("grood", eps, scored.id);
    }
    detail::emit(c, "miscalibration.csv", sink.str(), out);
    return kOk;
}

// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"GROOD: calibrated out-of-distribution detection on frozen embeddings", "grood"};
    app.require_subcommand(1);

    std::string config_path, embeddings, manifest, model_dir, out_path;
    std::optional<std::uint64_t> seed;
    double epsilon = 0.05;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run config");
        sub->add_option("--embeddings", embeddings, "GEMB embeddings file");
        sub->add_option("--model-dir", model_dir, "Directory holding the fitted models");
        sub->add_option("--seed", seed, "Seed for LP and calibration");
        sub->add_option("--out", out_path, "Output directory");
        sub->allow_extras();
        sub->footer("Any config field can be overridden as --section.field=value, e.g. --lp.l2_strength=0.01");
    };
    auto* fit = app.add_subcommand("fit", "Train LP and NM, fit the detector, calibrate");
    auto* calibrate_cmd = app.add_subcommand("calibrate", "Re-run calibration on an existing model");
    auto* score = app.add_subcommand("score", "Calibrated score per embedding");
    auto* decide_cmd = app.add_subcommand("decide", "ID/OOD verdict per embedding at a rejection level");
    auto* evaluate = app.add_subcommand("evaluate", "AUROC, FPR@95, OSCR, accuracy and rejection curves");
    auto* report = app.add_subcommand("report", "Per-class rejection table: max-logit vs GROOD");
    for (auto* sub : {fit, calibrate_cmd, score, decide_cmd, evaluate, report}) add_common(sub);
    for (auto* sub : {fit, evaluate, report}) sub->add_option("--manifest", manifest, "Split manifest (JSON)");
    decide_cmd->add_option("--epsilon", epsilon, "Allowed ID rejection rate")->required();

    std::vector<const char*> argv{"grood"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }

    auto* active = app.get_subcommands().front();
    try {
        nlohmann::json doc = nlohmann::json::object();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw InputError("cannot open config file: " + config_path);
            try {
                in >> doc;
            } catch (const nlohmann::json::exception& e) {
                throw InputError("config is not valid JSON (" + config_path + "): " + e.what());
            }
        }
        try {
            apply_overrides(doc, active->remaining());
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(std::string("bad override: ") + e.what());
        }
        if (!embeddings.empty()) doc["embeddings"] = embeddings;
        if (!manifest.empty()) doc["manifest"] = manifest;
        if (!model_dir.empty()) doc["model_dir"] = model_dir;
        if (!out_path.empty()) doc["out"] = out_path;
        if (seed) doc["seed"] = *seed;
        const auto cfg = config_from_json(doc);

        if (active == fit) return cmd_fit(cfg, out, err);
        if (active == calibrate_cmd) return cmd_calibrate(cfg, out, err);
        if (active == score) return cmd_score(cfg, out, err);
        if (active == decide_cmd) return cmd_decide(cfg, epsilon, out, err);
        if (active == evaluate) return cmd_evaluate(cfg, out, err);
        return cmd_report(cfg, out, err);
    } catch (const InputError& e) {
        err << "input error: " << e.what() << '\n';
        return kInputError;
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << '\n';
        return kValidationError;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kNumericError;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "input error: " << e.what() << '\n';
        return kInputError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kOtherError;
    }
}

} // namespace grood::cli
