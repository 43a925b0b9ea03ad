#pragma once

// OOD evaluation metrics. Convention used everywhere: a sample is accepted as
// in-distribution when score >= threshold; score < threshold is a rejection.

#include <grood/detail/rank.hpp>
#include <grood/error.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace grood {

struct ScoredSample {
    double score = 0.0;
    std::int32_t true_label = -1;
    std::int32_t predicted_label = -1;
};

namespace detail {

inline void require_nonempty(std::size_t n, const char* what) {
    if (n == 0) throw ValidationError(std::string(what) + " is empty");
}

inline void require_finite(std::span<const double> scores, const char* what) {
    for (double s : scores)
        if (!std::isfinite(s)) throw ValidationError(std::string("non-finite score in ") + what);
}

} // namespace detail

/// Mann-Whitney statistic: P(id > ood) + P(id == ood) / 2, via sorting.
inline double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    detail::require_nonempty(id_scores.size(), "id score list");
    detail::require_nonempty(ood_scores.size(), "ood score list");
    detail::require_finite(id_scores, "id scores");
    detail::require_finite(ood_scores, "ood scores");
    std::vector<double> ood(ood_scores.begin(), ood_scores.end());
    std::sort(ood.begin(), ood.end());
    std::uint64_t wins = 0, ties = 0;
    for (double s : id_scores) {
        const auto lo = std::lower_bound(ood.begin(), ood.end(), s);
        const auto hi = std::upper_bound(lo, ood.end(), s);
        wins += static_cast<std::uint64_t>(lo - ood.begin());
        ties += static_cast<std::uint64_t>(hi - lo);
    }
    return (static_cast<double>(wins) + 0.5 * static_cast<double>(ties)) /
           (static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size()));
}

/// Threshold = largest score with fraction(id >= t) >= tpr_target; returns
/// fraction(ood >= t).
inline double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double tpr_target = 0.95) {
    detail::require_nonempty(id_scores.size(), "id score list");
    detail::require_nonempty(ood_scores.size(), "ood score list");
    if (!(tpr_target > 0.0 && tpr_target <= 1.0)) throw ValidationError("tpr_target must be in (0, 1]");
    std::vector<double> id(id_scores.begin(), id_scores.end());
    std::sort(id.begin(), id.end(), std::greater<>());
    const double threshold = id[detail::nearest_rank(tpr_target, id.size()) - 1];
    const auto accepted = std::count_if(ood_scores.begin(), ood_scores.end(), [&](double s) { return s >= threshold; });
    return static_cast<double>(accepted) / static_cast<double>(ood_scores.size());
}

struct RocPoint {
    double threshold = 0.0;
    double tpr = 0.0;
    double fpr = 0.0;
};

/// One point per distinct score, from the highest threshold down.
inline std::vector<RocPoint> roc_curve(std::span<const double> id_scores, std::span<const double> ood_scores) {
    detail::require_nonempty(id_scores.size(), "id score list");
    detail::require_nonempty(ood_scores.size(), "ood score list");
    std::vector<std::pair<double, bool>> all;
    all.reserve(id_scores.size() + ood_scores.size());
    for (double s : id_scores) all.emplace_back(s, true);
    for (double s : ood_scores) all.emplace_back(s, false);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<RocPoint> out;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < all.size();) {
        const double t = all[i].first;
        for (; i < all.size() && all[i].first == t; ++i) (all[i].second ? tp : fp)++;
        out.push_back({t, static_cast<double>(tp) / static_cast<double>(id_scores.size()),
                       static_cast<double>(fp) / static_cast<double>(ood_scores.size())});
    }
    return out;
}

/// Area under CCR(theta) vs FPR(theta). CCR counts ID samples that are both
/// correctly classified and scored >= theta, over all ID samples; FPR counts
/// OOD samples scored >= theta. theta sweeps +inf, every distinct score, and
/// -inf; trapezoids in FPR order.
inline double oscr(std::span<const ScoredSample> id_samples, std::span<const double> ood_scores) {
    detail::require_nonempty(id_samples.size(), "id sample list");
    detail::require_nonempty(ood_scores.size(), "ood score list");
    struct Item {
        double score;
        bool correct;
        bool ood;
    };
    std::vector<Item> items;
    items.reserve(id_samples.size() + ood_scores.size());
    for (const auto& s : id_samples) {
        if (s.true_label < 0) throw ValidationError("id sample without a class label");
        if (!std::isfinite(s.score)) throw ValidationError("non-finite id score");
        items.push_back({s.score, s.predicted_label == s.true_label, false});
    }
    for (double s : ood_scores) {
        if (!std::isfinite(s)) throw ValidationError("non-finite ood score");
        items.push_back({s, false, true});
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });

    const double n_id = static_cast<double>(id_samples.size());
    const double n_ood = static_cast<double>(ood_scores.size());
    std::size_t correct = 0, false_pos = 0;
    double prev_fpr = 0.0, prev_ccr = 0.0, area = 0.0;  // theta = +inf
    for (std::size_t i = 0; i < items.size();) {
        const double t = items[i].score;
        for (; i < items.size() && items[i].score == t; ++i) {
            if (items[i].ood) ++false_pos;
            else if (items[i].correct) ++correct;
        }
        const double fpr = static_cast<double>(false_pos) / n_ood;
        const double ccr = static_cast<double>(correct) / n_id;
        area += (fpr - prev_fpr) * (ccr + prev_ccr) / 2.0;
        prev_fpr = fpr;
        prev_ccr = ccr;
    }
    return area;  // theta = -inf repeats the last point and adds nothing
}

inline double accuracy(std::span<const ScoredSample> id_samples) {
    detail::require_nonempty(id_samples.size(), "id sample list");
    const auto hits = std::count_if(id_samples.begin(), id_samples.end(),
                                    [](const ScoredSample& s) { return s.predicted_label == s.true_label; });
    return static_cast<double>(hits) / static_cast<double>(id_samples.size());
}

/// (threshold, rejection rate) pairs for one class.
using RejectionCurve = std::vector<std::pair<double, double>>;

/// Fraction of each class's samples with score < threshold, keyed by true
/// label. With class_count > 0, every class in [0, class_count) must be present.
inline std::map<std::int32_t, RejectionCurve> per_class_rejection_curve(std::span<const ScoredSample> id_samples,
                                                                        std::span<const double> thresholds,
                                                                        std::size_t class_count = 0) {
    std::map<std::int32_t, std::vector<double>> by_class;
    for (std::size_t k = 0; k < class_count; ++k) by_class[static_cast<std::int32_t>(k)];
    for (const auto& s : id_samples) {
        if (s.true_label < 0) throw ValidationError("id sample without a class label");
        by_class[s.true_label].push_back(s.score);
    }
    std::map<std::int32_t, RejectionCurve> out;
    for (auto& [label, scores] : by_class) {
        if (scores.empty()) throw ValidationError("class " + std::to_string(label) + " has no samples");
        std::sort(scores.begin(), scores.end());
        RejectionCurve curve;
        curve.reserve(thresholds.size());
        for (double t : thresholds) {
            const auto below = std::lower_bound(scores.begin(), scores.end(), t) - scores.begin();
            curve.emplace_back(t, static_cast<double>(below) / static_cast<double>(scores.size()));
        }
        out.emplace(label, std::move(curve));
    }
    return out;
}

/// Smallest observed score t with fraction(score < t) >= rate, i.e. one shared
/// threshold that rejects at least `rate` of the pooled scores. Past the top
/// score it returns the next representable value above it.
inline double rejection_threshold(std::span<const double> scores, double rate) {
    detail::require_nonempty(scores.size(), "score list");
    if (!(rate > 0.0 && rate < 1.0)) throw ValidationError("rejection rate must be in (0, 1)");
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    const auto m = detail::nearest_rank(rate, sorted.size());
    for (std::size_t i = m; i < sorted.size(); ++i)
        if (static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), sorted[i]) - sorted.begin()) >= m)
            return sorted[i];
    return std::nextafter(sorted.back(), std::numeric_limits<double>::infinity());
}

/// Largest minus smallest per-class rejection rate at curve position i.
inline double rejection_spread(const std::map<std::int32_t, RejectionCurve>& curves, std::size_t i) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [label, curve] : curves) {
        lo = std::min(lo, curve.at(i).second);
        hi = std::max(hi, curve.at(i).second);
    }
    return curves.empty() ? 0.0 : hi - lo;
}

struct EvalReport {
    double auroc = 0.0;
    double fpr95 = 0.0;
    double oscr = 0.0;
    double acc = 0.0;
    std::map<std::int32_t, RejectionCurve> per_class_rejection;
};

inline EvalReport evaluate_scores(std::span<const ScoredSample> id_samples, std::span<const double> ood_scores,
                                  std::span<const double> rejection_thresholds, std::size_t class_count = 0) {
    std::vector<double> id_scores;
    id_scores.reserve(id_samples.size());
    for (const auto& s : id_samples) id_scores.push_back(s.score);
    EvalReport r;
    r.auroc = auroc(id_scores, ood_scores);
    r.fpr95 = fpr_at_tpr(id_scores, ood_scores, 0.95);
    r.oscr = oscr(id_samples, ood_scores);
    r.acc = accuracy(id_samples);
    r.per_class_rejection = per_class_rejection_curve(id_samples, rejection_thresholds, class_count);
    return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json curves = nlohmann::json::object();
    for (const auto& [label, curve] : r.per_class_rejection) {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& [t, rate] : curve) pts.push_back({{"threshold", t}, {"rejection", rate}});
        curves[std::to_string(label)] = pts;
    }
    return {{"auroc", r.auroc}, {"fpr95", r.fpr95}, {"oscr", r.oscr}, {"acc", r.acc}, {"per_class_rejection", curves}};
}

inline void write_rejection_csv(std::ostream& out, const std::map<std::int32_t, RejectionCurve>& curves) {
    out << "class,threshold,rejection\n";
    out.precision(17);
    for (const auto& [label, curve] : curves)
        for (const auto& [t, rate] : curve) out << label << ',' << t << ',' << rate << '\n';
}

inline void write_roc_csv(std::ostream& out, std::span<const RocPoint> roc) {
    out << "threshold,tpr,fpr\n";
    out.precision(17);
    for (const auto& p : roc) out << p.threshold << ',' << p.tpr << ',' << p.fpr << '\n';
}

} // namespace grood
