// Smallest end-to-end use of the library: synthetic embeddings in, one
// calibrated detector out, a few verdicts and the evaluation metrics printed.

#include <grood/grood.hpp>

#include <iostream>

int main() {
    const auto fx = grood::make_demo_fixture();
    const auto split = grood::apply_split(fx.pool, fx.manifest);

    const auto lp = grood::train_lp(split.id_train);
    const auto nm = grood::fit_nm(split.id_train);
    const auto model = grood::fit_grood(lp, nm, split.id_train, grood::default_epsilon_grid());

    const double eps = 0.05;
    std::vector<grood::ScoredSample> id;
    std::vector<double> ood;
    for (const auto& r : split.id_test.records) {
        const std::span<const float> x(r.vector);
        id.push_back({grood::calibrated_score(model, x), r.label, static_cast<std::int32_t>(grood::predict_class(model, x))});
    }
    for (const auto& r : split.ood_test.records) ood.push_back(grood::calibrated_score(model, std::span<const float>(r.vector)));

    for (std::size_t i : {std::size_t{0}, std::size_t{150}}) {
        const auto d = grood::decide(model, std::span<const float>(split.id_test.records[i].vector), eps);
        std::cout << "id_test[" << i << "]: " << (d.in_distribution ? "ID class " + std::to_string(d.class_index) : "OOD") << '\n';
    }
    const auto d = grood::decide(model, std::span<const float>(split.ood_test.records[0].vector), eps);
    std::cout << "ood_test[0]: " << (d.in_distribution ? "ID" : "OOD") << '\n';

    const std::vector<double> levels{eps};
    const auto report = grood::evaluate_scores(id, ood, levels, split.class_count());
    std::cout << grood::to_json(report).dump(2) << '\n';
}
