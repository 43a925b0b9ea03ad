// Writes the bundled demo data: a 3-class embedding pool with a held-out OOD
// class, its split manifest, and a run config pointing at both.

#include <grood/dataset.hpp>
#include <grood/synthetic.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Generate the GROOD demo fixture", "make_fixture"};
    std::string out_dir = "data";
    std::uint32_t dim = 8;
    std::uint64_t seed = 7;
    app.add_option("--out-dir", out_dir, "Directory to write into");
    app.add_option("--dim", dim, "Embedding dimension")->check(CLI::Range(3u, 4096u));
    app.add_option("--seed", seed, "Generator seed");
    CLI11_PARSE(app, argc, argv);

    try {
        const std::filesystem::path dir(out_dir);
        std::filesystem::create_directories(dir);
        const auto fx = grood::make_demo_fixture(dim, 200, 100, 300, seed);
        grood::save_embeddings(fx.pool, dir / "demo.gemb");
        grood::save_manifest(fx.manifest, dir / "demo_manifest.json");
        const nlohmann::json config{{"embeddings", (dir / "demo.gemb").string()},
                                    {"manifest", (dir / "demo_manifest.json").string()},
                                    {"model_dir", (dir / "models").string()},
                                    {"out", (dir / "report").string()},
                                    {"seed", 1},
                                    {"lp", {{"l2_strength", 1e-3}}},
                                    {"ood_prior", {{"mc_samples", 100000}}},
                                    {"eval_epsilons", {0.01, 0.05, 0.1}}};
        std::ofstream(dir / "demo_config.json") << config.dump(2) << '\n';
        std::cout << "wrote " << fx.pool.size() << " records (dim " << dim << ") to " << dir.string() << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
