#include <wlnn/wlnn.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Finite-width vs infinite-width linear network experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    int threads = 0;
    app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "master seed (overrides the config)");
    app.add_option("--out", out_dir, "output directory (overrides the config)");
    app.add_option("--threads", threads, "worker threads (overrides the config)")->check(CLI::PositiveNumber);

    const std::vector<std::pair<std::string, std::string>> commands{
        {"sweep-width", "finite vs limit predictor error across widths"},
        {"track-params", "mean square of V entries vs the limit ||B||^2"},
        {"trajectory", "predictor trajectories projected on the first two coordinates"},
        {"histogram", "distribution of V entries and its corrected sample"},
        {"implicit-bias", "gradient flow of the limit system towards the min-norm solution"},
        {"basis-verify", "chain basis orthonormality, moments and recursion residuals"},
        {"multilayer-verify", "multi-layer ladder, relations and finite vs limit sweep"}};
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        wlnn::ExperimentConfig cfg = config_path.empty() ? wlnn::ExperimentConfig{} : wlnn::load_config(config_path);
        cfg.experiment = app.get_subcommands().front()->get_name();
        if (app.count("--seed")) cfg.seed = seed;
        if (!out_dir.empty()) cfg.output = out_dir;
        if (threads > 0) cfg.threads = threads;
        cfg.validate();
        nlohmann::json manifest = wlnn::run_experiment(cfg);
        std::cout << manifest["summary"].dump() << '\n';
        std::fprintf(stderr, "wrote %s (%.1f s)\n", cfg.output.c_str(), manifest["wall_time_seconds"].get<double>());
    } catch (const wlnn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const wlnn::DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
