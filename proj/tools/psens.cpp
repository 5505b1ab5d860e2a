#include "psens/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"Probabilistic sensitivity analysis via score-function estimation"};
    app.require_subcommand(1);

    auto* run_cmd = app.add_subcommand("run", "Execute a run configuration and emit reports");
    std::string config_path;
    std::string out_dir;
    std::int64_t n_override = -1;
    std::int64_t reps_override = -1;
    std::uint64_t seed_override = 0;
    bool seed_set = false;
    run_cmd->add_option("config", config_path, "Path to the JSON run configuration")->required();
    run_cmd->add_option("--out", out_dir, "Output directory (overrides config)");
    run_cmd->add_option("--n", n_override, "Sample count override");
    run_cmd->add_option("--reps", reps_override, "Repetition count override");
    run_cmd->add_option("--seed", seed_override, "Master seed override")
        ->each([&](const std::string&) { seed_set = true; });

    CLI11_PARSE(app, argc, argv);

    try {
        psens::RunConfig config = psens::parse_config_file(config_path);
        if (!out_dir.empty()) config.out_dir = out_dir;
        if (n_override > 0) config.n = n_override;
        if (reps_override > 0) config.repetitions = static_cast<int>(reps_override);
        if (seed_set) config.seed = seed_override;

        const psens::RunReport report = psens::run(config);
        psens::emit(report, config.out_dir);
        std::cout << "wrote " << config.out_dir << "/report.json (config hash "
                  << report.config_hash << ")\n";
        return 0;
    } catch (const psens::ConfigError& e) {
        std::cerr << config_path << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << config_path << ": " << e.what() << "\n";
        return 2;
    }
}
