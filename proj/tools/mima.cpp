// mima: command-line driver for the micro-macro experiments.
#include "mima/output.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

int fail(int code, nlohmann::json error) {
    std::cerr << error.dump() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Micro-macro acceleration experiments for linear slow-fast SDEs"};
    std::string experiment;
    std::string config_path;
    std::uint64_t seed = 0;
    bool paper_scale = false;
    std::string out_dir;
    app.add_option("experiment", experiment, "histogram | stability-map | fast-marginal | adaptive | "
                                             "meanvar-convergence | k-sweep | mixture-kl")
        ->required();
    app.add_option("--config", config_path, "TOML config (or JSON, e.g. a config.echo.json)");
    auto* seed_opt = app.add_option("--seed", seed, "master seed, overrides the config");
    app.add_flag("--paper-scale", paper_scale, "J = 5e4 replicas and T = 210");
    auto* out_opt = app.add_option("--out", out_dir, "output directory, overrides the config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(kExitConfig, {{"error", "usage"}, {"message", e.what()}});
    }

    mima::ConfigOverrides overrides;
    overrides.experiment = experiment;
    if (*seed_opt) overrides.seed = seed;
    overrides.paper_scale = paper_scale;
    if (*out_opt) overrides.output_dir = out_dir;

    try {
        const nlohmann::json doc =
            config_path.empty() ? nlohmann::json::object() : mima::read_config_document(config_path);
        const mima::ExperimentConfig config = mima::resolve_config(doc, overrides);
        const mima::ExperimentResult result = mima::run_experiment(config);
        const auto files = mima::write_outputs(config.output_dir, result, config);
        nlohmann::json report{{"status", "ok"},
                              {"experiment", config.experiment},
                              {"seed", config.seed},
                              {"output_dir", config.output_dir},
                              {"steps_taken", result.summary.steps_taken},
                              {"matching_failures", result.summary.matching_failures}};
        for (const auto& f : files) report["files"].push_back(f.filename().string());
        std::cout << report.dump() << '\n';
        return 0;
    } catch (const mima::ConfigError& e) {
        return fail(kExitConfig, {{"error", "config"}, {"key", e.key()}, {"message", e.what()}});
    } catch (const mima::ConfigReadError& e) {
        return fail(kExitIo, {{"error", "io"}, {"path", e.path().string()}, {"message", e.what()}});
    } catch (const mima::OutputError& e) {
        return fail(kExitIo, {{"error", "io"}, {"path", e.path().string()}, {"message", e.what()}});
    } catch (const std::exception& e) {
        return fail(1, {{"error", "internal"}, {"message", e.what()}});
    }
}
