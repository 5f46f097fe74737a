#pragma once

#include "mima/gaussian.hpp"
#include "mima/model.hpp"
#include "mima/particles.hpp"
#include "mima/stability.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace mima {

/// Invalid or unknown configuration entry. `key` is the dotted path of the
/// offending entry, empty when the document as a whole is at fault.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& message)
        : std::runtime_error(message), key_(std::move(key)) {}
    [[nodiscard]] const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// Configuration file could not be read.
class ConfigReadError : public std::runtime_error {
public:
    ConfigReadError(std::filesystem::path path, const std::string& message)
        : std::runtime_error(message), path_(std::move(path)) {}
    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

inline constexpr const char* kExperimentNames[] = {"histogram",           "stability-map", "fast-marginal", "adaptive",
                                                  "meanvar-convergence", "k-sweep",       "mixture-kl"};

/// Linear system given by a named preset or explicit matrices.
/// Presets: "diag", "coupled", "parametric" (uses a11, a12, a22, eps), "custom".
struct SystemSpec {
    std::string preset = "diag";
    double a11 = -1.0, a12 = 1.0, a22 = -1.0, eps = 0.1;
    Matrix drift;
    Matrix diffusion;

    [[nodiscard]] LinearSde build() const;
};

struct ExperimentConfig {
    std::string experiment;
    std::string profile = "desk";  // desk: J = 1e4, T = 50; paper: J = 5e4, T = 210
    std::uint64_t seed = 12345;
    std::string output_dir;

    SystemSpec system;
    SlowFastPartition partition{1, 1};

    std::size_t J = 10000;
    double T = 50.0;
    double dt = 0.09;
    double Dt = 1.0;
    double Dt_max = 1.0;
    int K = 1;
    MatchingMode matching_mode = MatchingMode::mean;
    bool adaptive = false;
    std::string engine = "particle";  // or "gaussian" for the convergence experiments

    std::vector<double> dt_grid;
    std::vector<double> Dt_grid;
    std::vector<int> K_values;
    double micro_window = 0.12;
    int replicates = 8;
    int bins = 0;  // 0 selects Freedman-Diaconis
    EffectiveForm threshold_form = EffectiveForm::paper;

    Vector initial_mean;  // default: standard normal start
    Matrix initial_cov;
    std::vector<GaussianComponent> mixture;

    NewtonOptions newton;
    double grow_factor = 1.2;
    double shrink_factor = 0.5;
};

/// Command-line settings; each one takes precedence over the file.
struct ConfigOverrides {
    std::optional<std::string> experiment;
    std::optional<std::uint64_t> seed;
    bool paper_scale = false;
    std::optional<std::string> output_dir;
};

/// Reads a TOML document, or JSON when the file name ends in ".json".
nlohmann::json read_config_document(const std::filesystem::path& path);

/// Validates `doc` against the schema, fills experiment defaults and applies
/// the overrides. Unknown keys are errors.
ExperimentConfig resolve_config(const nlohmann::json& doc, const ConfigOverrides& overrides = {});

/// Fully resolved config; resolve_config(config_to_json(c)) reproduces c.
nlohmann::json config_to_json(const ExperimentConfig& config);

const char* to_string(MatchingMode mode);

}  // namespace mima
