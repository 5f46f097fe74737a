#pragma once

#include "mima/config.hpp"

#include <cstdint>
#include <variant>

namespace mima {

/// CSV cell: empty, integer, real or text.
using Cell = std::variant<std::monostate, std::int64_t, double, std::string>;

struct Table {
    std::string name;  // file stem
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
};

struct RunSummary {
    int steps_taken = 0;  // attempted macro steps, rejected retries included
    int matching_failures = 0;
    double Dt_avg = 0.0;  // over accepted steps
    double Dt_std = 0.0;
    std::optional<MacroState> final_macro_state;
    double wall_time = 0.0;  // seconds
};

struct LabeledRun {
    nlohmann::json label;  // parameters distinguishing this run
    RunSummary summary;
};

struct ExperimentResult {
    RunSummary summary;             // aggregate over all runs
    std::vector<LabeledRun> runs;   // one entry per independent run, in grid order
    std::vector<Table> tables;
    nlohmann::json metadata = nlohmann::json::object();
};

/// Runs one experiment. Deterministic in the config apart from wall times.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// One trajectory of the particle scheme with optional step adaptation.
/// Steps run until the accepted time reaches T. Without adaptation a failed
/// match is counted and the step is kept; with adaptation it is rejected and
/// retried from the saved ensemble with a smaller step.
struct TrajectoryStep {
    int attempt = 0;
    double time = 0.0;  // after the step if accepted, else unchanged
    double Dt = 0.0;
    bool accepted = false;
    bool converged = false;
    GaussianState moments;  // weighted moments of the current ensemble
};

struct ParticleTrajectory {
    ParticleEnsemble final_ensemble;
    std::vector<TrajectoryStep> steps;
    RunSummary summary;
};

struct TrajectoryOptions {
    double dt = 0.09;
    double Dt = 1.0;
    double Dt_max = 1.0;
    int K = 1;
    double T = 50.0;
    MatchingMode mode = MatchingMode::mean;
    bool adaptive = false;
    double grow_factor = 1.2;
    double shrink_factor = 0.5;
    NewtonOptions newton;
};

ParticleTrajectory run_particle_trajectory(ParticleEnsemble initial, const LinearSde& sde,
                                           const SlowFastPartition& partition, const TrajectoryOptions& options,
                                           const CounterRng& rng);

/// Same control loop on the Gaussian engine; a non-positive extrapolated
/// covariance counts as a failed match.
struct GaussianTrajectory {
    std::vector<TrajectoryStep> steps;
    RunSummary summary;
};

GaussianTrajectory run_gaussian_trajectory(const GaussianState& initial, const LinearSde& sde,
                                           const SlowFastPartition& partition, const TrajectoryOptions& options);

/// Weighted histogram with Freedman-Diaconis bins (effective sample size in
/// place of the count) unless `bins` > 0. Returns (left edges..., right end).
struct Histogram {
    Vector edges;
    Vector weights;  // total weight per bin
};

Histogram weighted_histogram(std::span<const double> values, std::span<const double> weights, int bins = 0);

/// Pearson statistic of weighted samples against N(0, variance) over
/// `cells` equiprobable cells, counts scaled by the effective sample size.
struct ChiSquare {
    double statistic = 0.0;
    int dof = 0;
    double p_value = 0.0;
};

ChiSquare chi_square_normal(std::span<const double> values, std::span<const double> weights, double variance,
                            int cells = 20);

nlohmann::json summary_to_json(const RunSummary& s);

}  // namespace mima
