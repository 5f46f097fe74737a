#include "mima/experiments.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <numeric>
#include <thread>

namespace mima {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Runs body(i) for i in [0, n) on a small pool. Results must be written by
// index so that the outcome does not depend on scheduling.
template <class Body>
void parallel_for(std::size_t n, Body body) {
    const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    const std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

struct DtStats {
    std::size_t count = 0;
    double sum = 0.0;
    double sum_sq = 0.0;

    void add(double x) {
        ++count;
        sum += x;
        sum_sq += x * x;
    }
    void merge(const DtStats& o) {
        count += o.count;
        sum += o.sum;
        sum_sq += o.sum_sq;
    }
    [[nodiscard]] double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
    [[nodiscard]] double std_dev() const {
        if (count == 0) return 0.0;
        const double m = mean();
        return std::sqrt(std::max(0.0, sum_sq / static_cast<double>(count) - m * m));
    }
};

// Shared fixed/adaptive step loop. `step` maps (state, config, attempt index)
// to (new state, converged); `moments` extracts the Gaussian summary.
template <class State, class Step, class Moments>
std::pair<State, std::vector<TrajectoryStep>> control_loop(State state, const TrajectoryOptions& o, Step step,
                                                          Moments moments, RunSummary& summary) {
    DtStats stats;
    const double floor_Dt = o.K * o.dt;
    AdaptiveState ctl{o.Dt, o.Dt_max, floor_Dt, o.grow_factor, o.shrink_factor, 0};
    std::vector<TrajectoryStep> steps;
    steps.push_back({0, 0.0, 0.0, true, true, moments(state)});
    double t = 0.0;
    int attempt = 0;
    const double t_end = o.T * (1.0 - 1e-12);
    while (t < t_end) {
        const MicroMacroConfig cfg{o.dt, ctl.current_Dt, o.K, o.mode};
        auto [next, converged] = step(state, cfg, attempt);
        ++attempt;
        if (!converged) ++summary.matching_failures;
        // a failure at the smallest step cannot be retried any smaller
        const bool accept = converged || !o.adaptive || ctl.current_Dt <= floor_Dt;
        if (accept) {
            state = std::move(next);
            t += cfg.macro_dt;
            stats.add(cfg.macro_dt);
        }
        steps.push_back({attempt, t, cfg.macro_dt, accept, converged, moments(state)});
        if (o.adaptive) {
            MatchOutcome outcome;
            outcome.converged = converged;
            ctl = adaptive_update(ctl, outcome);
        }
    }
    summary.steps_taken = attempt;
    summary.Dt_avg = stats.mean();
    summary.Dt_std = stats.std_dev();
    return {std::move(state), std::move(steps)};
}

DtStats accepted_stats(const std::vector<TrajectoryStep>& steps) {
    DtStats out;
    for (const auto& s : steps)
        if (s.attempt > 0 && s.accepted) out.add(s.Dt);
    return out;
}

TrajectoryOptions options_from(const ExperimentConfig& c) {
    return {c.dt, c.Dt, c.Dt_max, c.K, c.T, c.matching_mode, c.adaptive, c.grow_factor, c.shrink_factor, c.newton};
}

Matrix invariant_or_config_error(const LinearSde& sde, double dt) {
    try {
        return invariant_variance_discrete(sde, dt);
    } catch (const std::domain_error&) {
        throw ConfigError("dt", "the Euler-Maruyama chain with this dt has no invariant law for this system");
    }
}

std::vector<GaussianComponent> initial_law(const ExperimentConfig& c) {
    if (!c.mixture.empty()) return c.mixture;
    return {GaussianComponent{1.0, c.initial_mean, c.initial_cov}};
}

GaussianState mixture_moments(const std::vector<GaussianComponent>& mix) {
    const std::size_t d = mix.front().mean.size();
    Vector mean(d, 0.0);
    Matrix second(d, d);
    for (const auto& g : mix) {
        for (std::size_t i = 0; i < d; ++i) {
            mean[i] += g.weight * g.mean[i];
            for (std::size_t j = 0; j < d; ++j) second(i, j) += g.weight * (g.cov(i, j) + g.mean[i] * g.mean[j]);
        }
    }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) second(i, j) -= mean[i] * mean[j];
    return {mean, symmetrize(second)};
}

double normal_pdf(double x, double var) {
    return std::exp(-0.5 * x * x / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

Vector column_of(const ParticleEnsemble& e, std::size_t k) {
    Vector out(e.size());
    for (std::size_t j = 0; j < e.size(); ++j) out[j] = e.position(j)[k];
    return out;
}

Table histogram_table(const std::string& name, const Histogram& h) {
    Table t{name, {"bin_left", "bin_right", "weight"}, {}};
    for (std::size_t b = 0; b < h.weights.size(); ++b) t.rows.push_back({h.edges[b], h.edges[b + 1], h.weights[b]});
    return t;
}

Table density_table(const std::string& name, const Histogram& h, double var) {
    const double sd = std::sqrt(var);
    const double lo = std::min(h.edges.empty() ? 0.0 : h.edges.front(), -4.0 * sd);
    const double hi = std::max(h.edges.empty() ? 0.0 : h.edges.back(), 4.0 * sd);
    Table t{name, {"x", "density"}, {}};
    const int n = 201;
    for (int i = 0; i < n; ++i) {
        const double x = lo + (hi - lo) * i / (n - 1);
        t.rows.push_back({x, normal_pdf(x, var)});
    }
    return t;
}

json chi_square_json(const ChiSquare& c) {
    return {{"statistic", c.statistic}, {"dof", c.dof}, {"p_value", c.p_value}};
}

json marginal_json(std::span<const double> values, std::span<const double> weights, double var) {
    double m = 0.0, m2 = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) m += weights[j] * values[j];
    for (std::size_t j = 0; j < values.size(); ++j) m2 += weights[j] * (values[j] - m) * (values[j] - m);
    return {{"weighted_mean", m},
            {"weighted_variance", m2},
            {"invariant_variance", var},
            {"chi_square", chi_square_json(chi_square_normal(values, weights, var))}};
}

std::int64_t as_cell(int v) { return v; }
std::int64_t as_cell(bool v) { return v ? 1 : 0; }

void finish_aggregate(ExperimentResult& r, const DtStats& stats, Clock::time_point t0) {
    r.summary.Dt_avg = stats.mean();
    r.summary.Dt_std = stats.std_dev();
    r.summary.wall_time = seconds_since(t0);
}

void add_run(ExperimentResult& r, json label, const RunSummary& s) {
    r.summary.steps_taken += s.steps_taken;
    r.summary.matching_failures += s.matching_failures;
    r.runs.push_back({std::move(label), s});
}

struct RunOutput {
    ParticleTrajectory traj;
    DtStats stats;
};

RunOutput particle_run(const ExperimentConfig& c, const LinearSde& sde, const TrajectoryOptions& o,
                       const std::vector<GaussianComponent>& law, std::uint64_t run_index) {
    const CounterRng rng = CounterRng(c.seed).substream(run_index);
    RunOutput out;
    out.traj = run_particle_trajectory(init_ensemble(c.J, law, rng.seed()), sde, c.partition, o, rng);
    out.stats = accepted_stats(out.traj.steps);
    return out;
}

ExperimentResult histogram_experiment(const ExperimentConfig& c, bool both_marginals) {
    const auto t0 = Clock::now();
    const LinearSde sde = c.system.build();
    if (both_marginals && c.partition.d_f == 0) throw ConfigError("partition", "fast-marginal needs a fast variable");
    const Matrix v = invariant_or_config_error(sde, c.dt);
    const RunOutput run = particle_run(c, sde, options_from(c), initial_law(c), 0);
    const ParticleEnsemble& e = run.traj.final_ensemble;

    ExperimentResult r;
    add_run(r, {{"dt", c.dt}, {"Dt", c.Dt}}, run.traj.summary);
    r.summary.final_macro_state = run.traj.summary.final_macro_state;
    r.metadata["binning"] = c.bins > 0 ? "fixed bin count" : "Freedman-Diaconis on the weighted sample";
    r.metadata["effective_sample_size"] = effective_sample_size(e);
    r.metadata["goodness_of_fit"] = "Pearson chi-square on 20 equiprobable cells, counts scaled by the effective sample size";

    const Vector slow = column_of(e, 0);
    const double vs = v(0, 0);
    const Histogram hs = weighted_histogram(slow, e.weights(), c.bins);
    if (!both_marginals) {
        r.tables.push_back(histogram_table("histogram", hs));
        r.tables.push_back(density_table("density", hs, vs));
        r.metadata["slow"] = marginal_json(slow, e.weights(), vs);
    } else {
        const std::size_t kf = c.partition.d_s;
        const Vector fast = column_of(e, kf);
        const double vf = v(kf, kf);
        const Histogram hf = weighted_histogram(fast, e.weights(), c.bins);
        r.tables.push_back(histogram_table("histogram_slow", hs));
        r.tables.push_back(density_table("density_slow", hs, vs));
        r.tables.push_back(histogram_table("histogram_fast", hf));
        r.tables.push_back(density_table("density_fast", hf, vf));
        r.metadata["slow"] = marginal_json(slow, e.weights(), vs);
        r.metadata["fast"] = marginal_json(fast, e.weights(), vf);
    }
    finish_aggregate(r, run.stats, t0);
    return r;
}

ExperimentResult stability_map_experiment(const ExperimentConfig& c) {
    const auto t0 = Clock::now();
    const LinearSde sde = c.system.build();
    const std::size_t n_dt = c.dt_grid.size(), n_Dt = c.Dt_grid.size();
    std::vector<RunOutput> runs(n_dt * n_Dt);
    const auto law = initial_law(c);
    parallel_for(runs.size(), [&](std::size_t idx) {
        TrajectoryOptions o = options_from(c);
        o.dt = c.dt_grid[idx / n_Dt];
        o.Dt = o.Dt_max = c.Dt_grid[idx % n_Dt];
        o.adaptive = false;
        runs[idx] = particle_run(c, sde, o, law, idx);
    });

    ExperimentResult r;
    Table map{"stability_map", {"dt", "Dt", "failures", "classification"}, {}};
    DtStats stats;
    for (std::size_t idx = 0; idx < runs.size(); ++idx) {
        const double dt = c.dt_grid[idx / n_Dt], Dt = c.Dt_grid[idx % n_Dt];
        const RunSummary& s = runs[idx].traj.summary;
        map.rows.push_back({dt, Dt, as_cell(s.matching_failures), std::string(s.matching_failures >= 1 ? "unstable" : "stable")});
        add_run(r, {{"dt", dt}, {"Dt", Dt}}, s);
        stats.merge(runs[idx].stats);
    }
    r.tables.push_back(std::move(map));

    Table curve{"threshold", {"dt", "threshold"}, {}};
    const auto [lo, hi] = std::minmax_element(c.dt_grid.begin(), c.dt_grid.end());
    const int n = *lo == *hi ? 1 : 41;
    for (int i = 0; i < n; ++i) {
        const double dt = n == 1 ? *lo : *lo + (*hi - *lo) * i / (n - 1);
        Cell value;
        try {
            if (const auto th = effective_slowfast_threshold(sde, c.partition, dt, c.threshold_form)) value = *th;
        } catch (const std::exception&) {
            // no invariant law or singular regression at this dt
        }
        curve.rows.push_back({dt, value});
    }
    r.tables.push_back(std::move(curve));
    r.metadata["classification"] = "unstable iff at least one matching failure during the run";
    r.metadata["threshold_form"] = c.threshold_form == EffectiveForm::paper ? "paper" : "linearized";
    finish_aggregate(r, stats, t0);
    return r;
}

// One trajectory per panel on either engine, with per-step moments.
struct PanelRun {
    std::vector<TrajectoryStep> steps;
    RunSummary summary;
    DtStats stats;
};

PanelRun engine_run(const ExperimentConfig& c, const LinearSde& sde, const TrajectoryOptions& o,
                    std::uint64_t run_index) {
    PanelRun out;
    if (c.engine == "gaussian") {
        const GaussianState init = mixture_moments(initial_law(c));
        GaussianTrajectory g = run_gaussian_trajectory(init, sde, c.partition, o);
        out.steps = std::move(g.steps);
        out.summary = g.summary;
    } else {
        RunOutput p = particle_run(c, sde, o, initial_law(c), run_index);
        out.steps = std::move(p.traj.steps);
        out.summary = p.traj.summary;
    }
    out.stats = accepted_stats(out.steps);
    return out;
}

ExperimentResult adaptive_experiment(const ExperimentConfig& c) {
    const auto t0 = Clock::now();
    const LinearSde sde = c.system.build();
    const PanelRun run = engine_run(c, sde, options_from(c), 0);
    ExperimentResult r;
    Table trace{"trace", {"attempt", "time", "Dt", "accepted", "converged", "slow_mean", "slow_std"}, {}};
    for (const auto& s : run.steps) {
        trace.rows.push_back({as_cell(s.attempt), s.time, s.Dt, as_cell(s.accepted), as_cell(s.converged),
                              s.moments.mean[0], std::sqrt(s.moments.cov(0, 0))});
    }
    r.tables.push_back(std::move(trace));
    add_run(r, {{"dt", c.dt}, {"Dt_max", c.Dt_max}}, run.summary);
    r.summary.final_macro_state = run.summary.final_macro_state;
    r.metadata["engine"] = c.engine;
    finish_aggregate(r, run.stats, t0);
    return r;
}

Vector panel_steps(const ExperimentConfig& c) { return c.Dt_grid.empty() ? Vector{c.Dt_max} : c.Dt_grid; }

ExperimentResult meanvar_experiment(const ExperimentConfig& c) {
    const auto t0 = Clock::now();
    const LinearSde sde = c.system.build();
    const Matrix v = invariant_or_config_error(sde, c.dt);
    const Vector panels = panel_steps(c);
    std::vector<PanelRun> runs(panels.size());
    parallel_for(runs.size(), [&](std::size_t i) {
        TrajectoryOptions o = options_from(c);
        if (!c.Dt_grid.empty()) o.Dt = o.Dt_max = panels[i];
        runs[i] = engine_run(c, sde, o, i);
    });
    ExperimentResult r;
    Table t{"convergence", {"Dt_max", "attempt", "time", "Dt", "mean_norm", "cov_error"}, {}};
    DtStats stats;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        for (const auto& s : runs[i].steps) {
            if (!s.accepted) continue;
            t.rows.push_back({panels[i], as_cell(s.attempt), s.time, s.Dt, norm2(s.moments.mean),
                              frobenius_norm(s.moments.cov - v)});
        }
        add_run(r, {{"Dt_max", panels[i]}}, runs[i].summary);
        stats.merge(runs[i].stats);
    }
    r.tables.push_back(std::move(t));
    if (runs.size() == 1) r.summary.final_macro_state = runs[0].summary.final_macro_state;
    r.metadata["engine"] = c.engine;
    finish_aggregate(r, stats, t0);
    return r;
}

ExperimentResult k_sweep_experiment(const ExperimentConfig& c) {
    const auto t0 = Clock::now();
    const LinearSde sde = c.system.build();
    const Vector panels = panel_steps(c);
    const std::size_t nk = c.K_values.size();
    std::vector<Matrix> inv(nk);
    for (std::size_t k = 0; k < nk; ++k) inv[k] = invariant_or_config_error(sde, c.micro_window / c.K_values[k]);
    std::vector<PanelRun> runs(panels.size() * nk);
    parallel_for(runs.size(), [&](std::size_t idx) {
        TrajectoryOptions o = options_from(c);
        o.K = c.K_values[idx % nk];
        o.dt = c.micro_window / o.K;
        o.Dt = o.Dt_max = panels[idx / nk];
        runs[idx] = engine_run(c, sde, o, idx);
    });
    ExperimentResult r;
    Table t{"k_sweep", {"Dt_max", "K", "dt", "attempt", "time", "Dt", "cov_error"}, {}};
    DtStats stats;
    for (std::size_t idx = 0; idx < runs.size(); ++idx) {
        const int K = c.K_values[idx % nk];
        const double dt = c.micro_window / K;
        for (const auto& s : runs[idx].steps) {
            if (!s.accepted) continue;
            t.rows.push_back({panels[idx / nk], as_cell(K), dt, as_cell(s.attempt), s.time, s.Dt,
                              frobenius_norm(s.moments.cov - inv[idx % nk])});
        }
        add_run(r, {{"Dt_max", panels[idx / nk]}, {"K", K}, {"dt", dt}}, runs[idx].summary);
        stats.merge(runs[idx].stats);
    }
    r.tables.push_back(std::move(t));
    r.metadata["engine"] = c.engine;
    finish_aggregate(r, stats, t0);
    return r;
}

ExperimentResult mixture_kl_experiment(const ExperimentConfig& c) {
    const auto t0 = Clock::now();
    const LinearSde sde = c.system.build();
    const GaussianState invariant{Vector(sde.dim(), 0.0), invariant_or_config_error(sde, c.dt)};
    const std::vector<GaussianComponent> mix = initial_law(c);
    const GaussianState matched = mixture_moments(mix);
    const std::vector<GaussianComponent> reference{{1.0, matched.mean, matched.cov}};
    const std::size_t R = static_cast<std::size_t>(c.replicates);

    // run 2r uses the mixture, run 2r+1 the moment-matched Gaussian
    std::vector<RunOutput> runs(2 * R);
    parallel_for(runs.size(), [&](std::size_t idx) {
        runs[idx] = particle_run(c, sde, options_from(c), idx % 2 == 0 ? mix : reference, idx);
    });

    auto accepted_kl = [&](const RunOutput& run) {
        std::vector<std::pair<double, double>> out;  // (time, kl)
        for (const auto& s : run.traj.steps)
            if (s.accepted) out.emplace_back(s.time, kl_gaussian(s.moments, invariant));
        return out;
    };
    std::vector<std::vector<std::pair<double, double>>> traces(runs.size());
    std::size_t n_steps = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i < runs.size(); ++i) {
        traces[i] = accepted_kl(runs[i]);
        n_steps = std::min(n_steps, traces[i].size());
    }

    ExperimentResult r;
    Table per{"kl_replicates", {"replicate", "initial", "step", "time", "kl"}, {}};
    for (std::size_t i = 0; i < runs.size(); ++i) {
        for (std::size_t n = 0; n < traces[i].size(); ++n) {
            per.rows.push_back({static_cast<std::int64_t>(i / 2), std::string(i % 2 == 0 ? "mixture" : "gaussian"),
                                static_cast<std::int64_t>(n), traces[i][n].first, traces[i][n].second});
        }
    }
    Table agg{"kl", {"step", "time", "kl_mixture", "kl_gaussian", "band_mixture", "band_gaussian"}, {}};
    const double rd = static_cast<double>(R);
    for (std::size_t n = 0; n < n_steps; ++n) {
        double time = 0.0;
        double mean[2] = {0.0, 0.0}, sq[2] = {0.0, 0.0};
        for (std::size_t i = 0; i < runs.size(); ++i) {
            time += traces[i][n].first;
            mean[i % 2] += traces[i][n].second;
        }
        for (double& m : mean) m /= rd;
        for (std::size_t i = 0; i < runs.size(); ++i) {
            const double dev = traces[i][n].second - mean[i % 2];
            sq[i % 2] += dev * dev;
        }
        const double band_m = std::sqrt(sq[0] / (rd - 1.0) / rd);
        const double band_g = std::sqrt(sq[1] / (rd - 1.0) / rd);
        agg.rows.push_back({static_cast<std::int64_t>(n), time / static_cast<double>(runs.size()), mean[0], mean[1],
                            band_m, band_g});
    }
    r.tables.push_back(std::move(agg));
    r.tables.push_back(std::move(per));

    DtStats stats;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        add_run(r, {{"replicate", i / 2}, {"initial", i % 2 == 0 ? "mixture" : "gaussian"}}, runs[i].traj.summary);
        stats.merge(runs[i].stats);
    }
    r.metadata["kl_estimator"] =
        "closed-form Gaussian KL between the weighted mean/covariance fit of the ensemble and the invariant law";
    r.metadata["band"] = "standard error of the replicate mean";
    r.metadata["reference_initial"] = "Gaussian with the mixture's mean and covariance";
    finish_aggregate(r, stats, t0);
    return r;
}

}  // namespace

ParticleTrajectory run_particle_trajectory(ParticleEnsemble initial, const LinearSde& sde,
                                           const SlowFastPartition& partition, const TrajectoryOptions& options,
                                           const CounterRng& rng) {
    const auto t0 = Clock::now();
    ParticleTrajectory out;
    auto step = [&](const ParticleEnsemble& e, const MicroMacroConfig& cfg, int attempt) {
        const auto base = static_cast<std::uint64_t>(attempt) * static_cast<std::uint64_t>(cfg.micro_steps);
        MatchResult m = mm_particle_step(e, sde, partition, cfg, rng, base, options.newton);
        return std::pair<ParticleEnsemble, bool>{std::move(m.ensemble), m.outcome.converged};
    };
    auto [final_state, steps] =
        control_loop(std::move(initial), options, step, [](const ParticleEnsemble& e) { return weighted_moments(e); },
                     out.summary);
    out.summary.final_macro_state = restrict_empirical(final_state, partition, options.mode);
    out.final_ensemble = std::move(final_state);
    out.steps = std::move(steps);
    out.summary.wall_time = seconds_since(t0);
    return out;
}

GaussianTrajectory run_gaussian_trajectory(const GaussianState& initial, const LinearSde& sde,
                                           const SlowFastPartition& partition, const TrajectoryOptions& options) {
    const auto t0 = Clock::now();
    GaussianTrajectory out;
    auto step = [&](const GaussianState& g, const MicroMacroConfig& cfg, int) {
        try {
            return std::pair<GaussianState, bool>{mm_gaussian_step(g, sde, partition, cfg), true};
        } catch (const MatchingInfeasible&) {
            return std::pair<GaussianState, bool>{g, false};
        }
    };
    auto [final_state, steps] =
        control_loop(initial, options, step, [](const GaussianState& g) { return g; }, out.summary);
    out.summary.final_macro_state = restrict_gaussian(final_state, partition, options.mode);
    out.steps = std::move(steps);
    out.summary.wall_time = seconds_since(t0);
    return out;
}

Histogram weighted_histogram(std::span<const double> values, std::span<const double> weights, int bins) {
    if (values.size() != weights.size()) throw std::invalid_argument("weighted_histogram: size mismatch");
    std::vector<std::size_t> idx;
    double w_sum = 0.0, w_sq = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) {
        if (weights[j] > 0.0 && std::isfinite(values[j])) {
            idx.push_back(j);
            w_sum += weights[j];
            w_sq += weights[j] * weights[j];
        }
    }
    Histogram h;
    if (idx.empty()) return h;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const double lo = values[idx.front()], hi = values[idx.back()];

    if (bins <= 0) {
        auto quantile = [&](double p) {
            double acc = 0.0;
            for (std::size_t j : idx) {
                acc += weights[j];
                if (acc >= p * w_sum) return values[j];
            }
            return hi;
        };
        const double iqr = quantile(0.75) - quantile(0.25);
        const double ess = w_sum * w_sum / w_sq;
        const double width = 2.0 * iqr / std::cbrt(ess);
        bins = (width > 0.0 && hi > lo) ? static_cast<int>(std::clamp(std::ceil((hi - lo) / width), 1.0, 10000.0)) : 1;
    }
    const double span = hi > lo ? hi - lo : 1.0;
    const double left = hi > lo ? lo : lo - 0.5;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b) h.edges[static_cast<std::size_t>(b)] = left + span * b / bins;
    h.weights.assign(static_cast<std::size_t>(bins), 0.0);
    for (std::size_t j : idx) {
        const auto b = static_cast<std::size_t>(
            std::clamp(std::floor((values[j] - left) / span * bins), 0.0, static_cast<double>(bins - 1)));
        h.weights[b] += weights[j];
    }
    return h;
}

ChiSquare chi_square_normal(std::span<const double> values, std::span<const double> weights, double variance,
                            int cells) {
    if (cells < 2) throw std::invalid_argument("chi_square_normal: need at least 2 cells");
    const boost::math::normal_distribution<double> law(0.0, std::sqrt(variance));
    Vector cut(static_cast<std::size_t>(cells - 1));
    for (int k = 1; k < cells; ++k) cut[static_cast<std::size_t>(k - 1)] = boost::math::quantile(law, double(k) / cells);
    Vector observed(static_cast<std::size_t>(cells), 0.0);
    double w_sum = 0.0, w_sq = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) {
        if (!(weights[j] > 0.0)) continue;
        const auto cell = static_cast<std::size_t>(std::upper_bound(cut.begin(), cut.end(), values[j]) - cut.begin());
        observed[cell] += weights[j];
        w_sum += weights[j];
        w_sq += weights[j] * weights[j];
    }
    ChiSquare out;
    out.dof = cells - 1;
    if (w_sum <= 0.0) return out;
    const double ess = w_sum * w_sum / w_sq;
    const double expected = ess / cells;
    for (double o : observed) {
        const double count = ess * o / w_sum;
        out.statistic += (count - expected) * (count - expected) / expected;
    }
    out.p_value = boost::math::gamma_q(0.5 * out.dof, 0.5 * out.statistic);
    return out;
}

json summary_to_json(const RunSummary& s) {
    json state = nullptr;
    if (s.final_macro_state) {
        const MacroState& m = *s.final_macro_state;
        state = {{"kind", to_string(m.kind)}, {"slow_mean", m.slow_mean}, {"slow_cov", nullptr}};
        if (m.slow_cov) {
            json rows = json::array();
            for (std::size_t i = 0; i < m.slow_cov->rows(); ++i) {
                json row = json::array();
                for (std::size_t j = 0; j < m.slow_cov->cols(); ++j) row.push_back((*m.slow_cov)(i, j));
                rows.push_back(row);
            }
            state["slow_cov"] = rows;
        }
    }
    return {{"steps_taken", s.steps_taken},
            {"matching_failures", s.matching_failures},
            {"Dt_avg", s.Dt_avg},
            {"Dt_std", s.Dt_std},
            {"final_macro_state", state},
            {"wall_time", s.wall_time}};
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    const std::string& e = config.experiment;
    if (e == "histogram") return histogram_experiment(config, false);
    if (e == "fast-marginal") return histogram_experiment(config, true);
    if (e == "stability-map") return stability_map_experiment(config);
    if (e == "adaptive") return adaptive_experiment(config);
    if (e == "meanvar-convergence") return meanvar_experiment(config);
    if (e == "k-sweep") return k_sweep_experiment(config);
    if (e == "mixture-kl") return mixture_kl_experiment(config);
    throw ConfigError("experiment", "unknown experiment '" + e + "'");
}

}  // namespace mima
