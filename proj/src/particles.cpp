#include "mima/particles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace mima {

namespace {

constexpr std::size_t kParallelThreshold = 4096;

// Runs body(begin, end) over [0, n) in contiguous chunks. Each index is
// handled exactly once, so results do not depend on the thread count.
template <class Body>
void parallel_chunks(std::size_t n, Body body) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (hw == 1 || n < kParallelThreshold) {
        body(std::size_t{0}, n);
        return;
    }
    const std::size_t chunks = std::min<std::size_t>(hw, n / (kParallelThreshold / 4));
    std::vector<std::thread> pool;
    pool.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t b = n * c / chunks, e = n * (c + 1) / chunks;
        pool.emplace_back([&body, b, e] { body(b, e); });
    }
    for (auto& t : pool) t.join();
}

// Neumaier summation keeps the simplex check meaningful at large J.
double compensated_sum(const Vector& v) {
    double sum = 0.0, carry = 0.0;
    for (double x : v) {
        const double t = sum + x;
        carry += std::fabs(sum) >= std::fabs(x) ? (sum - t) + x : (x - t) + sum;
        sum = t;
    }
    return sum + carry;
}

void check_simplex(const Vector& w) {
    for (double x : w) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("weights must be finite and nonnegative");
    }
    if (std::fabs(compensated_sum(w) - 1.0) > 1e-12) throw std::invalid_argument("weights must sum to one");
}

std::uint32_t replica_index(std::size_t j) {
    if (j > std::numeric_limits<std::uint32_t>::max()) throw std::length_error("too many replicas");
    return static_cast<std::uint32_t>(j);
}

std::size_t quad_count(std::size_t ds) { return ds * (ds + 1) / 2; }

// Sufficient statistics of the slow coordinates, centered at `centre`:
// linear part y - c, then the upper triangle of (y - c)(y - c)^T.
void statistics(std::span<const double> x, std::span<const double> centre, bool quadratic, std::span<double> out) {
    const std::size_t ds = centre.size();
    for (std::size_t i = 0; i < ds; ++i) out[i] = x[i] - centre[i];
    if (!quadratic) return;
    std::size_t k = ds;
    for (std::size_t i = 0; i < ds; ++i)
        for (std::size_t j = i; j < ds; ++j) out[k++] = out[i] * out[j];
}

struct Tilt {
    Vector log_weights;  // normalized
    Vector mean;         // tilted mean of the statistics
    double residual = std::numeric_limits<double>::infinity();
};

Tilt tilt(const Vector& log_prior, const Vector& stats, std::size_t p, std::span<const double> theta,
          std::span<const double> target) {
    const std::size_t n = log_prior.size();
    Tilt t;
    t.log_weights.resize(n);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
        double e = log_prior[j];
        for (std::size_t k = 0; k < p; ++k) e += theta[k] * stats[j * p + k];
        t.log_weights[j] = e;
        if (e > peak) peak = e;
    }
    if (!std::isfinite(peak)) return t;
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(t.log_weights[j] - peak);
    const double lse = peak + std::log(sum);
    t.mean.assign(p, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        t.log_weights[j] -= lse;
        const double q = std::exp(t.log_weights[j]);
        for (std::size_t k = 0; k < p; ++k) t.mean[k] += q * stats[j * p + k];
    }
    double r2 = 0.0;
    for (std::size_t k = 0; k < p; ++k) r2 += (t.mean[k] - target[k]) * (t.mean[k] - target[k]);
    t.residual = std::sqrt(r2);
    if (!std::isfinite(t.residual)) t.residual = std::numeric_limits<double>::infinity();
    return t;
}

Matrix tilted_covariance(const Tilt& t, const Vector& stats, std::size_t p) {
    Matrix h(p, p);
    const std::size_t n = t.log_weights.size();
    Vector c(p);
    for (std::size_t j = 0; j < n; ++j) {
        const double q = std::exp(t.log_weights[j]);
        if (q == 0.0) continue;
        for (std::size_t k = 0; k < p; ++k) c[k] = stats[j * p + k] - t.mean[k];
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = a; b < p; ++b) h(a, b) += q * c[a] * c[b];
    }
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < a; ++b) h(a, b) = h(b, a);
    return h;
}

Vector report_multipliers(const Vector& theta, std::size_t ds, bool quadratic) {
    Vector out(theta.begin(), theta.begin() + static_cast<long>(ds));
    if (!quadratic) return out;
    std::size_t k = ds;
    for (std::size_t i = 0; i < ds; ++i)
        for (std::size_t j = i; j < ds; ++j, ++k) out.push_back(i == j ? theta[k] : 0.5 * theta[k]);
    return out;
}

MatchResult failed_match(ParticleEnsemble ens, std::size_t multiplier_count) {
    MatchOutcome o;
    o.multipliers.assign(multiplier_count, 0.0);
    o.converged = false;
    o.residual = std::numeric_limits<double>::infinity();
    return {std::move(ens), o};
}

}  // namespace

ParticleEnsemble::ParticleEnsemble(std::size_t dim, Vector positions)
    : ParticleEnsemble(dim, std::move(positions), Vector{}) {}

ParticleEnsemble::ParticleEnsemble(std::size_t dim, Vector positions, Vector weights)
    : dim_(dim), positions_(std::move(positions)), weights_(std::move(weights)) {
    if (dim_ == 0 || positions_.size() % dim_ != 0) {
        throw std::invalid_argument("ParticleEnsemble: positions do not form whole replicas");
    }
    const std::size_t count = positions_.size() / dim_;
    if (count < 2) throw std::invalid_argument("ParticleEnsemble: at least two replicas are required");
    if (weights_.empty()) weights_.assign(count, 1.0 / static_cast<double>(count));
    if (weights_.size() != count) throw std::invalid_argument("ParticleEnsemble: one weight per replica is required");
    check_simplex(weights_);
}

void ParticleEnsemble::set_weights(Vector w) {
    if (w.size() != size()) throw std::invalid_argument("set_weights: one weight per replica is required");
    check_simplex(w);
    weights_ = std::move(w);
}

ParticleEnsemble init_ensemble(std::size_t count, const std::vector<GaussianComponent>& mixture, std::uint64_t seed) {
    if (count < 2) throw std::invalid_argument("init_ensemble: at least two replicas are required");
    if (mixture.empty()) throw std::invalid_argument("init_ensemble: empty mixture");
    const std::size_t d = mixture.front().mean.size();
    Vector cumulative;
    std::vector<Matrix> roots;
    double total = 0.0;
    for (const GaussianComponent& c : mixture) {
        if (c.mean.size() != d) throw std::invalid_argument("init_ensemble: component dimensions differ");
        if (!(c.weight >= 0.0)) throw std::invalid_argument("init_ensemble: mixture weights must be nonnegative");
        check_gaussian({c.mean, c.cov});
        total += c.weight;
        cumulative.push_back(total);
        roots.push_back(spd_sqrt(c.cov));
    }
    if (std::fabs(total - 1.0) > 1e-9) throw std::invalid_argument("init_ensemble: mixture weights must sum to one");

    const CounterRng rng(seed);
    Vector positions(count * d);
    parallel_chunks(count, [&](std::size_t begin, std::size_t end) {
        Vector xi(d);
        for (std::size_t j = begin; j < end; ++j) {
            std::size_t comp = 0;
            if (mixture.size() > 1) {
                const double u = rng.uniform(streams::init, 0, replica_index(j)) * total;
                while (comp + 1 < mixture.size() && u > cumulative[comp]) ++comp;
            }
            rng.normals(streams::init, 1, replica_index(j), xi);
            const Vector z = roots[comp] * std::span<const double>(xi);
            for (std::size_t i = 0; i < d; ++i) positions[j * d + i] = mixture[comp].mean[i] + z[i];
        }
    });
    return ParticleEnsemble(d, std::move(positions));
}

DriftDiffusionFns linear_fns(const LinearSde& sde) {
    const Matrix a = sde.drift();
    const Matrix root = spd_sqrt(sde.diffusion());
    DriftDiffusionFns f;
    f.drift = [a](std::span<const double> x, std::span<double> out) {
        const Vector y = a * x;
        std::copy(y.begin(), y.end(), out.begin());
    };
    f.diffusion = [root](std::span<const double>) { return root; };
    return f;
}

ParticleEnsemble em_particle_step(const ParticleEnsemble& ens, const DriftDiffusionFns& fns, double dt,
                                  const CounterRng& rng, std::uint64_t step) {
    if (dt < 0.0) throw std::invalid_argument("em_particle_step: dt must be nonnegative");
    ParticleEnsemble out = ens;
    if (dt == 0.0) return out;
    const std::size_t d = ens.dim();
    const double sq = std::sqrt(dt);
    parallel_chunks(ens.size(), [&](std::size_t begin, std::size_t end) {
        Vector xi(d), a(d);
        for (std::size_t j = begin; j < end; ++j) {
            const auto x = ens.position(j);
            fns.drift(x, a);
            const Matrix b = fns.diffusion(x);
            rng.normals(streams::propagate, step, replica_index(j), xi);
            const Vector noise = b * std::span<const double>(xi);
            auto y = out.position(j);
            for (std::size_t i = 0; i < d; ++i) y[i] = x[i] + dt * a[i] + sq * noise[i];
        }
    });
    return out;
}

ParticleEnsemble em_particle_step(const ParticleEnsemble& ens, const LinearSde& sde, double dt, const CounterRng& rng,
                                  std::uint64_t step) {
    if (dt < 0.0) throw std::invalid_argument("em_particle_step: dt must be nonnegative");
    if (sde.dim() != ens.dim()) throw std::invalid_argument("em_particle_step: dimension mismatch");
    ParticleEnsemble out = ens;
    if (dt == 0.0) return out;
    const std::size_t d = ens.dim();
    const Matrix& a = sde.drift();
    const Matrix root = std::sqrt(dt) * spd_sqrt(sde.diffusion());
    parallel_chunks(ens.size(), [&](std::size_t begin, std::size_t end) {
        Vector xi(d);
        for (std::size_t j = begin; j < end; ++j) {
            const auto x = ens.position(j);
            auto y = out.position(j);
            rng.normals(streams::propagate, step, replica_index(j), xi);
            for (std::size_t i = 0; i < d; ++i) {
                double acc = x[i];
                for (std::size_t k = 0; k < d; ++k) acc += dt * a(i, k) * x[k] + root(i, k) * xi[k];
                y[i] = acc;
            }
        }
    });
    return out;
}

MacroState restrict_empirical(const ParticleEnsemble& ens, const SlowFastPartition& partition, MatchingMode mode) {
    partition.check(ens.dim());
    const std::size_t ds = partition.d_s;
    MacroState m;
    m.kind = mode;
    m.slow_mean.assign(ds, 0.0);
    const Vector& w = ens.weights();
    for (std::size_t j = 0; j < ens.size(); ++j) {
        const auto x = ens.position(j);
        for (std::size_t i = 0; i < ds; ++i) m.slow_mean[i] += w[j] * x[i];
    }
    if (mode == MatchingMode::mean_var) {
        Matrix cov(ds, ds);
        for (std::size_t j = 0; j < ens.size(); ++j) {
            const auto x = ens.position(j);
            for (std::size_t a = 0; a < ds; ++a)
                for (std::size_t b = a; b < ds; ++b)
                    cov(a, b) += w[j] * (x[a] - m.slow_mean[a]) * (x[b] - m.slow_mean[b]);
        }
        for (std::size_t a = 0; a < ds; ++a)
            for (std::size_t b = 0; b < a; ++b) cov(a, b) = cov(b, a);
        m.slow_cov = std::move(cov);
    }
    return m;
}

MatchResult newton_match(const ParticleEnsemble& ens, const MacroState& target, const SlowFastPartition& partition,
                         const NewtonOptions& options) {
    if (!(options.tolerance > 0.0)) throw std::invalid_argument("newton_match: tolerance must be positive");
    if (options.max_iters < 1) throw std::invalid_argument("newton_match: max_iters must be at least 1");
    partition.check(ens.dim());
    const std::size_t ds = partition.d_s;
    if (target.slow_mean.size() != ds) throw std::invalid_argument("newton_match: target has wrong dimension");
    const bool quadratic = target.kind == MatchingMode::mean_var;
    if (quadratic && !target.slow_cov) throw std::invalid_argument("newton_match: target lacks a slow covariance");
    const std::size_t p = ds + (quadratic ? quad_count(ds) : 0);

    for (double x : target.slow_mean) {
        if (!std::isfinite(x)) return failed_match(ens, p);
    }
    if (quadratic) {
        const Matrix& s = *target.slow_cov;
        for (double x : s.data()) {
            if (!std::isfinite(x)) return failed_match(ens, p);
        }
        if (symmetric_eigen(symmetrize(s)).values.front() < 0.0) return failed_match(ens, p);
    }

    const Vector centre = restrict_empirical(ens, partition, MatchingMode::mean).slow_mean;
    Vector goal(p);
    for (std::size_t i = 0; i < ds; ++i) goal[i] = target.slow_mean[i] - centre[i];
    if (quadratic) {
        std::size_t k = ds;
        for (std::size_t i = 0; i < ds; ++i)
            for (std::size_t j = i; j < ds; ++j) goal[k++] = (*target.slow_cov)(i, j) + goal[i] * goal[j];
    }

    const std::size_t n = ens.size();
    Vector stats(n * p);
    Vector log_prior(n);
    for (std::size_t j = 0; j < n; ++j) {
        statistics(ens.position(j), centre, quadratic, std::span<double>(stats.data() + j * p, p));
        log_prior[j] = std::log(ens.weights()[j]);
    }

    Vector theta(p, 0.0);
    Tilt current = tilt(log_prior, stats, p, theta, goal);
    MatchOutcome outcome;
    outcome.residual = current.residual;
    if (current.residual <= options.tolerance) {
        outcome.converged = true;
        outcome.multipliers = report_multipliers(theta, ds, quadratic);
        return {ens, outcome};
    }

    int it = 0;
    for (; it < options.max_iters; ++it) {
        Vector step;
        try {
            const Vector r = sub(current.mean, goal);
            step = solve(tilted_covariance(current, stats, p), r);
        } catch (const SingularMatrixError&) {
            break;
        }
        bool accepted = false;
        double alpha = 1.0;
        for (int halving = 0; halving <= 30; ++halving, alpha *= 0.5) {
            Vector trial = theta;
            for (std::size_t k = 0; k < p; ++k) trial[k] -= alpha * step[k];
            Tilt next = tilt(log_prior, stats, p, trial, goal);
            if (next.residual < current.residual) {
                theta = std::move(trial);
                current = std::move(next);
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        if (current.residual <= options.tolerance) {
            ++it;
            outcome.converged = true;
            break;
        }
    }

    outcome.iterations = it;
    outcome.residual = current.residual;
    outcome.multipliers = report_multipliers(theta, ds, quadratic);

    Vector w(n);
    for (std::size_t j = 0; j < n; ++j) w[j] = std::exp(current.log_weights[j]);
    const double sum = compensated_sum(w);
    if (!(sum > 0.0) || !std::isfinite(sum)) {
        outcome.converged = false;
        return {ens, outcome};
    }
    for (double& x : w) x /= sum;
    ParticleEnsemble out = ens;
    out.set_weights(std::move(w));
    return {std::move(out), outcome};
}

namespace {

template <class Dynamics>
MatchResult micro_macro_step(const ParticleEnsemble& ens, const Dynamics& dynamics, const SlowFastPartition& partition,
                             const MicroMacroConfig& config, const CounterRng& rng, std::uint64_t step_base,
                             const NewtonOptions& options) {
    config.check();
    const MacroState m0 = restrict_empirical(ens, partition, config.mode);
    ParticleEnsemble micro = ens;
    for (int k = 0; k < config.micro_steps; ++k) {
        micro = em_particle_step(micro, dynamics, config.micro_dt, rng, step_base + static_cast<std::uint64_t>(k));
    }
    const MacroState mk = restrict_empirical(micro, partition, config.mode);
    const std::size_t p = partition.d_s + (config.mode == MatchingMode::mean_var ? quad_count(partition.d_s) : 0);
    MacroState target;
    try {
        target = extrapolate(m0, mk, config);
    } catch (const MatchingInfeasible&) {
        return failed_match(std::move(micro), p);
    }
    return newton_match(micro, target, partition, options);
}

}  // namespace

MatchResult mm_particle_step(const ParticleEnsemble& ens, const LinearSde& sde, const SlowFastPartition& partition,
                             const MicroMacroConfig& config, const CounterRng& rng, std::uint64_t step_base,
                             const NewtonOptions& options) {
    return micro_macro_step(ens, sde, partition, config, rng, step_base, options);
}

MatchResult mm_particle_step(const ParticleEnsemble& ens, const DriftDiffusionFns& fns,
                             const SlowFastPartition& partition, const MicroMacroConfig& config, const CounterRng& rng,
                             std::uint64_t step_base, const NewtonOptions& options) {
    return micro_macro_step(ens, fns, partition, config, rng, step_base, options);
}

AdaptiveState adaptive_update(const AdaptiveState& state, const MatchOutcome& outcome) {
    AdaptiveState next = state;
    if (outcome.converged) {
        next.current_Dt = std::min(state.current_Dt * state.grow_factor, state.Dt_max);
    } else {
        next.current_Dt = std::max(state.current_Dt * state.shrink_factor, state.dt);
        ++next.failure_count;
    }
    return next;
}

double effective_sample_size(const ParticleEnsemble& ens) {
    double s = 0.0;
    for (double w : ens.weights()) s += w * w;
    return 1.0 / s;
}

GaussianState weighted_moments(const ParticleEnsemble& ens) {
    const std::size_t d = ens.dim();
    GaussianState g{Vector(d, 0.0), Matrix(d, d)};
    const Vector& w = ens.weights();
    for (std::size_t j = 0; j < ens.size(); ++j) {
        const auto x = ens.position(j);
        for (std::size_t i = 0; i < d; ++i) g.mean[i] += w[j] * x[i];
    }
    for (std::size_t j = 0; j < ens.size(); ++j) {
        const auto x = ens.position(j);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = a; b < d; ++b) g.cov(a, b) += w[j] * (x[a] - g.mean[a]) * (x[b] - g.mean[b]);
    }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < a; ++b) g.cov(a, b) = g.cov(b, a);
    return g;
}

}  // namespace mima
