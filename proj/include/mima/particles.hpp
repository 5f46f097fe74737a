#pragma once

#include "mima/gaussian.hpp"
#include "mima/linalg.hpp"
#include "mima/model.hpp"
#include "mima/random.hpp"

#include <functional>

namespace mima {

/// Weighted replicas; positions are stored row-major, one row per replica.
class ParticleEnsemble {
public:
    ParticleEnsemble() = default;
    /// Uniform weights.
    ParticleEnsemble(std::size_t dim, Vector positions);
    ParticleEnsemble(std::size_t dim, Vector positions, Vector weights);

    [[nodiscard]] std::size_t size() const noexcept { return weights_.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }

    [[nodiscard]] std::span<const double> position(std::size_t j) const {
        return {positions_.data() + j * dim_, dim_};
    }
    [[nodiscard]] std::span<double> position(std::size_t j) { return {positions_.data() + j * dim_, dim_}; }

    [[nodiscard]] const Vector& positions() const noexcept { return positions_; }
    [[nodiscard]] const Vector& weights() const noexcept { return weights_; }

    /// Replaces the weights; they must be nonnegative and sum to 1 within 1e-12.
    void set_weights(Vector w);

private:
    std::size_t dim_ = 0;
    Vector positions_;
    Vector weights_;
};

struct GaussianComponent {
    double weight = 1.0;
    Vector mean;
    Matrix cov;
};

/// Uniform weights, i.i.d. positions from a Gaussian mixture. Deterministic in `seed`.
ParticleEnsemble init_ensemble(std::size_t count, const std::vector<GaussianComponent>& mixture, std::uint64_t seed);

/// General drift and diffusion: dX = a(X) dt + b(X) dW.
struct DriftDiffusionFns {
    std::function<void(std::span<const double> x, std::span<double> out)> drift;
    std::function<Matrix(std::span<const double> x)> diffusion;
};

DriftDiffusionFns linear_fns(const LinearSde& sde);

/// One Euler-Maruyama step of every replica; weights are untouched.
/// `step` addresses the random increments, so equal steps reuse equal noise.
ParticleEnsemble em_particle_step(const ParticleEnsemble& ens, const DriftDiffusionFns& fns, double dt,
                                  const CounterRng& rng, std::uint64_t step);

/// Same step specialized for a linear system with constant diffusion.
ParticleEnsemble em_particle_step(const ParticleEnsemble& ens, const LinearSde& sde, double dt, const CounterRng& rng,
                                  std::uint64_t step);

MacroState restrict_empirical(const ParticleEnsemble& ens, const SlowFastPartition& partition, MatchingMode mode);

struct NewtonOptions {
    double tolerance = 1e-9;
    int max_iters = 50;
};

struct MatchOutcome {
    Vector multipliers;   // slow mean multipliers, then the upper triangle of the quadratic ones
    int iterations = 0;
    bool converged = false;
    double residual = 0.0;
};

struct MatchResult {
    ParticleEnsemble ensemble;
    MatchOutcome outcome;
};

/// Exponential tilting of the weights so that the weighted slow moments hit
/// `target`, with multipliers found by damped Newton iteration. Failure to
/// converge is reported in the outcome, never thrown.
MatchResult newton_match(const ParticleEnsemble& ens, const MacroState& target, const SlowFastPartition& partition,
                         const NewtonOptions& options = {});

/// K micro steps, empirical restriction, extrapolation and Newton matching.
/// Micro step k of this call draws noise at index `step_base + k`.
MatchResult mm_particle_step(const ParticleEnsemble& ens, const LinearSde& sde, const SlowFastPartition& partition,
                             const MicroMacroConfig& config, const CounterRng& rng, std::uint64_t step_base,
                             const NewtonOptions& options = {});

MatchResult mm_particle_step(const ParticleEnsemble& ens, const DriftDiffusionFns& fns,
                             const SlowFastPartition& partition, const MicroMacroConfig& config, const CounterRng& rng,
                             std::uint64_t step_base, const NewtonOptions& options = {});

struct AdaptiveState {
    double current_Dt = 0.0;
    double Dt_max = 0.0;
    double dt = 0.0;
    double grow_factor = 1.2;
    double shrink_factor = 0.5;
    int failure_count = 0;
};

/// Shrinks the macro step after a failed match, grows it after a success,
/// keeping it within [dt, Dt_max].
AdaptiveState adaptive_update(const AdaptiveState& state, const MatchOutcome& outcome);

/// 1 / sum of squared weights.
double effective_sample_size(const ParticleEnsemble& ens);

/// Weighted mean and covariance of all coordinates.
GaussianState weighted_moments(const ParticleEnsemble& ens);

}  // namespace mima
