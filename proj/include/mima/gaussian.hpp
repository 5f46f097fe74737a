#pragma once

#include "mima/linalg.hpp"
#include "mima/model.hpp"

#include <optional>

namespace mima {

/// Signals that the extrapolated macroscopic state admits no matched law
/// (non-positive-definite slow covariance). Treated like a Newton failure.
class MatchingInfeasible : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GaussianState {
    Vector mean;
    Matrix cov;

    [[nodiscard]] std::size_t dim() const noexcept { return mean.size(); }
};

/// Throws std::invalid_argument on shape mismatch or a covariance that is not
/// symmetric positive definite.
void check_gaussian(const GaussianState& s);

enum class MatchingMode { mean, mean_var };

/// Slow mean, plus slow covariance in mean_var mode.
struct MacroState {
    MatchingMode kind = MatchingMode::mean;
    Vector slow_mean;
    std::optional<Matrix> slow_cov;
};

struct MicroMacroConfig {
    double micro_dt = 0.0;
    double macro_dt = 0.0;
    int micro_steps = 1;
    MatchingMode mode = MatchingMode::mean;

    /// Throws std::invalid_argument unless 0 < K*dt <= Dt.
    void check() const;
    /// (Dt - K dt) / (K dt).
    [[nodiscard]] double extrapolation_factor() const;
};

/// One Euler-Maruyama step of the law: mean -> (I+dtA) mean,
/// cov -> (I+dtA) cov (I+dtA)^T + dt B.
GaussianState em_moment_step(const GaussianState& state, const LinearSde& sde, double dt);

MacroState restrict_gaussian(const GaussianState& state, const SlowFastPartition& partition, MatchingMode mode);

/// Forward-Euler extrapolation of every macroscopic component.
/// Throws MatchingInfeasible if an extrapolated slow covariance is not
/// positive semidefinite.
MacroState extrapolate(const MacroState& m0, const MacroState& mk, const MicroMacroConfig& config);

/// Minimum-KL Gaussian with prescribed slow mean: covariance kept, fast mean
/// shifted by the regression of fast on slow coordinates.
GaussianState match_mean_gauss(const GaussianState& prior, std::span<const double> target_slow_mean,
                               const SlowFastPartition& partition);

/// Minimum-KL Gaussian with prescribed slow mean and covariance: the target
/// slow law combined with the prior's fast-given-slow conditional.
/// Throws MatchingInfeasible if the target covariance is not positive definite.
GaussianState match_mean_var_gauss(const GaussianState& prior, std::span<const double> target_slow_mean,
                                   const Matrix& target_slow_cov, const SlowFastPartition& partition);

GaussianState match_gauss(const GaussianState& prior, const MacroState& target, const SlowFastPartition& partition);

/// K micro steps, restriction, extrapolation and matching.
GaussianState mm_gaussian_step(const GaussianState& state, const LinearSde& sde, const SlowFastPartition& partition,
                               const MicroMacroConfig& config);

/// Stationary covariance of the Euler-Maruyama chain with step dt.
/// Throws std::domain_error if the spectral radius of I + dt A is >= 1.
Matrix invariant_variance_discrete(const LinearSde& sde, double dt);

/// KL(p || q) for Gaussians.
double kl_gaussian(const GaussianState& p, const GaussianState& q);

}  // namespace mima
