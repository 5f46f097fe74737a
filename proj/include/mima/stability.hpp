#pragma once

#include "mima/linalg.hpp"
#include "mima/model.hpp"

#include <optional>

namespace mima {

struct StabilityVerdict {
    bool stable = false;
    double slow_radius = 0.0;  // rho(I + Dt D_s)
    double fast_radius = 0.0;  // rho(I + dt D_f)
};

/// Mean/covariance stability of the mean-matching scheme for a block-diagonal
/// drift. A radius of exactly 1 counts as unstable.
StabilityVerdict theorem_stability_check(const LinearSde& sde, const SlowFastPartition& partition, double dt,
                                         double Dt);

struct VarianceOperator {
    Matrix matrix;         // explicit d_s^2 x d_s^2 form of D(+)D + dt D(x)D
    Spectrum spectrum;
    double threshold = 0;  // largest Dt with rho(I + Dt L) < 1; +inf if none bounds it
};

/// Operator driving the extrapolated slow-covariance recursion.
VarianceOperator variance_extrap_operator(const Matrix& slow_drift, double dt);

/// Dt-independent limit -L^{-1} B_s of the extrapolated slow covariance.
Matrix asymptotic_slow_variance(const Matrix& slow_drift, const Matrix& slow_diffusion, double dt);

/// How the linearized slow-fast matrix is assembled.
/// `paper` keeps Dt - dt in the slow-fast block and dt alone in the fast block;
/// `linearized` is the exact first-order expansion of one ME step about the
/// invariant law (Dt in the slow-fast block, extra (Dt - dt) R A_sf in the fast block).
enum class EffectiveForm { paper, linearized };

/// Regression coefficient C^T V_s^{-1} of the discrete invariant covariance.
Matrix invariant_regression(const LinearSde& sde, const SlowFastPartition& partition, double dt);

Matrix effective_slowfast_matrix(const LinearSde& sde, const SlowFastPartition& partition, double dt, double Dt,
                                 EffectiveForm form = EffectiveForm::paper);

/// Smallest Dt in [dt, 4] where rho(I + A(dt, Dt)) reaches 1, to 1e-6.
/// Empty when no crossing exists in the range.
std::optional<double> effective_slowfast_threshold(const LinearSde& sde, const SlowFastPartition& partition,
                                                   double dt, EffectiveForm form = EffectiveForm::paper);

/// dt * cond2(S) * rho(D_s)^2 with S the unit-column eigenvector matrix of D_s (+) D_s.
double bauer_fike_radius(const Matrix& slow_drift, double dt);

enum class RegionMode { mean, meanvar };
enum class Region { inside, ring, outside };

Region stability_region_classify(Complex z, RegionMode mode, double dt_margin);

const char* to_string(Region r);

}  // namespace mima
