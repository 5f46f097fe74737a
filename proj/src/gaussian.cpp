#include "mima/gaussian.hpp"

#include <algorithm>
#include <cmath>

namespace mima {

namespace {

void check_state_against(const GaussianState& s, const LinearSde& sde) {
    if (s.dim() != sde.dim() || s.cov.rows() != sde.dim() || s.cov.cols() != sde.dim()) {
        throw std::invalid_argument("Gaussian state does not match the system dimension");
    }
}

Vector head(std::span<const double> v, std::size_t n) { return Vector(v.begin(), v.begin() + static_cast<long>(n)); }

}  // namespace

void check_gaussian(const GaussianState& s) {
    if (s.cov.rows() != s.dim() || s.cov.cols() != s.dim()) {
        throw std::invalid_argument("GaussianState: covariance shape does not match the mean");
    }
    if (!is_symmetric(s.cov)) throw std::invalid_argument("GaussianState: covariance is not symmetric");
    if (!is_positive_definite(s.cov)) throw std::invalid_argument("GaussianState: covariance is not positive definite");
}

void MicroMacroConfig::check() const {
    if (!(micro_dt > 0.0)) throw std::invalid_argument("micro time step must be positive");
    if (micro_steps < 1) throw std::invalid_argument("number of micro steps must be at least 1");
    if (!(macro_dt >= micro_steps * micro_dt)) {
        throw std::invalid_argument("macro time step must be at least K times the micro time step");
    }
}

double MicroMacroConfig::extrapolation_factor() const {
    const double burst = micro_steps * micro_dt;
    return (macro_dt - burst) / burst;
}

GaussianState em_moment_step(const GaussianState& state, const LinearSde& sde, double dt) {
    check_state_against(state, sde);
    if (dt < 0.0) throw std::invalid_argument("em_moment_step: dt must be nonnegative");
    const Matrix p = Matrix::identity(sde.dim()) + dt * sde.drift();
    GaussianState out;
    out.mean = p * std::span<const double>(state.mean);
    out.cov = symmetrize(p * state.cov * p.transpose() + dt * sde.diffusion());
    return out;
}

MacroState restrict_gaussian(const GaussianState& state, const SlowFastPartition& partition, MatchingMode mode) {
    partition.check(state.dim());
    MacroState m;
    m.kind = mode;
    m.slow_mean = head(state.mean, partition.d_s);
    if (mode == MatchingMode::mean_var) m.slow_cov = state.cov.block(0, 0, partition.d_s, partition.d_s);
    return m;
}

MacroState extrapolate(const MacroState& m0, const MacroState& mk, const MicroMacroConfig& config) {
    config.check();
    if (m0.kind != mk.kind || m0.slow_mean.size() != mk.slow_mean.size()) {
        throw std::invalid_argument("extrapolate: macroscopic states are not compatible");
    }
    const double f = config.extrapolation_factor();
    MacroState out;
    out.kind = mk.kind;
    out.slow_mean = mk.slow_mean;
    for (std::size_t i = 0; i < out.slow_mean.size(); ++i) {
        out.slow_mean[i] += f * (mk.slow_mean[i] - m0.slow_mean[i]);
    }
    if (mk.kind == MatchingMode::mean_var) {
        if (!m0.slow_cov || !mk.slow_cov) throw std::invalid_argument("extrapolate: missing slow covariance");
        Matrix cov = *mk.slow_cov;
        cov += f * (*mk.slow_cov - *m0.slow_cov);
        for (double x : cov.data()) {
            if (!std::isfinite(x)) throw MatchingInfeasible("extrapolated slow covariance is not finite");
        }
        const double tol = 1e-14 * std::max(1.0, max_abs(cov));
        if (symmetric_eigen(symmetrize(cov)).values.front() < -tol) {
            throw MatchingInfeasible("extrapolated slow covariance is not positive semidefinite");
        }
        out.slow_cov = std::move(cov);
    }
    for (double x : out.slow_mean) {
        if (!std::isfinite(x)) throw MatchingInfeasible("extrapolated slow mean is not finite");
    }
    return out;
}

GaussianState match_mean_gauss(const GaussianState& prior, std::span<const double> target_slow_mean,
                               const SlowFastPartition& partition) {
    partition.check(prior.dim());
    const std::size_t ds = partition.d_s, df = partition.d_f;
    if (target_slow_mean.size() != ds) throw std::invalid_argument("match_mean_gauss: target has wrong dimension");
    GaussianState out = prior;
    Vector shift(ds);
    for (std::size_t i = 0; i < ds; ++i) {
        shift[i] = target_slow_mean[i] - prior.mean[i];
        out.mean[i] = target_slow_mean[i];
    }
    if (df == 0) return out;
    const Matrix cross = prior.cov.block(0, ds, ds, df);
    // R^T = (Sigma_s)^{-1} C, so R * shift = C^T (Sigma_s)^{-1} shift
    const Vector u = solve(prior.cov.block(0, 0, ds, ds), shift);
    const Vector correction = cross.transpose() * std::span<const double>(u);
    for (std::size_t i = 0; i < df; ++i) out.mean[ds + i] += correction[i];
    return out;
}

GaussianState match_mean_var_gauss(const GaussianState& prior, std::span<const double> target_slow_mean,
                                   const Matrix& target_slow_cov, const SlowFastPartition& partition) {
    partition.check(prior.dim());
    const std::size_t ds = partition.d_s, df = partition.d_f;
    if (target_slow_cov.rows() != ds || target_slow_cov.cols() != ds) {
        throw std::invalid_argument("match_mean_var_gauss: target covariance has wrong dimension");
    }
    if (!is_symmetric(target_slow_cov) || !is_positive_definite(symmetrize(target_slow_cov))) {
        throw MatchingInfeasible("target slow covariance is not positive definite");
    }
    GaussianState out = match_mean_gauss(prior, target_slow_mean, partition);
    const Matrix prior_slow = prior.cov.block(0, 0, ds, ds);
    const Matrix delta = target_slow_cov - prior_slow;
    out.cov.set_block(0, 0, target_slow_cov);
    if (df == 0) return out;

    // Written as increments on the prior blocks so that delta == 0 is an exact no-op.
    const Matrix upper = prior.cov.block(0, ds, ds, df);
    const Matrix lower = prior.cov.block(ds, 0, df, ds);
    const Matrix rt = solve(prior_slow, upper);  // R^T
    const Matrix r = rt.transpose();
    out.cov.set_block(0, ds, upper + delta * rt);
    out.cov.set_block(ds, 0, lower + r * delta);
    out.cov.set_block(ds, ds, prior.cov.block(ds, ds, df, df) + symmetrize(r * delta * rt));
    return out;
}

GaussianState match_gauss(const GaussianState& prior, const MacroState& target, const SlowFastPartition& partition) {
    if (target.kind == MatchingMode::mean) return match_mean_gauss(prior, target.slow_mean, partition);
    if (!target.slow_cov) throw std::invalid_argument("match_gauss: target lacks a slow covariance");
    return match_mean_var_gauss(prior, target.slow_mean, *target.slow_cov, partition);
}

GaussianState mm_gaussian_step(const GaussianState& state, const LinearSde& sde, const SlowFastPartition& partition,
                               const MicroMacroConfig& config) {
    config.check();
    partition.check(sde.dim());
    const MacroState m0 = restrict_gaussian(state, partition, config.mode);
    GaussianState micro = state;
    for (int k = 0; k < config.micro_steps; ++k) micro = em_moment_step(micro, sde, config.micro_dt);
    const MacroState mk = restrict_gaussian(micro, partition, config.mode);
    return match_gauss(micro, extrapolate(m0, mk, config), partition);
}

Matrix invariant_variance_discrete(const LinearSde& sde, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("invariant_variance_discrete: dt must be positive");
    const std::size_t d = sde.dim();
    const Matrix p0 = Matrix::identity(d) + dt * sde.drift();
    if (spectral_radius(p0) >= 1.0) {
        throw std::domain_error("invariant_variance_discrete: spectral radius of I + dt A is not below 1");
    }
    // Doubling: after k rounds v holds the first 2^k terms of the series.
    const Matrix q = dt * sde.diffusion();
    Matrix v = q;
    Matrix p = p0;
    for (int round = 0; round < 200; ++round) {
        const Matrix increment = p * v * p.transpose();
        v += increment;
        p = p * p;
        if (max_abs(increment) <= 1e-17 * max_abs(v) && max_abs(p) <= 1e-17) break;
    }
    v = symmetrize(v);
    // A couple of plain fixed-point sweeps polish the rounding of the doubling sums.
    for (int sweep = 0; sweep < 3; ++sweep) v = symmetrize(p0 * v * p0.transpose() + q);
    const double residual = frobenius_norm(p0 * v * p0.transpose() + q - v);
    if (residual > 1e-12 * std::max(1.0, frobenius_norm(v))) {
        throw ConvergenceError("invariant_variance_discrete: fixed point not reached");
    }
    return v;
}

double kl_gaussian(const GaussianState& p, const GaussianState& q) {
    if (p.dim() != q.dim()) throw std::invalid_argument("kl_gaussian: dimension mismatch");
    check_gaussian(q);
    check_gaussian(p);
    const std::size_t d = p.dim();
    const Matrix qinv_p = solve(q.cov, p.cov);
    double tr = 0.0;
    for (std::size_t i = 0; i < d; ++i) tr += qinv_p(i, i);
    const Vector diff = sub(q.mean, p.mean);
    const double maha = dot(diff, solve(q.cov, diff));
    const double kl = 0.5 * (tr - static_cast<double>(d) + maha + log_det_spd(q.cov) - log_det_spd(p.cov));
    return std::max(0.0, kl);
}

}  // namespace mima
