#include "mima/stability.hpp"

#include "mima/gaussian.hpp"

#include <cmath>
#include <limits>

namespace mima {

namespace {

double radius_of_shifted(const Matrix& l, double step) {
    return spectral_radius(Matrix::identity(l.rows()) + step * l);
}

Matrix assemble_effective(const LinearSde& sde, const SlowFastPartition& partition, const Matrix& r, double dt,
                          double Dt, EffectiveForm form) {
    const std::size_t ds = partition.d_s, df = partition.d_f;
    const Matrix& a = sde.drift();
    const Matrix ass = a.block(0, 0, ds, ds), asf = a.block(0, ds, ds, df);
    const Matrix afs = a.block(ds, 0, df, ds), aff = a.block(ds, ds, df, df);
    const double extra = Dt - dt;

    Matrix out(ds + df, ds + df);
    out.set_block(0, 0, Dt * ass);
    out.set_block(ds, 0, dt * afs + extra * (r * ass));
    if (form == EffectiveForm::paper) {
        out.set_block(0, ds, extra * asf);
        out.set_block(ds, ds, dt * aff);
    } else {
        out.set_block(0, ds, Dt * asf);
        out.set_block(ds, ds, dt * aff + extra * (r * asf));
    }
    return out;
}

}  // namespace

StabilityVerdict theorem_stability_check(const LinearSde& sde, const SlowFastPartition& partition, double dt,
                                         double Dt) {
    partition.check(sde.dim());
    if (!(dt > 0.0) || !(Dt > 0.0)) throw std::invalid_argument("theorem_stability_check: steps must be positive");
    const double scale = std::max(1.0, max_abs(sde.drift()));
    if (!is_block_diagonal(sde.drift(), partition, 1e-12 * scale)) {
        throw std::invalid_argument("theorem_stability_check: drift is not block-diagonal");
    }
    const std::size_t ds = partition.d_s, df = partition.d_f;
    StabilityVerdict v;
    v.slow_radius = radius_of_shifted(sde.drift().block(0, 0, ds, ds), Dt);
    v.fast_radius = df ? radius_of_shifted(sde.drift().block(ds, ds, df, df), dt) : 0.0;
    v.stable = v.slow_radius < 1.0 && v.fast_radius < 1.0;
    return v;
}

VarianceOperator variance_extrap_operator(const Matrix& slow_drift, double dt) {
    if (!slow_drift.is_square()) throw std::invalid_argument("variance_extrap_operator: drift must be square");
    if (dt < 0.0) throw std::invalid_argument("variance_extrap_operator: dt must be nonnegative");
    VarianceOperator op;
    op.matrix = kron_sum_matrix(slow_drift, slow_drift) + dt * kron(slow_drift, slow_drift);
    op.spectrum = eigenvalues(op.matrix);

    for (const Complex& k : op.spectrum) {
        if (!(k.real() < 0.0)) {
            op.threshold = 0.0;
            return op;
        }
    }
    double lo = 0.0, hi = 1.0;
    while (radius_of_shifted(op.matrix, hi) < 1.0) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e12) {
            op.threshold = std::numeric_limits<double>::infinity();
            return op;
        }
    }
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (radius_of_shifted(op.matrix, mid) < 1.0) lo = mid; else hi = mid;
    }
    op.threshold = lo;
    return op;
}

Matrix asymptotic_slow_variance(const Matrix& slow_drift, const Matrix& slow_diffusion, double dt) {
    if (slow_diffusion.rows() != slow_drift.rows() || slow_diffusion.cols() != slow_drift.cols()) {
        throw std::invalid_argument("asymptotic_slow_variance: dimension mismatch");
    }
    const VarianceOperator op = variance_extrap_operator(slow_drift, dt);
    if (!(op.threshold > 0.0)) {
        throw std::domain_error("asymptotic_slow_variance: no macro step stabilizes the variance recursion");
    }
    const Vector v = solve(op.matrix, scale(-1.0, vec(slow_diffusion)));
    return symmetrize(unvec(v, slow_drift.rows(), slow_drift.cols()));
}

Matrix invariant_regression(const LinearSde& sde, const SlowFastPartition& partition, double dt) {
    partition.check(sde.dim());
    if (partition.d_f == 0) throw std::invalid_argument("invariant_regression: no fast variables");
    const std::size_t ds = partition.d_s, df = partition.d_f;
    const Matrix v = invariant_variance_discrete(sde, dt);
    // R = C^T V_s^{-1}, so R^T = V_s^{-1} C
    return solve(v.block(0, 0, ds, ds), v.block(0, ds, ds, df)).transpose();
}

Matrix effective_slowfast_matrix(const LinearSde& sde, const SlowFastPartition& partition, double dt, double Dt,
                                 EffectiveForm form) {
    return assemble_effective(sde, partition, invariant_regression(sde, partition, dt), dt, Dt, form);
}

std::optional<double> effective_slowfast_threshold(const LinearSde& sde, const SlowFastPartition& partition,
                                                   double dt, EffectiveForm form) {
    if (!(dt > 0.0)) throw std::invalid_argument("effective_slowfast_threshold: dt must be positive");
    constexpr double upper = 4.0;
    constexpr double scan = 0.01;
    const Matrix r = invariant_regression(sde, partition, dt);
    auto unstable = [&](double Dt) {
        return radius_of_shifted(assemble_effective(sde, partition, r, dt, Dt, form), 1.0) >= 1.0;
    };
    if (unstable(dt)) return dt;
    double lo = dt;
    double hi = dt;
    bool crossed = false;
    while (hi < upper) {
        hi = std::min(upper, lo + scan);
        if (unstable(hi)) {
            crossed = true;
            break;
        }
        lo = hi;
    }
    if (!crossed) return std::nullopt;
    while (hi - lo > 1e-7) {
        const double mid = 0.5 * (lo + hi);
        if (unstable(mid)) hi = mid; else lo = mid;
    }
    return 0.5 * (lo + hi);
}

double bauer_fike_radius(const Matrix& slow_drift, double dt) {
    if (dt < 0.0) throw std::invalid_argument("bauer_fike_radius: dt must be nonnegative");
    const EigenDecomposition ed = eigen_decompose(slow_drift);
    const ComplexMatrix s = kron(ed.vectors, ed.vectors);
    double rho = 0.0;
    for (const Complex& k : ed.values) rho = std::max(rho, std::abs(k));
    return dt * condition_number(s) * rho * rho;
}

Region stability_region_classify(Complex z, RegionMode mode, double dt_margin) {
    if (dt_margin < 0.0) throw std::invalid_argument("stability_region_classify: margin must be nonnegative");
    if (mode == RegionMode::mean) return std::abs(1.0 + z) < 1.0 ? Region::inside : Region::outside;
    const double dist = std::abs(z + 0.5);
    if (dist < 0.5 - dt_margin) return Region::inside;
    if (dist < 0.5 + dt_margin) return Region::ring;
    return Region::outside;
}

const char* to_string(Region r) {
    switch (r) {
        case Region::inside: return "inside";
        case Region::ring: return "ring";
        case Region::outside: return "outside";
    }
    return "outside";
}

}  // namespace mima
