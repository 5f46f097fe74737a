#include "mima/model.hpp"

#include <algorithm>
#include <cmath>

namespace mima {

LinearSde::LinearSde(Matrix drift, Matrix diffusion) : drift_(std::move(drift)), diffusion_(std::move(diffusion)) {
    if (!drift_.is_square() || drift_.rows() == 0) throw std::invalid_argument("LinearSde: drift must be square");
    if (diffusion_.rows() != drift_.rows() || diffusion_.cols() != drift_.cols()) {
        throw std::invalid_argument("LinearSde: diffusion must match drift dimensions");
    }
    if (!is_symmetric(diffusion_)) throw std::invalid_argument("LinearSde: diffusion must be symmetric");
}

void SlowFastPartition::check(std::size_t d) const {
    if (d_s == 0) throw std::invalid_argument("partition: at least one slow variable is required");
    if (d_s + d_f != d) throw std::invalid_argument("partition: d_s + d_f must equal the state dimension");
}

ValidationReport validate(const LinearSde& sde) {
    ValidationReport r;
    for (const Complex& k : eigenvalues(sde.drift())) {
        if (!(k.real() < 0.0)) r.drift_offenders.push_back(k);
    }
    r.drift_hurwitz = r.drift_offenders.empty();
    for (double v : symmetric_eigen(sde.diffusion()).values) {
        if (!(v > 0.0)) r.diffusion_offenders.push_back(v);
    }
    r.diffusion_spd = r.diffusion_offenders.empty();
    return r;
}

LinearSde make_parametric_slowfast(double a11, double a12, double a22, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("make_parametric_slowfast: eps must be positive");
    return LinearSde(Matrix{{a11, a12}, {0.0, a22 / eps}}, Matrix{{1.0, 0.0}, {0.0, 1.0 / eps}});
}

LinearSde make_diag_benchmark() {
    const double r = std::sqrt(10.0);
    return LinearSde(Matrix{{-1.0, 0.0}, {0.0, -10.0}}, Matrix{{1.0, r / 9.0}, {r / 9.0, 20.0 / 81.0}});
}

LinearSde make_coupled_benchmark() { return make_parametric_slowfast(-1.0, 1.0, -1.0, 0.1); }

Spectrum sorted_drift_spectrum(const Matrix& drift) {
    Spectrum s = eigenvalues(drift);
    std::stable_sort(s.begin(), s.end(), [](Complex a, Complex b) {
        const double ma = std::abs(a), mb = std::abs(b);
        if (ma != mb) return ma < mb;
        return a.real() > b.real();
    });
    return s;
}

double spectral_gap(const LinearSde& sde, const SlowFastPartition& partition) {
    partition.check(sde.dim());
    if (partition.d_f == 0) throw std::invalid_argument("spectral_gap: no fast variables");
    if (!is_hurwitz(sde.drift())) throw std::domain_error("spectral_gap: drift is not Hurwitz");
    const Spectrum s = sorted_drift_spectrum(sde.drift());
    return std::abs(s[partition.d_s]) / std::abs(s[partition.d_s - 1]);
}

BlockDiagResult drift_block_diagonalize(const LinearSde& sde, const SlowFastPartition& partition) {
    partition.check(sde.dim());
    const std::size_t d = sde.dim();
    const Matrix& a = sde.drift();
    const double scale = std::max(1.0, max_abs(a));
    const Spectrum spectrum = sorted_drift_spectrum(a);
    for (std::size_t i = 0; i < d; ++i) {
        if (std::fabs(spectrum[i].imag()) > 1e-12 * scale) {
            throw std::domain_error("drift_block_diagonalize: complex eigenvalues are not supported");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (std::abs(spectrum[i] - spectrum[j]) <= 1e-8 * scale) {
                throw std::domain_error("drift_block_diagonalize: repeated eigenvalues are not supported");
            }
        }
    }

    const EigenDecomposition ed = eigen_decompose(a);
    Matrix v(d, d);
    for (std::size_t k = 0; k < d; ++k) {
        // match the sorted eigenvalue to its decomposition column
        std::size_t col = 0;
        for (std::size_t c = 1; c < d; ++c) {
            if (std::abs(ed.values[c] - spectrum[k]) < std::abs(ed.values[col] - spectrum[k])) col = c;
        }
        double peak = 0.0;
        for (std::size_t i = 0; i < d; ++i) peak = std::max(peak, std::abs(ed.vectors(i, col)));
        std::size_t lead = 0;
        while (std::abs(ed.vectors(lead, col)) <= 1e-12 * peak) ++lead;
        const Complex pivot = ed.vectors(lead, col);
        for (std::size_t i = 0; i < d; ++i) {
            const Complex z = ed.vectors(i, col) / pivot;
            v(i, k) = i == lead ? 1.0 : z.real();
        }
    }

    Matrix c;
    try {
        c = inverse(v);
    } catch (const SingularMatrixError&) {
        throw std::domain_error("drift_block_diagonalize: eigenvector matrix is singular");
    }
    Vector diag(d);
    for (std::size_t k = 0; k < d; ++k) diag[k] = spectrum[k].real();
    const Matrix cs = c * spd_sqrt(sde.diffusion());
    const Matrix b_tilde = symmetrize(cs.transpose() * cs);
    return BlockDiagResult{c, LinearSde(Matrix::diagonal(diag), b_tilde)};
}

bool is_block_diagonal(const Matrix& drift, const SlowFastPartition& partition, double tol) {
    partition.check(drift.rows());
    for (std::size_t i = 0; i < drift.rows(); ++i) {
        for (std::size_t j = 0; j < drift.cols(); ++j) {
            const bool off = (i < partition.d_s) != (j < partition.d_s);
            if (off && std::fabs(drift(i, j)) > tol) return false;
        }
    }
    return true;
}

}  // namespace mima
