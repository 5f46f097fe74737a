#pragma once

#include "mima/linalg.hpp"

namespace mima {

/// Linear test equation dX = A X dt + sqrt(B) dW.
/// Shapes and symmetry of B are checked on construction; positive
/// definiteness and stability are reported by validate().
class LinearSde {
public:
    LinearSde() = default;
    LinearSde(Matrix drift, Matrix diffusion);

    [[nodiscard]] const Matrix& drift() const noexcept { return drift_; }
    [[nodiscard]] const Matrix& diffusion() const noexcept { return diffusion_; }
    [[nodiscard]] std::size_t dim() const noexcept { return drift_.rows(); }

private:
    Matrix drift_;
    Matrix diffusion_;
};

/// Slow coordinates are the leading d_s entries of the state.
struct SlowFastPartition {
    std::size_t d_s = 1;
    std::size_t d_f = 0;

    [[nodiscard]] std::size_t dim() const noexcept { return d_s + d_f; }
    /// Throws std::invalid_argument if d_s == 0 or d_s + d_f != d.
    void check(std::size_t d) const;
};

struct ValidationReport {
    bool diffusion_spd = false;
    bool drift_hurwitz = false;
    Spectrum drift_offenders;           // eigenvalues with nonnegative real part
    Vector diffusion_offenders;         // nonpositive eigenvalues of B
};

ValidationReport validate(const LinearSde& sde);

/// Drift [[a11, a12], [0, a22/eps]], diffusion diag(1, 1/eps); one slow, one fast variable.
LinearSde make_parametric_slowfast(double a11, double a12, double a22, double eps);

/// Drift diag(-1, -10) with the correlated diffusion obtained by diagonalizing
/// make_parametric_slowfast(-1, 1, -1, 0.1).
LinearSde make_diag_benchmark();

/// make_parametric_slowfast(-1, 1, -1, 0.1).
LinearSde make_coupled_benchmark();

/// Drift eigenvalues sorted by ascending modulus, ties by descending real part.
Spectrum sorted_drift_spectrum(const Matrix& drift);

/// min |fast eigenvalue| / max |slow eigenvalue|. Requires d_f >= 1 and Hurwitz drift.
double spectral_gap(const LinearSde& sde, const SlowFastPartition& partition);

struct BlockDiagResult {
    Matrix transform;          // C, with C A C^{-1} = D
    LinearSde transformed;     // drift D, diffusion (C sqrt(B))^T (C sqrt(B))
};

/// Diagonalizes a drift with distinct real eigenvalues. Columns of C^{-1} are
/// eigenvectors scaled to a unit leading entry, ordered slow first.
/// Throws std::domain_error for repeated or complex eigenvalues.
BlockDiagResult drift_block_diagonalize(const LinearSde& sde, const SlowFastPartition& partition);

/// Off-diagonal drift blocks vanish to `tol` (absolute).
bool is_block_diagonal(const Matrix& drift, const SlowFastPartition& partition, double tol = 1e-12);

}  // namespace mima
