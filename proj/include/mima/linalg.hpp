#pragma once

#include <complex>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mima {

using Vector = std::vector<double>;
using Complex = std::complex<double>;

/// Eigenvalues of a square real matrix, listed with algebraic multiplicity.
using Spectrum = std::vector<Complex>;

/// Raised when a linear system has no unique solution at working precision.
class SingularMatrixError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an iterative eigenvalue method exhausts its budget.
class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Small dense real matrix, row-major. Entries are finite by construction.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix diagonal(std::span<const double> diag);
    static Matrix column(std::span<const double> values);

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] bool is_square() const noexcept { return rows_ == cols_; }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] std::span<double> data() noexcept { return data_; }

    [[nodiscard]] Matrix transpose() const;
    [[nodiscard]] Matrix block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const;
    void set_block(std::size_t r0, std::size_t c0, const Matrix& b);
    [[nodiscard]] Vector diag() const;

    Matrix& operator+=(const Matrix& o);
    Matrix& operator-=(const Matrix& o);
    Matrix& operator*=(double s);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);
Matrix operator*(const Matrix& a, const Matrix& b);
Vector operator*(const Matrix& a, std::span<const double> x);

// Vector helpers.
Vector add(std::span<const double> a, std::span<const double> b);
Vector sub(std::span<const double> a, std::span<const double> b);
Vector scale(double s, std::span<const double> a);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);

/// Symmetric to `rel_tol` relative to the largest entry.
bool is_symmetric(const Matrix& m, double rel_tol = 1e-9);
Matrix symmetrize(const Matrix& m);

/// LU with partial pivoting. Throws SingularMatrixError.
Matrix solve(const Matrix& a, const Matrix& b);
Vector solve(const Matrix& a, std::span<const double> b);
Matrix inverse(const Matrix& a);

/// Lower Cholesky factor; throws std::domain_error if not positive definite.
Matrix cholesky(const Matrix& spd);
bool is_positive_definite(const Matrix& sym);
double log_det_spd(const Matrix& spd);

/// All eigenvalues of a square matrix, ordered by descending real part then
/// descending imaginary part. Closed form for d <= 2, otherwise balancing,
/// Hessenberg reduction and Francis double-shift QR.
Spectrum eigenvalues(const Matrix& m);

/// QR path only, bypassing the closed-form fast path (exposed for testing).
Spectrum eigenvalues_qr(const Matrix& m);

double spectral_radius(const Matrix& m);

struct SymmetricEigen {
    Vector values;   // ascending
    Matrix vectors;  // columns are orthonormal eigenvectors
};

/// Cyclic Jacobi rotations. Input must be symmetric.
SymmetricEigen symmetric_eigen(const Matrix& sym);

/// One-sided Jacobi; descending order.
Vector singular_values(const Matrix& m);

/// Minimal complex dense matrix used for eigenvector bases.
struct ComplexMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Complex> data;

    ComplexMatrix() = default;
    ComplexMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c) {}
    Complex& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    Complex operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b);

/// Spectral-norm condition number of a complex matrix.
double condition_number(const ComplexMatrix& m);

struct EigenDecomposition {
    Spectrum values;
    ComplexMatrix vectors;  // column k pairs with values[k]; unit 2-norm columns
};

/// Eigenvalues with a complete eigenvector basis. Throws std::domain_error when
/// the matrix is not diagonalizable (defective eigenvalue cluster).
EigenDecomposition eigen_decompose(const Matrix& m);

// Kronecker operators acting on d x d matrices:
//   (M (x) M2) . X = M2 X M^T,    (M (+) M2) . X = X M^T + M2 X.

enum class KronKind { product, sum };

Matrix kron_product_apply(const Matrix& m, const Matrix& m2, const Matrix& x);
Matrix kron_sum_apply(const Matrix& m, const Matrix& m2, const Matrix& x);
Spectrum kron_spectrum(const Matrix& m, const Matrix& m2, KronKind kind);

/// Standard Kronecker matrix; with column-stacking vec this represents the
/// product operator above: vec(M2 X M^T) = kron(M, M2) vec(X).
Matrix kron(const Matrix& a, const Matrix& b);
Matrix kron_sum_matrix(const Matrix& m, const Matrix& m2);

Vector vec(const Matrix& x);
Matrix unvec(std::span<const double> v, std::size_t rows, std::size_t cols);

/// Solves A V + V A^T + B = 0 for Hurwitz A and SPD B.
Matrix solve_lyapunov(const Matrix& a, const Matrix& b);

/// Symmetric positive definite square root.
Matrix spd_sqrt(const Matrix& b);

bool is_hurwitz(const Matrix& a);

std::string to_string(const Matrix& m);

}  // namespace mima
