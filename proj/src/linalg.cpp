#include "mima/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace mima {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void require_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) throw std::invalid_argument("matrix entries must be finite");
    }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(what) + ": dimension mismatch");
    }
}

void require_square(const Matrix& m, const char* what) {
    if (!m.is_square()) throw std::invalid_argument(std::string(what) + ": matrix must be square");
}

double sign_of(double a, double b) { return b >= 0.0 ? std::fabs(a) : -std::fabs(a); }

void sort_spectrum(Spectrum& s) {
    std::sort(s.begin(), s.end(), [](Complex a, Complex b) {
        if (a.real() != b.real()) return a.real() > b.real();
        return a.imag() > b.imag();
    });
}

Spectrum eigenvalues_2x2(const Matrix& m) {
    if (m.rows() == 1) return {Complex(m(0, 0), 0.0)};
    const double a = m(0, 0), b = m(0, 1), c = m(1, 0), d = m(1, 1);
    const double half_tr = 0.5 * (a + d);
    const double half_diff = 0.5 * (a - d);
    const double disc = half_diff * half_diff + b * c;
    Spectrum out;
    if (disc >= 0.0) {
        const double root = std::sqrt(disc);
        // larger-magnitude root first, the other from the determinant
        const double l1 = half_tr + sign_of(root, half_tr);
        const double det = a * d - b * c;
        const double l2 = l1 != 0.0 ? det / l1 : half_tr - sign_of(root, half_tr);
        out = {Complex(l1, 0.0), Complex(l2, 0.0)};
    } else {
        const double im = std::sqrt(-disc);
        out = {Complex(half_tr, im), Complex(half_tr, -im)};
    }
    sort_spectrum(out);
    return out;
}

// Row/column scaling by powers of two to equalize norms before QR.
void balance(std::vector<double>& a, std::size_t n) {
    constexpr double radix = 2.0;
    const double sqrdx = radix * radix;
    bool done = false;
    while (!done) {
        done = true;
        for (std::size_t i = 0; i < n; ++i) {
            double r = 0.0, c = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i) {
                    c += std::fabs(a[j * n + i]);
                    r += std::fabs(a[i * n + j]);
                }
            }
            if (c != 0.0 && r != 0.0) {
                double g = r / radix;
                double f = 1.0;
                const double s = c + r;
                while (c < g) {
                    f *= radix;
                    c *= sqrdx;
                }
                g = r * radix;
                while (c > g) {
                    f /= radix;
                    c /= sqrdx;
                }
                if ((c + r) / f < 0.95 * s) {
                    done = false;
                    g = 1.0 / f;
                    for (std::size_t j = 0; j < n; ++j) a[i * n + j] *= g;
                    for (std::size_t j = 0; j < n; ++j) a[j * n + i] *= f;
                }
            }
        }
    }
}

// Reduction to upper Hessenberg form by stabilized elementary similarity transforms.
void to_hessenberg(std::vector<double>& a, std::size_t n) {
    auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
    for (std::size_t m = 1; m + 1 < n; ++m) {
        double x = 0.0;
        std::size_t i = m;
        for (std::size_t j = m; j < n; ++j) {
            if (std::fabs(at(j, m - 1)) > std::fabs(x)) {
                x = at(j, m - 1);
                i = j;
            }
        }
        if (i != m) {
            for (std::size_t j = m - 1; j < n; ++j) std::swap(at(i, j), at(m, j));
            for (std::size_t j = 0; j < n; ++j) std::swap(at(j, i), at(j, m));
        }
        if (x != 0.0) {
            for (i = m + 1; i < n; ++i) {
                double y = at(i, m - 1);
                if (y != 0.0) {
                    y /= x;
                    at(i, m - 1) = y;
                    for (std::size_t j = m; j < n; ++j) at(i, j) -= y * at(m, j);
                    for (std::size_t j = 0; j < n; ++j) at(j, m) += y * at(j, i);
                }
            }
        }
    }
    for (std::size_t i = 2; i < n; ++i) {
        for (std::size_t j = 0; j + 1 < i; ++j) at(i, j) = 0.0;
    }
}

// Francis double-shift QR on an upper Hessenberg matrix.
Spectrum hessenberg_qr(std::vector<double>& a, int n) {
    constexpr int kMaxIterationsPerRoot = 200;
    auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
    Spectrum roots(static_cast<std::size_t>(n));

    double anorm = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = std::max(i - 1, 0); j < n; ++j) anorm += std::fabs(at(i, j));
    }

    int nn = n - 1;
    double t = 0.0;
    double p = 0.0, q = 0.0, r = 0.0, s = 0.0, w = 0.0, x = 0.0, y = 0.0, z = 0.0;
    while (nn >= 0) {
        int its = 0;
        int l = 0;
        do {
            for (l = nn; l >= 1; --l) {
                s = std::fabs(at(l - 1, l - 1)) + std::fabs(at(l, l));
                if (s == 0.0) s = anorm;
                if (std::fabs(at(l, l - 1)) + s == s) {
                    at(l, l - 1) = 0.0;
                    break;
                }
            }
            x = at(nn, nn);
            if (l == nn) {
                roots[nn] = Complex(x + t, 0.0);
                --nn;
            } else {
                y = at(nn - 1, nn - 1);
                w = at(nn, nn - 1) * at(nn - 1, nn);
                if (l == nn - 1) {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = std::sqrt(std::fabs(q));
                    x += t;
                    if (q >= 0.0) {
                        z = p + sign_of(z, p);
                        roots[nn - 1] = roots[nn] = Complex(x + z, 0.0);
                        if (z != 0.0) roots[nn] = Complex(x - w / z, 0.0);
                    } else {
                        roots[nn - 1] = Complex(x + p, z);
                        roots[nn] = Complex(x + p, -z);
                    }
                    nn -= 2;
                } else {
                    if (its == kMaxIterationsPerRoot) {
                        throw ConvergenceError("eigenvalues: QR iteration did not converge");
                    }
                    if (its > 0 && its % 10 == 0) {
                        // exceptional shift
                        t += x;
                        for (int i = 0; i <= nn; ++i) at(i, i) -= x;
                        s = std::fabs(at(nn, nn - 1)) + std::fabs(at(nn - 1, nn - 2));
                        y = x = 0.75 * s;
                        w = -0.4375 * s * s;
                    }
                    ++its;
                    int m = nn - 2;
                    for (; m >= l; --m) {
                        z = at(m, m);
                        r = x - z;
                        s = y - z;
                        p = (r * s - w) / at(m + 1, m) + at(m, m + 1);
                        q = at(m + 1, m + 1) - z - r - s;
                        r = at(m + 2, m + 1);
                        s = std::fabs(p) + std::fabs(q) + std::fabs(r);
                        p /= s;
                        q /= s;
                        r /= s;
                        if (m == l) break;
                        const double u = std::fabs(at(m, m - 1)) * (std::fabs(q) + std::fabs(r));
                        const double v = std::fabs(p) *
                                         (std::fabs(at(m - 1, m - 1)) + std::fabs(z) + std::fabs(at(m + 1, m + 1)));
                        if (u + v == v) break;
                    }
                    for (int i = m + 2; i <= nn; ++i) {
                        at(i, i - 2) = 0.0;
                        if (i != m + 2) at(i, i - 3) = 0.0;
                    }
                    for (int k = m; k <= nn - 1; ++k) {
                        if (k != m) {
                            p = at(k, k - 1);
                            q = at(k + 1, k - 1);
                            r = 0.0;
                            if (k != nn - 1) r = at(k + 2, k - 1);
                            if ((x = std::fabs(p) + std::fabs(q) + std::fabs(r)) != 0.0) {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        if ((s = sign_of(std::sqrt(p * p + q * q + r * r), p)) != 0.0) {
                            if (k == m) {
                                if (l != m) at(k, k - 1) = -at(k, k - 1);
                            } else {
                                at(k, k - 1) = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for (int j = k; j <= nn; ++j) {
                                p = at(k, j) + q * at(k + 1, j);
                                if (k != nn - 1) {
                                    p += r * at(k + 2, j);
                                    at(k + 2, j) -= p * z;
                                }
                                at(k + 1, j) -= p * y;
                                at(k, j) -= p * x;
                            }
                            const int mmin = nn < k + 3 ? nn : k + 3;
                            for (int i = l; i <= mmin; ++i) {
                                p = x * at(i, k) + y * at(i, k + 1);
                                if (k != nn - 1) {
                                    p += z * at(i, k + 2);
                                    at(i, k + 2) -= p * r;
                                }
                                at(i, k + 1) -= p * q;
                                at(i, k) -= p;
                            }
                        }
                    }
                }
            }
        } while (l < nn - 1);
    }
    return roots;
}

struct LuFactors {
    std::vector<double> lu;
    std::vector<std::size_t> perm;
    std::size_t n = 0;
};

LuFactors lu_factor(const Matrix& a) {
    require_square(a, "solve");
    const std::size_t n = a.rows();
    LuFactors f{std::vector<double>(a.data().begin(), a.data().end()), std::vector<std::size_t>(n), n};
    std::iota(f.perm.begin(), f.perm.end(), std::size_t{0});
    const double scale = std::max(max_abs(a), std::numeric_limits<double>::min());
    auto at = [&](std::size_t i, std::size_t j) -> double& { return f.lu[i * n + j]; };
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i) {
            if (std::fabs(at(i, k)) > std::fabs(at(piv, k))) piv = i;
        }
        if (std::fabs(at(piv, k)) <= static_cast<double>(n) * kEps * scale) {
            throw SingularMatrixError("solve: matrix is singular to working precision");
        }
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(at(k, j), at(piv, j));
            std::swap(f.perm[k], f.perm[piv]);
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double l = at(i, k) / at(k, k);
            at(i, k) = l;
            for (std::size_t j = k + 1; j < n; ++j) at(i, j) -= l * at(k, j);
        }
    }
    return f;
}

Vector lu_solve(const LuFactors& f, std::span<const double> b) {
    const std::size_t n = f.n;
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = b[f.perm[i]];
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) x[i] -= f.lu[i * n + j] * x[j];
    }
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t j = i + 1; j < n; ++j) x[i] -= f.lu[i * n + j] * x[j];
        x[i] /= f.lu[i * n + i];
    }
    return x;
}

// Basis of the null space of a complex matrix with prescribed nullity,
// by Gaussian elimination with complete pivoting.
std::vector<std::vector<Complex>> null_space(ComplexMatrix m, std::size_t nullity) {
    const std::size_t n = m.rows;
    const std::size_t rank = n - nullity;
    std::vector<std::size_t> col_perm(n);
    std::iota(col_perm.begin(), col_perm.end(), std::size_t{0});
    for (std::size_t k = 0; k < rank; ++k) {
        std::size_t pr = k, pc = k;
        double best = -1.0;
        for (std::size_t i = k; i < n; ++i) {
            for (std::size_t j = k; j < n; ++j) {
                const double v = std::abs(m(i, j));
                if (v > best) {
                    best = v;
                    pr = i;
                    pc = j;
                }
            }
        }
        if (best == 0.0) break;
        for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(pr, j));
        for (std::size_t i = 0; i < n; ++i) std::swap(m(i, k), m(i, pc));
        std::swap(col_perm[k], col_perm[pc]);
        for (std::size_t i = k + 1; i < n; ++i) {
            const Complex l = m(i, k) / m(k, k);
            for (std::size_t j = k; j < n; ++j) m(i, j) -= l * m(k, j);
        }
    }
    std::vector<std::vector<Complex>> basis;
    for (std::size_t f = rank; f < n; ++f) {
        std::vector<Complex> y(n, Complex(0.0, 0.0));
        y[f] = 1.0;
        for (std::size_t i = rank; i-- > 0;) {
            Complex acc = 0.0;
            for (std::size_t j = i + 1; j < n; ++j) acc += m(i, j) * y[j];
            y[i] = m(i, i) != Complex(0.0, 0.0) ? -acc / m(i, i) : Complex(0.0, 0.0);
        }
        std::vector<Complex> v(n);
        for (std::size_t i = 0; i < n; ++i) v[col_perm[i]] = y[i];
        basis.push_back(std::move(v));
    }
    return basis;
}

}  // namespace

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major)
    : rows_(rows), cols_(cols), data_(std::move(row_major)) {
    if (data_.size() != rows_ * cols_) {
        throw std::invalid_argument("Matrix: entry count does not match rows*cols");
    }
    require_finite(data_);
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
    require_finite(data_);
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
    require_finite(diag);
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
}

Matrix Matrix::column(std::span<const double> values) {
    return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    }
    return t;
}

Matrix Matrix::block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
    if (r0 + nr > rows_ || c0 + nc > cols_) throw std::out_of_range("Matrix::block out of range");
    Matrix b(nr, nc);
    for (std::size_t i = 0; i < nr; ++i) {
        for (std::size_t j = 0; j < nc; ++j) b(i, j) = (*this)(r0 + i, c0 + j);
    }
    return b;
}

void Matrix::set_block(std::size_t r0, std::size_t c0, const Matrix& b) {
    if (r0 + b.rows() > rows_ || c0 + b.cols() > cols_) throw std::out_of_range("Matrix::set_block out of range");
    for (std::size_t i = 0; i < b.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) (*this)(r0 + i, c0 + j) = b(i, j);
    }
}

Vector Matrix::diag() const {
    Vector d(std::min(rows_, cols_));
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = (*this)(i, i);
    return d;
}

Matrix& Matrix::operator+=(const Matrix& o) {
    require_same_shape(*this, o, "operator+");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
    require_same_shape(*this, o, "operator-");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("operator*: dimension mismatch");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

Vector operator*(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) throw std::invalid_argument("operator*: dimension mismatch");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * x[j];
        y[i] = acc;
    }
    return y;
}

Vector add(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("add: size mismatch");
    Vector c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
    return c;
}

Vector sub(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("sub: size mismatch");
    Vector c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] - b[i];
    return c;
}

Vector scale(double s, std::span<const double> a) {
    Vector c(a.begin(), a.end());
    for (double& x : c) x *= s;
    return c;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double frobenius_norm(const Matrix& m) { return norm2(m.data()); }

double max_abs(const Matrix& m) {
    double r = 0.0;
    for (double x : m.data()) r = std::max(r, std::fabs(x));
    return r;
}

bool is_symmetric(const Matrix& m, double rel_tol) {
    if (!m.is_square()) return false;
    const double tol = rel_tol * std::max(1.0, max_abs(m));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = i + 1; j < m.cols(); ++j) {
            if (std::fabs(m(i, j) - m(j, i)) > tol) return false;
        }
    }
    return true;
}

Matrix symmetrize(const Matrix& m) {
    require_square(m, "symmetrize");
    Matrix s = m;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = i + 1; j < m.cols(); ++j) {
            const double v = 0.5 * (m(i, j) + m(j, i));
            s(i, j) = v;
            s(j, i) = v;
        }
    }
    return s;
}

Matrix solve(const Matrix& a, const Matrix& b) {
    if (b.rows() != a.rows()) throw std::invalid_argument("solve: dimension mismatch");
    const LuFactors f = lu_factor(a);
    Matrix x(b.rows(), b.cols());
    Vector col(b.rows());
    for (std::size_t j = 0; j < b.cols(); ++j) {
        for (std::size_t i = 0; i < b.rows(); ++i) col[i] = b(i, j);
        const Vector sol = lu_solve(f, col);
        for (std::size_t i = 0; i < b.rows(); ++i) x(i, j) = sol[i];
    }
    return x;
}

Vector solve(const Matrix& a, std::span<const double> b) {
    if (b.size() != a.rows()) throw std::invalid_argument("solve: dimension mismatch");
    return lu_solve(lu_factor(a), b);
}

Matrix inverse(const Matrix& a) {
    require_square(a, "inverse");
    return solve(a, Matrix::identity(a.rows()));
}

Matrix cholesky(const Matrix& spd) {
    require_square(spd, "cholesky");
    const std::size_t n = spd.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = spd(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0)) throw std::domain_error("cholesky: matrix is not positive definite");
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = spd(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

bool is_positive_definite(const Matrix& sym) {
    if (!is_symmetric(sym)) return false;
    return symmetric_eigen(sym).values.front() > 0.0;
}

double log_det_spd(const Matrix& spd) {
    const Matrix l = cholesky(spd);
    double acc = 0.0;
    for (std::size_t i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
    return 2.0 * acc;
}

// ---------------------------------------------------------------------------
// Eigenvalues

Spectrum eigenvalues_qr(const Matrix& m) {
    require_square(m, "eigenvalues");
    const std::size_t n = m.rows();
    if (n == 0) return {};
    std::vector<double> a(m.data().begin(), m.data().end());
    balance(a, n);
    to_hessenberg(a, n);
    Spectrum s = hessenberg_qr(a, static_cast<int>(n));
    sort_spectrum(s);
    return s;
}

Spectrum eigenvalues(const Matrix& m) {
    require_square(m, "eigenvalues");
    if (m.rows() <= 2 && m.rows() > 0) return eigenvalues_2x2(m);
    return eigenvalues_qr(m);
}

double spectral_radius(const Matrix& m) {
    double r = 0.0;
    for (const Complex& k : eigenvalues(m)) r = std::max(r, std::abs(k));
    return r;
}

bool is_hurwitz(const Matrix& a) {
    for (const Complex& k : eigenvalues(a)) {
        if (!(k.real() < 0.0)) return false;
    }
    return true;
}

SymmetricEigen symmetric_eigen(const Matrix& sym) {
    require_square(sym, "symmetric_eigen");
    if (!is_symmetric(sym)) throw std::invalid_argument("symmetric_eigen: matrix is not symmetric");
    const std::size_t n = sym.rows();
    Matrix a = symmetrize(sym);
    Matrix v = Matrix::identity(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        }
        if (off == 0.0) break;
        double diag_scale = 0.0;
        for (std::size_t i = 0; i < n; ++i) diag_scale += a(i, i) * a(i, i);
        if (off <= kEps * kEps * 1e-4 * diag_scale) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = sign_of(1.0, theta) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });
    SymmetricEigen out{Vector(n), Matrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
    }
    return out;
}

Vector singular_values(const Matrix& m) {
    // one-sided Jacobi on the columns of a tall copy
    Matrix u = m.rows() >= m.cols() ? m : m.transpose();
    const std::size_t rows = u.rows(), cols = u.cols();
    for (int sweep = 0; sweep < 100; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p < cols; ++p) {
            for (std::size_t q = p + 1; q < cols; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < rows; ++i) {
                    alpha += u(i, p) * u(i, p);
                    beta += u(i, q) * u(i, q);
                    gamma += u(i, p) * u(i, q);
                }
                if (gamma == 0.0 || std::fabs(gamma) <= kEps * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = sign_of(1.0, zeta) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double up = u(i, p), uq = u(i, q);
                    u(i, p) = c * up - s * uq;
                    u(i, q) = s * up + c * uq;
                }
            }
        }
        if (!rotated) break;
    }
    Vector sv(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < rows; ++i) acc += u(i, j) * u(i, j);
        sv[j] = std::sqrt(acc);
    }
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b) {
    ComplexMatrix k(a.rows * b.rows, a.cols * b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j)
            for (std::size_t p = 0; p < b.rows; ++p)
                for (std::size_t q = 0; q < b.cols; ++q) k(i * b.rows + p, j * b.cols + q) = a(i, j) * b(p, q);
    return k;
}

double condition_number(const ComplexMatrix& m) {
    // real embedding [[Re, -Im], [Im, Re]] doubles each singular value
    Matrix e(2 * m.rows, 2 * m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            const Complex z = m(i, j);
            e(i, j) = z.real();
            e(i, j + m.cols) = -z.imag();
            e(i + m.rows, j) = z.imag();
            e(i + m.rows, j + m.cols) = z.real();
        }
    }
    const Vector sv = singular_values(e);
    if (sv.back() == 0.0) return std::numeric_limits<double>::infinity();
    return sv.front() / sv.back();
}

EigenDecomposition eigen_decompose(const Matrix& m) {
    require_square(m, "eigen_decompose");
    const std::size_t n = m.rows();
    const Spectrum values = eigenvalues(m);
    const double scale = std::max(1.0, max_abs(m));
    const double cluster_tol = 1e-6 * scale;

    EigenDecomposition out{Spectrum{}, ComplexMatrix(n, n)};
    std::vector<bool> used(n, false);
    std::size_t col = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (used[k]) continue;
        std::vector<std::size_t> cluster;
        for (std::size_t j = k; j < n; ++j) {
            if (!used[j] && std::abs(values[j] - values[k]) <= cluster_tol) cluster.push_back(j);
        }
        Complex centre = 0.0;
        for (std::size_t j : cluster) {
            used[j] = true;
            centre += values[j];
        }
        centre /= static_cast<double>(cluster.size());
        if (cluster.size() == 1) centre = values[k];

        ComplexMatrix shifted(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) shifted(i, j) = Complex(m(i, j), 0.0) - (i == j ? centre : 0.0);
        auto basis = null_space(shifted, cluster.size());
        for (std::size_t b = 0; b < basis.size(); ++b) {
            auto& v = basis[b];
            double nrm = 0.0;
            for (const Complex& z : v) nrm += std::norm(z);
            nrm = std::sqrt(nrm);
            if (nrm == 0.0) throw std::domain_error("eigen_decompose: matrix is not diagonalizable");
            for (Complex& z : v) z /= nrm;
            // residual check rejects spurious vectors from defective clusters
            double res = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                Complex acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += m(i, j) * v[j];
                res = std::max(res, std::abs(acc - values[cluster[b]] * v[i]));
            }
            if (res > 1e-6 * scale) throw std::domain_error("eigen_decompose: matrix is not diagonalizable");
            for (std::size_t i = 0; i < n; ++i) out.vectors(i, col) = v[i];
            out.values.push_back(values[cluster[b]]);
            ++col;
        }
    }
    if (condition_number(out.vectors) > 1e12) {
        throw std::domain_error("eigen_decompose: eigenvector basis is numerically singular");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Kronecker operators

namespace {
void require_kron_shapes(const Matrix& m, const Matrix& m2, const Matrix* x, const char* what) {
    require_square(m, what);
    require_square(m2, what);
    if (m.rows() != m2.rows() || (x && (x->rows() != m.rows() || x->cols() != m.rows()))) {
        throw std::invalid_argument(std::string(what) + ": dimension mismatch");
    }
}
}  // namespace

Matrix kron_product_apply(const Matrix& m, const Matrix& m2, const Matrix& x) {
    require_kron_shapes(m, m2, &x, "kron_product_apply");
    return m2 * x * m.transpose();
}

Matrix kron_sum_apply(const Matrix& m, const Matrix& m2, const Matrix& x) {
    require_kron_shapes(m, m2, &x, "kron_sum_apply");
    return x * m.transpose() + m2 * x;
}

Spectrum kron_spectrum(const Matrix& m, const Matrix& m2, KronKind kind) {
    require_kron_shapes(m, m2, nullptr, "kron_spectrum");
    const Spectrum a = eigenvalues(m);
    const Spectrum b = eigenvalues(m2);
    Spectrum out;
    out.reserve(a.size() * b.size());
    for (const Complex& ka : a) {
        for (const Complex& kb : b) out.push_back(kind == KronKind::sum ? ka + kb : ka * kb);
    }
    return out;
}

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            for (std::size_t p = 0; p < b.rows(); ++p)
                for (std::size_t q = 0; q < b.cols(); ++q) k(i * b.rows() + p, j * b.cols() + q) = a(i, j) * b(p, q);
    return k;
}

Matrix kron_sum_matrix(const Matrix& m, const Matrix& m2) {
    require_kron_shapes(m, m2, nullptr, "kron_sum_matrix");
    const Matrix id = Matrix::identity(m.rows());
    return kron(m, id) + kron(id, m2);
}

Vector vec(const Matrix& x) {
    Vector v(x.rows() * x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j)
        for (std::size_t i = 0; i < x.rows(); ++i) v[j * x.rows() + i] = x(i, j);
    return v;
}

Matrix unvec(std::span<const double> v, std::size_t rows, std::size_t cols) {
    if (v.size() != rows * cols) throw std::invalid_argument("unvec: size mismatch");
    Matrix x(rows, cols);
    for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t i = 0; i < rows; ++i) x(i, j) = v[j * rows + i];
    return x;
}

// ---------------------------------------------------------------------------
// Lyapunov and square root

Matrix solve_lyapunov(const Matrix& a, const Matrix& b) {
    require_square(a, "solve_lyapunov");
    require_same_shape(a, b, "solve_lyapunov");
    if (!is_hurwitz(a)) throw std::domain_error("solve_lyapunov: drift is not Hurwitz");
    if (!is_positive_definite(b)) throw std::domain_error("solve_lyapunov: B is not symmetric positive definite");
    const std::size_t d = a.rows();
    const Vector rhs = scale(-1.0, vec(b));
    const Vector v = solve(kron_sum_matrix(a, a), rhs);
    Matrix out = symmetrize(unvec(v, d, d));
    return out;
}

Matrix spd_sqrt(const Matrix& b) {
    if (!is_symmetric(b)) throw std::invalid_argument("spd_sqrt: matrix is not symmetric");
    const SymmetricEigen eig = symmetric_eigen(b);
    if (!(eig.values.front() > 0.0)) throw std::domain_error("spd_sqrt: matrix is not positive definite");
    const std::size_t n = b.rows();
    Matrix s(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double r = std::sqrt(eig.values[k]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) s(i, j) += r * eig.vectors(i, k) * eig.vectors(j, k);
    }
    return symmetrize(s);
}

std::string to_string(const Matrix& m) {
    std::ostringstream os;
    os.precision(17);
    os << '[';
    for (std::size_t i = 0; i < m.rows(); ++i) {
        os << (i ? ", [" : "[");
        for (std::size_t j = 0; j < m.cols(); ++j) os << (j ? ", " : "") << m(i, j);
        os << ']';
    }
    os << ']';
    return os.str();
}

}  // namespace mima
