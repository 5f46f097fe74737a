#include "doctest.h"
#include "mima/model.hpp"

#include <cmath>
#include <random>

using namespace mima;

TEST_CASE("parametric slow-fast system") {
    const LinearSde sde = make_parametric_slowfast(-1.0, 1.0, -1.0, 0.1);
    CHECK(sde.drift() == Matrix{{-1.0, 1.0}, {0.0, -10.0}});
    CHECK(sde.diffusion() == Matrix{{1.0, 0.0}, {0.0, 10.0}});

    const LinearSde flat = make_parametric_slowfast(-1.0, 0.0, -1.0, 1.0);
    CHECK(flat.drift() == Matrix{{-1.0, 0.0}, {0.0, -1.0}});
    CHECK(flat.diffusion() == Matrix::identity(2));

    const LinearSde stiff = make_parametric_slowfast(-1.0, 1.0, -1.0, 0.01);
    CHECK(spectral_gap(stiff, {1, 1}) == doctest::Approx(100.0));
    CHECK(sorted_drift_spectrum(stiff.drift())[1].real() == doctest::Approx(-100.0));

    CHECK_THROWS_AS(make_parametric_slowfast(-1.0, 1.0, -1.0, 0.0), std::invalid_argument);
}

TEST_CASE("diagonal benchmark system") {
    const LinearSde sde = make_diag_benchmark();
    CHECK(sde.drift() == Matrix{{-1.0, 0.0}, {0.0, -10.0}});
    CHECK(sde.diffusion()(0, 1) == doctest::Approx(0.35136).epsilon(1e-5));
    CHECK(sde.diffusion()(0, 1) == sde.diffusion()(1, 0));
    CHECK(validate(sde).diffusion_spd);
}

TEST_CASE("validation report") {
    const ValidationReport ok = validate(make_coupled_benchmark());
    CHECK(ok.diffusion_spd);
    CHECK(ok.drift_hurwitz);

    const ValidationReport unstable = validate(LinearSde(Matrix{{1, 0}, {0, -1}}, Matrix::identity(2)));
    CHECK_FALSE(unstable.drift_hurwitz);
    REQUIRE(unstable.drift_offenders.size() == 1);
    CHECK(unstable.drift_offenders[0].real() == doctest::Approx(1.0));

    const ValidationReport indefinite = validate(LinearSde(-1.0 * Matrix::identity(2), Matrix{{1, 2}, {2, 1}}));
    CHECK_FALSE(indefinite.diffusion_spd);
    REQUIRE(indefinite.diffusion_offenders.size() == 1);
    CHECK(indefinite.diffusion_offenders[0] == doctest::Approx(-1.0));
}

TEST_CASE("LinearSde rejects malformed input") {
    CHECK_THROWS_AS(LinearSde(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
    CHECK_THROWS_AS(LinearSde(Matrix::identity(2), Matrix::identity(3)), std::invalid_argument);
    CHECK_THROWS_AS(LinearSde(Matrix::identity(2), Matrix{{1, 1}, {0, 1}}), std::invalid_argument);
}

TEST_CASE("spectral gap") {
    CHECK(spectral_gap(make_coupled_benchmark(), {1, 1}) == doctest::Approx(10.0));
    CHECK(spectral_gap(make_parametric_slowfast(-1.0, 0.0, -1.0, 1.0), {1, 1}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(spectral_gap(make_coupled_benchmark(), {2, 0}), std::invalid_argument);
}

TEST_CASE("block diagonalization reproduces the diagonal benchmark") {
    const BlockDiagResult r = drift_block_diagonalize(make_coupled_benchmark(), {1, 1});
    const LinearSde expected = make_diag_benchmark();
    CHECK(max_abs(r.transformed.drift() - expected.drift()) <= 1e-12);
    CHECK(max_abs(r.transformed.diffusion() - expected.diffusion()) <= 1e-12);
    const Matrix a = make_coupled_benchmark().drift();
    CHECK(max_abs(r.transform * a * inverse(r.transform) - r.transformed.drift()) <= 1e-10);
}

TEST_CASE("block diagonalization of an already-diagonal drift") {
    const LinearSde sde(Matrix::diagonal(Vector{-2.0, -7.0}), Matrix{{2.0, 0.3}, {0.3, 1.0}});
    const BlockDiagResult r = drift_block_diagonalize(sde, {1, 1});
    CHECK(max_abs(r.transform - Matrix::identity(2)) <= 1e-15);
    CHECK(max_abs(r.transformed.diffusion() - sde.diffusion()) <= 1e-12);
}

TEST_CASE("block diagonalization orders slow modes first") {
    const LinearSde sde(Matrix::diagonal(Vector{-10.0, -1.0}), Matrix::identity(2));
    const BlockDiagResult r = drift_block_diagonalize(sde, {1, 1});
    CHECK(r.transformed.drift()(0, 0) == doctest::Approx(-1.0));
    CHECK(r.transformed.drift()(1, 1) == doctest::Approx(-10.0));
}

TEST_CASE("block diagonalization rejects unsupported spectra") {
    CHECK_THROWS_AS(drift_block_diagonalize(LinearSde(Matrix{{-1, 1}, {-1, -1}}, Matrix::identity(2)), {1, 1}),
                    std::domain_error);
    CHECK_THROWS_AS(drift_block_diagonalize(LinearSde(Matrix{{-1, 1}, {0, -1}}, Matrix::identity(2)), {1, 1}),
                    std::domain_error);
}

TEST_CASE("property: block diagonalization preserves the spectrum and yields SPD diffusion") {
    std::mt19937_64 gen(8);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::uniform_real_distribution<double> neg(-20.0, -0.1);
    for (int trial = 0; trial < 50; ++trial) {
        const LinearSde sde(Matrix{{neg(gen), u(gen)}, {0.0, neg(gen)}}, Matrix{{1.0, 0.2}, {0.2, 2.0}});
        const Spectrum before = sorted_drift_spectrum(sde.drift());
        if (std::abs(before[0] - before[1]) < 1e-3) continue;
        const BlockDiagResult r = drift_block_diagonalize(sde, {1, 1});
        const Spectrum after = sorted_drift_spectrum(r.transformed.drift());
        for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(after[k] - before[k]) <= 1e-10);
        CHECK(validate(r.transformed).diffusion_spd);
        CHECK(is_block_diagonal(r.transformed.drift(), {1, 1}));
    }
    for (int trial = 0; trial < 20; ++trial) {
        Matrix a(3, 3);
        for (double& x : a.data()) x = u(gen);
        for (std::size_t i = 0; i < 3; ++i) a(i, i) -= 8.0;
        const Spectrum before = sorted_drift_spectrum(a);
        bool real = true;
        for (const Complex& k : before) real = real && k.imag() == 0.0;
        if (!real) continue;
        const BlockDiagResult r = drift_block_diagonalize(LinearSde(a, Matrix::identity(3)), {1, 2});
        const Spectrum after = sorted_drift_spectrum(r.transformed.drift());
        for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(after[k] - before[k]) <= 1e-10);
        CHECK(max_abs(r.transform * a * inverse(r.transform) - r.transformed.drift()) <= 1e-10);
    }
}

TEST_CASE("coupled benchmark validates") {
    const ValidationReport r = validate(make_parametric_slowfast(-1.0, 1.0, -1.0, 0.1));
    CHECK(r.diffusion_spd);
    CHECK(r.drift_hurwitz);
}
