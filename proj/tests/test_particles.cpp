#include "doctest.h"
#include "mima/particles.hpp"

#include <cmath>
#include <numeric>

using namespace mima;

namespace {

const SlowFastPartition kOneOne{1, 1};

std::vector<GaussianComponent> standard_normal(std::size_t d) {
    return {GaussianComponent{1.0, Vector(d, 0.0), Matrix::identity(d)}};
}

double weight_sum(const ParticleEnsemble& e) {
    return std::accumulate(e.weights().begin(), e.weights().end(), 0.0);
}

}  // namespace

TEST_CASE("Philox known-answer vectors") {
    const auto zero = philox4x32({0, 0, 0, 0}, {0, 0});
    CHECK(zero == std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    const auto ones = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    CHECK(ones == std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    const auto pi = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    CHECK(pi == std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("counter RNG draws are addressable and roughly standard normal") {
    const CounterRng rng(42);
    Vector a(3), b(3);
    rng.normals(streams::propagate, 7, 11, a);
    rng.normals(streams::propagate, 7, 11, b);
    CHECK(a == b);
    rng.normals(streams::propagate, 8, 11, b);
    CHECK(a != b);

    double m = 0.0, m2 = 0.0;
    const int n = 200000;
    Vector z(2);
    for (int j = 0; j < n / 2; ++j) {
        rng.normals(streams::propagate, 0, static_cast<std::uint32_t>(j), z);
        for (double x : z) {
            m += x;
            m2 += x * x;
        }
    }
    m /= n;
    m2 /= n;
    CHECK(std::fabs(m) < 4.0 / std::sqrt(n));
    CHECK(std::fabs(m2 - 1.0) < 4.0 * std::sqrt(2.0 / n));
    CHECK(rng.substream(1).seed() != rng.substream(2).seed());
}

TEST_CASE("ensemble construction and initialization") {
    const ParticleEnsemble e = init_ensemble(4, standard_normal(2), 7);
    CHECK(e.size() == 4);
    for (double w : e.weights()) CHECK(w == 0.25);

    const ParticleEnsemble again = init_ensemble(4, standard_normal(2), 7);
    CHECK(again.positions() == e.positions());
    CHECK(init_ensemble(4, standard_normal(2), 8).positions() != e.positions());

    CHECK_THROWS_AS(ParticleEnsemble(2, Vector{1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS(ParticleEnsemble(1, Vector{1.0, 2.0}, Vector{0.7, 0.7}), std::invalid_argument);
    CHECK_THROWS_AS(ParticleEnsemble(1, Vector{1.0, 2.0}, Vector{-0.5, 1.5}), std::invalid_argument);
    CHECK_THROWS_AS(init_ensemble(10, {GaussianComponent{0.5, {0.0}, Matrix{{1.0}}}}, 1), std::invalid_argument);
    CHECK_THROWS_AS(init_ensemble(10, {GaussianComponent{1.0, {0.0}, Matrix{{-1.0}}}}, 1), std::invalid_argument);
}

TEST_CASE("mixture initialization mean within the CLT band") {
    const std::vector<GaussianComponent> mix{{0.5, {-2.0}, Matrix{{0.25}}}, {0.5, {2.0}, Matrix{{0.25}}}};
    const std::size_t j = 100000;
    const ParticleEnsemble e = init_ensemble(j, mix, 2024);
    const GaussianState m = weighted_moments(e);
    const double sd_mix = std::sqrt(0.25 + 4.0);
    CHECK(std::fabs(m.mean[0]) < 3.0 * sd_mix / std::sqrt(static_cast<double>(j)));
    CHECK(m.cov(0, 0) == doctest::Approx(4.25).epsilon(0.02));
}

TEST_CASE("EM particle step") {
    const LinearSde deterministic(Matrix{{-1.0}}, Matrix{{1e-300}});
    DriftDiffusionFns fns;
    fns.drift = [](std::span<const double> x, std::span<double> out) { out[0] = -x[0]; };
    fns.diffusion = [](std::span<const double>) { return Matrix{{0.0}}; };
    const ParticleEnsemble one(1, Vector{1.0, 1.0});
    const CounterRng rng(3);
    const ParticleEnsemble moved = em_particle_step(one, fns, 0.1, rng, 0);
    CHECK(moved.position(0)[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(moved.weights() == one.weights());

    const ParticleEnsemble e = init_ensemble(100, standard_normal(2), 5);
    CHECK(em_particle_step(e, make_diag_benchmark(), 0.0, rng, 3).positions() == e.positions());

    // function hooks and the linear fast path agree
    const ParticleEnsemble lin = em_particle_step(e, make_coupled_benchmark(), 0.05, rng, 9);
    const ParticleEnsemble gen = em_particle_step(e, linear_fns(make_coupled_benchmark()), 0.05, rng, 9);
    for (std::size_t k = 0; k < lin.positions().size(); ++k) {
        CHECK(lin.positions()[k] == doctest::Approx(gen.positions()[k]).epsilon(1e-12));
    }
}

TEST_CASE("EM particle moments follow the Gaussian moment recursion") {
    const LinearSde sde = make_coupled_benchmark();
    const std::size_t j = 50000;
    ParticleEnsemble e = init_ensemble(j, {GaussianComponent{1.0, {1.0, 1.0}, Matrix::identity(2)}}, 11);
    GaussianState g{{1.0, 1.0}, Matrix::identity(2)};
    const CounterRng rng(12);
    for (int k = 0; k < 10; ++k) {
        e = em_particle_step(e, sde, 0.05, rng, static_cast<std::uint64_t>(k));
        g = em_moment_step(g, sde, 0.05);
    }
    const GaussianState emp = weighted_moments(e);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(std::fabs(emp.mean[i] - g.mean[i]) < 3.0 * std::sqrt(g.cov(i, i) / j));
    }
}

TEST_CASE("empirical restriction") {
    const ParticleEnsemble two(1, Vector{-1.0, 1.0});
    const MacroState m = restrict_empirical(two, {1, 0}, MatchingMode::mean_var);
    CHECK(m.slow_mean[0] == 0.0);
    CHECK((*m.slow_cov)(0, 0) == 1.0);

    const ParticleEnsemble e(2, Vector{1.0, 5.0, 3.0, 6.0, 2.0, 7.0});
    CHECK(restrict_empirical(e, kOneOne, MatchingMode::mean).slow_mean[0] == doctest::Approx(2.0));

    const ParticleEnsemble point(2, Vector{1.0, 5.0, 3.0, 6.0}, Vector{0.0, 1.0});
    const MacroState p = restrict_empirical(point, kOneOne, MatchingMode::mean_var);
    CHECK(p.slow_mean[0] == 3.0);
    CHECK((*p.slow_cov)(0, 0) == 0.0);
}

TEST_CASE("Newton matching against the two-particle oracle") {
    const ParticleEnsemble two(1, Vector{-1.0, 1.0});
    const MatchResult r = newton_match(two, {MatchingMode::mean, {0.5}, std::nullopt}, {1, 0});
    REQUIRE(r.outcome.converged);
    const double lambda = std::atanh(0.5);
    CHECK(r.outcome.multipliers[0] == doctest::Approx(lambda).epsilon(1e-9));
    const double z = 2.0 * std::cosh(lambda);
    CHECK(std::fabs(r.ensemble.weights()[0] - std::exp(-lambda) / z) < 1e-10);
    CHECK(std::fabs(r.ensemble.weights()[1] - std::exp(lambda) / z) < 1e-10);
    CHECK(r.ensemble.weights()[1] == doctest::Approx(0.75).epsilon(1e-9));
    CHECK(r.outcome.residual <= 1e-9);
}

TEST_CASE("Newton matching reports infeasible targets") {
    const ParticleEnsemble e = init_ensemble(200, {GaussianComponent{1.0, {0.0}, Matrix{{0.1}}}}, 4);
    Vector clipped;
    for (double x : e.positions()) clipped.push_back(std::clamp(x, -1.0, 1.0));
    const ParticleEnsemble inside(1, clipped);
    const MatchResult r = newton_match(inside, {MatchingMode::mean, {2.0}, std::nullopt}, {1, 0});
    CHECK_FALSE(r.outcome.converged);
    CHECK(r.outcome.iterations <= 50);
    CHECK(weight_sum(r.ensemble) == doctest::Approx(1.0).epsilon(1e-12));

    const MatchResult neg = newton_match(inside, {MatchingMode::mean_var, {0.0}, Matrix{{-0.1}}}, {1, 0});
    CHECK_FALSE(neg.outcome.converged);
    CHECK(neg.ensemble.weights() == inside.weights());
}

TEST_CASE("property: matching to the current restriction is an exact no-op") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const ParticleEnsemble e = init_ensemble(500, standard_normal(2), seed);
        for (MatchingMode mode : {MatchingMode::mean, MatchingMode::mean_var}) {
            const MatchResult r = newton_match(e, restrict_empirical(e, kOneOne, mode), kOneOne);
            CHECK(r.outcome.converged);
            CHECK(r.outcome.iterations == 0);
            CHECK(r.ensemble.weights() == e.weights());
            for (double m : r.outcome.multipliers) CHECK(m == 0.0);
        }
    }
}

TEST_CASE("property: converged matches hit the target and stay on the simplex") {
    const SlowFastPartition two_slow{2, 1};
    int converged = 0;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const ParticleEnsemble e = init_ensemble(2000, standard_normal(3), seed);
        const double shift = 0.05 * static_cast<double>(seed % 4);
        MacroState me{MatchingMode::mean, {shift, -shift}, std::nullopt};
        MacroState mv{MatchingMode::mean_var, {shift, 0.5 * shift}, Matrix{{1.1, 0.1}, {0.1, 0.9}}};
        for (const MacroState& target : {me, mv}) {
            const MatchResult r = newton_match(e, target, two_slow);
            CHECK(weight_sum(r.ensemble) == doctest::Approx(1.0).epsilon(1e-12));
            for (double w : r.ensemble.weights()) CHECK(w >= 0.0);
            if (!r.outcome.converged) continue;
            ++converged;
            CHECK(r.outcome.residual <= 1e-9);
            const MacroState back = restrict_empirical(r.ensemble, two_slow, target.kind);
            CHECK(norm2(sub(back.slow_mean, target.slow_mean)) <= 1e-8);
            if (target.slow_cov) CHECK(max_abs(*back.slow_cov - *target.slow_cov) <= 1e-8);
            CHECK(r.outcome.multipliers.size() == (target.slow_cov ? 5u : 2u));
        }
    }
    CHECK(converged == 24);
}

TEST_CASE("micro-macro particle step without extrapolation is plain EM") {
    const LinearSde sde = make_diag_benchmark();
    const ParticleEnsemble e = init_ensemble(1000, standard_normal(2), 9);
    const CounterRng rng(10);
    const MatchResult r = mm_particle_step(e, sde, kOneOne, {0.09, 0.18, 2, MatchingMode::mean}, rng, 4);
    const ParticleEnsemble em = em_particle_step(em_particle_step(e, sde, 0.09, rng, 4), sde, 0.09, rng, 5);
    CHECK(r.outcome.converged);
    CHECK(r.outcome.iterations == 0);
    CHECK(r.ensemble.positions() == em.positions());
    CHECK(r.ensemble.weights() == em.weights());
}

TEST_CASE("property: particle slow mean tracks the Gaussian engine within a 4 sigma band") {
    const LinearSde sde = make_diag_benchmark();
    const double dt = 0.09, Dt = 0.5;
    const MicroMacroConfig cfg{dt, Dt, 1, MatchingMode::mean};
    const std::size_t j = 50000;
    ParticleEnsemble e = init_ensemble(j, {GaussianComponent{1.0, {1.0, 1.0}, Matrix::identity(2)}}, 77);
    GaussianState g{{1.0, 1.0}, Matrix::identity(2)};
    const CounterRng rng(78);
    const double amp = 1.0 - Dt;  // slow mean multiplier per macro step
    const double b_slow = sde.diffusion()(0, 0);
    double var = 1.0 / static_cast<double>(j);  // initial sampling error of the slow mean
    for (int n = 0; n < static_cast<int>(20.0 / Dt); ++n) {
        const double ess = effective_sample_size(e);
        const MatchResult r = mm_particle_step(e, sde, kOneOne, cfg, rng, static_cast<std::uint64_t>(n));
        REQUIRE(r.outcome.converged);
        e = r.ensemble;
        g = mm_gaussian_step(g, sde, kOneOne, cfg);
        // micro noise of the weighted mean is amplified by Dt/dt through extrapolation
        var = amp * amp * var + (Dt / dt) * (Dt / dt) * dt * b_slow / ess;
        const double err = restrict_empirical(e, kOneOne, MatchingMode::mean).slow_mean[0] - g.mean[0];
        CAPTURE(n);
        CHECK(std::fabs(err) < 4.0 * std::sqrt(var));
    }
}

TEST_CASE("property: identical seeds give bit-identical trajectories") {
    const LinearSde sde = make_coupled_benchmark();
    auto run = [&](std::uint64_t seed) {
        ParticleEnsemble e = init_ensemble(3000, standard_normal(2), seed);
        const CounterRng rng(seed + 1);
        std::vector<Vector> trace;
        for (int n = 0; n < 5; ++n) {
            e = mm_particle_step(e, sde, kOneOne, {0.05, 0.5, 2, MatchingMode::mean_var}, rng,
                                 static_cast<std::uint64_t>(2 * n))
                    .ensemble;
            trace.push_back(e.positions());
            trace.push_back(e.weights());
        }
        return trace;
    };
    CHECK(run(5) == run(5));
    CHECK(run(5) != run(6));
}

TEST_CASE("adaptive step controller") {
    MatchOutcome fail;
    fail.converged = false;
    MatchOutcome ok;
    ok.converged = true;
    const AdaptiveState s{1.0, 2.5, 0.09, 1.2, 0.5, 0};
    const AdaptiveState a = adaptive_update(s, fail);
    CHECK(a.current_Dt == doctest::Approx(0.5));
    CHECK(a.failure_count == 1);
    AdaptiveState clamp = s;
    clamp.Dt_max = 1.1;
    CHECK(adaptive_update(clamp, ok).current_Dt == doctest::Approx(1.1));
    AdaptiveState floor = s;
    floor.current_Dt = 0.1;
    CHECK(adaptive_update(floor, fail).current_Dt == doctest::Approx(0.09));
    CHECK(adaptive_update(s, ok).current_Dt == doctest::Approx(1.2));
}

TEST_CASE("effective sample size") {
    CHECK(effective_sample_size(init_ensemble(100, standard_normal(1), 1)) == doctest::Approx(100.0));
    CHECK(effective_sample_size(ParticleEnsemble(1, Vector{0.0, 1.0, 2.0}, Vector{0.0, 1.0, 0.0})) == 1.0);
    CHECK(effective_sample_size(ParticleEnsemble(1, Vector{0.0, 1.0, 2.0}, Vector{0.5, 0.25, 0.25})) ==
          doctest::Approx(1.0 / 0.375));
}
