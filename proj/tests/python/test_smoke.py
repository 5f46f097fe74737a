import math

import numpy as np
import pytest

import mima


def test_gaussian_step_keeps_the_invariant_law():
    sde = mima.coupled_benchmark()
    v = mima.invariant_variance(sde, 0.09)
    inv = mima.GaussianState(np.zeros(2), v)
    for mode in ("mean", "mean_var"):
        nxt = mima.mm_gaussian_step(inv, sde, dt=0.09, Dt=0.5, mode=mode)
        assert np.allclose(nxt.mean, 0.0, atol=1e-12)
        assert np.allclose(nxt.cov, v, rtol=1e-12)
        assert mima.kl_gaussian(nxt, inv) < 1e-12


def test_thresholds():
    assert mima.variance_extrapolation_threshold(np.array([[-1.0]]), 0.1) == pytest.approx(2 / 1.9)
    a = mima.asymptotic_slow_variance(np.array([[-1.0]]), np.array([[1.0]]), 0.1)
    assert a[0, 0] == pytest.approx(1 / 1.9)
    assert mima.stability_check(mima.diag_benchmark(), 0.09, 1.9)["stable"]
    assert not mima.stability_check(mima.diag_benchmark(), 0.09, 2.1)["stable"]


def test_block_diagonalization():
    c, t = mima.drift_block_diagonalize(mima.coupled_benchmark())
    assert np.allclose(t.drift, np.diag([-1.0, -10.0]), atol=1e-12)
    assert np.allclose(c @ mima.coupled_benchmark().drift @ np.linalg.inv(c), t.drift, atol=1e-12)


def test_invalid_inputs_raise():
    with pytest.raises(ValueError):
        mima.LinearSde(np.array([[1.0]]), np.array([[1.0]]))
    with pytest.raises(mima.MatchingInfeasible):
        sde = mima.diag_benchmark()
        s = mima.GaussianState(np.zeros(2), np.eye(2))
        for _ in range(10):
            s = mima.mm_gaussian_step(s, sde, dt=0.1, Dt=1.5, mode="mean_var")


def test_particle_step_matches_and_is_deterministic():
    sde = mima.diag_benchmark()
    ens = mima.ParticleEnsemble.normal(4000, np.zeros(2), np.eye(2), seed=3)
    assert len(ens) == 4000
    a, conv_a, _ = mima.mm_particle_step(ens, sde, dt=0.09, Dt=0.5, seed=7)
    b, conv_b, _ = mima.mm_particle_step(ens, sde, dt=0.09, Dt=0.5, seed=7)
    assert conv_a and conv_b
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.weights, b.weights)
    assert math.isclose(a.weights.sum(), 1.0, abs_tol=1e-12)
    assert 0 < a.ess <= 4000


def test_run_experiment():
    out = mima.run_experiment({"experiment": "adaptive", "J": 400, "T": 3.0, "seed": 2, "Dt_max": 1.5})
    assert out["summary"]["matching_failures"] == 0
    trace = out["tables"]["trace"]
    assert trace["columns"][:3] == ["attempt", "time", "Dt"]
    assert trace["rows"][-1][1] == pytest.approx(3.0)
    with pytest.raises(mima.ConfigError):
        mima.run_experiment({"experiment": "adaptive", "bogus": 1})
