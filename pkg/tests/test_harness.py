import math

import numpy as np
import pytest

from conftest import PLUS, qubit
from qtherm.discrete import Observable, unconditioned_channel
from qtherm.harness import (
    Scenario,
    channel_mean,
    convergence_table,
    ensemble_continuous,
    ensemble_discrete,
    ensemble_run,
    euler_tolerance,
    loglog_slope,
    mean_vs_master,
)
from qtherm.matops import is_state
from qtherm.model import InteractionModel
from qtherm.sde import solve_master_ode


def scenario(beta=math.log(2.0), obs=None, **kw):
    return Scenario("test", qubit(beta), obs or Observable.symmetric(), PLUS, **kw)


def test_uncoupled_mean_is_exact_orbit():
    h0 = np.array([[0.4, 0.1], [0.1, -0.4]], dtype=complex)
    model = InteractionModel(h0, [np.zeros((2, 2))], [1.0], 1.0)
    sc = Scenario("free", model, Observable.diagonal(), PLUS)
    s = ensemble_run("discrete", sc, 100, seed=1, n=64)
    assert np.allclose(s.mean_states, channel_mean(sc, 64), atol=1e-13)
    assert np.allclose(s.variances, 0, atol=1e-20)


def test_discrete_mean_matches_channel():
    sc = scenario()
    s = ensemble_discrete(sc, 64, 2000, seed=3)
    ref = channel_mean(sc, 64)
    for f, x in enumerate(sc.functionals.values()):
        want = np.real(np.einsum("tij,ji->t", ref, x))
        assert np.all(np.abs(s.means[:, f] - want) <= 3 * s.standard_errors[:, f])
    assert all(is_state(r, tol=1e-8) for r in s.mean_states)


def test_standard_error_scaling():
    sc = scenario()
    a = ensemble_discrete(sc, 32, 1000, seed=5)
    b = ensemble_discrete(sc, 32, 4000, seed=6)
    ratio = b.standard_errors[-1] / a.standard_errors[-1]
    assert np.all(np.abs(ratio - 0.5) <= 0.1)


def test_reproducible_and_schedule_independent():
    sc = scenario()
    a = ensemble_discrete(sc, 32, 600, seed=9, chunk=250)
    b = ensemble_discrete(sc, 32, 600, seed=9, threads=3, chunk=250)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.mean_states, b.mean_states)
    c = ensemble_continuous(sc, 1e-3, 300, seed=9, chunk=100)
    d = ensemble_continuous(sc, 1e-3, 300, seed=9, threads=3, chunk=100)
    assert np.array_equal(c.values, d.values)
    assert a.to_dict() == b.to_dict()


def test_ensemble_run_guards():
    sc = scenario()
    with pytest.raises(ValueError):
        ensemble_run("discrete", sc, 50, seed=0, n=16)
    with pytest.raises(ValueError):
        ensemble_run("discrete", sc, 100, seed=0)
    with pytest.raises(ValueError):
        ensemble_run("other", sc, 100, seed=0)


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario("bad", qubit(), Observable.diagonal(), PLUS, checkpoints=(0.5, 0.25))
    sc = scenario()
    assert sc.horizon == 1.0 and set(sc.functionals) == {"sx", "sy", "sz"}


def test_deterministic_ensemble_matches_master_within_integrator_tolerance():
    sc = scenario(obs=Observable.diagonal())
    s = ensemble_continuous(sc, 1e-3, 100, seed=0)
    assert np.max(s.variances) <= 1e-24
    ode = solve_master_ode(sc.rho0, sc.drift(), 1e-3, 1.0)
    tol = euler_tolerance(sc, 1e-3)
    assert 0 < tol < 1e-2
    assert mean_vs_master(s, ode, sc.functionals, atol=tol + 1e-12).passed
    assert np.max(np.abs(mean_vs_master(s, ode, sc.functionals).deviation)) <= tol + 1e-12


def test_mean_vs_master_grid_mismatch():
    sc = scenario(obs=Observable.diagonal())
    s = ensemble_continuous(sc, 1e-3, 100, seed=0)
    coarse = solve_master_ode(sc.rho0, sc.drift(), 1e-2, 0.5)
    with pytest.raises(ValueError):
        mean_vs_master(s, coarse, sc.functionals)


def test_thermal_diagonal_variance_vanishes():
    sc = scenario(obs=Observable.diagonal())
    ref = ensemble_continuous(sc, 1e-3, 200, seed=1)
    table = convergence_table(sc, [16, 64, 256], ref, 1000, seed=2)
    var = table.var_error[:, 2]
    assert var[-1] < var[0] / 4
    # the reference has no spread, so the remaining gap is the O(1/n) bias
    assert table.monotone("mean") and table.slopes["mean_sz"] <= -0.8
    assert "slopes" in table.to_text()
    with pytest.raises(ValueError):
        convergence_table(sc, [64, 16], ref, 200, seed=2)


def test_loglog_slope():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    assert loglog_slope(x, 3 * x**-1.5) == pytest.approx(-1.5)
    assert math.isnan(loglog_slope([1.0], [1.0]))
