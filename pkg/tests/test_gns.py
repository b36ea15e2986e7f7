import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import qubit, random_model
from qtherm.discrete import Observable
from qtherm.harness import loglog_slope
from qtherm.matops import dag, ket_bra, random_hermitian, random_projector, tensor
from qtherm.model import ThermalState, build_unitary, thermal_state
from qtherm.gns import (
    ZeroTemperatureError,
    build_gns_basis,
    gns_inner,
    thermal_limit_blocks,
    transport_operator,
    transport_projector,
    transported_unitary_column,
)

probs_strategy = st.integers(1, 3).flatmap(
    lambda n: st.lists(st.floats(0.05, 1.0), min_size=n + 1, max_size=n + 1)
).map(lambda w: ThermalState(np.array(w) / np.sum(w)))


def rand_c(rng, m):
    return rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))


def test_inner_product_basics(rng):
    th = thermal_state(qubit())
    a = rand_c(rng, 2)
    assert gns_inner(np.eye(2), a, th) == pytest.approx(np.trace(th.rho @ a))
    assert gns_inner(a, a, th).real > 0
    b, c = rand_c(rng, 2), rand_c(rng, 2)
    z = 0.3 - 1.2j
    assert gns_inner(a, b + z * c, th) == pytest.approx(gns_inner(a, b, th) + z * gns_inner(a, c, th))
    assert gns_inner(z * a, b, th) == pytest.approx(np.conj(z) * gns_inner(a, b, th))
    with pytest.raises(ZeroTemperatureError):
        gns_inner(a, a, thermal_state(qubit(math.inf)))


def test_qubit_basis_explicit():
    th = thermal_state(qubit())
    b0, b1 = th.probs
    basis = build_gns_basis(th)
    x11 = basis.elements[1, 1]
    expected = np.diag([math.sqrt(b1 / b0), -math.sqrt(b0 / b1)])
    phase = x11[1, 1] / expected[1, 1]
    assert abs(abs(phase) - 1) < 1e-12
    assert np.allclose(x11, phase * expected, atol=1e-12)
    assert gns_inner(x11, x11, th) == pytest.approx(1.0)
    assert abs(gns_inner(np.eye(2), x11, th)) < 1e-12
    x01 = basis.elements[0, 1]
    assert np.allclose(x01, ket_bra(1, 0, 2) / math.sqrt(b0))
    assert gns_inner(x01, x01, th) == pytest.approx(1.0)
    assert np.array_equal(basis.elements[0, 0], np.eye(2))


@settings(max_examples=60, deadline=None)
@given(probs_strategy)
def test_gram_is_identity(th):
    basis = build_gns_basis(th)
    assert basis.flat().shape[0] == th.probs.size**2
    assert np.max(np.abs(basis.gram() - np.eye(th.probs.size**2))) <= 1e-12
    assert np.array_equal(basis.flat()[0], np.eye(th.probs.size))


def test_basis_is_deterministic():
    th = ThermalState(np.array([0.5, 0.3, 0.2]))
    assert np.array_equal(build_gns_basis(th).elements, build_gns_basis(th).elements)


def test_zero_temperature_refused():
    with pytest.raises(ZeroTemperatureError):
        build_gns_basis(thermal_state(qubit(math.inf)))
    with pytest.raises(ZeroTemperatureError):
        thermal_limit_blocks(qubit(math.inf))


@settings(max_examples=30, deadline=None)
@given(probs_strategy, st.integers(0, 2**31))
def test_star_representation(th, seed):
    rng = np.random.default_rng(seed)
    m = th.probs.size
    basis = build_gns_basis(th)
    a, b, c = rand_c(rng, m), rand_c(rng, m), rand_c(rng, m)
    assert np.allclose(basis.pi(a @ b), basis.pi(a) @ basis.pi(b), atol=1e-11)
    assert np.allclose(basis.pi(dag(a)), dag(basis.pi(a)), atol=1e-11)
    assert gns_inner(dag(a) @ b, c, th) == pytest.approx(gns_inner(b, a @ c, th), abs=1e-11)
    assert gns_inner(np.eye(m), a @ np.eye(m), th) == pytest.approx(np.trace(th.rho @ a), abs=1e-12)
    # coordinates reconstruct operators
    coords = basis.coordinates(a)
    assert np.allclose(np.einsum("a,auv->uv", coords, basis.flat()), a, atol=1e-11)


def test_transport_operator_examples(rng):
    model = random_model(rng, d=2, n_levels=2, beta=0.7)
    th = thermal_state(model)
    basis = build_gns_basis(th)
    m, d = model.m, model.d
    k = transport_operator(np.eye(d * m), basis, th)
    eye_coeff = np.einsum("ijklab->ijkl", k * np.eye(d)[None, None, None, None]) / d
    assert np.allclose(eye_coeff.reshape(m * m, m * m), np.eye(m * m), atol=1e-12)
    a = rand_c(rng, m)
    ka = transport_operator(tensor(np.eye(d), a), basis, th)
    x = basis.elements
    for i, j, kk, ll in [(0, 0, 0, 0), (1, 2, 0, 1), (2, 2, 1, 1), (0, 1, 2, 0)]:
        assert np.allclose(ka[i, j, kk, ll], gns_inner(x[kk, ll], a @ x[i, j], th) * np.eye(d), atol=1e-12)


def test_transported_projector_tables():
    th = thermal_state(qubit())
    b0, b1 = th.probs
    basis = build_gns_basis(th)
    tp = transport_projector(ket_bra(0, 0, 2), basis, th)
    assert tp.p00 == pytest.approx(b0) == pytest.approx(2 / 3)
    assert abs(tp[0, 0, 0, 1]) < 1e-15 and abs(tp[0, 0, 1, 0]) < 1e-15
    sym = transport_projector(Observable.symmetric().projectors[0], basis, th)
    assert sym.p00 == pytest.approx(0.5)
    assert sym[0, 0, 0, 1] == pytest.approx(math.sqrt(b0) / 2)
    assert sym[0, 0, 1, 0] == pytest.approx(math.sqrt(b1) / 2)
    # R = a^0_1, S = a^1_0
    r = transport_operator(tensor(np.eye(2), ket_bra(1, 0, 2)), basis, th)
    s = transport_operator(tensor(np.eye(2), ket_bra(0, 1, 2)), basis, th)
    assert np.allclose(r[0, 0, 0, 1], math.sqrt(b0) * np.eye(2))
    assert np.allclose(s[0, 0, 1, 0], math.sqrt(b1) * np.eye(2))
    with pytest.raises(ValueError):
        transport_projector(np.diag([1.0, 0.5]), basis, th)


def test_transported_projector_properties(rng):
    for n_levels in (1, 2, 3):
        w = rng.uniform(0.1, 1, n_levels + 1)
        th = ThermalState(w / w.sum())
        basis = build_gns_basis(th)
        m = n_levels + 1
        for rank in range(1, m + 1):
            p = random_projector(m, rank, rng)
            tp = transport_projector(p, basis, th)
            mat = tp.matrix()
            assert np.allclose(mat, dag(mat), atol=1e-12)
            assert abs(tp.coeffs[0, 0, 0, 0].imag) < 1e-14
            assert tp.p00 == pytest.approx(np.trace(th.rho @ p).real)
            assert tp.p00 >= th.probs.min() - 1e-12


def test_limit_block_formulas():
    model = qubit()
    b0, b1 = thermal_state(model).probs
    c = model.couplings[0]
    lim = thermal_limit_blocks(model)
    assert np.allclose(lim.l0k[0], -1j * math.sqrt(b0) * c)
    assert np.allclose(lim.lk0[0], -1j * math.sqrt(b1) * dag(c))
    cold = thermal_limit_blocks(model.with_beta(60.0))
    assert np.allclose(cold.l0k[0], -1j * c, atol=1e-12)
    assert np.allclose(cold.lk0[0], 0, atol=1e-12)


def test_limit_block_asymptotics():
    model = qubit()
    lim = thermal_limit_blocks(model)
    col = transported_unitary_column(model, 1e4)
    assert np.linalg.norm(col.l0k - lim.l0k) <= 10 / 1e4
    assert np.linalg.norm(col.lk0 - lim.lk0) <= 10 / 1e4
    ns = [2.0**k for k in (8, 10, 12, 14)]
    for key in ("l00", "lk0", "l0k"):
        res = [np.linalg.norm(getattr(transported_unitary_column(model, n), key) - getattr(lim, key)) for n in ns]
        assert loglog_slope(ns, res) <= -0.9, key


def test_irrelevant_blocks_vanish():
    model = qubit()
    th = thermal_state(model)
    basis = build_gns_basis(th)
    ns = [2.0**k for k in (8, 10, 12)]
    norms = []
    for n in ns:
        k = transport_operator(build_unitary(model, n), basis, th)
        norms.append(np.linalg.norm(k[0, 0, 1, 1]))
    assert loglog_slope(ns, norms) <= -0.9
