import math

import numpy as np
import pytest

from qtherm.model import InteractionModel

SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SZ = np.diag([1.0, -1.0]).astype(complex)
PLUS = 0.5 * np.ones((2, 2), dtype=complex)


def qubit(beta=math.log(2.0)):
    return InteractionModel(SZ, [SIGMA_MINUS], [1.0], beta)


def random_model(rng, d=2, n_levels=1, beta=1.0):
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h0 = 0.5 * (g + g.conj().T)
    cs = 0.5 * (rng.standard_normal((n_levels, d, d)) + 1j * rng.standard_normal((n_levels, d, d)))
    gammas = rng.uniform(0.2, 2.0, n_levels)
    return InteractionModel(h0, cs, gammas, beta)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def thermal_qubit():
    return qubit()


@pytest.fixture
def zero_qubit():
    return qubit(math.inf)


ACCEPTANCE_RESULTS: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
