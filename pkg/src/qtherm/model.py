"""Repeated-interaction model: Hamiltonians, coupling scaling and U(n)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .matops import dag, expm_hermitian, is_hermitian, ket_bra, tensor


@dataclass(frozen=True, eq=False)
class InteractionModel:
    """System Hamiltonian, dipole couplings and bath spectrum.

    Parameters
    ----------
    h0 : array_like
        Free system Hamiltonian, ``d x d`` Hermitian.
    couplings : array_like
        ``N`` coupling operators ``C_1..C_N``, shape ``(N, d, d)``.
    gammas : array_like
        Bath energies ``gamma_1..gamma_N``; the reference level ``X_0`` has
        energy zero.
    beta : float
        Inverse temperature in ``(0, inf]``. ``math.inf`` selects the zero
        temperature branch.
    """

    h0: np.ndarray
    couplings: np.ndarray
    gammas: np.ndarray
    beta: float = math.inf

    def __post_init__(self):
        h0 = np.array(self.h0, dtype=complex)
        cs = np.array(self.couplings, dtype=complex)
        gammas = np.array(self.gammas, dtype=float).reshape(-1)
        if cs.ndim == 2:
            cs = cs[None]
        if h0.ndim != 2 or h0.shape[0] != h0.shape[1]:
            raise ValueError("h0 must be a square matrix")
        if not is_hermitian(h0):
            raise ValueError("h0 must be Hermitian")
        if cs.ndim != 3 or cs.shape[1:] != h0.shape:
            raise ValueError("couplings must have shape (N, d, d) matching h0")
        if cs.shape[0] < 1 or cs.shape[0] != gammas.size:
            raise ValueError("need N >= 1 couplings and exactly N gammas")
        beta = float(self.beta)
        if not beta > 0:
            raise ValueError("beta must lie in (0, inf]")
        for name, value in (("h0", h0), ("couplings", cs), ("gammas", gammas)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "beta", beta)

    @property
    def d(self) -> int:
        return self.h0.shape[0]

    @property
    def n_levels(self) -> int:
        """Number of excited bath levels ``N``; the bath has dimension ``N+1``."""
        return self.couplings.shape[0]

    @property
    def m(self) -> int:
        return self.n_levels + 1

    @property
    def zero_temperature(self) -> bool:
        return math.isinf(self.beta)

    def with_beta(self, beta: float) -> "InteractionModel":
        return InteractionModel(self.h0, self.couplings, self.gammas, beta)


@dataclass(frozen=True, eq=False)
class ThermalState:
    """Diagonal of the bath Gibbs state, ``probs[i] = beta_i``."""

    probs: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        return np.diag(self.probs).astype(complex)

    @property
    def faithful(self) -> bool:
        return bool(np.all(self.probs > 0))


def thermal_state(model: InteractionModel) -> ThermalState:
    """Gibbs weights ``exp(-beta gamma_i) / Z`` with ``gamma_0 = 0``."""
    energies = np.concatenate([[0.0], model.gammas])
    if model.zero_temperature:
        probs = np.zeros(model.m)
        probs[0] = 1.0
    else:
        logw = -model.beta * (energies - energies.min())
        w = np.exp(logw)
        probs = w / w.sum()
    probs.setflags(write=False)
    return ThermalState(probs)


def bath_hamiltonian(model: InteractionModel) -> np.ndarray:
    return np.diag(np.concatenate([[0.0], model.gammas])).astype(complex)


def interaction_hamiltonian(model: InteractionModel) -> np.ndarray:
    """Dipole coupling ``sum_k C_k (x) a^0_k + C_k^* (x) a^k_0``."""
    m = model.m
    out = np.zeros((model.d * m, model.d * m), dtype=complex)
    for k, c in enumerate(model.couplings, start=1):
        # a^0_k = |X_k><X_0|, a^k_0 = |X_0><X_k|
        out += tensor(c, ket_bra(k, 0, m)) + tensor(dag(c), ket_bra(0, k, m))
    return out


def build_h_total(model: InteractionModel, n: float) -> np.ndarray:
    """``H_0 (x) I + I (x) H_R + sqrt(n) H_I``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    eye_s = np.eye(model.d)
    eye_b = np.eye(model.m)
    h = tensor(model.h0, eye_b) + tensor(eye_s, bath_hamiltonian(model))
    return h + math.sqrt(n) * interaction_hamiltonian(model)


def build_unitary(model: InteractionModel, n: float) -> np.ndarray:
    """One interaction of duration ``1/n``: ``exp(-i H_tot(n) / n)``."""
    return expm_hermitian(build_h_total(model, n), 1.0 / n)


def zero_temp_limit_blocks(model: InteractionModel) -> np.ndarray:
    """Limits of the column blocks of ``U(n)``.

    Returns an array ``L`` of shape ``(N+1, d, d)`` with
    ``L[0] = -i H_0 - 1/2 sum_k C_k^* C_k`` (limit of ``n (U^0_0 - I)``)
    and ``L[k] = -i C_k`` (limit of ``sqrt(n) U^k_0``, the block at bath
    row ``k``, column ``0``).
    """
    cs = model.couplings
    out = np.empty((model.m, model.d, model.d), dtype=complex)
    out[0] = -1j * model.h0 - 0.5 * np.einsum("kji,kjl->il", np.conj(cs), cs)
    out[1:] = -1j * cs
    return out
