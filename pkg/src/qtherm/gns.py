"""GNS representation of the bath Gibbs state.

At finite temperature ``rho_beta`` is faithful and ``<A, B> = Tr[rho_beta A^* B]``
is a scalar product on ``B(H)``. Left multiplication ``pi(A) B = A B`` turns
``rho_beta`` into the vector state of ``I``, so the thermal bath looks pure
on the enlarged space and zero-temperature arguments carry over.

Index conventions: ``basis.elements[i, j]`` is ``X^i_j``; transported
coefficients are stored as ``c[i, j, k, l] = <X^k_l, pi(K) X^i_j>``, i.e. the
entry of ``pi(K)`` at row ``(k, l)``, column ``(i, j)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matops import dag, ket_bra
from .model import InteractionModel, ThermalState, build_unitary, thermal_state

DEPENDENCE_TOL = 1e-12


class ZeroTemperatureError(ValueError):
    """The GNS construction needs a faithful reference state."""


def _require_faithful(th: ThermalState):
    if not th.faithful:
        raise ZeroTemperatureError("GNS construction requires finite temperature (rho_beta faithful)")


def gns_inner(a: np.ndarray, b: np.ndarray, th: ThermalState) -> complex:
    """``Tr[rho_beta a^* b]``."""
    _require_faithful(th)
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return complex(np.einsum("v,uv,uv->", th.probs, np.conj(a), b))


@dataclass(frozen=True, eq=False)
class GnsBasis:
    """Orthonormal basis ``{X^i_j}`` of ``B(C^{N+1})`` with ``X^0_0 = I``."""

    thermal: ThermalState
    elements: np.ndarray  # (m, m, m, m): elements[i, j] = X^i_j

    @property
    def m(self) -> int:
        return self.elements.shape[0]

    @property
    def n_levels(self) -> int:
        return self.m - 1

    def flat(self) -> np.ndarray:
        """Elements in row-major ``(i, j)`` order; index 0 is ``X^0_0``."""
        m = self.m
        return self.elements.reshape(m * m, m, m)

    def nu(self) -> np.ndarray:
        """Diagonal entries ``nu_i^k`` of ``X^i_i``, shape ``(m, m)``."""
        return np.array([np.diag(self.elements[i, i]) for i in range(self.m)])

    def gram(self) -> np.ndarray:
        return _gram(self.flat(), self.thermal.probs)

    def coordinates(self, a: np.ndarray) -> np.ndarray:
        """``<X^i_j, a>`` in the flat order."""
        x = self.flat()
        return np.einsum("v,auv,uv->a", self.thermal.probs, np.conj(x), np.asarray(a, dtype=complex))

    def pi(self, a: np.ndarray) -> np.ndarray:
        """Matrix of left multiplication by ``a`` in the basis."""
        x = self.flat()
        ax = np.einsum("uv,bvw->buw", np.asarray(a, dtype=complex), x)
        return np.einsum("v,auv,buv->ab", self.thermal.probs, np.conj(x), ax)


def _gram(x: np.ndarray, probs: np.ndarray) -> np.ndarray:
    # <X_a, X_b> = sum_v beta_v sum_u conj(X_a[u, v]) X_b[u, v]
    return np.einsum("v,auv,buv->ab", probs, np.conj(x), x)


def _weighted_gram_schmidt(probs: np.ndarray) -> np.ndarray:
    m = probs.size

    def inner(x, y):
        return np.sum(probs * np.conj(x) * y)

    seeds = [np.ones(m, dtype=complex)] + [np.eye(m, dtype=complex)[k] for k in range(1, m)]
    out: list[np.ndarray] = []
    for v in seeds:
        w = v.copy()
        for _ in range(2):
            for u in out:
                w = w - inner(u, w) * u
        norm = np.sqrt(np.real(inner(w, w)))
        if norm < DEPENDENCE_TOL:
            continue
        w = w / norm
        nz = np.flatnonzero(np.abs(w) > DEPENDENCE_TOL)
        last = w[nz[-1]]
        w = w * (np.abs(last) / last)
        out.append(w)
    if len(out) != m:
        raise ValueError("weighted Gram-Schmidt did not produce a full basis")
    out[0] = np.ones(m, dtype=complex)
    return np.array(out)


def build_gns_basis(th: ThermalState) -> GnsBasis:
    """Diagonal ``X^i_i`` from weighted Gram-Schmidt, ``X^i_j = a^i_j / sqrt(beta_i)``."""
    probs = np.asarray(th.probs, dtype=float)
    if np.any(probs <= 0):
        raise ZeroTemperatureError("all Gibbs weights must be strictly positive")
    m = probs.size
    nus = _weighted_gram_schmidt(probs)
    elements = np.zeros((m, m, m, m), dtype=complex)
    for i in range(m):
        for j in range(m):
            if i == j:
                elements[i, i] = np.diag(nus[i])
            else:
                # a^i_j = |X_j><X_i|
                elements[i, j] = ket_bra(j, i, m) / np.sqrt(probs[i])
    elements[0, 0] = np.eye(m)
    elements.setflags(write=False)
    return GnsBasis(th, elements)


def transport_operator(k: np.ndarray, basis: GnsBasis, th: ThermalState | None = None) -> np.ndarray:
    """Coefficients ``K^{ij}_{kl} = Tr_H[(I (x) rho_beta X^{k*}_l) K (I (x) X^i_j)]``.

    Returns an array of shape ``(m, m, m, m, d, d)`` indexed ``[i, j, k, l]``.
    """
    th = basis.thermal if th is None else th
    _require_faithful(th)
    m = basis.m
    k = np.asarray(k, dtype=complex)
    if k.shape[0] % m or k.shape[0] != k.shape[1]:
        raise ValueError("operator dimension is not a multiple of the bath dimension")
    d = k.shape[0] // m
    k4 = k.reshape(d, m, d, m)
    x = basis.elements
    left = np.einsum("u,klvu->kluv", th.probs, np.conj(x))  # rho_beta (X^k_l)^*
    return np.einsum("kluv,rvsw,ijwu->ijklrs", left, k4, x)


@dataclass(frozen=True, eq=False)
class TransportedProjector:
    """Scalars ``p^{ij}_{kl} = Tr[rho_beta (X^k_l)^* P X^i_j]`` stored ``[i, j, k, l]``."""

    coeffs: np.ndarray

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]

    @property
    def p00(self) -> float:
        return float(np.real(self.coeffs[0, 0, 0, 0]))

    def __getitem__(self, key) -> complex:
        return self.coeffs[key]

    def matrix(self) -> np.ndarray:
        """``P'`` with rows ``(k, l)`` and columns ``(i, j)`` in flat order."""
        m = self.m
        return np.transpose(self.coeffs, (2, 3, 0, 1)).reshape(m * m, m * m)


def transport_projector(p: np.ndarray, basis: GnsBasis, th: ThermalState | None = None) -> TransportedProjector:
    th = basis.thermal if th is None else th
    _require_faithful(th)
    p = np.asarray(p, dtype=complex)
    if np.max(np.abs(p - dag(p))) > 1e-10 or np.max(np.abs(p @ p - p)) > 1e-10:
        raise ValueError("transport_projector requires a Hermitian idempotent")
    x = basis.elements
    px = np.einsum("uv,ijvw->ijuw", p, x)
    coeffs = np.einsum("w,kluw,ijuw->ijkl", th.probs, np.conj(x), px)
    return TransportedProjector(coeffs)


@dataclass(frozen=True, eq=False)
class ThermalLimitBlocks:
    """Limits of the ``(., .) -> (0, 0)`` column of ``pi(U(n))``.

    ``l00``: limit of ``n (U^{00}_{00} - I)``; ``lk0[k-1]``: limit of
    ``sqrt(n) U^{00}_{k0}``; ``l0k[k-1]``: limit of ``sqrt(n) U^{00}_{0k}``.
    """

    l00: np.ndarray
    lk0: np.ndarray
    l0k: np.ndarray


def thermal_limit_blocks(model: InteractionModel) -> ThermalLimitBlocks:
    th = thermal_state(model)
    _require_faithful(th)
    b = th.probs
    cs = model.couplings
    cdag = dag(cs)
    d = model.d
    l00 = -(
        1j * model.h0
        + 1j * np.dot(b[1:], model.gammas) * np.eye(d)
        + 0.5 * np.einsum("k,kij->ij", np.full(cs.shape[0], b[0]), cdag @ cs)
        + 0.5 * np.einsum("k,kij->ij", b[1:], cs @ cdag)
    )
    lk0 = -1j * np.sqrt(b[1:])[:, None, None] * cdag
    l0k = -1j * np.sqrt(b[0]) * cs
    return ThermalLimitBlocks(l00, lk0, l0k)


def transported_unitary_column(model: InteractionModel, n: float) -> ThermalLimitBlocks:
    """Scaled blocks ``n (U^{00}_{00} - I)``, ``sqrt(n) U^{00}_{k0}``, ``sqrt(n) U^{00}_{0k}``."""
    th = thermal_state(model)
    basis = build_gns_basis(th)
    k = transport_operator(build_unitary(model, n), basis, th)
    col = k[0, 0]
    nl = model.n_levels
    l00 = n * (col[0, 0] - np.eye(model.d))
    lk0 = np.sqrt(n) * np.array([col[kk, 0] for kk in range(1, nl + 1)])
    l0k = np.sqrt(n) * np.array([col[0, kk] for kk in range(1, nl + 1)])
    return ThermalLimitBlocks(l00, lk0, l0k)
