"""Quantum repeated measurements: the discrete trajectory Markov chain.

After each interaction ``U(n)`` with a fresh bath copy in state ``rho_beta``
the observable ``A = sum_i lambda_i P_i`` of the copy is measured. Outcome
``i`` occurs with probability ``Tr[L_i(rho)]`` where

    L_i(rho) = Tr_H[(I (x) P_i) U (rho (x) rho_beta) U^* (I (x) P_i)]

and the system jumps to ``L_i(rho) / Tr[L_i(rho)]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .matops import StateError, apply_superoperator, as_state, blocks, dag, expect, project_to_state
from .model import InteractionModel, build_unitary, thermal_state
from .rng import ChunkedDraws, substream

PROB_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class Observable:
    """Spectral decomposition of a bath observable.

    Parameters
    ----------
    eigenvalues : sequence of float
        Strictly increasing eigenvalues ``lambda_0 < ... < lambda_p``.
    projectors : array_like
        Spectral projectors, shape ``(p+1, m, m)``.
    """

    eigenvalues: np.ndarray
    projectors: np.ndarray

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float).reshape(-1)
        ps = np.array(self.projectors, dtype=complex)
        if ps.ndim != 3 or ps.shape[0] != lam.size or ps.shape[1] != ps.shape[2]:
            raise ValueError("projectors must have shape (p+1, m, m) matching eigenvalues")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("eigenvalues must be strictly increasing")
        tol = 1e-10
        for i, p in enumerate(ps):
            if np.max(np.abs(p - dag(p))) > tol or np.max(np.abs(p @ p - p)) > tol:
                raise ValueError(f"projector {i} is not a Hermitian idempotent")
            if np.max(np.abs(p)) <= tol:
                raise ValueError(f"projector {i} is zero")
            for j in range(i):
                if np.max(np.abs(p @ ps[j])) > tol:
                    raise ValueError(f"projectors {j} and {i} are not orthogonal")
        if np.max(np.abs(ps.sum(axis=0) - np.eye(ps.shape[1]))) > tol:
            raise ValueError("projectors do not sum to the identity")
        lam.setflags(write=False)
        ps.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "projectors", ps)

    @property
    def m(self) -> int:
        return self.projectors.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.projectors.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return np.einsum("i,ijk->jk", self.eigenvalues, self.projectors)

    @classmethod
    def from_matrix(cls, a, tol: float = 1e-9) -> "Observable":
        """Group the eigenvectors of a Hermitian matrix into spectral projectors."""
        a = np.asarray(a, dtype=complex)
        w, v = np.linalg.eigh(0.5 * (a + dag(a)))
        groups: list[list[int]] = []
        for idx in range(w.size):
            if groups and abs(w[idx] - w[groups[-1][0]]) <= tol:
                groups[-1].append(idx)
            else:
                groups.append([idx])
        lam = [float(np.mean(w[g])) for g in groups]
        projs = [v[:, g] @ dag(v[:, g]) for g in groups]
        return cls(lam, projs)

    @classmethod
    def trivial(cls, m: int) -> "Observable":
        return cls([1.0], [np.eye(m)])

    @classmethod
    def diagonal(cls, m: int = 2) -> "Observable":
        """Measure the level index: ``A = sum_i i a^i_i``."""
        return cls(np.arange(m, dtype=float), [np.diag(np.eye(m)[i]) for i in range(m)])

    @classmethod
    def symmetric(cls) -> "Observable":
        """Qubit observable with projectors ``(I +- sigma_x) / 2``."""
        plus = 0.5 * np.array([[1, 1], [1, 1]], dtype=complex)
        minus = 0.5 * np.array([[1, -1], [-1, 1]], dtype=complex)
        return cls([0.0, 1.0], [plus, minus])


def _check_dims(model: InteractionModel, obs: Observable):
    if obs.m != model.m:
        raise ValueError(f"observable acts on C^{obs.m} but the bath is C^{model.m}")


def _apply_kraus(kraus: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``sum_r K_r rho K_r^*`` for ``rho`` of shape ``(..., d, d)``."""
    kr = kraus.reshape((kraus.shape[0],) + (1,) * (rho.ndim - 2) + kraus.shape[1:])
    return np.sum(kr @ rho[None] @ dag(kr), axis=0)


@dataclass(frozen=True, eq=False)
class KrausFamily:
    """Conditional maps ``L_0..L_p`` built at discretisation ``n``.

    ``kraus[i]`` holds operators ``K`` with ``L_i(rho) = sum K rho K^*``:
    ``K = sqrt(beta_j) <phi| U |X_j>`` for ``phi`` running over an
    orthonormal basis of the range of ``P_i``.
    """

    n: float
    kraus: tuple

    def __post_init__(self):
        d = self.kraus[0].shape[-1]
        sup = np.stack([np.sum([np.kron(k, np.conj(k)) for k in ops], axis=0) for ops in self.kraus])
        object.__setattr__(self, "_superops", sup)
        object.__setattr__(self, "d", d)

    @property
    def n_outcomes(self) -> int:
        return len(self.kraus)

    def apply(self, i: int, rho: np.ndarray) -> np.ndarray:
        return _apply_kraus(self.kraus[i], np.asarray(rho, dtype=complex))

    def apply_all(self, rho: np.ndarray) -> np.ndarray:
        """Stack ``(p+1, ..., d, d)`` of every ``L_i(rho)``."""
        rho = np.asarray(rho, dtype=complex)
        return apply_superoperator(self._superops, rho)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return self.apply_all(rho)


def _range_basis(p: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (p + dag(p)))
    return v[:, w > 0.5]


def _kraus_ops(u_blocks: np.ndarray, probs: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    ops = []
    for j, bj in enumerate(probs):
        if bj <= 0:
            continue
        # <phi| U |X_j> = sum_a conj(phi_a) U^a_j
        ops.append(np.sqrt(bj) * np.einsum("ar,aij->rij", np.conj(vectors), u_blocks[:, j]))
    return np.concatenate(ops, axis=0)


def kraus_family(model: InteractionModel, obs: Observable, n: float) -> KrausFamily:
    """Conditional maps of one interaction plus measurement of ``obs``."""
    _check_dims(model, obs)
    ub = blocks(build_unitary(model, n), model.d, model.m)
    probs = thermal_state(model).probs
    return KrausFamily(n, tuple(_kraus_ops(ub, probs, _range_basis(p)) for p in obs.projectors))


def exprli_map(u_blocks: np.ndarray, projector: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Zero-temperature conditional map from the column blocks ``U^k_0``.

    ``sum_{k,l} <X_l|P|X_k> U^k_0 rho (U^l_0)^*``.
    """
    col = u_blocks[:, 0]
    return np.einsum("lk,kij,jq,lpq->ip", projector, col, rho, np.conj(col))


class Channel:
    """Unconditioned one-step channel ``rho -> Tr_H[U (rho (x) rho_beta) U^*]``."""

    def __init__(self, kraus: np.ndarray, n: float):
        self.kraus = kraus
        self.n = n

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return _apply_kraus(self.kraus, np.asarray(rho, dtype=complex))

    def iterate(self, rho: np.ndarray, k: int) -> np.ndarray:
        out = np.asarray(rho, dtype=complex)
        for _ in range(k):
            out = self(out)
        return out

    def superoperator(self) -> np.ndarray:
        """Matrix acting on row-major vectorised density matrices."""
        return np.sum([np.kron(k, np.conj(k)) for k in self.kraus], axis=0)


def unconditioned_channel(model: InteractionModel, n: float) -> Channel:
    ub = blocks(build_unitary(model, n), model.d, model.m)
    probs = thermal_state(model).probs
    return Channel(_kraus_ops(ub, probs, np.eye(model.m)), n)


def _probabilities(sigmas: np.ndarray) -> np.ndarray:
    p = np.real(np.einsum("i...jj->i...", sigmas))
    p = np.clip(p, 0.0, 1.0)
    total = p.sum(axis=0)
    if np.any(np.abs(total - 1.0) > 1e-8):
        raise StateError("outcome probabilities do not sum to one; invalid Kraus family")
    return p / total


def outcome_probabilities(theta: np.ndarray, fam: KrausFamily) -> np.ndarray:
    """``p_i = Tr[L_i(theta)]``, clipped to ``[0, 1]`` and renormalised."""
    return _probabilities(fam.apply_all(as_state(theta)))


def _select(sigmas: np.ndarray, u: np.ndarray):
    """Sample outcomes for a batch and form the posterior states."""
    p = _probabilities(sigmas)  # (p+1, M)
    allowed = np.where(p > PROB_FLOOR, p, 0.0)
    total = allowed.sum(axis=0)
    if np.any(total <= 0):
        raise StateError("every outcome has vanishing probability")
    cum = np.cumsum(allowed, axis=0) / total
    cum[-1] = 1.0
    idx = np.argmax(u[None, :] < cum, axis=0)
    # never land on an excluded outcome through ties at the cumulative edge
    idx = np.where(allowed[idx, np.arange(idx.size)] > 0, idx, np.argmax(allowed > 0, axis=0))
    cols = np.arange(idx.size)
    chosen = sigmas[idx, cols] / p[idx, cols][:, None, None]
    return idx, project_to_state(chosen)


def step(theta: np.ndarray, fam: KrausFamily, rng: np.random.Generator):
    """One measurement step from ``theta``: returns ``(outcome, next_state)``."""
    theta = as_state(theta)
    sigmas = fam.apply_all(theta[None])
    idx, states = _select(sigmas, np.array([rng.random()]))
    return int(idx[0]), states[0]


@dataclass(eq=False)
class DiscretePath:
    """Discrete quantum trajectory ``rho_0, rho_1, ...`` on the grid ``k/n``."""

    seed: int
    n: float
    times: np.ndarray
    states: np.ndarray
    outcomes: np.ndarray
    index: int = 0

    def to_csv(self, path, observables: Mapping[str, np.ndarray] | None = None):
        write_path_csv(path, self.times, self.states, self.outcomes, observables)


def write_path_csv(path, times, states, outcomes, observables=None):
    """CSV with ``t, outcome``, upper-triangle ``re/im`` entries and ``Tr[rho X]``.

    ``outcomes[k]`` labels the step ending at ``times[k+1]``; the first row
    has an empty outcome. Negative outcome codes are written empty.
    """
    observables = dict(observables or {})
    d = states.shape[-1]
    tri = [(i, j) for i in range(d) for j in range(i, d)]
    header = ["t", "outcome"]
    for i, j in tri:
        header += [f"re_rho_{i}{j}", f"im_rho_{i}{j}"]
    header += [f"tr_{name}" for name in observables]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, (t, rho) in enumerate(zip(times, states)):
            out = "" if k == 0 or outcomes[k - 1] < 0 else int(outcomes[k - 1])
            row = [repr(float(t)), out]
            for i, j in tri:
                row += [repr(float(rho[i, j].real)), repr(float(rho[i, j].imag))]
            row += [repr(float(expect(rho, x))) for x in observables.values()]
            w.writerow(row)


def evolve_batch(
    rho0: np.ndarray,
    fam: KrausFamily,
    n_steps: int,
    generators: Sequence[np.random.Generator],
    record: Callable[[int], bool] | None = None,
):
    """Run one chain per generator from a common initial state.

    Returns ``(recorded_steps, states, outcomes)`` where ``states`` has shape
    ``(len(recorded_steps), M, d, d)`` and ``outcomes`` has shape
    ``(M, n_steps)``.
    """
    record = record or (lambda k: True)
    m_paths = len(generators)
    rho = np.broadcast_to(as_state(rho0), (m_paths,) + np.shape(rho0)).copy()
    draws = ChunkedDraws(generators, "uniform", n_steps)
    outcomes = np.empty((m_paths, n_steps), dtype=np.int64)
    steps, snaps = [], []
    if record(0):
        steps.append(0)
        snaps.append(rho.copy())
    for k in range(n_steps):
        idx, rho = _select(fam.apply_all(rho), draws[k])
        outcomes[:, k] = idx
        if record(k + 1):
            steps.append(k + 1)
            snaps.append(rho.copy())
    return steps, np.array(snaps), outcomes


def run_trajectory(
    rho0: np.ndarray,
    model: InteractionModel,
    obs: Observable,
    n: int,
    horizon: float,
    seed: int,
    index: int = 0,
    fam: KrausFamily | None = None,
) -> DiscretePath:
    """Sample ``floor(n T)`` measurement steps with the stream ``(seed, index)``."""
    if horizon <= 0 or n < 1:
        raise ValueError("need T > 0 and n >= 1")
    fam = fam if fam is not None else kraus_family(model, obs, n)
    n_steps = int(np.floor(n * horizon + 1e-9))
    _, states, outcomes = evolve_batch(rho0, fam, n_steps, [substream(seed, index)])
    times = np.arange(n_steps + 1) / n
    return DiscretePath(seed, n, times, states[:, 0], outcomes[0], index)
