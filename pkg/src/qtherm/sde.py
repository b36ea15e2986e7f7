"""Continuous-time limits of the repeated measurement chain.

Zero temperature gives jump-diffusion stochastic master equations driven by
the limit blocks ``L^0_k``; positive temperature gives purely diffusive
equations driven by the GNS blocks ``L^{00}_{kl}``. All coefficient
functions accept a single state or a stack ``(..., d, d)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .discrete import Observable, _check_dims, write_path_csv
from .gns import (
    ThermalLimitBlocks,
    ZeroTemperatureError,
    build_gns_basis,
    thermal_limit_blocks,
    transport_projector,
)
from .matops import StateError, apply_superoperator, as_state, dag, project_to_state, superoperator
from .model import InteractionModel, thermal_state, zero_temp_limit_blocks
from .rng import ChunkedDraws, substream

CLASSIFY_TOL = 1e-12
JUMP_FLOOR = 1e-14
MAX_DT = 1e-2


def _tr(x: np.ndarray) -> np.ndarray:
    return np.einsum("...ii->...", x)


def _center(b: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``b - Tr[b] rho``."""
    return b - _tr(b)[..., None, None] * rho


# ---------------------------------------------------------------- zero temperature


@dataclass(frozen=True, eq=False)
class ZeroTempCoefficients:
    """Inputs of the zero-temperature limit equation.

    ``p[i, k, l]`` is the weight of ``L^0_k rho (L^0_l)^*`` in the expansion
    of outcome ``i``, that is ``<X_l| P_i |X_k>``. Outcomes are relabelled so
    that outcome 0 has ``p[0, 0, 0] > 0``; ``labels[i]`` is the original
    index of relabelled outcome ``i``.
    """

    limit: np.ndarray
    p: np.ndarray
    jump_set: tuple
    diffusive_set: tuple
    labels: tuple

    @property
    def noise_channels(self) -> tuple:
        """Outcomes carrying a Brownian motion: ``J`` plus outcome 0."""
        return (0,) + tuple(self.diffusive_set)


def zero_temp_coefficients(model: InteractionModel, obs: Observable) -> ZeroTempCoefficients:
    _check_dims(model, obs)
    p = np.transpose(obs.projectors, (0, 2, 1)).copy()
    labels = list(range(obs.n_outcomes))
    p00 = np.real(p[:, 0, 0])
    if p00[0] <= CLASSIFY_TOL:
        ref = int(np.argmax(p00 > CLASSIFY_TOL))
        labels[0], labels[ref] = labels[ref], labels[0]
        p = p[labels]
        p00 = p00[labels]
    jump = tuple(i for i in range(1, p.shape[0]) if p00[i] <= CLASSIFY_TOL)
    diff = tuple(i for i in range(1, p.shape[0]) if p00[i] > CLASSIFY_TOL)
    return ZeroTempCoefficients(zero_temp_limit_blocks(model), p, jump, diff, tuple(labels))


def lindblad_zero(rho: np.ndarray, coeffs: ZeroTempCoefficients) -> np.ndarray:
    """``L^0_0 rho + rho (L^0_0)^* + sum_k L^0_k rho (L^0_k)^*``."""
    lim = coeffs.limit
    out = lim[0] @ rho + rho @ dag(lim[0])
    for lk in lim[1:]:
        out = out + lk @ rho @ dag(lk)
    return out


def _zero_first_order(rho, i, coeffs):
    p = coeffs.p[i]
    b = np.zeros_like(rho, dtype=complex)
    for k in range(1, coeffs.limit.shape[0]):
        lk = coeffs.limit[k]
        b = b + p[k, 0] * (lk @ rho) + p[0, k] * (rho @ dag(lk))
    return b


def _p00(coeffs: ZeroTempCoefficients, i: int) -> float:
    p00 = float(np.real(coeffs.p[i, 0, 0]))
    if p00 <= CLASSIFY_TOL:
        raise ValueError(f"outcome {i} has p_00 = 0; it is a jump channel")
    return p00


def diffusive_h(rho: np.ndarray, i: int, coeffs: ZeroTempCoefficients) -> np.ndarray:
    """``(B_i(rho) - Tr[B_i(rho)] rho) / sqrt(p^i_00)`` with
    ``B_i(rho) = sum_k p^i_k0 L^0_k rho + p^i_0k rho (L^0_k)^*``."""
    p00 = _p00(coeffs, i)
    return _center(_zero_first_order(rho, i, coeffs), rho) / np.sqrt(p00)


def jump_g_v(rho: np.ndarray, i: int, coeffs: ZeroTempCoefficients):
    """Jump direction ``g_i`` and intensity ``v_i``; ``g_i = 0`` where ``v_i`` vanishes."""
    return _g_v_from(_jump_numerator(rho, i, coeffs), rho)


def _jump_numerator(rho, i, coeffs):
    p = coeffs.p[i]
    lim = coeffs.limit
    s = np.zeros_like(rho, dtype=complex)
    for k in range(1, lim.shape[0]):
        for l in range(1, lim.shape[0]):
            if p[k, l] != 0:
                s = s + p[k, l] * (lim[k] @ rho @ dag(lim[l]))
    return s


def _g_v_from(s, rho):
    v = np.real(_tr(s))
    active = v > JUMP_FLOOR
    safe = np.where(active, v, 1.0)
    g = np.where(np.asarray(active)[..., None, None], s / safe[..., None, None] - rho, 0.0)
    return g, np.where(active, v, 0.0)


# ---------------------------------------------------------------- positive temperature


@dataclass(frozen=True, eq=False)
class ThermalCoefficients:
    """GNS limit blocks and transported projectors ``p^{ij}_{kl}(m)`` per outcome."""

    blocks: ThermalLimitBlocks
    transported: np.ndarray  # (p+1, m, m, m, m)
    probs: np.ndarray

    @property
    def p00(self) -> np.ndarray:
        return np.real(self.transported[:, 0, 0, 0, 0])

    @property
    def jump_set(self) -> tuple:
        """Outcomes with vanishing ``p^{00}_{00}``; empty for every observable."""
        return tuple(int(i) for i in range(1, self.p00.size) if self.p00[i] <= CLASSIFY_TOL)


def thermal_coefficients(model: InteractionModel, obs: Observable) -> ThermalCoefficients:
    _check_dims(model, obs)
    th = thermal_state(model)
    if not th.faithful:
        raise ZeroTemperatureError("thermal coefficients need finite beta")
    basis = build_gns_basis(th)
    tp = np.array([transport_projector(p, basis, th).coeffs for p in obs.projectors])
    return ThermalCoefficients(thermal_limit_blocks(model), tp, th.probs)


def lindblad_thermal(rho: np.ndarray, model: InteractionModel) -> np.ndarray:
    """Heat-bath Lindblad generator: emission weighted by ``beta_0``, absorption by ``beta_k``."""
    b = thermal_state(model).probs
    h0 = model.h0
    out = -1j * (h0 @ rho - rho @ h0)
    for k, c in enumerate(model.couplings, start=1):
        cd = dag(c)
        cdc, ccd = cd @ c, c @ cd
        out = out - 0.5 * b[0] * (cdc @ rho + rho @ cdc - 2 * c @ rho @ cd)
        out = out - 0.5 * b[k] * (ccd @ rho + rho @ ccd - 2 * cd @ rho @ c)
    return out


def lindblad_gns(rho: np.ndarray, blocks: ThermalLimitBlocks) -> np.ndarray:
    """The same generator written with the GNS blocks.

    ``L00 rho + rho L00^* + sum_k (Lk0 rho Lk0^* + L0k rho L0k^*)``.
    """
    out = blocks.l00 @ rho + rho @ dag(blocks.l00)
    for lk in list(blocks.lk0) + list(blocks.l0k):
        out = out + lk @ rho @ dag(lk)
    return out


def diffusive_h_thermal(rho: np.ndarray, m: int, coeffs: ThermalCoefficients) -> np.ndarray:
    """Noise coefficient of outcome ``m`` at positive temperature.

    The weight of ``L rho`` for a block ``L = L^{00}_{K}`` is
    ``<I, pi(P_m) X^K>`` and the weight of ``rho L^*`` is ``<X^K, pi(P_m) I>``.
    """
    p00 = float(np.real(coeffs.transported[m, 0, 0, 0, 0]))
    return _center(_thermal_first_order(rho, m, coeffs), rho) / np.sqrt(p00)


def _thermal_first_order(rho, m, coeffs):
    c = coeffs.transported[m]
    bl = coeffs.blocks
    b = np.zeros_like(rho, dtype=complex)
    for k in range(1, c.shape[0]):
        lk0, l0k = bl.lk0[k - 1], bl.l0k[k - 1]
        b = b + c[k, 0, 0, 0] * (lk0 @ rho) + c[0, k, 0, 0] * (l0k @ rho)
        b = b + c[0, 0, k, 0] * (rho @ dag(lk0)) + c[0, 0, 0, k] * (rho @ dag(l0k))
    return b


# ---------------------------------------------------------------- integrators


@dataclass(eq=False)
class ContinuousPath:
    """One solution path on the grid ``k dt``."""

    seed: int | None
    dt: float
    times: np.ndarray
    states: np.ndarray
    jump_log: list = field(default_factory=list)
    index: int = 0
    max_trace_defect: float = 0.0
    max_repair: float = 0.0

    @property
    def jump_counts(self) -> dict:
        out: dict = {}
        for _, ch in self.jump_log:
            out[ch] = out.get(ch, 0) + 1
        return out

    def to_csv(self, path, observables=None):
        k_of = {int(round(t / self.dt)): ch for t, ch in self.jump_log}
        outcomes = np.array([k_of.get(k, -1) for k in range(1, len(self.times))], dtype=int)
        write_path_csv(path, self.times, self.states, outcomes, observables)

    def jumps_to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "channel"])
            for t, ch in self.jump_log:
                w.writerow([repr(float(t)), ch])


@dataclass(eq=False)
class SdeRun:
    """Batch of Euler paths recorded at selected steps."""

    dt: float
    steps: list
    states: np.ndarray  # (n_rec, M, d, d)
    jump_counts: np.ndarray  # (M, n_jump_channels)
    intensity: np.ndarray  # (M, n_jump_channels): sum of v_i dt along each path
    jump_events: list  # (path, step, channel)
    max_trace_defect: float
    max_repair: float

    @property
    def times(self) -> np.ndarray:
        return np.array(self.steps) * self.dt


def n_steps_for(dt: float, horizon: float) -> int:
    if not 0 < dt <= MAX_DT:
        raise ValueError(f"dt must lie in (0, {MAX_DT}]")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    return int(round(horizon / dt))


def integrate_sde(
    rho0: np.ndarray,
    drift: Callable[[np.ndarray], np.ndarray],
    diffusions: Sequence[Callable[[np.ndarray], np.ndarray]],
    jumps: Sequence[Callable[[np.ndarray], tuple]],
    dt: float,
    horizon: float,
    seed: int,
    paths: int = 1,
    first_index: int = 0,
    record: Callable[[int], bool] | None = None,
    increments: np.ndarray | None = None,
    log_events: bool = False,
) -> SdeRun:
    """Euler-Maruyama with Bernoulli thinning for the jump channels.

    Each step applies ``rho + drift dt + sum_c h_c dW_c + sum_j g_j (dN_j - v_j dt)``
    with ``P(dN_j = 1) = min(v_j dt, 1)``, then repairs with
    :func:`project_to_state`. Path ``q`` draws its Gaussian increments for
    channel ``c`` from ``substream(seed, q, 0, c)`` and its jump uniforms
    from ``substream(seed, q, 1, j)``.

    ``increments``, if given, replaces the Gaussian draws; it must have
    shape ``(n_steps, len(diffusions), paths)`` and already include the
    ``sqrt(dt)`` scale.
    """
    n_steps = n_steps_for(dt, horizon)
    record = record or (lambda k: True)
    idx = range(first_index, first_index + paths)
    rho0 = as_state(rho0)
    rho = np.broadcast_to(rho0, (paths,) + rho0.shape).copy()
    if increments is None:
        gauss = [ChunkedDraws([substream(seed, q, 0, c) for q in idx], "normal", n_steps) for c in range(len(diffusions))]
    else:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (n_steps, len(diffusions), paths):
            raise ValueError("increments must have shape (n_steps, n_diffusions, paths)")
    unif = [ChunkedDraws([substream(seed, q, 1, j) for q in idx], "uniform", n_steps) for j in range(len(jumps))]
    counts = np.zeros((paths, len(jumps)), dtype=np.int64)
    intensity = np.zeros((paths, len(jumps)))
    events: list = []
    steps, snaps = [], []
    max_defect = max_repair = 0.0
    warned = False
    sqdt = np.sqrt(dt)
    if record(0):
        steps.append(0)
        snaps.append(rho.copy())
    for k in range(n_steps):
        inc = drift(rho) * dt
        for c, h in enumerate(diffusions):
            dw = increments[k, c] if increments is not None else sqdt * gauss[c][k]
            inc = inc + h(rho) * dw[:, None, None]
        for j, jump in enumerate(jumps):
            g, v = jump(rho)
            rate = v * dt
            if not warned and np.any(rate > 0.1):
                warnings.warn("jump probability per step exceeds 0.1; reduce dt", RuntimeWarning)
                warned = True
            fired = unif[j][k] < np.minimum(rate, 1.0)
            counts[:, j] += fired
            intensity[:, j] += rate
            inc = inc + g * (fired.astype(float) - rate)[:, None, None]
            if log_events:
                events.extend((int(q), k + 1, j) for q in np.flatnonzero(fired))
        raw = rho + inc
        max_defect = max(max_defect, float(np.max(np.abs(_tr(raw) - 1.0))))
        try:
            rho = project_to_state(raw)
        except StateError as exc:
            raise StateError(f"integrator blow-up at step {k + 1}") from exc
        max_repair = max(max_repair, float(np.max(np.abs(rho - raw))))
        if record(k + 1):
            steps.append(k + 1)
            snaps.append(rho.copy())
    return SdeRun(dt, steps, np.array(snaps), counts, intensity, events, max_defect, max_repair)


def _to_path(run: SdeRun, seed, index, jump_labels=None) -> ContinuousPath:
    labels = jump_labels or list(range(run.jump_counts.shape[1]))
    log = [(step * run.dt, labels[ch]) for _, step, ch in run.jump_events]
    return ContinuousPath(
        seed, run.dt, run.times, run.states[:, 0], log, index, run.max_trace_defect, run.max_repair
    )


def _linear(fn, d):
    sup = superoperator(fn, d)
    return lambda r: apply_superoperator(sup, r)


def _centered(fn, d, scale):
    sup = superoperator(fn, d)
    return lambda r: _center(apply_superoperator(sup, r), r) * scale


def _jump(fn, d):
    sup = superoperator(fn, d)
    return lambda r: _g_v_from(apply_superoperator(sup, r), r)


def thermal_terms(model: InteractionModel, obs: Observable):
    """Drift and per-outcome noise callables of the positive-temperature equation.

    The linear parts are compiled to superoperators; the callables agree with
    :func:`lindblad_thermal` and :func:`diffusive_h_thermal`.
    """
    coeffs = thermal_coefficients(model, obs)
    if coeffs.jump_set:
        raise StateError("positive temperature produced a jump channel")  # cannot happen for valid input
    d = model.d
    drift = _linear(lambda r: lindblad_thermal(r, model), d)
    noises = [
        _centered(lambda r, m=m: _thermal_first_order(r, m, coeffs), d, 1.0 / np.sqrt(coeffs.p00[m]))
        for m in range(obs.n_outcomes)
    ]
    return drift, noises


def zero_temp_terms(coeffs: ZeroTempCoefficients):
    """Drift, noise callables for ``J + {0}`` and jump callables for ``I``."""
    d = coeffs.limit.shape[-1]
    drift = _linear(lambda r: lindblad_zero(r, coeffs), d)
    noises = [
        _centered(lambda r, i=i: _zero_first_order(r, i, coeffs), d, 1.0 / np.sqrt(_p00(coeffs, i)))
        for i in coeffs.noise_channels
    ]
    jumps = [_jump(lambda r, i=i: _jump_numerator(r, i, coeffs), d) for i in coeffs.jump_set]
    return drift, noises, jumps


def integrate_thermal(rho0, model: InteractionModel, obs: Observable, dt: float, horizon: float, seed: int, index: int = 0) -> ContinuousPath:
    """One path of the positive-temperature diffusive equation."""
    if model.zero_temperature:
        raise ZeroTemperatureError("integrate_thermal requires finite beta")
    drift, noises = thermal_terms(model, obs)
    run = integrate_sde(rho0, drift, noises, [], dt, horizon, seed, first_index=index)
    return _to_path(run, seed, index)


def integrate_zero_temp(rho0, coeffs: ZeroTempCoefficients, dt: float, horizon: float, seed: int, index: int = 0) -> ContinuousPath:
    """One path of the zero-temperature jump-diffusion equation.

    Jump channels in the log carry their original outcome labels.
    """
    drift, noises, jumps = zero_temp_terms(coeffs)
    run = integrate_sde(rho0, drift, noises, jumps, dt, horizon, seed, first_index=index, log_events=True)
    labels = [coeffs.labels[i] for i in coeffs.jump_set]
    return _to_path(run, seed, index, labels)


def solve_master_ode(rho0, drift: Callable[[np.ndarray], np.ndarray], dt: float, horizon: float) -> ContinuousPath:
    """Classical fourth-order Runge-Kutta for ``d rho / dt = drift(rho)``."""
    n_steps = n_steps_for(dt, horizon)
    rho = np.asarray(rho0, dtype=complex)
    states = [rho]
    for _ in range(n_steps):
        k1 = drift(rho)
        k2 = drift(rho + 0.5 * dt * k1)
        k3 = drift(rho + 0.5 * dt * k2)
        k4 = drift(rho + dt * k3)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        states.append(rho)
    return ContinuousPath(None, dt, np.arange(n_steps + 1) * dt, np.array(states))
