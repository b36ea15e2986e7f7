"""Ensemble statistics and discrete-to-continuous convergence experiments."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .discrete import Observable, evolve_batch, kraus_family, unconditioned_channel
from .matops import PAULIS, as_state, expect
from .model import InteractionModel
from .rng import substream
from .sde import (
    SdeRun,
    integrate_sde,
    lindblad_thermal,
    lindblad_zero,
    n_steps_for,
    solve_master_ode,
    thermal_terms,
    zero_temp_coefficients,
    zero_temp_terms,
)

CHUNK = 2500
ROUNDOFF = 1e-12
DEFAULT_CHECKPOINTS = (0.25, 0.5, 1.0)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Model, measured observable, initial state and what to record."""

    name: str
    model: InteractionModel
    observable: Observable
    rho0: np.ndarray
    checkpoints: tuple = DEFAULT_CHECKPOINTS
    functionals: Mapping[str, np.ndarray] | None = None

    def __post_init__(self):
        object.__setattr__(self, "rho0", as_state(self.rho0))
        ts = tuple(float(t) for t in self.checkpoints)
        if not ts or ts[0] <= 0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("checkpoints must be positive and strictly increasing")
        object.__setattr__(self, "checkpoints", ts)
        if self.functionals is None:
            funcs = dict(PAULIS) if self.model.d == 2 else {}
            object.__setattr__(self, "functionals", funcs)

    @property
    def horizon(self) -> float:
        return max(self.checkpoints)

    def drift(self):
        """Generator of the averaged (master) equation."""
        if self.model.zero_temperature:
            coeffs = zero_temp_coefficients(self.model, self.observable)
            return lambda r: lindblad_zero(r, coeffs)
        return lambda r: lindblad_thermal(r, self.model)


@dataclass(eq=False)
class EnsembleSummary:
    """Per-checkpoint means, variances and standard errors over ``paths`` runs.

    ``values[t, q, f]`` is functional ``f`` on path ``q`` at ``times[t]``.
    """

    kind: str
    times: np.ndarray
    mean_states: np.ndarray
    names: tuple
    values: np.ndarray
    paths: int
    seed: int
    extras: dict = field(default_factory=dict)

    @property
    def means(self) -> np.ndarray:
        return self.values.mean(axis=1)

    @property
    def variances(self) -> np.ndarray:
        return self.values.var(axis=1, ddof=1)

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(self.variances / self.paths)

    @property
    def variance_standard_errors(self) -> np.ndarray:
        """Large-sample standard error of the sample variance."""
        centered = self.values - self.means[:, None, :]
        m4 = np.mean(centered**4, axis=1)
        var = np.mean(centered**2, axis=1)
        return np.sqrt(np.maximum(m4 - var**2, 0.0) / self.paths)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "paths": self.paths,
            "seed": self.seed,
            "times": self.times.tolist(),
            "functionals": list(self.names),
            "mean": self.means.tolist(),
            "variance": self.variances.tolist(),
            "standard_error": self.standard_errors.tolist(),
            "mean_state": [[[[z.real, z.imag] for z in row] for row in st] for st in self.mean_states],
            "extras": _jsonable(self.extras),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _chunks(paths: int, chunk: int):
    return [(start, min(chunk, paths - start)) for start in range(0, paths, chunk)]


def _map(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) == 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda j: fn(*j), jobs))


def grid_steps(times: Sequence[float], per_unit: float) -> list[int]:
    return [int(math.floor(t * per_unit + 1e-9)) for t in times]


def ensemble_discrete(scenario: Scenario, n: int, paths: int, seed: int, threads: int = 1, chunk: int = CHUNK) -> EnsembleSummary:
    """Discrete trajectories evaluated at ``rho_{floor(n t)}`` for each checkpoint."""
    if paths < 2:
        raise ValueError("need at least two paths for ensemble statistics")
    fam = kraus_family(scenario.model, scenario.observable, n)
    want = grid_steps(scenario.checkpoints, n)
    wanted = set(want)
    n_steps = max(want)

    def job(start, size):
        gens = [substream(seed, q) for q in range(start, start + size)]
        steps, states, outcomes = evolve_batch(scenario.rho0, fam, n_steps, gens, record=lambda k: k in wanted)
        counts = np.stack([np.sum(outcomes == i, axis=1) for i in range(fam.n_outcomes)], axis=1)
        return dict(zip(steps, states)), counts

    results = _map(job, _chunks(paths, chunk), threads)
    states = np.stack([np.concatenate([r[0][k] for r in results]) for k in want])
    counts = np.concatenate([r[1] for r in results])
    extras = {
        "n": n,
        "outcome_frequencies": (counts.sum(axis=0) / max(counts.sum(), 1)).tolist(),
    }
    return _summarize("discrete", scenario, states, paths, seed, extras)


def ensemble_continuous(
    scenario: Scenario,
    dt: float,
    paths: int,
    seed: int,
    threads: int = 1,
    chunk: int = CHUNK,
) -> EnsembleSummary:
    """Solutions of the limit equation recorded at the checkpoints.

    Zero-temperature models use the jump-diffusion equation, finite
    temperature the purely diffusive one.
    """
    if paths < 2:
        raise ValueError("need at least two paths for ensemble statistics")
    model, obs = scenario.model, scenario.observable
    if model.zero_temperature:
        coeffs = zero_temp_coefficients(model, obs)
        drift, noises, jumps = zero_temp_terms(coeffs)
        jump_labels = [coeffs.labels[i] for i in coeffs.jump_set]
    else:
        drift, noises = thermal_terms(model, obs)
        jumps, jump_labels = [], []
    want = [int(round(t / dt)) for t in scenario.checkpoints]
    wanted = set(want)
    n_steps_for(dt, scenario.horizon)

    def job(start, size):
        run = integrate_sde(
            scenario.rho0, drift, noises, jumps, dt, scenario.horizon, seed,
            paths=size, first_index=start, record=lambda k: k in wanted,
        )
        return run

    runs: list[SdeRun] = _map(job, _chunks(paths, chunk), threads)
    states = np.stack([np.concatenate([r.states[r.steps.index(k)] for r in runs]) for k in want])
    counts = np.concatenate([r.jump_counts for r in runs])
    intensity = np.concatenate([r.intensity for r in runs])
    extras = {
        "dt": dt,
        "jump_channels": jump_labels,
        "jump_counts": counts,
        "intensity": intensity,
        "max_trace_defect": max(r.max_trace_defect for r in runs),
        "max_repair": max(r.max_repair for r in runs),
    }
    return _summarize("continuous", scenario, states, paths, seed, extras)


def ensemble_run(kind: str, scenario: Scenario, paths: int, seed: int, *, n: int | None = None, dt: float = 1e-3, threads: int = 1) -> EnsembleSummary:
    """Dispatch to :func:`ensemble_discrete` or :func:`ensemble_continuous`."""
    if paths < 100:
        raise ValueError("ensemble_run needs at least 100 paths")
    if kind == "discrete":
        if n is None:
            raise ValueError("discrete ensembles need n")
        return ensemble_discrete(scenario, n, paths, seed, threads)
    if kind == "continuous":
        return ensemble_continuous(scenario, dt, paths, seed, threads)
    raise ValueError(f"unknown ensemble kind {kind!r}")


def _summarize(kind, scenario, states, paths, seed, extras) -> EnsembleSummary:
    names = tuple(scenario.functionals)
    values = np.stack([expect(states, x) for x in scenario.functionals.values()], axis=-1)
    if not names:
        values = np.zeros(states.shape[:2] + (0,))
    return EnsembleSummary(kind, np.array(scenario.checkpoints), states.mean(axis=1), names, values, paths, seed, extras)


def channel_mean(scenario: Scenario, n: int) -> np.ndarray:
    """Exact discrete ensemble mean at the checkpoints by iterating the channel."""
    ch = unconditioned_channel(scenario.model, n)
    rho = scenario.rho0
    out, done = [], 0
    for k in grid_steps(scenario.checkpoints, n):
        rho = ch.iterate(rho, k - done)
        done = k
        out.append(rho)
    return np.array(out)


@dataclass(eq=False)
class ConvergenceTable:
    """Discrete-versus-continuous moment distances at the final checkpoint."""

    n_list: list
    names: tuple
    mean_error: np.ndarray  # (len(n_list), F)
    mean_se: np.ndarray
    var_error: np.ndarray
    var_se: np.ndarray
    slopes: dict

    def monotone(self, which: str = "mean", slack: float = 2.0) -> bool:
        """Errors non-increasing in ``n`` up to ``slack`` combined standard errors."""
        err, se = (self.mean_error, self.mean_se) if which == "mean" else (self.var_error, self.var_se)
        return bool(np.all(err[1:] <= err[:-1] + slack * se[1:]))

    def within(self, k: float = 3.0) -> dict:
        """Whether the largest-``n`` deviations lie within ``k`` combined SE."""
        return {
            "mean": bool(np.all(self.mean_error[-1] <= k * self.mean_se[-1])),
            "var": bool(np.all(self.var_error[-1] <= k * self.var_se[-1])),
        }

    def rows(self) -> list[dict]:
        out = []
        for a, n in enumerate(self.n_list):
            row = {"n": n}
            for f, name in enumerate(self.names):
                row[f"dmean_{name}"] = float(self.mean_error[a, f])
                row[f"se_mean_{name}"] = float(self.mean_se[a, f])
                row[f"dvar_{name}"] = float(self.var_error[a, f])
                row[f"se_var_{name}"] = float(self.var_se[a, f])
            out.append(row)
        return out

    def to_text(self) -> str:
        rows = self.rows()
        cols = list(rows[0])
        width = max(12, *(len(c) for c in cols))
        lines = ["  ".join(c.rjust(width) for c in cols)]
        for r in rows:
            lines.append("  ".join((str(r[c]) if c == "n" else f"{r[c]:.4e}").rjust(width) for c in cols))
        lines.append("slopes: " + ", ".join(f"{k}={v:.3f}" for k, v in self.slopes.items()))
        return "\n".join(lines)


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def convergence_table(
    scenario: Scenario,
    n_list: Sequence[int],
    reference: EnsembleSummary,
    paths: int,
    seed: int,
    threads: int = 1,
) -> ConvergenceTable:
    """Compare discrete ensembles at each ``n`` with a continuous reference at ``t = T``."""
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly increasing")
    rm, rv = reference.means[-1], reference.variances[-1]
    rse, rvse = reference.standard_errors[-1], reference.variance_standard_errors[-1]
    me, mse, ve, vse = [], [], [], []
    for a, n in enumerate(n_list):
        s = ensemble_discrete(scenario, n, paths, seed + 7919 * (a + 1), threads)
        me.append(np.abs(s.means[-1] - rm))
        mse.append(np.hypot(s.standard_errors[-1], rse))
        ve.append(np.abs(s.variances[-1] - rv))
        vse.append(np.hypot(s.variance_standard_errors[-1], rvse))
    me, mse, ve, vse = map(np.array, (me, mse, ve, vse))
    slopes = {}
    for f, name in enumerate(reference.names):
        slopes[f"mean_{name}"] = loglog_slope(n_list, me[:, f])
        slopes[f"var_{name}"] = loglog_slope(n_list, ve[:, f])
    return ConvergenceTable(n_list, reference.names, me, mse, ve, vse, slopes)


@dataclass(eq=False)
class MasterReport:
    times: np.ndarray
    names: tuple
    deviation: np.ndarray
    z: np.ndarray
    atol: float
    sigma: float

    @property
    def passed(self) -> bool:
        return bool(np.all(np.isfinite(self.z)) and np.all(self.z <= self.sigma))

    @property
    def max_z(self) -> float:
        return float(np.max(self.z)) if self.z.size else 0.0

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "functionals": list(self.names),
            "deviation": self.deviation.tolist(),
            "z": self.z.tolist(),
            "atol": self.atol,
            "passed": self.passed,
        }


def mean_vs_master(summary: EnsembleSummary, ode, functionals: Mapping[str, np.ndarray], atol: float = 0.0, sigma: float = 3.0) -> MasterReport:
    """Ensemble means against a master-equation solution at the summary times.

    ``z = max(|deviation| - atol, 0) / SE``; a deviation within ``atol`` (the
    deterministic integrator tolerance, plus a ``1e-12`` round-off guard)
    counts as zero.
    """
    idx = []
    for t in summary.times:
        k = int(round(t / ode.dt))
        if k >= len(ode.times) or abs(ode.times[k] - t) > 1e-9:
            raise ValueError(f"time {t} is not on the ODE grid")
        idx.append(k)
    ref = np.stack([expect(ode.states[idx], x) for x in functionals.values()], axis=-1)
    dev = summary.means - ref
    excess = np.maximum(np.abs(dev) - atol - ROUNDOFF, 0.0)
    se = summary.standard_errors
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(excess == 0, 0.0, excess / se)
    return MasterReport(summary.times, tuple(functionals), dev, z, atol, sigma)


def euler_tolerance(scenario: Scenario, dt: float) -> float:
    """Gap between forward Euler and RK4 on the master equation at the checkpoints.

    The mean of an Euler-Maruyama ensemble follows forward Euler of the
    linear master equation, so this is the deterministic part of the
    ensemble-versus-ODE deviation.
    """
    drift = scenario.drift()
    ode = solve_master_ode(scenario.rho0, drift, dt, scenario.horizon)
    rho = scenario.rho0
    want = {int(round(t / dt)) for t in scenario.checkpoints}
    gap = 0.0
    for k in range(1, max(want) + 1):
        rho = rho + dt * drift(rho)
        if k in want:
            for x in scenario.functionals.values():
                gap = max(gap, abs(float(expect(rho, x) - expect(ode.states[k], x))))
    return gap
