"""``qtherm`` command line: simulate, inspect the GNS data, run convergence checks."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, canonical_json, dump_matrix, load_config, run_tree
from .discrete import kraus_family, run_trajectory
from .gns import ZeroTemperatureError, build_gns_basis, thermal_limit_blocks, transport_projector, transported_unitary_column
from .harness import (
    convergence_table,
    ensemble_continuous,
    ensemble_discrete,
    euler_tolerance,
    loglog_slope,
    mean_vs_master,
)
from .matops import StateError
from .model import thermal_state
from .sde import integrate_thermal, integrate_zero_temp, solve_master_ode, zero_temp_coefficients

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
SWEEP = (2**8, 2**10, 2**12, 2**14)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(cfg: RunConfig, command: str, files: list[str], out: Path) -> None:
    _write_json(out / "manifest.json", {
        "schema": 1,
        "command": command,
        "version": __version__,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "files": sorted(files),
    })
    (out / "config.json").write_text(canonical_json(run_tree(cfg.tree)) + "\n")


def _engine(cfg: RunConfig, requested: str) -> str:
    zero = cfg.model.zero_temperature
    if requested == "thermal" and zero:
        raise ConfigError("engine.branch", "thermal engine requires finite beta")
    if requested == "zero" and not zero:
        raise ConfigError("engine.branch", "zero-temperature engine requires beta = inf")
    return "zero" if zero else "thermal"


def cmd_simulate_discrete(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    sc = cfg.scenario()
    summary = ensemble_discrete(sc, cfg.n, cfg.paths, cfg.seed, threads)
    files = ["summary.json"]
    _write_json(out / "summary.json", {"schema": 1, "config_hash": cfg.digest(), **summary.to_dict()})
    if cfg.write_paths:
        fam = kraus_family(cfg.model, cfg.observable, cfg.n)
        for q in range(min(cfg.write_paths, cfg.paths)):
            path = run_trajectory(cfg.rho0, cfg.model, cfg.observable, cfg.n, cfg.horizon, cfg.seed, q, fam)
            name = f"path_{q:04d}.csv"
            path.to_csv(out / name, cfg.functionals)
            files.append(name)
    return files


def cmd_simulate_sde(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    branch = _engine(cfg, cfg.branch)
    sc = cfg.scenario()
    summary = ensemble_continuous(sc, cfg.dt, cfg.paths, cfg.seed, threads)
    data = summary.to_dict()
    extras = data["extras"]
    counts = np.asarray(extras.pop("jump_counts"))
    intensity = np.asarray(extras.pop("intensity"))
    if counts.size:
        extras["mean_jump_count"] = counts.mean(axis=0).tolist()
        extras["mean_integrated_intensity"] = intensity.mean(axis=0).tolist()
    data["branch"] = branch
    files = ["summary.json"]
    _write_json(out / "summary.json", {"schema": 1, "config_hash": cfg.digest(), **data})
    if cfg.write_paths:
        coeffs = zero_temp_coefficients(cfg.model, cfg.observable) if branch == "zero" else None
        for q in range(min(cfg.write_paths, cfg.paths)):
            if coeffs is not None:
                path = integrate_zero_temp(cfg.rho0, coeffs, cfg.dt, cfg.horizon, cfg.seed, q)
                jname = f"jumps_{q:04d}.csv"
                path.jumps_to_csv(out / jname)
                files.append(jname)
            else:
                path = integrate_thermal(cfg.rho0, cfg.model, cfg.observable, cfg.dt, cfg.horizon, cfg.seed, q)
            name = f"path_{q:04d}.csv"
            path.to_csv(out / name, cfg.functionals)
            files.append(name)
    return files


def gns_report(cfg: RunConfig) -> dict:
    model, obs = cfg.model, cfg.observable
    if model.zero_temperature:
        raise ZeroTemperatureError("the GNS construction needs finite beta")
    th = thermal_state(model)
    basis = build_gns_basis(th)
    m = model.m
    tables = []
    for i, p in enumerate(obs.projectors):
        tp = transport_projector(p, basis, th)
        rows = []
        for a in range(m):
            for b in range(m):
                for k in range(m):
                    for l in range(m):
                        z = complex(tp[a, b, k, l])
                        rows.append({"i": a, "j": b, "k": k, "l": l, "value": [z.real, z.imag]})
        tables.append({"outcome": i, "eigenvalue": float(obs.eigenvalues[i]), "p00_00": tp.p00, "entries": rows})
    lim = thermal_limit_blocks(model)
    sweep = []
    for n in SWEEP:
        col = transported_unitary_column(model, n)
        sweep.append({
            "n": n,
            "l00": float(np.linalg.norm(col.l00 - lim.l00)),
            "lk0": float(np.linalg.norm(col.lk0 - lim.lk0)),
            "l0k": float(np.linalg.norm(col.l0k - lim.l0k)),
        })
    slope = {key: loglog_slope([r["n"] for r in sweep], [r[key] for r in sweep]) for key in ("l00", "lk0", "l0k")}
    return {
        "schema": 1,
        "config_hash": cfg.digest(),
        "thermal_probs": th.probs.tolist(),
        "basis": [
            {"i": i, "j": j, "matrix": dump_matrix(basis.elements[i, j])}
            for i in range(m) for j in range(m)
        ],
        "gram_defect": float(np.max(np.abs(basis.gram() - np.eye(m * m)))),
        "projector_tables": tables,
        "limit_blocks": {
            "l00": dump_matrix(lim.l00),
            "lk0": [dump_matrix(x) for x in lim.lk0],
            "l0k": [dump_matrix(x) for x in lim.l0k],
        },
        "residual_sweep": sweep,
        "residual_slope": slope,
    }


def cmd_gns(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    _write_json(out / "gns.json", gns_report(cfg))
    return ["gns.json"]


def cmd_converge(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    sc = cfg.scenario()
    ref = ensemble_continuous(sc, cfg.dt, cfg.paths, cfg.seed, threads)
    table = convergence_table(sc, cfg.n_list, ref, cfg.paths, cfg.seed, threads)
    rows = table.rows()
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (v if k == "n" else repr(v)) for k, v in r.items()})
    (out / "convergence.txt").write_text(table.to_text() + "\n")
    _write_json(out / "convergence.json", {
        "schema": 1,
        "config_hash": cfg.digest(),
        "rows": rows,
        "slopes": table.slopes,
        "monotone": {"mean": table.monotone("mean"), "var": table.monotone("var")},
        "within_3se": table.within(3.0),
        "reference_variance": ref.variances[-1].tolist(),
    })
    return ["convergence.csv", "convergence.json", "convergence.txt"]


def cmd_compare_master(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    sc = cfg.scenario()
    summary = ensemble_continuous(sc, cfg.dt, cfg.paths, cfg.seed, threads)
    ode = solve_master_ode(sc.rho0, sc.drift(), cfg.dt, sc.horizon)
    atol = euler_tolerance(sc, cfg.dt)
    report = mean_vs_master(summary, ode, sc.functionals, atol=atol)
    _write_json(out / "master.json", {
        "schema": 1,
        "config_hash": cfg.digest(),
        "mean": summary.means.tolist(),
        "standard_error": summary.standard_errors.tolist(),
        **report.to_dict(),
    })
    return ["master.json"]


COMMANDS = {
    "simulate-discrete": cmd_simulate_discrete,
    "simulate-sde": cmd_simulate_sde,
    "gns": cmd_gns,
    "converge": cmd_converge,
    "compare-master": cmd_compare_master,
}


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtherm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"qtherm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file or preset name")
        p.add_argument("--seed", type=_u64, help="override engine.seed")
        p.add_argument("--threads", type=_positive, default=1, help="worker cap for ensembles")
        p.add_argument("--out", help="override output.dir")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
        if args.command == "gns" and cfg.model.zero_temperature:
            raise ConfigError("model.beta", "gns needs finite beta")
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](cfg, out, args.threads)
        _manifest(cfg, args.command, files, out)
    except ConfigError as exc:
        print(f"qtherm: invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (StateError, ZeroTemperatureError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"qtherm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"qtherm: I/O error: {exc}", file=sys.stderr)
        return 1
    print(f"qtherm {args.command}: wrote {len(files)} file(s) to {out}")
    return EXIT_OK


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
