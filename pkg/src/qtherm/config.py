"""Run configuration: a JSON tree with complex entries written as ``[re, im]``."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .discrete import Observable
from .harness import DEFAULT_CHECKPOINTS, Scenario
from .matops import PAULIS, StateError, as_state
from .model import InteractionModel

SCHEMA = 1
PRESETS = ("qubit-diagonal", "qubit-symmetric", "qubit-diagonal-zero", "qubit-symmetric-zero")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _complex(value, path):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value):
        return complex(value[0], value[1])
    raise ConfigError(path, "expected a number or an [re, im] pair")


def parse_matrix(value, path: str) -> np.ndarray:
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise ConfigError(path, "expected a non-empty nested list (row-major matrix)")
    width = len(value[0])
    rows = []
    for i, row in enumerate(value):
        if len(row) != width:
            raise ConfigError(f"{path}[{i}]", "ragged matrix row")
        rows.append([_complex(z, f"{path}[{i}][{j}]") for j, z in enumerate(row)])
    return np.array(rows, dtype=complex)


def dump_matrix(a: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(a, dtype=complex)]


def _beta(value, path):
    if isinstance(value, str):
        if value.lower() in ("inf", "+inf", "infinity"):
            return math.inf
        raise ConfigError(path, "beta must be a positive number or 'inf'")
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
        raise ConfigError(path, "beta must be a positive number or 'inf'")
    return float(value)


def _get(tree, key, path, default=...):
    if not isinstance(tree, dict):
        raise ConfigError(path, "expected an object")
    if key not in tree:
        if default is ...:
            raise ConfigError(f"{path}.{key}" if path else key, "missing field")
        return default
    return tree[key]


def _number(value, path, kind=float, positive=True):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, "expected a number")
    if kind is int and int(value) != value:
        raise ConfigError(path, "expected an integer")
    value = kind(value)
    if positive and not value > 0:
        raise ConfigError(path, "must be positive")
    return value


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated run configuration plus the raw tree it came from."""

    name: str
    model: InteractionModel
    observable: Observable
    rho0: np.ndarray
    n: int
    dt: float
    horizon: float
    paths: int
    seed: int
    n_list: tuple
    checkpoints: tuple
    branch: str
    out_dir: str
    functionals: dict
    write_paths: int
    tree: dict

    def scenario(self) -> Scenario:
        checkpoints = self.checkpoints or tuple(t for t in DEFAULT_CHECKPOINTS if t <= self.horizon)
        return Scenario(self.name, self.model, self.observable, self.rho0, checkpoints, self.functionals)

    def to_tree(self) -> dict:
        return copy.deepcopy(self.tree)

    def digest(self) -> str:
        return config_hash(self.tree)

    def with_overrides(self, seed=None, out=None) -> "RunConfig":
        tree = self.to_tree()
        if seed is not None:
            tree.setdefault("engine", {})["seed"] = int(seed)
        if out is not None:
            tree.setdefault("output", {})["dir"] = str(out)
        return parse_config(tree)


def run_tree(tree: dict) -> dict:
    """The tree without ``output.dir``: where files land does not change a run."""
    tree = copy.deepcopy(tree)
    if isinstance(tree.get("output"), dict):
        tree["output"].pop("dir", None)
    return tree


def config_hash(tree: dict) -> str:
    return hashlib.sha256(canonical_json(run_tree(tree)).encode()).hexdigest()


def canonical_json(tree) -> str:
    return json.dumps(tree, sort_keys=True, separators=(",", ":"))


def _observable(value, m, path) -> Observable:
    try:
        if isinstance(value, str):
            if value == "diagonal":
                return Observable.diagonal(m)
            if value == "symmetric":
                if m != 2:
                    raise ConfigError(path, "the symmetric preset needs a two-level bath (N = 1)")
                return Observable.symmetric()
            raise ConfigError(path, f"unknown observable preset {value!r}")
        if isinstance(value, dict) and "matrix" in value:
            return Observable.from_matrix(parse_matrix(value["matrix"], f"{path}.matrix"))
        lam = _get(value, "eigenvalues", path)
        projs = _get(value, "projectors", path)
        if not isinstance(projs, list):
            raise ConfigError(f"{path}.projectors", "expected a list of matrices")
        mats = [parse_matrix(p, f"{path}.projectors[{i}]") for i, p in enumerate(projs)]
        return Observable(lam, mats)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def _state(value, d, path) -> np.ndarray:
    if isinstance(value, str):
        named = {
            "plus": np.full((d, d), 1.0 / d),
            "mixed": np.eye(d) / d,
        }
        if value.startswith("e") and value[1:].isdigit() and int(value[1:]) < d:
            k = int(value[1:])
            rho = np.zeros((d, d))
            rho[k, k] = 1.0
            return rho.astype(complex)
        if value not in named:
            raise ConfigError(path, f"unknown initial state {value!r}")
        return named[value].astype(complex)
    rho = parse_matrix(value, path)
    try:
        return as_state(rho)
    except StateError as exc:
        raise ConfigError(path, str(exc)) from exc


def parse_config(tree: dict) -> RunConfig:
    """Validate a configuration tree into module-level types."""
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "expected an object")
    schema = tree.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError("schema", f"unsupported schema {schema!r}")
    mt = _get(tree, "model", "")
    h0 = parse_matrix(_get(mt, "h0", "model"), "model.h0")
    cs_raw = _get(mt, "couplings", "model")
    if not isinstance(cs_raw, list) or not cs_raw:
        raise ConfigError("model.couplings", "expected a non-empty list of matrices")
    cs = [parse_matrix(c, f"model.couplings[{i}]") for i, c in enumerate(cs_raw)]
    gammas = _get(mt, "gammas", "model")
    if not isinstance(gammas, list) or not all(isinstance(g, (int, float)) for g in gammas):
        raise ConfigError("model.gammas", "expected a list of reals")
    beta = _beta(_get(mt, "beta", "model"), "model.beta")
    try:
        model = InteractionModel(h0, cs, gammas, beta)
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from exc
    obs = _observable(_get(tree, "observable", ""), model.m, "observable")
    if obs.m != model.m:
        raise ConfigError("observable", f"acts on C^{obs.m}, bath is C^{model.m}")
    rho0 = _state(tree.get("initial_state", "plus"), model.d, "initial_state")

    eng = tree.get("engine", {})
    if not isinstance(eng, dict):
        raise ConfigError("engine", "expected an object")
    n = _number(eng.get("n", 1024), "engine.n", int)
    dt = _number(eng.get("dt", 1e-3), "engine.dt")
    if dt > 1e-2:
        raise ConfigError("engine.dt", "must be <= 1e-2")
    horizon = _number(eng.get("T", 1.0), "engine.T")
    paths = _number(eng.get("paths", 1000), "engine.paths", int)
    if paths < 2:
        raise ConfigError("engine.paths", "need at least two paths")
    seed = _number(eng.get("seed", 0), "engine.seed", int, positive=False)
    if seed < 0 or seed >= 2**64:
        raise ConfigError("engine.seed", "must be an unsigned 64-bit integer")
    n_list = eng.get("n_list", [32, 64, 128, 256])
    if not isinstance(n_list, list) or not n_list:
        raise ConfigError("engine.n_list", "expected a non-empty list")
    n_list = tuple(_number(v, f"engine.n_list[{i}]", int) for i, v in enumerate(n_list))
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError("engine.n_list", "must be strictly increasing")
    checkpoints = eng.get("checkpoints", [])
    if not isinstance(checkpoints, list):
        raise ConfigError("engine.checkpoints", "expected a list")
    checkpoints = tuple(_number(v, f"engine.checkpoints[{i}]") for i, v in enumerate(checkpoints))
    if any(t > horizon + 1e-12 for t in checkpoints):
        raise ConfigError("engine.checkpoints", "checkpoints must not exceed T")
    if checkpoints and not math.isclose(max(checkpoints), horizon):
        raise ConfigError("engine.checkpoints", "the last checkpoint must equal T")
    if not checkpoints:
        checkpoints = tuple(t for t in DEFAULT_CHECKPOINTS if t < horizon) + (horizon,)
    branch = eng.get("branch", "auto")
    if branch not in ("auto", "thermal", "zero"):
        raise ConfigError("engine.branch", "must be 'auto', 'thermal' or 'zero'")
    if branch == "thermal" and model.zero_temperature:
        raise ConfigError("engine.branch", "thermal engine requires finite beta")
    if branch == "zero" and not model.zero_temperature:
        raise ConfigError("engine.branch", "zero-temperature engine requires beta = inf")

    out = tree.get("output", {})
    if not isinstance(out, dict):
        raise ConfigError("output", "expected an object")
    out_dir = str(out.get("dir", "out"))
    names = out.get("functionals", list(PAULIS) if model.d == 2 else [])
    functionals = {}
    for i, f in enumerate(names):
        path = f"output.functionals[{i}]"
        if isinstance(f, str):
            if f not in PAULIS or model.d != 2:
                raise ConfigError(path, f"unknown functional {f!r}")
            functionals[f] = PAULIS[f]
        elif isinstance(f, dict):
            name = _get(f, "name", path)
            mat = parse_matrix(_get(f, "matrix", path), f"{path}.matrix")
            if mat.shape != (model.d, model.d):
                raise ConfigError(f"{path}.matrix", "must match the system dimension")
            functionals[str(name)] = mat
        else:
            raise ConfigError(path, "expected a Pauli name or {name, matrix}")
    write_paths = _number(out.get("write_paths", 0), "output.write_paths", int, positive=False)
    return RunConfig(
        str(tree.get("name", "run")), model, obs, rho0, n, dt, horizon, paths, seed,
        n_list, checkpoints, branch, out_dir, functionals, write_paths, copy.deepcopy(tree),
    )


def serialize_config(cfg: RunConfig) -> dict:
    """Canonical tree for a validated configuration."""
    m = cfg.model
    obs = cfg.observable
    tree = {
        "schema": SCHEMA,
        "name": cfg.name,
        "model": {
            "h0": dump_matrix(m.h0),
            "couplings": [dump_matrix(c) for c in m.couplings],
            "gammas": [float(g) for g in m.gammas],
            "beta": "inf" if m.zero_temperature else m.beta,
        },
        "observable": {
            "eigenvalues": [float(v) for v in obs.eigenvalues],
            "projectors": [dump_matrix(p) for p in obs.projectors],
        },
        "initial_state": dump_matrix(cfg.rho0),
        "engine": {
            "n": cfg.n, "dt": cfg.dt, "T": cfg.horizon, "paths": cfg.paths, "seed": cfg.seed,
            "n_list": list(cfg.n_list), "checkpoints": list(cfg.checkpoints), "branch": cfg.branch,
        },
        "output": {
            "dir": cfg.out_dir,
            "functionals": [{"name": k, "matrix": dump_matrix(v)} for k, v in cfg.functionals.items()],
            "write_paths": cfg.write_paths,
        },
    }
    return tree


def preset_tree(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError("--config", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("qtherm").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def load_config(source: str) -> RunConfig:
    """Parse a config file, or a preset by name."""
    path = Path(source)
    if path.is_file():
        try:
            tree = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    else:
        tree = preset_tree(source)
    return parse_config(tree)
