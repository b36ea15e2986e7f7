import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qtherm.cli import main
from qtherm.config import (
    PRESETS,
    ConfigError,
    config_hash,
    parse_config,
    preset_tree,
    serialize_config,
)


def tree(**engine):
    t = preset_tree("qubit-diagonal")
    t["engine"].update(engine)
    return t


def write(tmp_path, t, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(t))
    return str(p)


def run(args):
    return main(args)


def test_presets_parse():
    for name in PRESETS:
        cfg = parse_config(preset_tree(name))
        assert cfg.model.d == 2 and cfg.observable.m == 2
    zero = parse_config(preset_tree("qubit-diagonal-zero"))
    assert math.isinf(zero.model.beta)


def test_round_trip():
    for name in PRESETS:
        cfg = parse_config(preset_tree(name))
        once = serialize_config(cfg)
        twice = serialize_config(parse_config(once))
        assert once == twice
        again = parse_config(once)
        assert np.array_equal(again.model.couplings, cfg.model.couplings)
        assert np.allclose(again.observable.projectors, cfg.observable.projectors)


@settings(max_examples=25, deadline=None)
@given(
    st.floats(0.05, 20.0),
    st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2)), min_size=4, max_size=4),
    st.integers(0, 2**64 - 1),
)
def test_round_trip_property(beta, entries, seed):
    t = preset_tree("qubit-symmetric")
    t["model"]["beta"] = beta
    t["model"]["couplings"] = [[[list(entries[0]), list(entries[1])], [list(entries[2]), list(entries[3])]]]
    t["engine"]["seed"] = seed
    first = serialize_config(parse_config(t))
    assert serialize_config(parse_config(first)) == first


@pytest.mark.parametrize(
    "edit, path",
    [
        (lambda t: t["model"].update(beta=-1), "model.beta"),
        (lambda t: t["model"]["h0"][0].__setitem__(1, [1, 0]), "model"),
        (lambda t: t["model"]["couplings"][0].__setitem__(0, [1]), "model.couplings[0][1]"),
        (lambda t: t.update(observable="weird"), "observable"),
        (lambda t: t["engine"].update(dt=0.5), "engine.dt"),
        (lambda t: t["engine"].update(n_list=[8, 4]), "engine.n_list"),
        (lambda t: t["engine"].update(paths=1), "engine.paths"),
        (lambda t: t.update(schema=2), "schema"),
        (lambda t: t["output"].update(functionals=["sq"]), "output.functionals[0]"),
        (lambda t: t.update(initial_state=[[[2, 0], [0, 0]], [[0, 0], [0, 0]]]), "initial_state"),
        (lambda t: t["model"].pop("gammas"), "model.gammas"),
    ],
)
def test_validation_names_field(edit, path):
    t = preset_tree("qubit-diagonal")
    edit(t)
    with pytest.raises(ConfigError) as err:
        parse_config(t)
    assert err.value.path == path


def test_hash_ignores_output_dir():
    a = preset_tree("qubit-diagonal")
    b = preset_tree("qubit-diagonal")
    b["output"]["dir"] = "elsewhere"
    assert config_hash(a) == config_hash(b)
    b["engine"]["seed"] = 1
    assert config_hash(a) != config_hash(b)


def test_simulate_discrete_smoke_and_bytes(tmp_path):
    args = ["simulate-discrete", "--config", "qubit-diagonal", "--seed", "7"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["config.json", "manifest.json", "path_0000.csv", "path_0001.csv", "summary.json"]
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    freq = summary["extras"]["outcome_frequencies"]
    assert len(freq) == 2 and sum(freq) == pytest.approx(1.0)
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["schema"] == 1 and manifest["config_hash"] == summary["config_hash"]


def test_simulate_sde_smoke(tmp_path):
    out = tmp_path / "z"
    assert run(["simulate-sde", "--config", "qubit-diagonal-zero", "--out", str(out), "--seed", "5"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["branch"] == "zero"
    assert "mean_jump_count" in summary["extras"]
    assert (out / "jumps_0000.csv").read_text().startswith("t,channel")
    again = tmp_path / "z2"
    run(["simulate-sde", "--config", "qubit-diagonal-zero", "--out", str(again), "--seed", "5"])
    assert (out / "summary.json").read_bytes() == (again / "summary.json").read_bytes()


def test_zero_temperature_to_thermal_engine_is_rejected(tmp_path):
    t = preset_tree("qubit-diagonal-zero")
    t["engine"]["branch"] = "thermal"
    assert run(["simulate-sde", "--config", write(tmp_path, t), "--out", str(tmp_path / "x")]) == 2


def test_gns_dump(tmp_path):
    assert run(["gns", "--config", "qubit-diagonal", "--out", str(tmp_path / "g")]) == 0
    data = json.loads((tmp_path / "g" / "gns.json").read_text())
    assert data["projector_tables"][0]["p00_00"] == pytest.approx(2 / 3)
    assert data["residual_slope"]["l00"] == pytest.approx(-1.0, abs=0.1)
    assert len(data["basis"]) == 4 and data["gram_defect"] <= 1e-12
    assert run(["gns", "--config", "qubit-symmetric", "--out", str(tmp_path / "s")]) == 0
    sym = json.loads((tmp_path / "s" / "gns.json").read_text())
    assert sym["projector_tables"][0]["p00_00"] == pytest.approx(0.5)
    assert run(["gns", "--config", "qubit-diagonal-zero", "--out", str(tmp_path / "z")]) == 2


@pytest.mark.parametrize("preset", ["qubit-diagonal-zero", "qubit-symmetric-zero", "qubit-symmetric"])
def test_converge_emits_monotone_table(tmp_path, preset):
    t = preset_tree(preset)
    t["engine"].update(paths=2000, n_list=[16, 64, 256])
    out = tmp_path / preset
    assert run(["converge", "--config", write(tmp_path, t, preset + ".json"), "--out", str(out), "--threads", "2"]) == 0
    report = json.loads((out / "convergence.json").read_text())
    assert report["monotone"]["mean"]
    assert (out / "convergence.txt").read_text().splitlines()[0].split()[0] == "n"


def test_converge_deterministic_variance_vanishes(tmp_path):
    t = tree(paths=500, n_list=[16, 256])
    out = tmp_path / "c"
    assert run(["converge", "--config", write(tmp_path, t), "--out", str(out)]) == 0
    rows = json.loads((out / "convergence.json").read_text())["rows"]
    assert rows[-1]["dvar_sz"] < rows[0]["dvar_sz"]
    assert json.loads((out / "convergence.json").read_text())["reference_variance"][2] < 1e-20


def test_compare_master(tmp_path):
    t = preset_tree("qubit-symmetric")
    t["engine"]["paths"] = 500
    out = tmp_path / "m"
    assert run(["compare-master", "--config", write(tmp_path, t), "--out", str(out)]) == 0
    assert json.loads((out / "master.json").read_text())["passed"]


def test_bad_invocations(tmp_path):
    assert run(["simulate-discrete", "--config", "no-such-preset"]) == 2
    assert run(["simulate-discrete"]) == 2
    assert run(["frobnicate", "--config", "qubit-diagonal"]) == 2
    assert run(["simulate-discrete", "--config", "qubit-diagonal", "--seed", "-1"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["gns", "--config", str(bad)]) == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    from qtherm import cli
    from qtherm.matops import StateError

    def boom(*a, **k):
        raise StateError("blow-up")

    monkeypatch.setitem(cli.COMMANDS, "simulate-sde", boom)
    assert run(["simulate-sde", "--config", "qubit-symmetric", "--out", str(tmp_path / "q")]) == 3
