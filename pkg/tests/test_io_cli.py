"""Configuration parsing, manifests, CSV output and the command line."""

import json
import math
from pathlib import Path

import numpy as np
import pytest
import tomli

from mfcl import cli
from mfcl.io import (ConfigError, RunManifest, config_from_dict, config_to_toml, fmt, load_config, parse_config,
                     read_csv, verify_manifest, write_csv, write_outputs, write_table)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = {"dim": 1, "n_particles": 8, "dt": 0.1, "horizon": 1.0, "grid": {"half_width": 6.0, "cells": 64}}


def test_minimal_config_defaults():
    cfg, echo = config_from_dict(MINIMAL)
    assert cfg.seed == 0 and cfg.replicates == 1 and cfg.physics.chemotaxis == 0
    assert echo["kernel"] == {"kind": "cucker_smale", "beta": 1.0, "length": 1.0, "sigma": 1.0}
    assert echo["initial"]["x"] == {"kind": "uniform", "lo": -0.5, "hi": 0.5}
    assert echo["bump"] == {"radius": 0.5, "amplitude": 1.0}


@pytest.mark.parametrize("patch, code, needle", [
    ({"gamm": 1}, "unknown_key", "gamm"),
    ({"kernel": {"betta": 1.0}}, "unknown_key", "betta"),
    ({"dt": -0.1}, "invalid_value", "dt"),
    ({"kernel": {"kind": "morse"}}, "invalid_value", "morse"),
    ({"grid": {"half_width": 1.0, "cells": 64}}, "box_too_small", "require"),
])
def test_config_errors(patch, code, needle):
    raw = {**MINIMAL, **patch}
    with pytest.raises(ConfigError) as err:
        config_from_dict(raw)
    assert err.value.code == code and needle in str(err.value)


def test_missing_keys():
    raw = dict(MINIMAL)
    del raw["dt"]
    with pytest.raises(ConfigError, match="'dt'") as err:
        config_from_dict(raw)
    assert err.value.code == "missing_key"
    with pytest.raises(ConfigError) as err:
        config_from_dict({k: v for k, v in MINIMAL.items() if k != "grid"})
    assert err.value.code == "missing_key"


def test_box_requirement_value():
    cfg, _ = config_from_dict(MINIMAL)
    a = 0.5 * cfg.support_requirement()
    # the requirement includes two cells, so it depends on the box itself
    need = cfg.with_(half_width=a).support_requirement()
    with pytest.raises(ConfigError, match=f"{need:.6g}"):
        config_from_dict({**MINIMAL, "grid": {"half_width": a, "cells": 64}})


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_round_trip(path, tmp_path):
    cfg, echo = load_config(path)
    text = config_to_toml(cfg)
    again, echo2 = config_from_dict(tomli.loads(text))
    assert echo2 == echo
    assert repr(again) == repr(cfg)


def test_invalid_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("dim = = 1")
    with pytest.raises(ConfigError):
        parse_config(p)


def test_fmt_round_trips_floats():
    rng = np.random.default_rng(0)
    for x in rng.standard_normal(100) * 10.0 ** rng.integers(-20, 20, 100):
        assert float(fmt(x)) == x
    assert fmt(True) == "true" and fmt(np.int64(3)) == "3"


def test_csv_helpers(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["a", "b"], [])
    assert p.read_text() == "a,b\n"
    cols, arr = read_csv(p)
    assert cols == ["a", "b"] and arr.shape == (0, 2)
    p = write_table(tmp_path / "b.csv", ["n", "x"], [(1, 0.1), (2, math.pi)])
    cols, arr = read_csv(p)
    assert arr[1, 1] == math.pi


def test_outputs_and_manifest(tmp_path):
    recs = {"t.csv": (["x"], [(1.0,), (2.0,)]), "empty.csv": (["y"], [])}
    man = RunManifest("test", {"a": 1}, {"c": math.inf}, {"ok": True})
    inv = write_outputs(recs, man, tmp_path / "o1")
    inv2 = write_outputs(recs, RunManifest("test", {"a": 1}), tmp_path / "o2")
    assert inv == inv2
    data = json.loads((tmp_path / "o1" / "manifest.json").read_text())
    assert data["schema"] == 1 and data["constants"]["c"] == "inf" and data["files"] == inv
    assert (tmp_path / "o1" / "empty.csv").read_text() == "y\n"
    assert verify_manifest(tmp_path / "o1")
    (tmp_path / "o1" / "t.csv").write_text("x\n3\n")
    assert not verify_manifest(tmp_path / "o1")


# --- command line

def run_cli(*args):
    return cli.main([str(a) for a in args])


def digests(out):
    return json.loads((Path(out) / "manifest.json").read_text())["files"]


def test_cli_simulate(tmp_path, capsys):
    assert run_cli("simulate", "--config", CONFIGS / "simulate.toml", "--out", tmp_path / "a") == 0
    assert run_cli("simulate", "--config", CONFIGS / "simulate.toml", "--out", tmp_path / "b") == 0
    assert digests(tmp_path / "a") == digests(tmp_path / "b")
    assert run_cli("simulate", "--config", CONFIGS / "simulate.toml", "--seed", 8, "--out", tmp_path / "c") == 0
    assert digests(tmp_path / "a") != digests(tmp_path / "c")
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["criteria"]["velocity_and_support_bounds"] is True
    assert man["steps"] == 50 and man["config"]["seed"] == 7
    cols, rows = read_csv(tmp_path / "a" / "trajectory_rep000.csv")
    assert cols == ["t", "id", "x0", "v0", "weight"] and rows.shape == (6 * 256, 5)
    assert verify_manifest(tmp_path / "a")


def test_cli_thread_count_independent(tmp_path, monkeypatch):
    monkeypatch.delenv("MFCL_THREADS", raising=False)
    cfg = tmp_path / "fg.toml"
    text = (CONFIGS / "rates_fg.toml").read_text()
    text = text.replace("ns = [64, 128, 256, 512, 1024, 2048, 4096]", "ns = [16, 32, 64]")
    text = text.replace("reps = 32", "reps = 16").replace("reference_size = 65536", "reference_size = 1024")
    cfg.write_text(text)
    assert run_cli("rates-fg", "--config", cfg, "--threads", 1, "--out", tmp_path / "t1") == 0
    assert run_cli("rates-fg", "--config", cfg, "--threads", 3, "--out", tmp_path / "t3") == 0
    assert digests(tmp_path / "t1") == digests(tmp_path / "t3")


def test_cli_lemmas(tmp_path):
    assert run_cli("check-lemmas", "--config", CONFIGS / "lemmas.toml", "--out", tmp_path) == 0
    text = (tmp_path / "lemmas.csv").read_text().splitlines()
    assert text[0] == "case,N,atoms,total_mass,equal" and all(l.endswith("true") for l in text[1:])


def test_cli_error_codes(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text((CONFIGS / "simulate.toml").read_text().replace("half_width = 6.0", "half_width = 2.0"))
    assert run_cli("simulate", "--config", bad, "--out", tmp_path / "o") == 2
    assert "box_too_small" in capsys.readouterr().err
    assert run_cli("simulate", "--config", tmp_path / "missing.toml", "--out", tmp_path / "o") == 2
    unstable = tmp_path / "unstable.toml"
    unstable.write_text((CONFIGS / "simulate.toml").read_text().replace("dt = 0.02", "dt = 0.3")
                        .replace("horizon = 1.0", "horizon = 0.9"))
    assert run_cli("simulate", "--config", unstable, "--out", tmp_path / "u") in (0, 1)
    with pytest.raises(SystemExit):
        run_cli("simulate")


def test_cli_failing_criterion_exit_code(tmp_path, monkeypatch):
    from mfcl import experiments

    def fake(*a, **k):
        return experiments.RateTable("rates-fg", 1, [1, 2, 4], [1, 1, 1], [1.0, 1.0, 1.0], [0, 0, 0])

    monkeypatch.setattr(experiments, "fg_rate_experiment", fake)
    assert run_cli("rates-fg", "--config", CONFIGS / "rates_fg.toml", "--out", tmp_path) == 3
