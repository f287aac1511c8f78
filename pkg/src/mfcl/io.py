"""Configuration files, run manifests and byte-stable CSV output.

Configuration is TOML. Top-level keys and tables::

    dim = 1                 n_particles = 256      dt = 0.02
    horizon = 1.0           seed = 0               replicates = 1
    report_every = 10

    [physics]   chemotaxis, diffusivity, decay
    [kernel]    kind = "cucker_smale" | "none"; beta, length, sigma
    [bump]      radius, amplitude
    [force]     kind = "zero" | "harmonic"; stiffness
    [field_init] kind = "zero" | "gaussian"; amplitude, width
    [initial]   kind = "product" with x = {...}, v = {...}
                kind = "monokinetic" with density = {...}, velocity = {...}
    [grid]      half_width, cells
    [experiment] free-form study parameters (see ``EXPERIMENT_KEYS``)

One-dimensional factors are ``{kind = "uniform", lo, hi}``,
``{kind = "bump", center, halfwidth, power}`` or ``{kind = "point", value}``.
Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
import tomli
import tomli_w

from . import __version__
from .measures import Bump1D, MonokineticMeasure, PointMass1D, ProductMeasure, Uniform1D, VelocityProfile
from .model import (BumpSource, CuckerSmaleKernel, DomainError, ExternalForce, FieldInit, Physics, SimConfig)

MANIFEST_SCHEMA = 1


class ConfigError(ValueError):
    """Configuration problem; ``code`` is one of ``unknown_key``, ``missing_key``,
    ``invalid_value``, ``box_too_small``."""

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


TOP_KEYS = {"dim", "n_particles", "dt", "horizon", "seed", "replicates", "report_every"}
TABLES = {"physics", "kernel", "bump", "force", "field_init", "initial", "grid", "experiment"}
REQUIRED = ("dim", "n_particles", "dt", "horizon")

DEFAULTS = {
    "seed": 0,
    "replicates": 1,
    "report_every": 1,
    "physics": {"chemotaxis": 0.0, "diffusivity": 0.0, "decay": 0.0},
    "kernel": {"kind": "cucker_smale", "beta": 1.0, "length": 1.0, "sigma": 1.0},
    "bump": {"radius": 0.5, "amplitude": 1.0},
    "force": {"kind": "zero", "stiffness": 0.0},
    "field_init": {"kind": "zero", "amplitude": 0.0, "width": 1.0},
    "initial": {"kind": "product", "x": {"kind": "uniform", "lo": -0.5, "hi": 0.5},
                "v": {"kind": "uniform", "lo": -0.5, "hi": 0.5}},
    "experiment": {},
}

FACTOR_KEYS = {
    "uniform": {"lo": 0.0, "hi": 1.0},
    "bump": {"center": 0.0, "halfwidth": 1.0, "power": 4.0},
    "point": {"value": 0.0},
}
VELOCITY_KEYS = {"offset": 0.0, "slope": 0.0, "amplitude": 0.0, "wavenumber": 1.0}
TABLE_KEYS = {
    "physics": {"chemotaxis", "diffusivity", "decay"},
    "kernel": {"kind", "beta", "length", "sigma"},
    "bump": {"radius", "amplitude"},
    "force": {"kind", "stiffness"},
    "field_init": {"kind", "amplitude", "width"},
    "grid": {"half_width", "cells"},
}
EXPERIMENT_KEYS = {
    "ns", "reps", "reference_size", "t_star", "h_values", "n_values", "shift", "perturbation",
    "quadrature_size", "report_dt", "frozen_check", "lemma_sizes", "euler_cells", "fg_measure",
}


def _reject_unknown(where: str, given: dict, allowed: Iterable[str]):
    for k in given:
        if k not in allowed:
            raise ConfigError("unknown_key", f"unknown key '{k}' in {where}")


def _merged(raw: dict, name: str, allowed: set) -> dict:
    tab = raw.get(name, {})
    if not isinstance(tab, dict):
        raise ConfigError("invalid_value", f"'{name}' must be a table")
    _reject_unknown(f"[{name}]", tab, allowed)
    return {**DEFAULTS[name], **tab}


def _factor(spec: Any, where: str):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("missing_key", f"{where} needs a table with 'kind'")
    kind = spec["kind"]
    if kind not in FACTOR_KEYS:
        raise ConfigError("invalid_value", f"{where}.kind = {kind!r} not in {sorted(FACTOR_KEYS)}")
    _reject_unknown(where, spec, set(FACTOR_KEYS[kind]) | {"kind"})
    vals = {**FACTOR_KEYS[kind], **{k: v for k, v in spec.items() if k != "kind"}}
    full = {"kind": kind, **vals}
    if kind == "uniform":
        return Uniform1D(float(vals["lo"]), float(vals["hi"])), full
    if kind == "bump":
        return Bump1D(float(vals["center"]), float(vals["halfwidth"]), float(vals["power"])), full
    return PointMass1D(float(vals["value"])), full


def _initial(raw: dict, dim: int):
    spec = raw.get("initial", DEFAULTS["initial"])
    kind = spec.get("kind", "product")
    if kind == "product":
        _reject_unknown("[initial]", spec, {"kind", "x", "v"})
        merged = {**DEFAULTS["initial"], **spec}
        fx, ex = _factor(merged["x"], "initial.x")
        fv, ev = _factor(merged["v"], "initial.v")
        return ProductMeasure.iid(dim, fx, fv), {"kind": "product", "x": ex, "v": ev}
    if kind == "monokinetic":
        _reject_unknown("[initial]", spec, {"kind", "density", "velocity"})
        if dim != 1:
            raise ConfigError("invalid_value", "monokinetic initial data is supported for dim = 1")
        if "density" not in spec:
            raise ConfigError("missing_key", "initial.density is required for monokinetic data")
        fd, ed = _factor(spec["density"], "initial.density")
        vel = spec.get("velocity", {})
        _reject_unknown("initial.velocity", vel, set(VELOCITY_KEYS))
        ev = {**VELOCITY_KEYS, **vel}
        prof = VelocityProfile(**{k: float(v) for k, v in ev.items()})
        return MonokineticMeasure(fd, prof), {"kind": "monokinetic", "density": ed, "velocity": ev}
    raise ConfigError("invalid_value", f"initial.kind = {kind!r} not in ['product', 'monokinetic']")


def config_from_dict(raw: dict, check_box: bool = True) -> tuple[SimConfig, dict]:
    """Validated :class:`SimConfig` plus the fully materialised echo dictionary."""
    _reject_unknown("top level", raw, TOP_KEYS | TABLES)
    for k in REQUIRED:
        if k not in raw:
            raise ConfigError("missing_key", f"required key '{k}' is missing")
    if "grid" not in raw:
        raise ConfigError("missing_key", "required table [grid] is missing")
    grid = raw["grid"]
    _reject_unknown("[grid]", grid, TABLE_KEYS["grid"])
    for k in ("half_width", "cells"):
        if k not in grid:
            raise ConfigError("missing_key", f"required key 'grid.{k}' is missing")
    phys = _merged(raw, "physics", TABLE_KEYS["physics"])
    kern = _merged(raw, "kernel", TABLE_KEYS["kernel"])
    bump = _merged(raw, "bump", TABLE_KEYS["bump"])
    force = _merged(raw, "force", TABLE_KEYS["force"])
    finit = _merged(raw, "field_init", TABLE_KEYS["field_init"])
    exp = raw.get("experiment", {})
    _reject_unknown("[experiment]", exp, EXPERIMENT_KEYS)
    dim = raw["dim"]
    if not isinstance(dim, int) or isinstance(dim, bool):
        raise ConfigError("invalid_value", "dim must be an integer")
    try:
        if kern["kind"] == "cucker_smale":
            kernel = CuckerSmaleKernel(float(kern["beta"]), float(kern["length"]), float(kern["sigma"]))
        elif kern["kind"] == "none":
            kernel = CuckerSmaleKernel(0.0, float(kern["length"]), float(kern["sigma"]))
        else:
            raise ConfigError("invalid_value", f"kernel.kind = {kern['kind']!r} not in ['cucker_smale', 'none']")
        physics = Physics(
            kernel=kernel,
            bump=BumpSource(float(bump["radius"]), float(bump["amplitude"])),
            force=ExternalForce(str(force["kind"]), float(force["stiffness"])),
            chemotaxis=float(phys["chemotaxis"]),
            field_init=FieldInit(str(finit["kind"]), float(finit["amplitude"]), float(finit["width"])),
        )
        initial, initial_echo = _initial(raw, dim)
        cfg = SimConfig(
            dim=dim,
            n_particles=int(raw["n_particles"]),
            dt=float(raw["dt"]),
            horizon=float(raw["horizon"]),
            physics=physics,
            diffusivity=float(phys["diffusivity"]),
            decay=float(phys["decay"]),
            initial=initial,
            half_width=float(grid["half_width"]),
            cells=int(grid["cells"]),
            seed=int(raw.get("seed", 0)),
            replicates=int(raw.get("replicates", 1)),
            report_every=int(raw.get("report_every", 1)),
            experiment=dict(exp),
        )
        cfg.n_steps
    except ConfigError:
        raise
    except (DomainError, TypeError, ValueError) as e:
        raise ConfigError("invalid_value", str(e)) from None
    if check_box:
        need = cfg.support_requirement()
        if cfg.half_width < need:
            raise ConfigError(
                "box_too_small",
                f"grid.half_width = {cfg.half_width:g} but the certified support radius, bump radius, "
                f"3 sqrt(2DT) and two cells require at least {need:.6g}",
            )
    echo = {
        "dim": dim,
        "n_particles": cfg.n_particles,
        "dt": cfg.dt,
        "horizon": cfg.horizon,
        "seed": cfg.seed,
        "replicates": cfg.replicates,
        "report_every": cfg.report_every,
        "physics": {k: float(v) for k, v in phys.items()},
        "kernel": {"kind": "cucker_smale" if kernel.beta else "none", "beta": kernel.beta, "length": kernel.length,
                   "sigma": kernel.decay},
        "bump": {k: float(v) for k, v in bump.items()},
        "force": {"kind": force["kind"], "stiffness": float(force["stiffness"])},
        "field_init": {"kind": finit["kind"], "amplitude": float(finit["amplitude"]), "width": float(finit["width"])},
        "initial": initial_echo,
        "grid": {"half_width": cfg.half_width, "cells": cfg.cells},
        "experiment": dict(exp),
    }
    return cfg, echo


def _read_toml(path) -> dict:
    with Path(path).open("rb") as fh:
        try:
            return tomli.load(fh)
        except tomli.TOMLDecodeError as e:
            raise ConfigError("invalid_value", f"{path}: {e}") from None


def parse_config(path, check_box: bool = True) -> SimConfig:
    return config_from_dict(_read_toml(path), check_box=check_box)[0]


def load_config(path, check_box: bool = True) -> tuple[SimConfig, dict]:
    return config_from_dict(_read_toml(path), check_box=check_box)


def config_echo(cfg: SimConfig) -> dict:
    """Echo dictionary reconstructed from a :class:`SimConfig`."""
    ph = cfg.physics
    k = ph.kernel
    if not isinstance(k, CuckerSmaleKernel):
        raise ConfigError("invalid_value", "only Cucker-Smale kernels are serialisable")

    def factor(f):
        if isinstance(f, Uniform1D):
            return {"kind": "uniform", "lo": f.lo, "hi": f.hi}
        if isinstance(f, Bump1D):
            return {"kind": "bump", "center": f.center, "halfwidth": f.halfwidth, "power": f.power}
        if isinstance(f, PointMass1D):
            return {"kind": "point", "value": f.value}
        raise ConfigError("invalid_value", f"cannot serialise factor {f!r}")

    m = cfg.initial
    if isinstance(m, ProductMeasure):
        if len(set(m.x_factors)) != 1 or len(set(m.v_factors)) != 1:
            raise ConfigError("invalid_value", "only iid product measures are serialisable")
        init = {"kind": "product", "x": factor(m.x_factors[0]), "v": factor(m.v_factors[0])}
    elif isinstance(m, MonokineticMeasure):
        vp = m.velocity
        init = {"kind": "monokinetic", "density": factor(m.density),
                "velocity": {"offset": vp.offset, "slope": vp.slope, "amplitude": vp.amplitude,
                             "wavenumber": vp.wavenumber}}
    else:
        raise ConfigError("invalid_value", "initial measure is not serialisable")
    return {
        "dim": cfg.dim, "n_particles": cfg.n_particles, "dt": cfg.dt, "horizon": cfg.horizon,
        "seed": cfg.seed, "replicates": cfg.replicates, "report_every": cfg.report_every,
        "physics": {"chemotaxis": ph.chemotaxis, "diffusivity": cfg.diffusivity, "decay": cfg.decay},
        "kernel": {"kind": "cucker_smale" if k.beta else "none", "beta": k.beta, "length": k.length,
                   "sigma": k.decay},
        "bump": {"radius": ph.bump.radius, "amplitude": ph.bump.amplitude},
        "force": {"kind": ph.force.kind, "stiffness": ph.force.stiffness},
        "field_init": {"kind": ph.field_init.kind, "amplitude": ph.field_init.amplitude,
                       "width": ph.field_init.width},
        "initial": init,
        "grid": {"half_width": cfg.half_width, "cells": cfg.cells},
        "experiment": dict(cfg.experiment),
    }


def config_to_toml(cfg: SimConfig) -> str:
    return tomli_w.dumps(config_echo(cfg))


# ---------------------------------------------------------------------------
# CSV


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with a fixed header; floats as 17 significant digits, ``\\n`` line ends."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


def write_csv(path, columns: Sequence[str], array, int_columns: Sequence[int] = ()) -> Path:
    arr = np.asarray(array, dtype=float).reshape(-1, len(columns)) if np.size(array) else np.zeros((0, len(columns)))
    ints = set(int_columns)
    rows = ([int(v) if k in ints else float(v) for k, v in enumerate(r)] for r in arr)
    return write_table(path, columns, rows)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    text = Path(path).read_text().splitlines()
    cols = text[0].split(",")
    if len(text) == 1:
        return cols, np.zeros((0, len(cols)))
    return cols, np.array([[float(v) for v in line.split(",")] for line in text[1:]])


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def content_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


# ---------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    command: str
    config: dict
    constants: dict = field(default_factory=dict)
    criteria: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    steps: int = 0
    version: str = __version__
    schema: int = MANIFEST_SCHEMA

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "tool_version": self.version,
            "command": self.command,
            "input_hash": content_hash(self.config),
            "config": self.config,
            "constants": self.constants,
            "criteria": self.criteria,
            "summary": self.summary,
            "files": self.files,
            "wall_clock_seconds": self.wall_clock,
            "steps": self.steps,
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_outputs(records: dict, manifest: RunManifest, out_dir) -> dict:
    """Write ``records`` (``name -> (columns, rows)``) as CSV plus ``manifest.json``.

    Returns the inventory ``name -> sha256``. The manifest carries timing,
    so only the CSV files are byte-reproducible.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inventory = {}
    for name in sorted(records):
        cols, rows = records[name]
        p = write_table(out / name, cols, rows)
        inventory[name] = sha256_file(p)
    manifest.files = inventory
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest.to_dict()), indent=2, sort_keys=True) + "\n")
    return inventory


def verify_manifest(out_dir) -> bool:
    """Recompute every digest listed in ``manifest.json``."""
    out = Path(out_dir)
    data = json.loads((out / "manifest.json").read_text())
    if "schema" not in data:
        return False
    return all(sha256_file(out / name) == digest for name, digest in data["files"].items())


class Stopwatch:
    def __init__(self):
        self.start = time.perf_counter()

    def __call__(self) -> float:
        return time.perf_counter() - self.start
