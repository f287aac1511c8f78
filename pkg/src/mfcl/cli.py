"""Command-line entry point ``mfcl``.

Subcommands read a TOML configuration (see :mod:`mfcl.io`) and write CSV
tables plus ``manifest.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dynamics, experiments
from .io import ConfigError, RunManifest, Stopwatch, load_config, write_outputs
from .measures import counter_rng
from .model import DomainError

DEFAULT_NS = [64, 128, 256, 512, 1024, 2048, 4096]


def _constants_dict(c) -> dict:
    t = c.horizon
    return {
        "lip_gamma": c.lip_gamma, "lip_chi": c.lip_chi, "lip_grad_chi": c.lip_grad_chi,
        "lip_force": c.lip_force, "sup_force": c.sup_force, "eta": c.chemotaxis, "horizon": t,
        "gamma0": c.gamma0, "gamma1": c.gamma1, "gamma2": c.gamma2, "Lprime": c.Lprime,
        "Mprime": c.Mprime, "Kprime": c.Kprime, "c_R": c.growth_rate, "Gamma(T)": c.Gamma(t),
    }


def _load(args):
    cfg, echo = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
        echo["seed"] = args.seed
    return cfg, echo


def cmd_simulate(args, cfg, echo):
    records = {}
    traj = None
    for r in range(cfg.replicates):
        traj = dynamics.simulate(cfg, replicate=r)
        records[f"trajectory_rep{r:03d}.csv"] = (traj.columns(), traj.rows().tolist())
        records[f"monitor_rep{r:03d}.csv"] = (list(dynamics.BoundMonitor.COLUMNS), traj.monitor.tolist())
    summary = {"monitor": traj.summary if traj else {}}
    return records, summary, _constants_dict(cfg.constants()), {}


def _ns(cfg):
    return list(cfg.experiment.get("ns", DEFAULT_NS))


def cmd_rates_fg(args, cfg, echo):
    reps = int(cfg.experiment.get("reps", 32))
    M = cfg.experiment.get("reference_size")
    table = experiments.fg_rate_experiment(cfg.initial, _ns(cfg), reps, cfg.seed, M, args.threads)
    summary = table.summary()
    crit = {"slope_le_-0.45": bool(table.slope <= -0.45)}
    return {"rates_fg.csv": (list(table.COLUMNS), table.rows())}, summary, {}, crit


def _study(args, cfg):
    reps = int(cfg.experiment.get("reps", 32))
    M = int(cfg.experiment.get("reference_size", 4 * max(_ns(cfg))))
    return experiments.particle_study(cfg, _ns(cfg), M, reps, args.threads)


def cmd_rates_meanfield(args, cfg, echo):
    t = _study(args, cfg).meanfield
    crit = {"decreasing": t.strictly_decreasing(), "slope_le_-0.45": bool(t.slope <= -0.45)}
    return ({"rates_meanfield.csv": (list(t.COLUMNS), t.rows())}, t.summary(),
            _constants_dict(cfg.constants()), crit)


def cmd_rates_chemgap(args, cfg, echo):
    t = _study(args, cfg).chemgap
    crit = {"decreasing": t.strictly_decreasing(), "slope_le_-0.45": bool(t.slope <= -0.45)}
    return ({"rates_chemgap.csv": (list(t.COLUMNS), t.rows())}, t.summary(),
            _constants_dict(cfg.constants()), crit)


def cmd_dobrushin(args, cfg, echo):
    M = int(cfg.experiment.get("quadrature_size", 1024))
    shift = float(cfg.experiment.get("shift", 0.1))
    pert = float(cfg.experiment.get("perturbation", 0.02))
    base = cfg.initial
    pairs = experiments.dobrushin_pairs(base, M, shift, pert, cfg.seed)
    records, crit, summary = {}, {}, {}
    for name, other in pairs.items():
        s = experiments.dobrushin_experiment(base, other, cfg, M)
        records[f"dobrushin_{name}.csv"] = (list(s.COLUMNS), s.rows().tolist())
        crit[f"{name}_holds"] = s.holds()
        summary[name] = {"initial_w2sq": s.initial, "final_w2sq": float(s.measured[-1])}
    return records, summary, _constants_dict(cfg.constants()), crit


def cmd_euler_compare(args, cfg, echo):
    ex = cfg.experiment
    ns = list(ex.get("n_values", [256, 1024, 4096]))
    hs = list(ex.get("h_values", [1 / 128, 1 / 256, 1 / 512]))
    reps = int(ex.get("reps", 4))
    cmp_ = experiments.euler_compare(cfg, ns, hs, reps, threads=args.threads)
    dn = [d for _, _, d in cmp_.by_n]
    dh = [d for _, _, d in cmp_.by_h]
    crit = {
        "decreasing_in_N": bool(np.all(np.diff(dn) < 0)),
        "decreasing_under_refinement": bool(np.all(np.diff(dh) < 0)),
        "mass_conserved": cmp_.mass_drift <= 1e-10,
        "momentum_conserved": cmp_.momentum_drift <= 1e-10,
    }
    summary = {"mass_drift": cmp_.mass_drift, "momentum_drift": cmp_.momentum_drift, "crossings": cmp_.crossings}
    return {"euler_compare.csv": (list(cmp_.COLUMNS), cmp_.rows())}, summary, {}, crit


def cmd_check_lemmas(args, cfg, echo):
    rng = counter_rng(cfg.seed, 0)
    rows, crit = [], {}
    cases = []
    for n in range(1, 6):
        z = rng.standard_normal((n, 2 * cfg.dim)).round(3)
        cases.append((f"distinct_N{n}", z))
        if n >= 2:
            zr = z.copy()
            zr[-1] = zr[0]
            cases.append((f"repeated_N{n}", zr))
    for name, z in cases:
        rep = experiments.marginal_lemma_check(z)
        rows.append((name, rep["N"], rep["symmetrized_atoms"], str(rep["symmetrized_mass"]), rep["equal"]))
        crit[name] = bool(rep["equal"])
    return {"lemmas.csv": (["case", "N", "atoms", "total_mass", "equal"], rows)}, {}, {}, crit


COMMANDS = {
    "simulate": cmd_simulate,
    "rates-fg": cmd_rates_fg,
    "rates-meanfield": cmd_rates_meanfield,
    "rates-chemgap": cmd_rates_chemgap,
    "dobrushin": cmd_dobrushin,
    "euler-compare": cmd_euler_compare,
    "check-lemmas": cmd_check_lemmas,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfcl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", type=Path, default=Path("out"))
        s.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.threads = experiments.thread_count(args.threads)
    clock = Stopwatch()
    try:
        cfg, echo = _load(args)
        dynamics.reset_monitor_log()
        records, summary, consts, crit = COMMANDS[args.command](args, cfg, echo)
    except ConfigError as e:
        print(f"configuration error {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DomainError, dynamics.InvariantViolation) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    log = list(dynamics.MONITOR_LOG)
    if log:
        crit["velocity_and_support_bounds"] = all(
            e["max_velocity_ratio"] <= 1.01 and e["max_support_ratio"] <= 1.01 for e in log)
    manifest = RunManifest(args.command, echo, consts, crit, summary, wall_clock=clock(),
                           steps=sum(e["steps"] for e in log))
    write_outputs(records, manifest, args.out)
    print(json.dumps({"command": args.command, "criteria": crit, "out": str(args.out)}, default=str))
    return 0 if all(crit.values()) else 3


if __name__ == "__main__":
    sys.exit(main())
