"""Quantitative studies: empirical-measure rates, mean-field rates, chemical
gradient gaps, Dobrushin stability, the marginal identity for symmetrised
configurations, and the particle/Euler bridge.

Every replicate is a deterministic function of ``(seed, replicate)``;
replicates may run on a thread pool, and tables are assembled in input order.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import dynamics
from .fields import grad_gap_sup
from .hydro import euler_initial, euler_run, monokinetic_distance
from .measures import CloudMeasure, MonokineticMeasure, PhaseMeasure, ShiftedMeasure, counter_rng
from .model import DomainError, ParticleEnsemble, Physics, SimConfig, CuckerSmaleKernel, ExternalForce, rate_cd
from .transport import w2_weighted


class QuadratureFloorError(DomainError):
    pass


def thread_count(requested: Optional[int] = None) -> int:
    env = os.environ.get("MFCL_THREADS")
    if env:
        return max(1, int(env))
    return max(1, int(requested or 1))


def map_ordered(fn: Callable, items: Sequence, threads: Optional[int] = None) -> list:
    """``[fn(x) for x in items]``, possibly on a thread pool; order is preserved."""
    n = thread_count(threads)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# rate tables


@dataclass
class RateTable:
    experiment: str
    dim: int
    ns: np.ndarray
    reps: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    theory_slope: float = math.nan
    slope: float = math.nan
    slope_stderr: float = math.nan
    intercept: float = math.nan
    samples: list = field(default_factory=list)

    def __post_init__(self):
        self.ns = np.asarray(self.ns, dtype=int)
        self.reps = np.asarray(self.reps, dtype=int)
        self.means = np.asarray(self.means, dtype=float)
        self.stderrs = np.asarray(self.stderrs, dtype=float)
        if np.any(np.diff(self.ns) <= 0):
            raise DomainError("N values must be strictly increasing")
        if len(self.ns) >= 3 and np.all(self.means > 0):
            fit = stats.linregress(np.log(self.ns), np.log(self.means))
            self.slope, self.intercept, self.slope_stderr = fit.slope, fit.intercept, fit.stderr

    COLUMNS = ("N", "reps", "mean", "stderr")

    def rows(self):
        return [(int(n), int(r), float(m), float(s)) for n, r, m, s in
                zip(self.ns, self.reps, self.means, self.stderrs)]

    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.means) < 0))

    def anchored_constant(self, exponent: float = -0.5) -> float:
        """``C`` with ``mean(N_max) = C N_max^exponent``."""
        return float(self.means[-1] / self.ns[-1] ** exponent)

    def summary(self) -> dict:
        return {"experiment": self.experiment, "dim": self.dim, "slope": self.slope,
                "slope_stderr": self.slope_stderr, "intercept": self.intercept,
                "theory_slope": self.theory_slope, "decreasing": self.strictly_decreasing()}


def fit_slope(table) -> tuple[float, float]:
    """Least-squares slope of ``log mean`` against ``log N`` and its standard error."""
    if isinstance(table, RateTable):
        ns, means = table.ns, table.means
    else:
        ns, means = table
    ns, means = np.asarray(ns, float), np.asarray(means, float)
    if ns.size < 3:
        raise DomainError("fit_slope needs at least three rows")
    if np.any(means <= 0):
        raise DomainError("means must be positive for a log-log fit")
    if np.ptp(means) == 0:
        return 0.0, 0.0
    fit = stats.linregress(np.log(ns), np.log(means))
    return float(fit.slope), float(fit.stderr)


def _table(name, dim, ns, samples, theory) -> RateTable:
    arr = [np.asarray(s, float) for s in samples]
    means = [float(a.mean()) for a in arr]
    se = [float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0 for a in arr]
    return RateTable(name, dim, ns, [a.size for a in arr], means, se, theory, samples=arr)


def _theory_slope(d_phase: int) -> float:
    ns = np.array([64, 4096])
    vals = [rate_cd(int(n), d_phase) for n in ns]
    return float(np.diff(np.log(vals))[0] / np.diff(np.log(ns))[0])


def effective_dim(cloud: ParticleEnsemble) -> int:
    """Number of phase coordinates that are not constant."""
    return int(np.sum(np.ptp(cloud.phase_points(), axis=0) > 0)) or 1


# ---------------------------------------------------------------------------
# empirical-measure rate


def fg_rate_experiment(measure: PhaseMeasure, ns: Sequence[int], reps: int, seed: int = 0,
                       reference_size: Optional[int] = None, threads: Optional[int] = None) -> RateTable:
    """``E W2(mu_N, rho)^2`` against a fine quadrature of ``rho``, per ``N``."""
    ns = list(ns)
    M = reference_size or 16 * max(ns)
    ref = measure.quadrature(M)
    d_eff = effective_dim(ref)

    def one(args):
        n, r = args
        s = measure.sample(n, seed, r)
        return w2_weighted(s, ref)[0] ** 2

    jobs = [(n, r) for n in ns for r in range(reps)]
    vals = map_ordered(one, jobs, threads)
    samples = [vals[k * reps:(k + 1) * reps] for k in range(len(ns))]
    table = _table("rates-fg", measure.dim, ns, samples, _theory_slope(d_eff))
    floor = measure.floor_sq(M)
    smallest = float(np.min(table.means))
    if floor > 0 and floor >= 0.1 * smallest:
        raise QuadratureFloorError(
            f"quadrature floor {floor:.3e} is not below 10% of the smallest mean {smallest:.3e}; "
            "increase reference_size")
    return table


# ---------------------------------------------------------------------------
# mean-field and chemical-gap studies


@dataclass
class ParticleStudy:
    meanfield: RateTable
    chemgap: RateTable
    reference_summary: dict
    floor_sq: float
    monitor: list


_STUDY_CACHE: dict = {}


def particle_study(config: SimConfig, ns: Sequence[int], reference_size: int, reps: int,
                   threads: Optional[int] = None, use_cache: bool = True) -> ParticleStudy:
    """Particle runs against one Vlasov reference at ``t* = config.horizon``.

    For each ``N`` and replicate the squared phase-space W2 to the reference
    cloud and the squared sup-norm gap of the chemical gradients are
    recorded; both studies share the same runs.
    """
    ns = list(ns)
    if reference_size < 4 * max(ns):
        raise DomainError("reference size must be at least four times the largest N")
    key = (repr(config), tuple(ns), reference_size, reps)
    if use_cache and key in _STUDY_CACHE:
        return _STUDY_CACHE[key]
    ref = dynamics.vlasov_reference(config, reference_size)
    ref_final = ref.final

    def one(args):
        n, r = args
        rec = dynamics.simulate(config.with_(n_particles=n), replicate=r)
        fin = rec.final
        w2sq = w2_weighted(fin.ensemble, ref_final.ensemble)[0] ** 2
        gap = grad_gap_sup(fin.grid, ref_final.grid)
        return w2sq, gap * gap

    jobs = [(n, r) for n in ns for r in range(reps)]
    vals = map_ordered(one, jobs, threads)
    w2s = [[v[0] for v in vals[k * reps:(k + 1) * reps]] for k in range(len(ns))]
    gaps = [[v[1] for v in vals[k * reps:(k + 1) * reps]] for k in range(len(ns))]
    d_eff = effective_dim(config.initial.quadrature(reference_size))
    mf = _table("rates-meanfield", config.dim, ns, w2s, _theory_slope(d_eff))
    cg = _table("rates-chemgap", config.dim, ns, gaps, _theory_slope(d_eff))
    floor = config.initial.floor_sq(reference_size)
    smallest = float(np.min(mf.means))
    if floor > 0 and floor >= 0.1 * smallest:
        raise QuadratureFloorError(
            f"reference floor {floor:.3e} is not below 10% of the smallest mean {smallest:.3e}; "
            "increase reference_size")
    study = ParticleStudy(mf, cg, ref.summary, floor, list(dynamics.MONITOR_LOG))
    if use_cache:
        _STUDY_CACHE[key] = study
    return study


def meanfield_experiment(config: SimConfig, ns, reference_size: int, reps: int, threads=None) -> RateTable:
    return particle_study(config, ns, reference_size, reps, threads).meanfield


def chem_gap_experiment(config: SimConfig, ns, reference_size: int, reps: int, threads=None) -> RateTable:
    return particle_study(config, ns, reference_size, reps, threads).chemgap


def frozen_gap_audit(config: SimConfig, n: int, reps: int, reference_size: int, threads=None) -> list[dict]:
    """Per-replicate check of ``gap <= t Lip(grad chi) W2`` with frozen particles.

    ``config`` must switch off the kernel and chemotaxis and start at rest, so
    both clouds stay where they were drawn.
    """
    k = config.physics.kernel
    if config.physics.chemotaxis != 0 or not (isinstance(k, CuckerSmaleKernel) and k.beta == 0):
        raise DomainError("frozen reduction needs kernel and chemotaxis switched off")
    ref = dynamics.vlasov_reference(config, reference_size)
    if np.any(ref.final.ensemble.velocities != 0):
        raise DomainError("frozen reduction needs zero initial velocities")
    t = config.horizon
    lip_grad = config.physics.bump.lipschitz_constants(config.dim)[1]

    def one(r):
        rec = dynamics.simulate(config.with_(n_particles=n), replicate=r)
        w2 = w2_weighted(rec.states[0].ensemble, ref.states[0].ensemble)[0]
        gap = grad_gap_sup(rec.final.grid, ref.final.grid)
        bound = t * lip_grad * w2
        return {"replicate": r, "gap": gap, "w2": w2, "bound": bound, "ok": gap <= bound}

    return map_ordered(one, list(range(reps)), threads)


# ---------------------------------------------------------------------------
# Dobrushin stability


@dataclass
class DobrushinSeries:
    times: np.ndarray
    measured: np.ndarray
    bound: np.ndarray
    log_bound: np.ndarray
    initial: float

    COLUMNS = ("t", "measured_w2sq", "bound", "log_bound")

    def rows(self):
        return np.column_stack([self.times, self.measured, self.bound, self.log_bound])

    def holds(self) -> bool:
        return bool(np.all(self.measured <= self.bound * (1 + 1e-12) + 1e-14))


def dobrushin_pairs(base: PhaseMeasure, M: int, shift: float, perturbation: float, seed: int = 0) -> dict:
    """Translated copy and a randomly jittered quadrature of ``base``."""
    d = base.dim
    cloud = base.quadrature(M)
    noise = perturbation * (2 * counter_rng(seed, 0).random((cloud.size, 2 * d)) - 1)
    jittered = ParticleEnsemble(cloud.positions + noise[:, :d], cloud.velocities + noise[:, d:], cloud.weights)
    return {"translated": ShiftedMeasure(base, [shift] * d, [0.0] * d), "perturbed": CloudMeasure(jittered)}


def dobrushin_experiment(rho1: PhaseMeasure, rho2: PhaseMeasure, config: SimConfig, M: int) -> DobrushinSeries:
    """Two transported quadratures; measured ``W2^2`` against ``2 e^{Gamma(t)} W2(0)^2``."""
    c1, c2 = rho1.quadrature(M), rho2.quadrature(M)
    R0 = max(rho1.radius(), rho2.radius())
    x0 = max(rho1.position_max(), rho2.position_max())
    v0 = max(rho1.speed_max(), rho2.speed_max())
    consts = config.physics.constants(config.dim, config.horizon, R0, config.half_width, x0, v0)
    r1 = dynamics.run(config, c1, label="dobrushin-1", consts=consts)
    r2 = dynamics.run(config, c2, label="dobrushin-2", consts=consts)
    times = r1.times
    meas = np.array([w2_weighted(a.ensemble, b.ensemble)[0] ** 2 for a, b in zip(r1.states, r2.states)])
    w0 = meas[0]
    gam = np.asarray(consts.Gamma(times), dtype=float)
    with np.errstate(over="ignore"):
        bound = 2.0 * np.exp(gam) * w0 if w0 > 0 else np.zeros_like(gam)
    log_bound = math.log(2.0) + gam + (math.log(w0) if w0 > 0 else -math.inf)
    return DobrushinSeries(times, meas, bound, np.asarray(log_bound, float), float(w0))


# ---------------------------------------------------------------------------
# marginal identity for symmetrised configurations


def marginal_lemma_check(Z) -> dict:
    """Exact check that the first marginal of the symmetrised configuration equals ``mu_Z``.

    ``Z`` is a sequence of ``N <= 5`` phase points (tuples or arrays). The
    symmetrised measure puts mass ``1/N!`` on each relabelled configuration
    (identical configurations merge); its first marginal is read off atom by
    atom with exact rational masses.
    """
    pts = [tuple(float(c) for c in np.atleast_1d(z)) for z in Z]
    n = len(pts)
    if not 1 <= n <= 5:
        raise DomainError("marginal_lemma_check needs 1 <= N <= 5")
    total = math.factorial(n)
    sym: dict = {}
    for perm in itertools.permutations(range(n)):
        cfg = tuple(pts[p] for p in perm)
        sym[cfg] = sym.get(cfg, Fraction(0)) + Fraction(1, total)
    marginal: dict = {}
    for cfg, mass in sym.items():
        marginal[cfg[0]] = marginal.get(cfg[0], Fraction(0)) + mass
    empirical: dict = {}
    for z in pts:
        empirical[z] = empirical.get(z, Fraction(0)) + Fraction(1, n)
    return {
        "N": n,
        "equal": marginal == empirical,
        "symmetrized_atoms": len(sym),
        "symmetrized_mass": sum(sym.values(), Fraction(0)),
        "marginal": marginal,
        "empirical": empirical,
    }


# ---------------------------------------------------------------------------
# particle / Euler bridge


@dataclass
class EulerComparison:
    by_n: list
    by_h: list
    mass_drift: float
    momentum_drift: float
    crossings: list
    info: dict

    def rows(self):
        out = [("N", int(n), float(h), float(d)) for n, h, d in self.by_n]
        out += [("h", int(n), float(h), float(d)) for n, h, d in self.by_h]
        return out

    COLUMNS = ("sweep", "N", "h", "distance")


def euler_compare(config: SimConfig, ns: Sequence[int], h_values: Sequence[float], reps: int = 1,
                  h_fixed: Optional[float] = None, n_fixed: Optional[int] = None,
                  threads: Optional[int] = None) -> EulerComparison:
    """Monokinetic particle runs against Euler solutions at ``t* = config.horizon``.

    ``by_n``: mean distance for each ``N`` at the finest ``h`` (or ``h_fixed``).
    ``by_h``: mean distance for each ``h`` at the largest ``N`` (or ``n_fixed``).
    Also reports the worst Euler mass drift and the momentum drift of a
    force-free Euler run.
    """
    m = config.initial
    if not isinstance(m, MonokineticMeasure):
        raise DomainError("euler_compare needs monokinetic initial data")
    ns = list(ns)
    hs = sorted(h_values, reverse=True)
    h_fixed = h_fixed or hs[-1]
    n_fixed = n_fixed or ns[-1]
    a = config.half_width
    t_star = config.horizon
    states, infos = {}, {}
    for h in sorted(set(hs) | {h_fixed}):
        cells = int(round(2 * a / h))
        st0 = euler_initial(m, cells, a, config)
        st, info = euler_run(st0, t_star, config.physics, dt_max=config.dt)
        states[h], infos[h] = st, info

    def one(args):
        n, r = args
        rec = dynamics.simulate(config.with_(n_particles=n), replicate=r)
        e = rec.final.ensemble
        out = {}
        for h in states:
            if n == n_fixed or h == h_fixed:
                out[h] = monokinetic_distance(e, states[h])
        return out

    jobs = [(n, r) for n in ns for r in range(reps)]
    vals = map_ordered(one, jobs, threads)
    by_n = []
    for k, n in enumerate(ns):
        by_n.append((n, h_fixed, float(np.mean([v[h_fixed] for v in vals[k * reps:(k + 1) * reps]]))))
    kf = ns.index(n_fixed)
    by_h = [(n_fixed, h, float(np.mean([v[h] for v in vals[kf * reps:(kf + 1) * reps]]))) for h in hs]

    free = Physics(kernel=CuckerSmaleKernel(0.0), bump=config.physics.bump, force=ExternalForce(),
                   chemotaxis=0.0)
    align = Physics(kernel=config.physics.kernel, bump=config.physics.bump, force=ExternalForce(), chemotaxis=0.0)
    mom = 0.0
    for phys in (free, align):
        st0 = euler_initial(m, int(round(2 * a / h_fixed)), a, config)
        _, info = euler_run(st0, t_star, phys, dt_max=config.dt)
        mom = max(mom, info["momentum_drift"])
    return EulerComparison(by_n, by_h, max(i["mass_drift"] for i in infos.values()), mom,
                           [bool(i["crossing"]) for i in infos.values()],
                           {str(h): i for h, i in infos.items()})
