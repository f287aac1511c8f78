"""Particle system, weighted-particle Vlasov characteristics, coupled pairs and
flow sensitivity.

One step of length ``dt`` freezes the chemical field, moves the particles
with classical RK4 on ``x' = v, v' = F(x, v)``, then advances the field with
the source of the midpoint cloud ``(X_n + X_{n+1}) / 2``. The same step
serves the ``N``-particle system (weights ``1/N``) and the Vlasov reference
(weights of a quadrature of the initial density).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import cs_acceleration, generic_acceleration
from .fields import ChemGrid, field_step, interpolate, nodal_gradient
from .model import (SAFETY, BoundConstants, CuckerSmaleKernel, DomainError, ParticleEnsemble, Physics,
                    SimConfig, support_radius)
from .transport import TransportPlan, evaluate_plan


class InvariantViolation(RuntimeError):
    """A certified bound failed beyond the discretisation allowance."""


SLACK = 0.01

_LOG_LOCK = threading.Lock()
MONITOR_LOG: list[dict] = []


def reset_monitor_log():
    with _LOG_LOCK:
        MONITOR_LOG.clear()


def _log_run(entry: dict):
    with _LOG_LOCK:
        MONITOR_LOG.append(entry)


# ---------------------------------------------------------------------------
# forces


def kernel_acceleration(kernel, xt, vt, xs, vs, ws, order) -> np.ndarray:
    """``sum_j w_j gamma(v_t - v_j, x_t - x_j)`` with sources in ``order``."""
    if isinstance(kernel, CuckerSmaleKernel):
        if kernel.beta == 0:
            return np.zeros_like(xt)
        return cs_acceleration(xt, vt, xs, vs, ws, order, kernel.beta, kernel.length, kernel.decay)
    return generic_acceleration(kernel, xt, vt, xs, vs, ws, order)


def _acceleration(physics: Physics, grid: Optional[ChemGrid], gradient, x, v, w, order, targets=None):
    xt, vt = (x, v) if targets is None else targets
    acc = kernel_acceleration(physics.kernel, xt, vt, x, v, w, order)
    if physics.chemotaxis:
        acc = acc + physics.chemotaxis * interpolate(grid, gradient, xt)
    if not physics.force.is_zero:
        acc = acc + physics.force(xt)
    return acc


def particle_rhs(ensemble: ParticleEnsemble, kernel, grid: Optional[ChemGrid], eta: float, force) -> np.ndarray:
    """Accelerations ``sum_j w_j gamma(v_i - v_j, x_i - x_j) + eta grad phi(x_i) + F(x_i)``."""
    phys = Physics(kernel=kernel, force=force, chemotaxis=eta)
    grad = nodal_gradient(grid) if eta else None
    return _acceleration(phys, grid, grad, ensemble.positions, ensemble.velocities, ensemble.weights,
                         ensemble.canonical_order())


def acceleration_field(ensemble: ParticleEnsemble, physics: Physics, grid: Optional[ChemGrid], x, v) -> np.ndarray:
    """Mean-field acceleration generated by ``ensemble`` and ``grid``, evaluated at ``(x, v)``."""
    grad = nodal_gradient(grid) if physics.chemotaxis else None
    return _acceleration(physics, grid, grad, ensemble.positions, ensemble.velocities, ensemble.weights,
                         ensemble.canonical_order(), targets=(np.asarray(x, float), np.asarray(v, float)))


# ---------------------------------------------------------------------------
# state and step


@dataclass(frozen=True, eq=False)
class SimState:
    time: float
    ensemble: ParticleEnsemble
    grid: ChemGrid
    step_count: int = 0


def step(state: SimState, dt: float, physics: Physics) -> SimState:
    """RK4 for the particles with the field frozen, then a midpoint field update."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    e, grid = state.ensemble, state.grid
    x0, v0, w = e.positions, e.velocities, e.weights
    order = e.canonical_order()
    grad = nodal_gradient(grid) if physics.chemotaxis else None

    def acc(x, v):
        return _acceleration(physics, grid, grad, x, v, w, order)

    k1x, k1v = v0, acc(x0, v0)
    x, v = x0 + 0.5 * dt * k1x, v0 + 0.5 * dt * k1v
    k2x, k2v = v, acc(x, v)
    x, v = x0 + 0.5 * dt * k2x, v0 + 0.5 * dt * k2v
    k3x, k3v = v, acc(x, v)
    x, v = x0 + dt * k3x, v0 + dt * k3v
    k4x, k4v = v, acc(x, v)
    x1 = x0 + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    v1 = v0 + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    new = e.with_state(x1, v1)
    mid = e.with_state(0.5 * (x0 + x1), 0.5 * (v0 + v1))
    new_grid = field_step(grid, mid, physics.bump, dt)
    return SimState(state.time + dt, new, new_grid, state.step_count + 1)


def initial_grid(config: SimConfig) -> ChemGrid:
    fi = config.physics.field_init
    return ChemGrid.from_function(fi, config.dim, config.half_width, config.cells,
                                  diffusivity=config.diffusivity, decay=config.decay,
                                  chemotaxis=config.physics.chemotaxis)


# ---------------------------------------------------------------------------
# monitors


class BoundMonitor:
    """Checks the velocity and support bounds after every step.

    Velocity: ``max|v(t)| <= e^{2 gamma0 t} (max|v(0)| + forcing)``.
    Support: ``max|(x, v)(t)|`` against the certified radius. The printed
    radius ``e^{c_R t}(R0 + c_R)`` is recorded alongside as a diagnostic.
    """

    def __init__(self, consts: BoundConstants, ensemble: ParticleEnsemble, label: str = "run"):
        self.consts = consts
        self.label = label
        live = ensemble.weights > 0
        self.v0 = float(np.max(np.linalg.norm(ensemble.velocities[live], axis=1)))
        self.x0 = float(np.max(np.linalg.norm(ensemble.positions[live], axis=1)))
        self.R0 = ensemble.max_radius()
        self.rows: list[tuple] = []
        self.check(0.0, ensemble, 0.0)

    def check(self, t: float, ensemble: ParticleEnsemble, field_max: float):
        live = ensemble.weights > 0
        vmax = float(np.max(np.linalg.norm(ensemble.velocities[live], axis=1)))
        zmax = float(np.max(np.linalg.norm(ensemble.phase_points()[live], axis=1)))
        vb = self.consts.velocity_bound(self.v0, t)
        rb = self.consts.certified_radius(self.R0, t, self.x0, self.v0)
        rp = support_radius(self.R0, t, self.consts)
        vr = vmax / vb if vb > 0 else (0.0 if vmax == 0 else math.inf)
        sr = zmax / rb if rb > 0 else (0.0 if zmax == 0 else math.inf)
        pr = zmax / rp if rp > 0 else (0.0 if zmax == 0 else math.inf)
        self.rows.append((t, vmax, vb, vr, zmax, rb, sr, rp, pr, field_max))
        if vr > 1.0 + SLACK:
            raise InvariantViolation(f"{self.label}: velocity bound violated at t={t:g}: {vmax:.6g} > {vb:.6g}")
        if sr > 1.0 + SLACK:
            raise InvariantViolation(f"{self.label}: support bound violated at t={t:g}: {zmax:.6g} > {rb:.6g}")

    COLUMNS = ("t", "max_speed", "velocity_bound", "velocity_ratio", "max_radius", "support_bound",
               "support_ratio", "printed_radius", "printed_ratio", "field_max")

    def table(self) -> np.ndarray:
        return np.array(self.rows, dtype=float)

    def summary(self) -> dict:
        tab = self.table()
        return {
            "label": self.label,
            "steps": len(self.rows) - 1,
            "max_velocity_ratio": float(tab[:, 3].max()),
            "max_support_ratio": float(tab[:, 6].max()),
            "max_printed_ratio": float(tab[:, 8].max()),
            "min_velocity_slack": float(np.min(tab[:, 2] * (1 + SLACK) - tab[:, 1])),
            "min_support_slack": float(np.min(tab[:, 5] * (1 + SLACK) - tab[:, 4])),
        }


@dataclass
class TrajectoryRecord:
    states: list
    monitor: np.ndarray
    constants: BoundConstants
    summary: dict = field(default_factory=dict)
    history: Optional[list] = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])

    @property
    def final(self) -> SimState:
        return self.states[-1]

    def rows(self):
        """``(t, particle id, x..., v..., weight)`` rows for every stored state."""
        out = []
        for s in self.states:
            e = s.ensemble
            ids = np.arange(e.size)
            out.append(np.column_stack([np.full(e.size, s.time), ids, e.positions, e.velocities, e.weights]))
        return np.vstack(out)

    def columns(self):
        d = self.states[0].ensemble.dim
        return ["t", "id"] + [f"x{k}" for k in range(d)] + [f"v{k}" for k in range(d)] + ["weight"]


def run(config: SimConfig, ensemble: ParticleEnsemble, label: str = "run", consts: Optional[BoundConstants] = None,
        keep_history: bool = False, horizon: Optional[float] = None) -> TrajectoryRecord:
    """Evolve ``ensemble`` under ``config`` up to ``horizon`` (default: the config's)."""
    T = config.horizon if horizon is None else horizon
    consts = consts if consts is not None else config.constants()
    n_steps = int(round(T / config.dt))
    if abs(n_steps * config.dt - T) > 1e-9 * max(1.0, T):
        raise DomainError(f"horizon {T} is not a multiple of dt {config.dt}")
    state = SimState(0.0, ensemble, initial_grid(config), 0)
    mon = BoundMonitor(consts, ensemble, label)
    states = [state]
    history = [ensemble] if keep_history else None
    for k in range(1, n_steps + 1):
        state = step(state, config.dt, config.physics)
        # avoid drift of the accumulated time stamp
        state = SimState(k * config.dt, state.ensemble, state.grid.with_values(state.grid.values, k * config.dt), k)
        mon.check(state.time, state.ensemble, float(np.max(np.abs(state.grid.values))))
        if keep_history:
            history.append(state.ensemble)
        if k % config.report_every == 0 or k == n_steps:
            states.append(state)
    summary = mon.summary()
    _log_run(summary)
    return TrajectoryRecord(states, mon.table(), consts, summary, history)


def simulate(config: SimConfig, replicate: int = 0, ensemble: Optional[ParticleEnsemble] = None,
             keep_history: bool = False) -> TrajectoryRecord:
    """``N``-particle run from iid draws of the initial measure (or a given cloud)."""
    if ensemble is None:
        ensemble = config.initial.sample(config.n_particles, config.seed, replicate)
    return run(config, ensemble, label=f"particles(N={ensemble.size}, rep={replicate})", keep_history=keep_history)


def vlasov_reference(config: SimConfig, M: int, keep_history: bool = False) -> TrajectoryRecord:
    """Weighted quadrature of the initial density transported by the same step."""
    cloud = config.initial.quadrature(M)
    return run(config, cloud, label=f"reference(M={cloud.size})", keep_history=keep_history)


def graph_scatter(ensemble: ParticleEnsemble) -> float:
    """Largest velocity jump between neighbours in ``x`` (d = 1).

    Tends to zero under refinement when the cloud sits on the graph of a
    continuous velocity field.
    """
    if ensemble.dim != 1:
        raise DomainError("graph_scatter is defined for d = 1")
    o = np.argsort(ensemble.positions[:, 0], kind="stable")
    v = ensemble.velocities[o, 0]
    return float(np.max(np.abs(np.diff(v)))) if v.size > 1 else 0.0


# ---------------------------------------------------------------------------
# coupled pair


@dataclass
class CoupledState:
    first: SimState
    second: SimState
    masses: np.ndarray

    @property
    def time(self) -> float:
        return self.first.time

    def distance_sq(self) -> float:
        """``sum_k m_k (|x_k - y_k|^2 + |v_k - xi_k|^2)``."""
        a, b = self.first.ensemble, self.second.ensemble
        d = a.phase_points() - b.phase_points()
        return float(np.sum(self.masses * np.sum(d * d, axis=1)))


@dataclass
class CoupledSeries:
    times: np.ndarray
    distance_sq: np.ndarray
    envelope: np.ndarray
    driving: np.ndarray
    growth: np.ndarray

    def rows(self):
        return np.column_stack([self.times, self.distance_sq, self.envelope, self.driving, self.growth])

    COLUMNS = ("t", "D", "envelope", "driving", "L1")


def expand_plan(cloud1: ParticleEnsemble, cloud2: ParticleEnsemble, plan: TransportPlan):
    """Matched atom pairs: atom ``k`` carries ``mass[k]`` on both sides."""
    chk = evaluate_plan(plan, cloud1, cloud2)
    if chk.residual > 1e-10:
        raise DomainError(f"plan marginal residual {chk.residual:.3e} exceeds 1e-10")
    m = plan.mass / plan.mass.sum()
    a = ParticleEnsemble(cloud1.positions[plan.src], cloud1.velocities[plan.src], m)
    b = ParticleEnsemble(cloud2.positions[plan.tgt], cloud2.velocities[plan.tgt], m)
    return a, b, m


def coupled_pair_evolution(cloud1: ParticleEnsemble, cloud2: ParticleEnsemble, plan: TransportPlan,
                           config: SimConfig, consts: Optional[BoundConstants] = None) -> CoupledSeries:
    """Evolve both clouds, each with its own self-consistent dynamics, along a coupling.

    The envelope integrates ``E' = L1(t) E + 2 delta(t)^2`` with
    ``L1 = 2 (1 + Lip(a_1^t)^2)`` and ``delta^2 = sum_k m_k |a_1 - a_2|^2``
    evaluated on the atoms of the second system; ``L1`` is frozen at the
    right end of each step and ``delta^2`` at its larger end value, which
    keeps the discrete envelope above the continuous one.
    """
    a, b, m = expand_plan(cloud1, cloud2, plan)
    if consts is None:
        R0 = max(a.max_radius(), b.max_radius())
        x0 = float(max(np.abs(a.positions).max(), np.abs(b.positions).max())) * math.sqrt(a.dim)
        v0 = float(max(np.abs(a.velocities).max(), np.abs(b.velocities).max())) * math.sqrt(a.dim)
        consts = config.physics.constants(config.dim, config.horizon, R0, config.half_width, x0, v0)
    phys = config.physics
    g0 = initial_grid(config)
    st = CoupledState(SimState(0.0, a, g0), SimState(0.0, b, g0), m)
    mon1 = BoundMonitor(consts, a, "coupled-first")
    mon2 = BoundMonitor(consts, b, "coupled-second")

    def delta_sq(s: CoupledState) -> float:
        e1, e2 = s.first.ensemble, s.second.ensemble
        a1 = acceleration_field(e1, phys, s.first.grid, e2.positions, e2.velocities)
        a2 = acceleration_field(e2, phys, s.second.grid, e2.positions, e2.velocities)
        return float(np.sum(m * np.sum((a1 - a2) ** 2, axis=1)))

    def L1(t):
        return 2.0 * (1.0 + consts.lip_meanfield(t) ** 2)

    n_steps = config.n_steps
    times, D, E, dr, gr = [0.0], [st.distance_sq()], [st.distance_sq()], [delta_sq(st)], [L1(0.0)]
    for k in range(1, n_steps + 1):
        s1 = step(st.first, config.dt, phys)
        s2 = step(st.second, config.dt, phys)
        t = k * config.dt
        st = CoupledState(s1, s2, m)
        mon1.check(t, s1.ensemble, float(np.max(np.abs(s1.grid.values))))
        mon2.check(t, s2.ensemble, float(np.max(np.abs(s2.grid.values))))
        d2 = delta_sq(st)
        l1 = L1(t)
        with np.errstate(over="ignore"):
            env = math.exp(min(l1 * config.dt, 700.0)) * (E[-1] + 2.0 * config.dt * max(dr[-1], d2))
        times.append(t)
        D.append(st.distance_sq())
        E.append(env)
        dr.append(d2)
        gr.append(l1)
    _log_run(mon1.summary())
    _log_run(mon2.summary())
    return CoupledSeries(np.array(times), np.array(D), np.array(E), np.array(dr), np.array(gr))


# ---------------------------------------------------------------------------
# flow sensitivity


def flow_sensitivity(config: SimConfig, ensemble: ParticleEnsemble, i: int, j: int, eps: Optional[float] = None,
                     t: Optional[float] = None) -> np.ndarray:
    """Central-difference block ``d z_i(t) / d z_j(0)`` of size ``2d x 2d``.

    The initial field is held fixed; only particle data are perturbed.
    """
    t = config.horizon if t is None else t
    if eps is None:
        eps = 1e-5 * max(ensemble.max_radius(), 1e-12)
    d = ensemble.dim
    consts = config.constants()
    J = np.zeros((2 * d, 2 * d))
    z0 = ensemble.phase_points()
    for c in range(2 * d):
        out = []
        for sgn in (1.0, -1.0):
            z = z0.copy()
            z[j, c] += sgn * eps
            e = ParticleEnsemble(z[:, :d], z[:, d:], ensemble.weights)
            rec = run(config, e, label=f"sensitivity(j={j}, c={c}, s={sgn:+g})", consts=consts, horizon=t)
            out.append(rec.final.ensemble.phase_points()[i])
        J[:, c] = (out[0] - out[1]) / (2.0 * eps)
    return J


def flow_bound(consts: BoundConstants, t: float) -> float:
    """``exp((gamma1 + gamma2 T) t)``."""
    return consts.flow_bound(t)
