"""One-dimensional pressureless Euler system with alignment and chemotaxis.

Unknowns are cell averages of the density ``mu`` and momentum ``q = mu u`` on
a periodic grid of ``[-a, a)``. The convective part ``(mu u, mu u^2)`` uses
the local Lax-Friedrichs flux; the nonlocal alignment force, the chemotactic
drift ``eta mu grad psi`` and the external force are added explicitly; the
chemical field ``psi`` is advanced by the same solver as on the particle
side, driven by the cell-centre cloud with masses ``mu h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .dynamics import kernel_acceleration
from .fields import ChemGrid, field_step, sample_gradient, sample_values
from .measures import MonokineticMeasure
from .model import DomainError, ParticleEnsemble, Physics, SimConfig
from .transport import w2_weighted

MU_FLOOR = 1e-12
CFL_MAX = 0.5


class CFLViolation(DomainError):
    pass


@dataclass(frozen=True, eq=False)
class EulerState:
    half_width: float
    density: np.ndarray
    momentum: np.ndarray
    field: ChemGrid
    time: float = 0.0
    crossing: bool = False

    @property
    def cells(self) -> int:
        return self.density.size

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.cells

    def centers(self) -> np.ndarray:
        return -self.half_width + self.spacing * (np.arange(self.cells) + 0.5)

    def velocity(self) -> np.ndarray:
        mu = self.density
        safe = np.where(mu >= MU_FLOOR, mu, 1.0)
        return np.where(mu >= MU_FLOOR, self.momentum / safe, 0.0)

    def mass(self) -> float:
        return float(np.sum(self.density) * self.spacing)

    def total_momentum(self) -> float:
        return float(np.sum(self.momentum) * self.spacing)

    def graph_cloud(self) -> ParticleEnsemble:
        """Weighted phase-space atoms ``(x_c, u_c)`` with masses ``mu_c h``."""
        w = self.density * self.spacing
        keep = w > 0
        x = self.centers()[keep]
        u = self.velocity()[keep]
        w = w[keep]
        return ParticleEnsemble(x[:, None], u[:, None], w / w.sum())

    def rows(self):
        psi = sample_values(self.field, self.centers()[:, None])
        return np.column_stack([self.centers(), self.density, self.velocity(), psi])

    COLUMNS = ("x", "mu", "u", "psi")


def euler_initial(measure: MonokineticMeasure, cells: int, half_width: float, config: SimConfig) -> EulerState:
    """Exact cell masses of the density, velocity sampled at the cell centres."""
    if cells < 8 or cells % 2:
        raise DomainError("cells must be even and at least 8")
    h = 2.0 * half_width / cells
    edges = -half_width + h * np.arange(cells + 1)
    masses = measure.density.cell_masses(edges)
    mu = masses / h
    centers = edges[:-1] + 0.5 * h
    u = measure.velocity(centers)
    from .dynamics import initial_grid

    return EulerState(half_width, mu, mu * u, initial_grid(config), 0.0)


def _llf_flux(mu, q, u):
    """Interface fluxes ``F_{k+1/2}`` between cells ``k`` and ``k+1`` (periodic)."""
    muR, qR, uR = np.roll(mu, -1), np.roll(q, -1), np.roll(u, -1)
    alpha = np.maximum(np.abs(u), np.abs(uR))
    f_mu = 0.5 * (q + qR) - 0.5 * alpha * (muR - mu)
    f_q = 0.5 * (q * u + qR * uR) - 0.5 * alpha * (qR - q)
    return f_mu, f_q


def crossing_indicator(state: EulerState) -> float:
    """``max |du/dx|`` over neighbouring occupied cells."""
    mu, u, h = state.density, state.velocity(), state.spacing
    occ = mu >= MU_FLOOR
    both = occ & np.roll(occ, -1)
    if not np.any(both):
        return 0.0
    du = np.abs(np.roll(u, -1) - u) / h
    return float(np.max(du[both]))


def euler_step(state: EulerState, dt: float, physics: Physics, check_cfl: bool = True) -> EulerState:
    """One conservative LLF step plus explicit sources and a field step."""
    mu, h = state.density, state.spacing
    u = state.velocity()
    # vacuum convention: no momentum where the velocity is undefined
    q = mu * u
    umax = float(np.max(np.abs(u)))
    if check_cfl and dt * umax / h > CFL_MAX + 1e-12:
        raise CFLViolation(f"CFL number {dt * umax / h:.3f} exceeds {CFL_MAX}")
    f_mu, f_q = _llf_flux(mu, q, u)
    mu_new = mu - dt / h * (f_mu - np.roll(f_mu, 1))
    q_new = q - dt / h * (f_q - np.roll(f_q, 1))

    # sources at the old state
    x = state.centers()
    occ = mu > 0
    src = np.zeros_like(mu)
    if np.any(occ):
        xo = x[occ][:, None]
        uo = u[occ][:, None]
        w = mu[occ] * h
        order = np.arange(w.size)
        acc = kernel_acceleration(physics.kernel, xo, uo, xo, uo, w, order)[:, 0]
        if physics.chemotaxis:
            acc = acc + physics.chemotaxis * sample_gradient(state.field, xo)[:, 0]
        if not physics.force.is_zero:
            acc = acc + physics.force(xo)[:, 0]
        src[occ] = mu[occ] * acc
    q_new = q_new + dt * src

    if np.min(mu_new) < -1e-12:
        raise DomainError(f"negative density {np.min(mu_new):.3e}")
    mu_mid = 0.5 * (mu + np.maximum(mu_new, 0.0))
    keep = mu_mid > 0
    wm = mu_mid[keep] * h
    cloud = ParticleEnsemble(x[keep][:, None], np.zeros((keep.sum(), 1)), wm / wm.sum())
    # the cloud is normalised for validation; rescale the source back to the true mass
    mass = float(wm.sum())
    g = field_step(state.field.with_values(state.field.values / mass), cloud, physics.bump, dt)
    new_field = g.with_values(g.values * mass)
    new = EulerState(state.half_width, mu_new, q_new, new_field, state.time + dt)
    crossing = crossing_indicator(new) > 1.0 / (10.0 * dt)
    return replace(new, crossing=crossing)


def euler_run(state: EulerState, t_end: float, physics: Physics, dt_max: float, cfl: float = 0.4,
              stop_on_crossing: bool = True) -> tuple[EulerState, dict]:
    """Advance to ``t_end`` with ``dt = min(dt_max, cfl h / max|u|)``; stop at a crossing."""
    steps = 0
    m0, p0 = state.mass(), state.total_momentum()
    worst_mass = 0.0
    while state.time < t_end - 1e-12:
        umax = float(np.max(np.abs(state.velocity())))
        dt = dt_max if umax == 0 else min(dt_max, cfl * state.spacing / umax)
        dt = min(dt, t_end - state.time)
        state = euler_step(state, dt, physics)
        steps += 1
        worst_mass = max(worst_mass, abs(state.mass() - m0))
        if state.crossing and stop_on_crossing:
            break
    info = {"steps": steps, "mass_drift": worst_mass, "momentum_drift": abs(state.total_momentum() - p0),
            "crossing": state.crossing, "time": state.time}
    return state, info


def monokinetic_sample(measure: MonokineticMeasure, n: int, seed: int = 0, replicate: int = 0) -> ParticleEnsemble:
    """``x_i`` iid from the density, ``v_i = u(x_i)``, weights ``1/N``."""
    return measure.sample(n, seed, replicate)


def monokinetic_distance(ensemble: ParticleEnsemble, state: EulerState) -> float:
    """Phase-space W2 between a particle cloud and the graph measure ``mu delta(v - u)``."""
    if ensemble.dim != 1:
        raise DomainError("the Euler solver is one-dimensional")
    return w2_weighted(ensemble, state.graph_cloud())[0]


def euler_to_csv(state: EulerState, path):
    from .io import write_csv

    return write_csv(path, list(EulerState.COLUMNS), state.rows())
