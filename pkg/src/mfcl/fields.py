"""Chemoattractant field on a periodic grid.

The field obeys ``d_t phi = D Lap phi - kappa phi + sum_j w_j chi(x - x_j)``.
Diffusion and decay are applied exactly in Fourier space; the source integral
of the variation-of-constants formula is taken by the midpoint rule. An
independent free-space evaluation of the same formula serves as oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import BumpSource, DomainError, FieldInit, ParticleEnsemble


@dataclass(frozen=True, eq=False)
class ChemGrid:
    """Field values on the nodes ``-a + k h`` (``k = 0..n-1``) of ``[-a, a)^d``."""

    dim: int
    half_width: float
    cells: int
    values: np.ndarray
    diffusivity: float = 0.0
    decay: float = 0.0
    chemotaxis: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise DomainError("grid dimension must be 1, 2 or 3")
        if self.cells < 8 or self.cells % 2:
            raise DomainError("cells per axis must be even and at least 8")
        if not self.half_width > 0:
            raise DomainError("half-width must be positive")
        if self.diffusivity < 0 or self.decay < 0 or self.chemotaxis < 0:
            raise DomainError("D, kappa and eta must be nonnegative")
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.cells,) * self.dim:
            raise DomainError(f"values shape {vals.shape} does not match {(self.cells,) * self.dim}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("non-finite field values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, dim, half_width, cells, diffusivity=0.0, decay=0.0, chemotaxis=0.0):
        return cls(dim, half_width, cells, np.zeros((cells,) * dim), diffusivity, decay, chemotaxis)

    @classmethod
    def from_function(cls, func, dim, half_width, cells, **params):
        """Grid holding ``func`` evaluated at the nodes (``func`` maps ``(..., d)`` to ``(...)``)."""
        g = cls.zeros(dim, half_width, cells, **params)
        return g.with_values(func(g.node_points()))

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.cells

    def axis(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.cells)

    def node_points(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis()] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    def with_values(self, values, time: Optional[float] = None) -> "ChemGrid":
        return replace(self, values=values, time=self.time if time is None else time)

    def mass(self) -> float:
        return float(self.values.sum() * self.spacing**self.dim)

    def same_geometry(self, other: "ChemGrid") -> bool:
        return (self.dim, self.half_width, self.cells) == (other.dim, other.half_width, other.cells)


# ---------------------------------------------------------------------------
# deposition


def check_inside(grid: ChemGrid, x: np.ndarray, margin: float = 0.0, what: str = "point"):
    lo = -grid.half_width + margin
    hi = grid.half_width - margin
    bad = np.any((x < lo) | (x >= hi), axis=1) if margin == 0 else np.any((x < lo) | (x > hi), axis=1)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DomainError(
            f"{what} {k} at {x[k].tolist()} is outside [{lo:g}, {hi:g}]"
            + (" (bump would wrap around the periodic boundary)" if margin else "")
        )


def deposit_source(ensemble: ParticleEnsemble, bump: BumpSource, grid: ChemGrid) -> np.ndarray:
    """Nodal values of ``sum_j w_j chi(x - x_j)`` by direct evaluation of ``chi``."""
    if ensemble.dim != grid.dim:
        raise DomainError("ensemble and grid dimensions differ")
    if bump.radius >= grid.half_width:
        raise DomainError("bump radius must be smaller than the box half-width")
    out = np.zeros(grid.cells**grid.dim)
    if bump.amplitude == 0:
        return out.reshape((grid.cells,) * grid.dim)
    x = ensemble.positions
    check_inside(grid, x, margin=bump.radius, what="particle")
    order = ensemble.canonical_order()
    x = x[order]
    w = ensemble.weights[order]
    keep = w > 0
    x, w = x[keep], w[keep]
    h, n, d = grid.spacing, grid.cells, grid.dim
    K = int(math.ceil(bump.radius / h)) + 1
    offs1 = np.arange(-K, K + 1)
    offs = np.stack(np.meshgrid(*([offs1] * d), indexing="ij"), axis=-1).reshape(-1, d)
    base = np.rint((x + grid.half_width) / h).astype(np.int64)
    out_flat = np.zeros(n**d)
    chunk = max(1, 2_000_000 // len(offs))
    strides = n ** np.arange(d - 1, -1, -1)
    for s in range(0, x.shape[0], chunk):
        idx = base[s:s + chunk, None, :] + offs[None, :, :]
        nodes = -grid.half_width + h * idx
        vals = w[s:s + chunk, None] * bump(nodes - x[s:s + chunk, None, :])
        flat = (np.mod(idx, n) * strides).sum(axis=-1)
        out_flat += np.bincount(flat.reshape(-1), weights=vals.reshape(-1), minlength=n**d)
    return out_flat.reshape((n,) * d)


# ---------------------------------------------------------------------------
# exact diffusion-decay step


@lru_cache(maxsize=64)
def _symbol(shape: tuple, half_width: float, D: float, kappa: float, dt: float) -> np.ndarray:
    n = shape[0]
    h = 2.0 * half_width / n
    k_full = 2.0 * np.pi * np.fft.fftfreq(n, h)
    k_half = 2.0 * np.pi * np.fft.rfftfreq(n, h)
    axes = [k_full] * (len(shape) - 1) + [k_half]
    mesh = np.meshgrid(*axes, indexing="ij")
    k2 = sum(m * m for m in mesh)
    sym = np.exp(-kappa * dt - D * dt * k2)
    sym.setflags(write=False)
    return sym


def diffuse_values(values: np.ndarray, half_width: float, D: float, kappa: float, dt: float) -> np.ndarray:
    """Multiply each Fourier mode by ``exp(-kappa dt - D |k|^2 dt)``."""
    if dt < 0:
        raise DomainError("diffusion step must be nonnegative")
    values = np.asarray(values, dtype=float)
    if D == 0 or dt == 0:
        return values * math.exp(-kappa * dt)
    sym = _symbol(values.shape, float(half_width), float(D), float(kappa), float(dt))
    axes = tuple(range(values.ndim))
    return np.fft.irfftn(np.fft.rfftn(values) * sym, s=values.shape, axes=axes)


def diffuse_step(grid: ChemGrid, dt: float) -> ChemGrid:
    vals = diffuse_values(grid.values, grid.half_width, grid.diffusivity, grid.decay, dt)
    return grid.with_values(vals, grid.time + dt)


def field_step(grid: ChemGrid, ensemble: ParticleEnsemble, bump: BumpSource, dt: float) -> ChemGrid:
    """``phi <- S(dt) phi + dt S(dt/2) f``, ``S`` the exact semigroup, ``f`` the deposited source."""
    src = deposit_source(ensemble, bump, grid)
    a, D, k = grid.half_width, grid.diffusivity, grid.decay
    vals = diffuse_values(grid.values, a, D, k, dt) + dt * diffuse_values(src, a, D, k, 0.5 * dt)
    return grid.with_values(vals, grid.time + dt)


# ---------------------------------------------------------------------------
# gradients


def nodal_gradient(grid: ChemGrid) -> np.ndarray:
    """Centred differences, shape ``(d, n, ..., n)``."""
    v = grid.values
    h2 = 2.0 * grid.spacing
    return np.stack([(np.roll(v, -1, axis=k) - np.roll(v, 1, axis=k)) / h2 for k in range(grid.dim)])


def interpolate(grid: ChemGrid, nodal: np.ndarray, x) -> np.ndarray:
    """Multilinear periodic interpolation of ``nodal`` (shape ``(c, n, ..., n)``) at ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    check_inside(grid, x)
    n, d = grid.cells, grid.dim
    s = (x + grid.half_width) / grid.spacing
    i0 = np.floor(s).astype(np.int64)
    f = s - i0
    out = np.zeros((x.shape[0], nodal.shape[0]))
    for corner in range(2**d):
        bits = [(corner >> k) & 1 for k in range(d)]
        wgt = np.ones(x.shape[0])
        idx = []
        for k, b in enumerate(bits):
            wgt = wgt * (f[:, k] if b else 1.0 - f[:, k])
            idx.append(np.mod(i0[:, k] + b, n))
        out += wgt[:, None] * nodal[(slice(None),) + tuple(idx)].T
    return out


def sample_gradient(grid: ChemGrid, x) -> np.ndarray:
    """Centred-difference gradient interpolated multilinearly to the points ``x``."""
    return interpolate(grid, nodal_gradient(grid), x)


def sample_values(grid: ChemGrid, x) -> np.ndarray:
    return interpolate(grid, grid.values[None], x)[:, 0]


def grad_gap_sup(grid_a: ChemGrid, grid_b: ChemGrid) -> float:
    """Max over nodes of the Euclidean norm of the gradient difference."""
    if not grid_a.same_geometry(grid_b):
        raise DomainError("grids have different geometry")
    diff = nodal_gradient(grid_a) - nodal_gradient(grid_b)
    return float(np.sqrt(np.max(np.sum(diff * diff, axis=0))))


# ---------------------------------------------------------------------------
# free-space oracle


@dataclass
class FieldHistory:
    """Particle clouds at uniformly spaced times, for the source time integral."""

    times: np.ndarray
    positions: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise DomainError("history needs at least one time stamp")
        if t.size > 1:
            dt = np.diff(t)
            if np.any(dt <= 0):
                raise DomainError("history times must be strictly increasing")
            if np.max(np.abs(dt - dt[0])) > 1e-9 * max(1.0, abs(dt[0])):
                raise DomainError("history times must be uniformly spaced")
        if len(self.positions) != t.size or len(self.weights) != t.size:
            raise DomainError("one cloud per time stamp required")
        self.times = t

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @classmethod
    def frozen(cls, ensemble: ParticleEnsemble, t_end: float, samples: int = 1001) -> "FieldHistory":
        times = np.linspace(0.0, t_end, samples)
        return cls(times, [ensemble.positions] * samples, [ensemble.weights] * samples)

    @classmethod
    def from_ensembles(cls, times, ensembles: Sequence[ParticleEnsemble]) -> "FieldHistory":
        return cls(np.asarray(times), [e.positions for e in ensembles], [e.weights for e in ensembles])


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def smoothed_bump(bump: BumpSource, y: np.ndarray, tau: float, D: float) -> np.ndarray:
    """``(G_{D tau} * chi)(y)`` in free space; ``y`` has shape ``(Q, d)``.

    Gauss-Legendre on ``[-r, r] intersect [y - 10 s, y + 10 s]`` per axis with
    ``s^2 = 2 D tau``; the integrand is analytic on each such box.
    """
    y = np.atleast_2d(y)
    if tau <= 0 or D == 0:
        return bump(y)
    Q, d = y.shape
    r = bump.radius
    sig = math.sqrt(2.0 * D * tau)
    lo = np.maximum(-r, y - 10 * sig)
    hi = np.minimum(r, y + 10 * sig)
    empty = np.any(hi <= lo, axis=1)
    hi = np.where(hi > lo, hi, lo)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    t = _GL_NODES if d == 1 else np.polynomial.legendre.leggauss(32)[0]
    wq = _GL_WEIGHTS if d == 1 else np.polynomial.legendre.leggauss(32)[1]
    m = t.size
    grids = np.meshgrid(*([np.arange(m)] * d), indexing="ij")
    idx = np.stack([g.reshape(-1) for g in grids], axis=-1)
    total = np.zeros(Q)
    norm = (2.0 * math.pi * sig * sig) ** (-d / 2)
    for s in range(0, Q, max(1, 200_000 // len(idx))):
        sl = slice(s, s + max(1, 200_000 // len(idx)))
        pts = mid[sl, None, :] + half[sl, None, :] * t[idx][None, :, :]
        wts = np.prod(wq[idx], axis=-1)[None, :] * np.prod(half[sl], axis=-1)[:, None]
        diff = y[sl, None, :] - pts
        g = norm * np.exp(-np.sum(diff * diff, axis=-1) / (2 * sig * sig))
        total[sl] = np.sum(wts * bump(pts) * g, axis=1)
    total[empty] = 0.0
    return total


def duhamel_oracle(history: FieldHistory, bump: BumpSource, field_init: FieldInit, t: float, query,
                   diffusivity: float, decay: float) -> np.ndarray:
    """Free-space variation-of-constants formula at time ``t`` and points ``query``.

    Trapezoid rule in ``s`` over the history stamps in ``[0, t]``; the
    Gaussian-bump convolution by :func:`smoothed_bump`; a Gaussian initial
    field is propagated in closed form.
    """
    q = np.atleast_2d(np.asarray(query, dtype=float))
    times = history.times
    if t < 0:
        raise DomainError("time must be nonnegative")
    if times[0] > 1e-12 or times[-1] < t - 1e-9 * max(1.0, t):
        raise DomainError(f"history covers [{times[0]:g}, {times[-1]:g}], need [0, {t:g}]")
    out = math.exp(-decay * t) * field_init.heat(q, t, diffusivity)
    if bump.amplitude == 0 or t == 0:
        return out
    k_end = int(np.searchsorted(times, t - 1e-9 * max(1.0, t), side="left"))
    if abs(times[k_end] - t) > 1e-9 * max(1.0, t):
        raise DomainError("t must coincide with a history stamp")
    ds = history.step
    for k in range(k_end + 1):
        wk = ds * (0.5 if k in (0, k_end) else 1.0)
        tau = t - times[k]
        xs, ws = history.positions[k], history.weights[k]
        acc = np.zeros(q.shape[0])
        for xj, wj in zip(xs, ws):
            if wj:
                acc += wj * smoothed_bump(bump, q - xj, tau, diffusivity)
        out = out + wk * math.exp(-decay * tau) * acc
    return out


# ---------------------------------------------------------------------------
# export


def field_to_csv(grid: ChemGrid, path) -> Path:
    from .io import write_csv

    pts = grid.node_points().reshape(-1, grid.dim)
    cols = [f"x{k}" for k in range(grid.dim)] + ["phi"]
    rows = np.column_stack([pts, grid.values.reshape(-1)])
    return write_csv(path, cols, rows)


def field_to_binary(grid: ChemGrid, path) -> tuple[Path, Path]:
    """Row-major float64 dump plus a JSON header with geometry and parameters."""
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    np.ascontiguousarray(grid.values, dtype="<f8").tofile(bin_path)
    header = {
        "dims": [grid.cells] * grid.dim,
        "dtype": "float64-le",
        "order": "row-major",
        "box": [-grid.half_width, grid.half_width],
        "time": grid.time,
        "D": grid.diffusivity,
        "kappa": grid.decay,
        "eta": grid.chemotaxis,
    }
    json_path = path.with_suffix(".json")
    json_path.write_text(json.dumps(header, indent=2, sort_keys=True))
    return bin_path, json_path


def field_from_binary(path) -> ChemGrid:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    dims = tuple(header["dims"])
    vals = np.fromfile(path.with_suffix(".bin"), dtype="<f8").reshape(dims)
    return ChemGrid(len(dims), header["box"][1], dims[0], vals, header["D"], header["kappa"], header["eta"],
                    header["time"])
