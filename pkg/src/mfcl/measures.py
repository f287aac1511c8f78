"""Initial measures on phase space: iid sampling and deterministic quadrature.

Every one-dimensional factor is described by its quantile function, so
sampling is inverse-CDF on counter-based uniforms and the quadrature of size
``m`` places ``m`` equal atoms at the quantiles ``(k + 1/2)/m``. On the line
this is the monotone quantization, and product measures inherit it factor by
factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .model import DomainError, ParticleEnsemble


def counter_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    """Philox generator whose stream is addressed by ``(seed, replicate)``.

    Draw ``k`` of particle ``i`` is element ``i * n_draws + k`` of the stream,
    so each number is a fixed function of (seed, replicate, particle, draw).
    """
    if seed < 0 or replicate < 0:
        raise DomainError("seed and replicate must be nonnegative")
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, int(replicate), 0]))


# ---------------------------------------------------------------------------
# one-dimensional factors


class Measure1D:
    lo: float
    hi: float

    def ppf(self, u):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    @property
    def degenerate(self) -> bool:
        return False

    def quantile_atoms(self, m: int) -> np.ndarray:
        return self.ppf((np.arange(m) + 0.5) / m)

    def second_moment(self) -> float:
        raise NotImplementedError

    def abs_max(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    def cell_masses(self, edges) -> np.ndarray:
        return np.diff(self.cdf(np.asarray(edges, dtype=float)))


@dataclass(frozen=True)
class Uniform1D(Measure1D):
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise DomainError("uniform measure needs hi > lo")

    def ppf(self, u):
        return self.lo + (self.hi - self.lo) * np.asarray(u, dtype=float)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def second_moment(self) -> float:
        return (self.hi**3 - self.lo**3) / (3.0 * (self.hi - self.lo))


@dataclass(frozen=True)
class Bump1D(Measure1D):
    """Density proportional to ``(1 - ((x - center)/halfwidth)^2)^power``."""

    center: float = 0.0
    halfwidth: float = 1.0
    power: float = 4.0

    def __post_init__(self):
        if not self.halfwidth > 0 or not self.power >= 0:
            raise DomainError("bump measure needs halfwidth > 0, power >= 0")

    @property
    def lo(self):
        return self.center - self.halfwidth

    @property
    def hi(self):
        return self.center + self.halfwidth

    @property
    def _beta(self):
        a = self.power + 1.0
        return stats.beta(a, a)

    def ppf(self, u):
        return self.center + self.halfwidth * (2.0 * self._beta.ppf(np.asarray(u, dtype=float)) - 1.0)

    def cdf(self, x):
        s = (np.asarray(x, dtype=float) - self.center) / self.halfwidth
        return self._beta.cdf(np.clip(0.5 * (s + 1.0), 0.0, 1.0))

    def pdf(self, x):
        s = (np.asarray(x, dtype=float) - self.center) / self.halfwidth
        return 0.5 / self.halfwidth * self._beta.pdf(np.clip(0.5 * (s + 1.0), 0.0, 1.0))

    def second_moment(self) -> float:
        var_b = self._beta.var()
        return self.center**2 + 4.0 * self.halfwidth**2 * var_b


@dataclass(frozen=True)
class PointMass1D(Measure1D):
    value: float = 0.0

    @property
    def lo(self):
        return self.value

    @property
    def hi(self):
        return self.value

    @property
    def degenerate(self) -> bool:
        return True

    def ppf(self, u):
        return np.full(np.shape(u), self.value, dtype=float)

    def cdf(self, x):
        return (np.asarray(x, dtype=float) >= self.value).astype(float)

    def quantile_atoms(self, m: int) -> np.ndarray:
        return np.full(m, self.value)

    def second_moment(self) -> float:
        return self.value**2


def w2sq_1d_quantile(f: Measure1D, m1: int, m2: int) -> float:
    """Exact squared W2 between the quantile quadratures of sizes ``m1`` and ``m2``."""
    a = f.quantile_atoms(m1)
    b = f.quantile_atoms(m2)
    from .transport import w2sq_sorted_1d

    return w2sq_sorted_1d(a, np.full(m1, 1.0 / m1), b, np.full(m2, 1.0 / m2))


# ---------------------------------------------------------------------------
# velocity fields for monokinetic data


@dataclass(frozen=True)
class VelocityProfile:
    """``u(x) = offset + slope * x + amplitude * sin(wavenumber * x)``, per axis."""

    offset: float = 0.0
    slope: float = 0.0
    amplitude: float = 0.0
    wavenumber: float = 1.0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.offset + self.slope * x + self.amplitude * np.sin(self.wavenumber * x)

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.slope + self.amplitude * self.wavenumber * np.cos(self.wavenumber * x)

    def lip(self) -> float:
        return abs(self.slope) + abs(self.amplitude * self.wavenumber)


# ---------------------------------------------------------------------------
# phase-space measures


class PhaseMeasure:
    """Interface: ``sample``, ``quadrature``, support bounds and ``floor_sq``."""

    dim: int

    def sample(self, n: int, seed: int = 0, replicate: int = 0) -> ParticleEnsemble:
        raise NotImplementedError

    def quadrature(self, m: int) -> ParticleEnsemble:
        raise NotImplementedError

    def x_max(self) -> float:
        raise NotImplementedError

    def v_max(self) -> float:
        raise NotImplementedError

    def radius(self) -> float:
        """Radius of a centred phase-space ball containing the support."""
        return math.hypot(self.x_max(), self.v_max()) if self.dim == 1 else math.sqrt(
            self.dim * (self.x_max() ** 2 + self.v_max() ** 2))

    def second_moment(self) -> float:
        raise NotImplementedError

    def floor_sq(self, m: int) -> float:
        """Squared W2 between the size-``m`` and size-``4m`` quadratures (or a bound)."""
        raise NotImplementedError


@dataclass(frozen=True)
class ProductMeasure(PhaseMeasure):
    """Independent factors, ``d`` for position coordinates and ``d`` for velocities."""

    x_factors: tuple
    v_factors: tuple

    def __post_init__(self):
        if len(self.x_factors) != len(self.v_factors) or len(self.x_factors) not in (1, 2, 3):
            raise DomainError("need d position factors and d velocity factors, d in {1,2,3}")
        object.__setattr__(self, "x_factors", tuple(self.x_factors))
        object.__setattr__(self, "v_factors", tuple(self.v_factors))

    @classmethod
    def iid(cls, dim: int, x: Measure1D, v: Measure1D) -> "ProductMeasure":
        return cls((x,) * dim, (v,) * dim)

    @property
    def dim(self) -> int:
        return len(self.x_factors)

    @property
    def factors(self) -> tuple:
        return self.x_factors + self.v_factors

    def sample(self, n: int, seed: int = 0, replicate: int = 0) -> ParticleEnsemble:
        if n < 1:
            raise DomainError("need at least one sample")
        u = counter_rng(seed, replicate).random((n, 2 * self.dim))
        z = np.column_stack([f.ppf(u[:, k]) for k, f in enumerate(self.factors)])
        return ParticleEnsemble.uniform(z[:, : self.dim], z[:, self.dim:])

    def _sizes(self, m: int) -> list[int]:
        active = [k for k, f in enumerate(self.factors) if not f.degenerate]
        sizes = [1] * len(self.factors)
        if active:
            per = max(1, int(round(m ** (1.0 / len(active)))))
            for k in active:
                sizes[k] = per
        return sizes

    def quadrature(self, m: int) -> ParticleEnsemble:
        """Tensor product of quantile quadratures with about ``m`` atoms."""
        sizes = self._sizes(m)
        axes = [f.quantile_atoms(s) for f, s in zip(self.factors, sizes)]
        mesh = np.meshgrid(*axes, indexing="ij")
        z = np.column_stack([g.reshape(-1) for g in mesh])
        total = z.shape[0]
        return ParticleEnsemble(z[:, : self.dim], z[:, self.dim:], np.full(total, 1.0 / total))

    def floor_sq(self, m: int) -> float:
        """Exact: for products the squared distance is the sum over factors."""
        s1, s2 = self._sizes(m), self._sizes(4 * m)
        return float(sum(w2sq_1d_quantile(f, a, b) for f, a, b in zip(self.factors, s1, s2)))

    def x_max(self) -> float:
        return max(f.abs_max() for f in self.x_factors)

    def v_max(self) -> float:
        return max(f.abs_max() for f in self.v_factors)

    def radius(self) -> float:
        return math.sqrt(sum(f.abs_max() ** 2 for f in self.factors))

    def speed_max(self) -> float:
        return math.sqrt(sum(f.abs_max() ** 2 for f in self.v_factors))

    def position_max(self) -> float:
        return math.sqrt(sum(f.abs_max() ** 2 for f in self.x_factors))

    def second_moment(self) -> float:
        return float(sum(f.second_moment() for f in self.factors))


@dataclass(frozen=True)
class MonokineticMeasure(PhaseMeasure):
    """``mu(x) delta(v - u(x))`` on the line."""

    density: Measure1D
    velocity: VelocityProfile

    dim = 1

    def sample(self, n: int, seed: int = 0, replicate: int = 0) -> ParticleEnsemble:
        u = counter_rng(seed, replicate).random((n, 1))
        x = self.density.ppf(u[:, 0])
        return ParticleEnsemble.uniform(x[:, None], self.velocity(x)[:, None])

    def quadrature(self, m: int) -> ParticleEnsemble:
        x = self.density.quantile_atoms(m)
        return ParticleEnsemble(x[:, None], self.velocity(x)[:, None], np.full(m, 1.0 / m))

    def floor_sq(self, m: int) -> float:
        """Upper bound: cost of the monotone coupling of the position quantiles."""
        from .transport import sorted_coupling_1d

        a = self.density.quantile_atoms(m)
        b = self.density.quantile_atoms(4 * m)
        i, j, mass = sorted_coupling_1d(a, np.full(m, 1.0 / m), b, np.full(4 * m, 1.0 / (4 * m)))
        dx = a[i] - b[j]
        dv = self.velocity(a[i]) - self.velocity(b[j])
        return float(np.sum(mass * (dx * dx + dv * dv)))

    def x_max(self) -> float:
        return self.density.abs_max()

    def v_max(self) -> float:
        xs = np.linspace(self.density.lo, self.density.hi, 4001)
        return float(np.max(np.abs(self.velocity(xs)))) * 1.001 + 1e-15

    def radius(self) -> float:
        xs = np.linspace(self.density.lo, self.density.hi, 4001)
        return float(np.max(np.hypot(xs, self.velocity(xs)))) * 1.001

    def speed_max(self) -> float:
        return self.v_max()

    def position_max(self) -> float:
        return self.x_max()

    def second_moment(self) -> float:
        q = self.quadrature(20000)
        return float(np.sum(q.weights * np.sum(q.phase_points() ** 2, axis=1)))


@dataclass(frozen=True)
class ShiftedMeasure(PhaseMeasure):
    """``base`` translated by ``(dx, dv)`` in phase space."""

    base: PhaseMeasure
    dx: Sequence[float]
    dv: Sequence[float]

    @property
    def dim(self) -> int:
        return self.base.dim

    def _shift(self, e: ParticleEnsemble) -> ParticleEnsemble:
        return ParticleEnsemble(e.positions + np.asarray(self.dx, float), e.velocities + np.asarray(self.dv, float),
                                e.weights)

    def sample(self, n, seed=0, replicate=0):
        return self._shift(self.base.sample(n, seed, replicate))

    def quadrature(self, m):
        return self._shift(self.base.quadrature(m))

    def floor_sq(self, m):
        return self.base.floor_sq(m)

    def x_max(self):
        return self.base.x_max() + float(np.linalg.norm(self.dx))

    def v_max(self):
        return self.base.v_max() + float(np.linalg.norm(self.dv))

    def radius(self):
        return self.base.radius() + math.hypot(float(np.linalg.norm(self.dx)), float(np.linalg.norm(self.dv)))

    def speed_max(self):
        return self.v_max()

    def position_max(self):
        return self.x_max()


@dataclass(frozen=True)
class CloudMeasure(PhaseMeasure):
    """An explicit weighted cloud; sampling draws atoms by weight."""

    cloud: ParticleEnsemble

    @property
    def dim(self) -> int:
        return self.cloud.dim

    def sample(self, n, seed=0, replicate=0):
        u = counter_rng(seed, replicate).random(n)
        cdf = np.cumsum(self.cloud.weights)
        idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), self.cloud.size - 1)
        return ParticleEnsemble.uniform(self.cloud.positions[idx], self.cloud.velocities[idx])

    def quadrature(self, m):
        return self.cloud

    def floor_sq(self, m):
        return 0.0

    def x_max(self):
        return float(np.max(np.linalg.norm(self.cloud.positions, axis=1)))

    def v_max(self):
        return float(np.max(np.linalg.norm(self.cloud.velocities, axis=1)))

    def radius(self):
        return self.cloud.max_radius()

    def speed_max(self):
        return self.v_max()

    def position_max(self):
        return self.x_max()

    def second_moment(self):
        return float(np.sum(self.cloud.weights * np.sum(self.cloud.phase_points() ** 2, axis=1)))
