"""Model ingredients: particle clouds, interaction kernels, the chemical source
bump, external forces, and the explicit constants entering the stability bounds.

Conventions used everywhere in the package:

* the pairwise interaction is called as ``gamma(dv, dx)`` with
  ``dv = v_i - v_j`` and ``dx = x_i - x_j``; the acceleration of particle ``i``
  is ``sum_j w_j gamma(v_i - v_j, x_i - x_j)``;
* the Cucker-Smale kernel is ``gamma(dv, dx) = -beta * psi(dx) * dv`` with
  ``psi(dx) = (1 + |dx|^2 / R^2) ** -sigma``;
* Lipschitz constants of vector valued maps are the root-sum-square of the
  component constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import gamma as gamma_fn

#: safety factor applied to every sampled Lipschitz/sup estimate
SAFETY = 1.01


class DomainError(ValueError):
    """Raised for non-finite or out-of-domain inputs."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite input")


# ---------------------------------------------------------------------------
# particle clouds


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Weighted point cloud in phase space ``R^d x R^d``.

    ``positions`` and ``velocities`` have shape ``(N, d)``; ``weights`` sums
    to one. Uniform weights ``1/N`` give the empirical measure of a particle
    configuration; other weights represent quadratures of a density.
    """

    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.array(self.positions, dtype=float)
        v = np.array(self.velocities, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if v.ndim == 1:
            v = v[:, None]
        w = np.array(self.weights, dtype=float).reshape(-1)
        if x.shape != v.shape or x.shape[0] != w.shape[0]:
            raise DomainError(
                f"shape mismatch: positions {x.shape}, velocities {v.shape}, weights {w.shape}"
            )
        if x.shape[0] < 1:
            raise DomainError("ensemble must hold at least one particle")
        if x.shape[1] not in (1, 2, 3):
            raise DomainError(f"dimension must be 1, 2 or 3, got {x.shape[1]}")
        _check_finite(x, v, w)
        if np.any(w < 0):
            raise DomainError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "positions", _frozen(x))
        object.__setattr__(self, "velocities", _frozen(v))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, positions, velocities) -> "ParticleEnsemble":
        x = np.asarray(positions, dtype=float)
        n = x.shape[0]
        return cls(x, velocities, np.full(n, 1.0 / n))

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    def __len__(self):
        return self.size

    def phase_points(self) -> np.ndarray:
        """Points in ``R^{2d}`` as ``(x, v)`` rows."""
        return np.hstack([self.positions, self.velocities])

    def with_state(self, positions, velocities) -> "ParticleEnsemble":
        return ParticleEnsemble(positions, velocities, self.weights)

    def permuted(self, perm) -> "ParticleEnsemble":
        perm = np.asarray(perm)
        return ParticleEnsemble(self.positions[perm], self.velocities[perm], self.weights[perm])

    def max_speed(self) -> float:
        return float(np.max(np.linalg.norm(self.velocities, axis=1)))

    def max_radius(self) -> float:
        """Largest phase-space norm ``|(x, v)|`` over atoms of positive mass."""
        z = self.phase_points()[self.weights > 0]
        return float(np.max(np.linalg.norm(z, axis=1)))

    def canonical_order(self) -> np.ndarray:
        """Label-independent ordering (lexicographic in x, v, weight).

        Sums carried out in this order make every output bit-exactly
        equivariant under relabelling of the particles.
        """
        keys = [self.weights] + [self.velocities[:, k] for k in range(self.dim)][::-1]
        keys += [self.positions[:, k] for k in range(self.dim)][::-1]
        return np.lexsort(keys)


# ---------------------------------------------------------------------------
# interaction kernels


@dataclass(frozen=True)
class CuckerSmaleKernel:
    """``gamma(dv, dx) = -beta (1 + |dx|^2/R^2)^(-sigma) dv``."""

    beta: float = 1.0
    length: float = 1.0
    decay: float = 1.0

    def __post_init__(self):
        if self.length <= 0 or self.beta < 0 or self.decay < 0:
            raise DomainError("Cucker-Smale kernel needs beta >= 0, R > 0, sigma >= 0")

    def weight(self, dx) -> np.ndarray:
        dx = np.asarray(dx, dtype=float)
        r2 = np.sum(dx * dx, axis=-1) / self.length**2
        return (1.0 + r2) ** (-self.decay)

    def __call__(self, dv, dx) -> np.ndarray:
        dv = np.asarray(dv, dtype=float)
        dx = np.asarray(dx, dtype=float)
        _check_finite(dv, dx)
        return -self.beta * self.weight(dx)[..., None] * dv

    def growth(self) -> float:
        """Global constant ``g`` with ``|gamma(dv, dx)| <= g |(dv, dx)|``."""
        return self.beta

    def sup_on_ball(self, radius: float) -> float:
        return self.beta * radius

    def lip(self, radius: float, dim: int) -> float:
        """Lipschitz constant of ``gamma`` on the centred ball of ``R^{2d}``.

        Component ``i`` has gradient ``-beta (psi e_i, dv_i grad psi)`` so its
        squared Lipschitz constant is ``beta^2 max(psi(s)^2 + (rho^2 - s^2) psi'(s)^2)``
        over ``s = |dx| in [0, rho]``. The maximum is sampled densely.
        """
        if self.beta == 0:
            return 0.0
        rho = float(radius)
        s = np.linspace(0.0, rho, 20001)
        u = 1.0 + (s / self.length) ** 2
        psi = u ** (-self.decay)
        dpsi = -2.0 * self.decay * s / self.length**2 * u ** (-self.decay - 1.0)
        comp = self.beta * math.sqrt(float(np.max(psi**2 + (rho**2 - s**2) * dpsi**2)))
        return SAFETY * math.sqrt(dim) * comp


@dataclass(frozen=True)
class TableKernel:
    """User-supplied Lipschitz interaction ``func(dv, dx) -> (..., d)``.

    ``func`` must be vectorised over leading axes and vanish at ``(0, 0)``.
    When ``lipschitz`` is not given it is probed by random sampling on each
    requested ball (``SAFETY`` margin included).
    """

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz: Optional[float] = None
    growth_constant: Optional[float] = None
    samples: int = 10_000

    def __call__(self, dv, dx) -> np.ndarray:
        dv = np.asarray(dv, dtype=float)
        dx = np.asarray(dx, dtype=float)
        _check_finite(dv, dx)
        return np.asarray(self.func(dv, dx), dtype=float)

    def lip(self, radius: float, dim: int) -> float:
        if self.lipschitz is not None:
            return float(self.lipschitz)

        def f(z):
            return self(z[..., dim:], z[..., :dim])

        return SAFETY * probe_lipschitz(f, 2 * dim, radius, self.samples, seed=0)

    def growth(self) -> float:
        if self.growth_constant is not None:
            return float(self.growth_constant)
        if self.lipschitz is not None:
            return float(self.lipschitz)
        raise DomainError("TableKernel needs lipschitz or growth_constant for global bounds")

    def sup_on_ball(self, radius: float, dim: int = 1) -> float:
        rng = np.random.default_rng(1)
        z = _ball_samples(rng, 2 * dim, radius, self.samples)
        vals = np.linalg.norm(self(z[:, dim:], z[:, :dim]), axis=-1)
        return SAFETY * float(vals.max())


AlignmentKernel = Union[CuckerSmaleKernel, TableKernel]


def cs_kernel_eval(kernel: CuckerSmaleKernel, dv, dx) -> np.ndarray:
    """Pairwise Cucker-Smale term as it enters the particle acceleration."""
    if not isinstance(kernel, CuckerSmaleKernel):
        raise DomainError("cs_kernel_eval expects a CuckerSmaleKernel")
    return kernel(dv, dx)


# ---------------------------------------------------------------------------
# chemical source


@dataclass(frozen=True)
class BumpSource:
    """Quartic bump ``chi(x) = c (1 - |x|^2/r^2)^2`` for ``|x| < r``, else 0.

    It is C^1 with compact support, so the Lipschitz constants of ``chi`` and
    ``grad chi`` are finite.
    """

    radius: float = 0.5
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError("bump radius must be positive")
        if not math.isfinite(self.amplitude):
            raise DomainError("non-finite amplitude")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _check_finite(x)
        q = 1.0 - np.sum(x * x, axis=-1) / self.radius**2
        return self.amplitude * np.where(q > 0, q * q, 0.0)

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _check_finite(x)
        q = 1.0 - np.sum(x * x, axis=-1) / self.radius**2
        coef = np.where(q > 0, -4.0 * self.amplitude * q / self.radius**2, 0.0)
        return coef[..., None] * x

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        r2 = self.radius**2
        q = 1.0 - np.sum(x * x, axis=-1) / r2
        inside = (q > 0)[..., None, None]
        eye = np.eye(d)
        h = -4.0 * self.amplitude / r2 * (
            q[..., None, None] * eye - 2.0 / r2 * x[..., :, None] * x[..., None, :]
        )
        return np.where(inside, h, 0.0)

    def mass(self, dim: int) -> float:
        return self.amplitude * self.radius**dim * 2.0 * math.pi ** (dim / 2) / gamma_fn(dim / 2 + 3)

    def lipschitz_constants(self, dim: int = 1) -> tuple[float, float]:
        return bump_lipschitz_constants(self, dim)


def bump_eval(bump: BumpSource, x) -> np.ndarray:
    return bump(x)


def bump_grad(bump: BumpSource, x) -> np.ndarray:
    return bump.grad(x)


def bump_lipschitz_constants(bump: BumpSource, dim: int = 1) -> tuple[float, float]:
    """Sampled upper bounds ``(Lip(chi), Lip(grad chi))`` with a 1% margin.

    ``Lip(chi)`` is the maximum of ``|chi'|`` along a radius. ``Lip(grad chi)``
    is the root-sum-square over components of the largest Hessian row norm;
    by radial symmetry every component has the same constant.
    """
    c = abs(bump.amplitude)
    if c == 0:
        return 0.0, 0.0
    r = bump.radius
    s = np.linspace(0.0, r, 20001)
    u = s / r
    dchi = 4.0 * c / r * u * (1.0 - u * u)
    lip_chi = SAFETY * float(dchi.max())
    if dim == 1:
        d2 = 4.0 * c / r**2 * np.abs(1.0 - 3.0 * u * u)
        row = float(d2.max())
    else:
        # rows of p'' xx^T + (p'/s)(I - xx^T) along the e_1 axis and the diagonal
        pts = []
        for direction in (np.eye(dim)[0], np.ones(dim) / math.sqrt(dim)):
            pts.append(s[:, None] * direction[None, :])
        pts = np.concatenate(pts)
        sign = 1.0 if bump.amplitude >= 0 else -1.0
        h = sign * BumpSource(r, c).hessian(pts)
        row = float(np.max(np.linalg.norm(h, axis=-1)))
    lip_grad = SAFETY * math.sqrt(dim) * row
    return lip_chi, lip_grad


# ---------------------------------------------------------------------------
# external forces


@dataclass(frozen=True)
class ExternalForce:
    """``zero`` or ``harmonic`` (``F(x) = -stiffness * x``)."""

    kind: str = "zero"
    stiffness: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "harmonic"):
            raise DomainError(f"unknown force kind {self.kind!r}")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.stiffness == 0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        return -self.stiffness * x

    def lip(self, dim: int) -> float:
        if self.kind == "zero":
            return 0.0
        return abs(self.stiffness) * math.sqrt(dim)

    def sup_norm(self, half_width: float, dim: int) -> float:
        if self.kind == "zero":
            return 0.0
        return abs(self.stiffness) * half_width * math.sqrt(dim)


@dataclass(frozen=True)
class TableForce:
    """User-supplied external force with declared Lipschitz and sup bounds."""

    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    sup: float

    @property
    def is_zero(self) -> bool:
        return False

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def lip(self, dim: int) -> float:
        return float(self.lipschitz)

    def sup_norm(self, half_width: float, dim: int) -> float:
        return float(self.sup)


# ---------------------------------------------------------------------------
# initial chemical field


@dataclass(frozen=True)
class FieldInit:
    """Initial chemical field: ``zero`` or ``gaussian`` ``A exp(-|x|^2 / (2 s^2))``."""

    kind: str = "zero"
    amplitude: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "gaussian"):
            raise DomainError(f"unknown field_init kind {self.kind!r}")
        if self.kind == "gaussian" and not self.width > 0:
            raise DomainError("gaussian width must be positive")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.amplitude == 0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros(x.shape[:-1])
        return self.amplitude * np.exp(-np.sum(x * x, axis=-1) / (2 * self.width**2))

    def heat(self, x, t: float, diffusivity: float) -> np.ndarray:
        """``exp(t D Laplacian)`` applied to the initial field, in free space."""
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros(x.shape[:-1])
        d = x.shape[-1]
        s2 = self.width**2 + 2 * diffusivity * t
        return (
            self.amplitude
            * (self.width**2 / s2) ** (d / 2)
            * np.exp(-np.sum(x * x, axis=-1) / (2 * s2))
        )

    def sup_grad(self, dim: int) -> float:
        if self.is_zero:
            return 0.0
        return SAFETY * abs(self.amplitude) / self.width * math.exp(-0.5)

    def lip_grad(self, dim: int) -> float:
        if self.is_zero:
            return 0.0
        return SAFETY * math.sqrt(dim) * abs(self.amplitude) / self.width**2


# ---------------------------------------------------------------------------
# bounds


@dataclass(frozen=True)
class BoundConstants:
    """Explicit constants of the stability estimates for one configuration.

    ``lip_gamma`` is the Lipschitz constant of the kernel on the ball of
    pair differences reachable before ``horizon``.
    """

    lip_gamma: float
    lip_chi: float
    lip_grad_chi: float
    lip_force: float
    sup_force: float
    chemotaxis: float
    horizon: float
    lip_grad_phi_in: float = 0.0
    sup_grad_phi_in: float = 0.0
    kernel_growth: float = 0.0
    dissipative: bool = False

    def __post_init__(self):
        for name in ("lip_gamma", "lip_chi", "lip_grad_chi", "lip_force", "sup_force", "chemotaxis"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")

    @property
    def gamma0(self) -> float:
        return self.lip_gamma + self.lip_grad_chi

    @property
    def gamma1(self) -> float:
        return self.lip_gamma

    @property
    def gamma2(self) -> float:
        return self.lip_grad_chi

    @property
    def Lprime(self) -> float:
        return self.lip_gamma + self.lip_force + self.horizon * self.chemotaxis * self.lip_grad_chi

    @property
    def Mprime(self) -> float:
        return self.lip_gamma + self.sup_force + self.chemotaxis * self.lip_chi + self.lip_grad_phi_in

    @property
    def Kprime(self) -> float:
        return self.lip_gamma + self.chemotaxis * self.lip_chi

    @property
    def growth_rate(self) -> float:
        """``c_R`` in the printed support radius ``e^{c_R t}(R0 + c_R)``."""
        return self.lip_gamma + self.sup_force + self.chemotaxis * self.lip_chi

    def Gamma(self, t) -> np.ndarray | float:
        """``t (2 + 2 L'^2 + (2K')^2 exp(2t(1 + L'^2)))``; overflows to ``inf``."""
        t = np.asarray(t, dtype=float)
        L2 = self.Lprime**2
        with np.errstate(over="ignore"):
            val = t * (2.0 + 2.0 * L2 + (2.0 * self.Kprime) ** 2 * np.exp(2.0 * t * (1.0 + L2)))
        return float(val) if val.ndim == 0 else val

    def dobrushin_log_factor(self, t) -> np.ndarray | float:
        """``log(2 e^{Gamma(t)})``; finite whenever ``Gamma`` is."""
        return math.log(2.0) + self.Gamma(t)

    def flow_bound(self, t: float) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp((self.gamma1 + self.gamma2 * self.horizon) * t))

    def forcing_integral(self, t: float) -> float:
        """Upper bound of ``int_0^t |eta grad phi^s| + |F_ext| ds``."""
        return t * self.sup_force + self.chemotaxis * (t * self.sup_grad_phi_in + 0.5 * t * t * self.lip_chi)

    def velocity_bound(self, v0: float, t: float) -> float:
        """``max|v(0)| e^{2 gamma0 t}`` plus the chemotactic/external forcing.

        The forcing term vanishes when ``eta = 0`` and ``F_ext = 0`` so the
        bound reduces to the printed particle estimate.
        """
        with np.errstate(over="ignore"):
            return float(np.exp(2.0 * self.gamma0 * t)) * (v0 + self.forcing_integral(t))

    def certified_radius(self, R0: float, t: float, x0: Optional[float] = None,
                         v0: Optional[float] = None) -> float:
        """Phase-space support radius guaranteed by a direct Gronwall argument.

        ``d|z|/dt <= |v| + |F| <= (1 + 2g) R + b`` with ``g`` the kernel growth
        constant and ``b = ||F_ext|| + eta (sup|grad phi_in| + T Lip(chi))``.
        For dissipative kernels (alignment pulls each velocity toward a convex
        combination of the others) the largest speed grows at most like
        ``V0 + b t``, which gives a second, usually much smaller, bound; the
        minimum of the two is returned. ``x0``/``v0`` default to ``R0``.
        """
        a = 1.0 + 2.0 * self.kernel_growth
        b = self.sup_force + self.chemotaxis * (self.sup_grad_phi_in + self.horizon * self.lip_chi)
        with np.errstate(over="ignore"):
            e = float(np.exp(a * t))
        generic = e * R0 + b * (e - 1.0) / a
        if not self.dissipative:
            return generic
        X0 = R0 if x0 is None else x0
        V0 = R0 if v0 is None else v0
        vmax = V0 + b * t
        xmax = X0 + V0 * t + 0.5 * b * t * t
        return min(generic, math.hypot(xmax, vmax))

    def lip_meanfield(self, t: float) -> float:
        """Lipschitz bound of the mean-field acceleration at time ``t``."""
        return self.lip_gamma + self.lip_force + self.chemotaxis * (self.lip_grad_phi_in + t * self.lip_grad_chi)


def support_radius(R0: float, t: float, consts: BoundConstants) -> float:
    """Printed support radius ``R^t = e^{c_R t}(R0 + c_R)``."""
    if R0 < 0 or t < 0:
        raise DomainError("support_radius needs R0 >= 0 and t >= 0")
    c = consts.growth_rate
    with np.errstate(over="ignore"):
        return float(np.exp(c * t)) * (R0 + c)


def rate_cd(N: int, d: int) -> float:
    """Empirical-measure rate shape with unit constant."""
    if N < 2:
        raise DomainError("rate_cd needs N >= 2")
    if d < 1:
        raise DomainError("dimension must be positive")
    if d == 1:
        return N**-0.5
    if d == 2:
        return N**-0.5 * math.log(N)
    return N ** (-1.0 / d)


# ---------------------------------------------------------------------------
# helpers


def _ball_samples(rng, dim, radius, n):
    z = rng.standard_normal((n, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return z * r[:, None]


def probe_lipschitz(f, dim_in: int, radius: float, n_pairs: int = 10_000, seed: int = 0,
                    local_scale: float = 1e-3) -> float:
    """Largest sampled difference quotient of ``f`` on a centred ball.

    Half of the pairs are nearly coincident (distance ``local_scale * radius``)
    so the local slope is resolved; the rest are independent.
    """
    rng = np.random.default_rng(seed)
    a = _ball_samples(rng, dim_in, radius, n_pairs)
    b = _ball_samples(rng, dim_in, radius, n_pairs)
    half = n_pairs // 2
    step = rng.standard_normal((half, dim_in))
    step *= local_scale * radius / np.linalg.norm(step, axis=1, keepdims=True)
    b[:half] = a[:half] + step
    fa = np.asarray(f(a), dtype=float).reshape(n_pairs, -1)
    fb = np.asarray(f(b), dtype=float).reshape(n_pairs, -1)
    num = np.linalg.norm(fa - fb, axis=1)
    den = np.linalg.norm(a - b, axis=1)
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0


@dataclass(frozen=True)
class Physics:
    """Everything that defines the force law except the chemical grid."""

    kernel: AlignmentKernel = field(default_factory=CuckerSmaleKernel)
    bump: BumpSource = field(default_factory=BumpSource)
    force: Union[ExternalForce, TableForce] = field(default_factory=ExternalForce)
    chemotaxis: float = 0.0
    field_init: FieldInit = field(default_factory=FieldInit)

    def __post_init__(self):
        if self.chemotaxis < 0:
            raise DomainError("chemotaxis strength must be nonnegative")

    @cached_property
    def is_free(self) -> bool:
        k = self.kernel
        no_kernel = isinstance(k, CuckerSmaleKernel) and k.beta == 0
        return no_kernel and self.chemotaxis == 0 and self.force.is_zero

    def constants(self, dim: int, horizon: float, R0: float, half_width: float,
                  x0: Optional[float] = None, v0: Optional[float] = None) -> BoundConstants:
        """Constants for clouds starting inside the phase-space ball ``B(0, R0)``.

        The kernel Lipschitz constant is taken on the ball of pair
        differences ``B(0, 2 R)`` with ``R`` the certified support radius at
        the horizon.
        """
        lip_chi, lip_grad_chi = self.bump.lipschitz_constants(dim)
        base = BoundConstants(
            lip_gamma=0.0,
            lip_chi=lip_chi,
            lip_grad_chi=lip_grad_chi,
            lip_force=self.force.lip(dim),
            sup_force=self.force.sup_norm(half_width, dim),
            chemotaxis=self.chemotaxis,
            horizon=horizon,
            lip_grad_phi_in=self.field_init.lip_grad(dim),
            sup_grad_phi_in=self.field_init.sup_grad(dim),
            kernel_growth=self.kernel.growth(),
            dissipative=isinstance(self.kernel, CuckerSmaleKernel),
        )
        R = base.certified_radius(R0, horizon, x0, v0)
        lip_gamma = self.kernel.lip(2.0 * R, dim) if math.isfinite(R) else math.inf
        return BoundConstants(**{**base.__dict__, "lip_gamma": lip_gamma})


def required_half_width(radius: float, bump_radius: float, diffusivity: float, horizon: float,
                        spacing: float) -> float:
    """Smallest periodic box half-width for which wraparound stays negligible.

    Particles stay in ``B(0, radius)``; their bumps reach ``bump_radius``
    further, diffusion spreads by about ``3 sqrt(2 D T)``, and two more grid
    cells keep the source away from the seam.
    """
    return radius + bump_radius + 3.0 * math.sqrt(2.0 * diffusivity * horizon) + 2.0 * spacing


def check_box(half_width: float, radius: float, bump_radius: float, diffusivity: float,
              horizon: float, spacing: float) -> float:
    """Raise ``DomainError`` if the box is too small; return the requirement."""
    need = required_half_width(radius, bump_radius, diffusivity, horizon, spacing)
    if half_width < need:
        raise DomainError(
            f"box half-width {half_width:g} below required {need:.6g} "
            f"(support radius {radius:.6g} + bump {bump_radius:g} + 3 sqrt(2DT) + 2h)"
        )
    return need


@dataclass(frozen=True)
class SimConfig:
    """A complete, validated run description.

    ``initial`` is a phase-space measure from :mod:`mfcl.measures`;
    ``experiment`` holds the optional study parameters (sizes, replicate
    counts) as a plain mapping.
    """

    dim: int
    n_particles: int
    dt: float
    horizon: float
    physics: Physics
    diffusivity: float
    decay: float
    initial: object
    half_width: float
    cells: int
    seed: int = 0
    replicates: int = 1
    report_every: int = 1
    experiment: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise DomainError("dim must be 1, 2 or 3")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if not self.horizon >= 0:
            raise DomainError("horizon must be nonnegative")
        if self.n_particles < 1 or self.replicates < 1 or self.report_every < 1:
            raise DomainError("n_particles, replicates and report_every must be positive")
        if self.diffusivity < 0 or self.decay < 0:
            raise DomainError("D and kappa must be nonnegative")
        if getattr(self.initial, "dim", self.dim) != self.dim:
            raise DomainError("initial measure dimension differs from dim")
        if self.cells < 8 or self.cells % 2:
            raise DomainError("cells must be even and at least 8")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.cells

    @property
    def n_steps(self) -> int:
        k = self.horizon / self.dt
        n = int(round(k))
        if abs(n - k) > 1e-9 * max(1.0, k):
            raise DomainError(f"horizon {self.horizon} is not a multiple of dt {self.dt}")
        return n

    def initial_bounds(self) -> tuple[float, float, float]:
        m = self.initial
        return m.radius(), m.position_max(), m.speed_max()

    def constants(self, horizon: Optional[float] = None) -> BoundConstants:
        R0, x0, v0 = self.initial_bounds()
        T = self.horizon if horizon is None else horizon
        return self.physics.constants(self.dim, T, R0, self.half_width, x0, v0)

    def support_requirement(self) -> float:
        R0, x0, v0 = self.initial_bounds()
        R = self.constants().certified_radius(R0, self.horizon, x0, v0)
        return required_half_width(R, self.physics.bump.radius, self.diffusivity, self.horizon, self.spacing)

    def check_box(self) -> float:
        need = self.support_requirement()
        if self.half_width < need:
            raise DomainError(
                f"box half-width {self.half_width:g} below required {need:.6g} "
                "(certified support radius + bump radius + 3 sqrt(2DT) + 2h)"
            )
        return need

    def with_(self, **changes) -> "SimConfig":
        from dataclasses import replace as _replace

        return _replace(self, **changes)


def bound_constants(config: "SimConfig", horizon: Optional[float] = None) -> BoundConstants:
    """Explicit constants of ``config`` on ``[0, horizon]`` (default: its own horizon)."""
    return config.constants(horizon)


def velocity_bound(v0: float, t: float, consts: BoundConstants) -> float:
    return consts.velocity_bound(v0, t)


def certified_support_radius(R0: float, t: float, consts: BoundConstants, x0: Optional[float] = None,
                             v0: Optional[float] = None) -> float:
    return consts.certified_radius(R0, t, x0, v0)
