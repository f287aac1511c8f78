"""Kernel, bump, force and bound-constant evaluators."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, optimize

from mfcl.model import (SAFETY, BoundConstants, BumpSource, CuckerSmaleKernel, DomainError, ExternalForce,
                        FieldInit, ParticleEnsemble, TableKernel, bump_eval, bump_grad, bump_lipschitz_constants,
                        cs_kernel_eval, probe_lipschitz, rate_cd, support_radius, check_box)

finite = st.floats(-50, 50, allow_nan=False)


def consts(**kw):
    base = dict(lip_gamma=0.0, lip_chi=0.0, lip_grad_chi=0.0, lip_force=0.0, sup_force=0.0, chemotaxis=0.0,
                horizon=1.0)
    base.update(kw)
    return BoundConstants(**base)


# --- ensembles

def test_ensemble_validation():
    with pytest.raises(DomainError):
        ParticleEnsemble([[0.0]], [[0.0]], [0.5])
    with pytest.raises(DomainError):
        ParticleEnsemble([[np.nan]], [[0.0]], [1.0])
    with pytest.raises(DomainError):
        ParticleEnsemble([[0.0], [1.0]], [[0.0]], [0.5, 0.5])
    e = ParticleEnsemble.uniform(np.zeros((4, 2)), np.ones((4, 2)))
    assert e.dim == 2 and e.size == 4
    with pytest.raises(ValueError):
        e.positions[0, 0] = 3.0


def test_canonical_order_is_label_free():
    rng = np.random.default_rng(3)
    e = ParticleEnsemble.uniform(rng.random((20, 2)), rng.random((20, 2)))
    p = rng.permutation(20)
    a = e.phase_points()[e.canonical_order()]
    b = e.permuted(p).phase_points()[e.permuted(p).canonical_order()]
    assert np.array_equal(a, b)


# --- Cucker-Smale kernel

def test_cs_examples():
    k1 = CuckerSmaleKernel(beta=1.0)
    assert np.all(cs_kernel_eval(k1, [0.0, 0.0], [3.0, -1.0]) == 0)
    assert np.allclose(cs_kernel_eval(k1, [1.0], [0.0]), [-1.0], atol=0)
    k2 = CuckerSmaleKernel(beta=2.0, length=1.5, decay=1.0)
    assert np.allclose(cs_kernel_eval(k2, [1.0, 0.0], [1.5, 0.0]), [-1.0, 0.0], rtol=1e-15)


def test_cs_rejects_nonfinite():
    with pytest.raises(DomainError):
        cs_kernel_eval(CuckerSmaleKernel(), [np.inf], [0.0])
    with pytest.raises(DomainError):
        cs_kernel_eval(TableKernel(lambda dv, dx: dv), [0.0], [0.0])


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite),
       st.floats(0, 5), st.floats(0.1, 5), st.floats(0, 3))
def test_cs_antisymmetry_exact(dv, dx, beta, R, sigma):
    k = CuckerSmaleKernel(beta, R, sigma)
    assert np.all(k(dv, dx) + k(-dv, -dx) == 0)


@pytest.mark.parametrize("dim", [1, 2, 3])
@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_cs_lipschitz_certified(dim, sigma):
    k = CuckerSmaleKernel(1.3, 0.7, sigma)
    for rho in (0.5, 2.0, 6.0):
        lip = k.lip(rho, dim)

        def f(z):
            return k(z[:, dim:], z[:, :dim])

        probed = max(probe_lipschitz(f, 2 * dim, rho, 10_000, seed=s) for s in range(2))
        assert probed <= lip
        sup = np.max(np.linalg.norm(f(np.random.default_rng(0).uniform(-rho, rho, (5000, 2 * dim))), axis=1))
        assert sup <= k.sup_on_ball(rho * math.sqrt(2 * dim))


def test_table_kernel_probe():
    k = TableKernel(lambda dv, dx: -0.5 * dv + 0.1 * np.tanh(dx))
    lip = k.lip(3.0, 1)
    assert 0.5 <= lip <= SAFETY * math.hypot(0.5, 0.1) + 1e-9


# --- bump

def test_bump_examples():
    b = BumpSource(radius=1.0, amplitude=1.0)
    assert bump_eval(b, [[0.5]])[0] == pytest.approx(0.5625, abs=1e-15)
    assert bump_eval(b, [[0.0]])[0] == 1.0
    assert np.all(bump_grad(b, [[0.0]]) == 0)
    edge = np.array([[1.0], [-1.0]])
    assert np.all(bump_eval(b, edge) == 0) and np.all(bump_grad(b, edge) == 0)
    e2 = np.array([[0.6, 0.8]])
    assert bump_eval(b, e2)[0] == 0 and np.all(bump_grad(b, e2) == 0)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_bump_is_c1_across_boundary(dim):
    b = BumpSource(0.7, 2.0)
    u = np.ones(dim) / math.sqrt(dim)
    for eps in (1e-3, 1e-4, 1e-5):
        inside = b(((0.7 - eps) * u)[None])[0]
        g_in = np.linalg.norm(b.grad(((0.7 - eps) * u)[None])[0])
        assert inside <= 2.0 * 4 * eps**2 / 0.7**2 + 1e-15
        assert g_in <= 8 * 2.0 * eps / 0.7**2
    # finite differences agree with the closed-form gradient everywhere, including across r
    xs = np.linspace(-1.0, 1.0, 2001)
    pts = xs[:, None] * u[None, :]
    h = 1e-6
    fd = (b(pts + h * u) - b(pts - h * u)) / (2 * h)
    # the second derivative jumps at r, so central differences are only O(h) there
    assert np.max(np.abs(fd - b.grad(pts) @ u)) < 40 * h


@given(arrays(float, (20, 2), elements=st.floats(-2, 2)))
def test_bump_nonnegative_compact(x):
    b = BumpSource(0.9, 1.5)
    v = b(x)
    assert np.all(v >= 0)
    assert np.all(v[np.linalg.norm(x, axis=1) >= 0.9] == 0)


def test_bump_lipschitz_oracle():
    assert bump_lipschitz_constants(BumpSource(1.0, 0.0)) == (0.0, 0.0)
    # independent maximisation of |chi'| for r = c = 1
    res = optimize.minimize_scalar(lambda s: -4 * s * (1 - s * s), bounds=(0, 1), method="bounded",
                                   options={"xatol": 1e-12})
    oracle = -res.fun * SAFETY
    lip_chi, lip_grad = bump_lipschitz_constants(BumpSource(1.0, 1.0), 1)
    assert lip_chi == pytest.approx(oracle, rel=1e-8)
    assert lip_chi == pytest.approx(1.5549967250173924, rel=1e-8)
    assert lip_grad == pytest.approx(8.0 * SAFETY, rel=1e-12)
    a2 = bump_lipschitz_constants(BumpSource(1.0, 2.0), 2)
    a1 = bump_lipschitz_constants(BumpSource(1.0, 1.0), 2)
    assert a2[0] == pytest.approx(2 * a1[0]) and a2[1] == pytest.approx(2 * a1[1])


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_bump_lipschitz_certified(dim):
    b = BumpSource(0.6, 1.7)
    lc, lg = bump_lipschitz_constants(b, dim)
    assert probe_lipschitz(b, dim, 0.8, 10_000, seed=1) <= lc
    assert probe_lipschitz(b.grad, dim, 0.8, 10_000, seed=2) <= lg


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_bump_mass(dim):
    b = BumpSource(0.8, 1.3)
    radial = integrate.quad(lambda s: b(np.array([[s] + [0] * (dim - 1)]))[0] * s ** (dim - 1), 0, 0.8)[0]
    sphere = 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)
    assert b.mass(dim) == pytest.approx(sphere * radial, rel=1e-10)
    assert BumpSource(0.8, 1.0).mass(1) == pytest.approx(16 * 0.8 / 15, rel=1e-14)


# --- forces and initial field

def test_harmonic_force_bounds():
    f = ExternalForce("harmonic", 2.0)
    assert f.lip(2) == pytest.approx(2 * math.sqrt(2))
    x = np.random.default_rng(0).uniform(-3, 3, (2000, 2))
    assert np.max(np.linalg.norm(f(x), axis=1)) <= f.sup_norm(3.0, 2)
    assert probe_lipschitz(f, 2, 3.0) <= f.lip(2)
    assert ExternalForce().lip(3) == 0 and ExternalForce().sup_norm(5, 3) == 0
    with pytest.raises(DomainError):
        ExternalForce("quadratic")


def test_gaussian_field_bounds():
    fi = FieldInit("gaussian", 1.5, 0.7)
    x = np.linspace(-4, 4, 20001)[:, None]
    grad = np.gradient(fi(x), x[:, 0])
    assert np.max(np.abs(grad)) <= fi.sup_grad(1)
    assert np.max(np.abs(np.gradient(grad, x[:, 0]))) <= fi.lip_grad(1)


# --- constants

def test_gamma_examples():
    c = consts()
    assert c.Lprime == c.Kprime == c.Mprime == 0
    assert c.Gamma(0.7) == pytest.approx(1.4, rel=1e-15)
    assert consts(lip_gamma=3.0, lip_chi=2.0, chemotaxis=1.0).Gamma(0.0) == 0
    # L' = 1 and K' = 1 from lip_gamma = 1
    c1 = consts(lip_gamma=1.0)
    assert c1.Lprime == 1 and c1.Kprime == 1
    assert c1.Gamma(1.0) == pytest.approx(2 + 2 + 4 * math.e**4, rel=1e-14)


def test_constant_formulas():
    c = BoundConstants(lip_gamma=1.5, lip_chi=2.0, lip_grad_chi=3.0, lip_force=0.25, sup_force=0.5,
                       chemotaxis=0.4, horizon=2.0, lip_grad_phi_in=0.1)
    assert c.gamma0 == 4.5 and c.gamma1 == 1.5 and c.gamma2 == 3.0
    assert c.Lprime == pytest.approx(1.5 + 0.25 + 2.0 * 0.4 * 3.0)
    assert c.Mprime == pytest.approx(1.5 + 0.5 + 0.4 * 2.0 + 0.1)
    assert c.Kprime == pytest.approx(1.5 + 0.4 * 2.0)
    assert c.growth_rate == pytest.approx(1.5 + 0.5 + 0.4 * 2.0)
    with pytest.raises(DomainError):
        consts(lip_gamma=-1.0)


@given(st.floats(0, 3), st.floats(0, 3), st.floats(0, 2), st.floats(0, 2))
def test_gamma_monotone(lg, lc, t1, dt):
    c = consts(lip_gamma=lg, lip_chi=lc, chemotaxis=0.5, lip_grad_chi=1.0)
    assert c.Gamma(t1 + dt) >= c.Gamma(t1)


def test_gamma_overflow_reports_log():
    c = consts(lip_gamma=40.0)
    assert c.Gamma(1.0) == math.inf
    assert math.isinf(c.dobrushin_log_factor(1.0))


def test_support_radius_examples():
    assert support_radius(1.7, 3.0, consts()) == 1.7
    assert support_radius(0.0, math.log(2), consts(lip_gamma=1.0)) == pytest.approx(2.0, rel=1e-15)
    assert support_radius(1.0, 0.0, consts(lip_gamma=1.0)) == 2.0
    with pytest.raises(DomainError):
        support_radius(-1.0, 1.0, consts())


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 2), st.floats(0, 2))
def test_support_radius_monotone(R0, dR, t, dt):
    c = consts(lip_gamma=0.7, sup_force=0.2)
    assert support_radius(R0 + dR, t, c) >= support_radius(R0, t, c)
    assert support_radius(R0, t + dt, c) >= support_radius(R0, t, c)


def test_printed_radius_fails_for_free_transport():
    """With every force off, c_R = 0 but |(x, v)| grows like sqrt(1 + t^2)."""
    c = consts()
    R0 = 1.0
    t = 1.0
    moved = math.hypot(0.0 + t * 1.0, 1.0)
    assert moved > support_radius(R0, t, c)
    assert moved <= c.certified_radius(R0, t)


def test_certified_radius_dissipative_tighter():
    c = consts(kernel_growth=1.0, dissipative=True, lip_chi=1.0, chemotaxis=0.5)
    g = consts(kernel_growth=1.0, dissipative=False, lip_chi=1.0, chemotaxis=0.5)
    assert c.certified_radius(1.0, 1.0) <= g.certified_radius(1.0, 1.0)
    assert c.certified_radius(1.0, 0.0, 0.5, 0.5) == pytest.approx(math.hypot(0.5, 0.5))


def test_box_check():
    need = check_box(10.0, 2.0, 0.5, 0.1, 1.0, 0.05)
    assert need == pytest.approx(2.0 + 0.5 + 3 * math.sqrt(0.2) + 0.1)
    with pytest.raises(DomainError, match="required"):
        check_box(2.0, 2.0, 0.5, 0.1, 1.0, 0.05)


# --- rate shape

def test_rate_cd_examples():
    assert rate_cd(16, 1) == 0.25
    assert rate_cd(8, 3) == pytest.approx(0.5, rel=1e-15)
    assert rate_cd(round(math.e**2), 2) == pytest.approx(math.log(7) / math.sqrt(7), rel=1e-15)
    with pytest.raises(DomainError):
        rate_cd(1, 1)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_rate_cd_slopes(d):
    ns = 2.0 ** np.arange(3, 20)
    vals = np.array([rate_cd(int(n), d) for n in ns])
    assert np.all(vals > 0) and np.all(np.diff(vals) < 0)
    slopes = np.diff(np.log(vals)) / np.diff(np.log(ns))
    if d == 2:
        corr = np.diff(np.log(np.log(ns))) / np.diff(np.log(ns))
        assert np.allclose(slopes - corr, -0.5, atol=1e-12)
    else:
        assert np.allclose(slopes, -0.5 if d == 1 else -1.0 / d, atol=1e-12)
