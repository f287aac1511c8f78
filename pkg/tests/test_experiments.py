"""Rate studies, stability audits and the marginal identity, at small sizes."""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pytest

from conftest import make_config
from mfcl import experiments
from mfcl.experiments import (QuadratureFloorError, RateTable, dobrushin_experiment, euler_compare, fg_rate_experiment,
                              fit_slope, frozen_gap_audit, map_ordered, marginal_lemma_check, particle_study,
                              thread_count)
from mfcl.measures import (Bump1D, MonokineticMeasure, PhaseMeasure, PointMass1D, ProductMeasure, ShiftedMeasure,
                           Uniform1D, VelocityProfile)
from mfcl.model import BumpSource, DomainError, ParticleEnsemble


# --- slopes

def test_fit_slope_examples():
    ns = np.array([64, 128, 256, 512])
    assert fit_slope((ns, 3.0 * ns**-0.5))[0] == pytest.approx(-0.5, abs=1e-12)
    assert fit_slope((ns, np.full(4, 2.0))) == (0.0, 0.0)
    rng = np.random.default_rng(0)
    ns = 2 ** np.arange(6, 13)
    noisy = ns**-1.0 * (1 + 0.05 * rng.standard_normal(ns.size))
    slope, err = fit_slope((ns, noisy))
    assert abs(slope + 1) < 0.1 and err > 0
    with pytest.raises(DomainError):
        fit_slope((ns[:2], noisy[:2]))


def test_rate_table():
    t = RateTable("x", 1, [10, 20, 40], [4, 4, 4], [1.0, 0.5, 0.25], [0, 0, 0])
    assert t.slope == pytest.approx(-1.0) and t.strictly_decreasing()
    assert t.anchored_constant(-0.5) == pytest.approx(0.25 * math.sqrt(40))
    assert [r[0] for r in t.rows()] == [10, 20, 40]
    with pytest.raises(DomainError):
        RateTable("x", 1, [10, 10, 40], [1] * 3, [1.0] * 3, [0.0] * 3)


# --- empirical-measure rate

def test_fg_point_mass_is_zero():
    m = ProductMeasure((PointMass1D(0.3),), (PointMass1D(-0.1),))
    t = fg_rate_experiment(m, [4, 8, 16], 3)
    assert np.all(t.means == 0)


def uniform_rest():
    return ProductMeasure((Uniform1D(0.0, 1.0),), (PointMass1D(0.0),))


def test_fg_uniform_rate():
    t = fg_rate_experiment(uniform_rest(), [32, 64, 128, 256], 32, seed=1)
    assert t.slope <= -0.45 and t.strictly_decreasing()
    assert np.all(np.isfinite(t.means)) and np.all(t.stderrs > 0)
    # E W2^2 = 1/(6N) for the uniform law on the line
    assert t.means[-1] == pytest.approx(1 / (6 * 256), rel=0.3)


def test_fg_dilation_scales_by_four():
    a = fg_rate_experiment(uniform_rest(), [16, 32, 64], 4, seed=2)
    b = fg_rate_experiment(ProductMeasure((Uniform1D(0.0, 2.0),), (PointMass1D(0.0),)), [16, 32, 64], 4, seed=2)
    assert np.allclose(b.means, 4 * a.means, rtol=1e-10)


def test_fg_floor_guard():
    with pytest.raises(QuadratureFloorError, match="reference_size"):
        fg_rate_experiment(uniform_rest(), [64, 128, 256], 4, reference_size=8)


@dataclass(frozen=True)
class Transported(PhaseMeasure):
    """Free-transport image ``(x + t v, v)`` of ``base``."""

    base: PhaseMeasure
    t: float

    @property
    def dim(self):
        return self.base.dim

    def _move(self, e):
        return ParticleEnsemble(e.positions + self.t * e.velocities, e.velocities, e.weights)

    def sample(self, n, seed=0, replicate=0):
        return self._move(self.base.sample(n, seed, replicate))

    def quadrature(self, m):
        return self._move(self.base.quadrature(m))

    def floor_sq(self, m):
        return 0.0


def test_meanfield_reduces_to_empirical_rate():
    cfg = make_config(beta=0.0, eta=0.0, dt=0.1, horizon=1.0)
    ns, M, reps = [16, 32, 64, 128], 1024, 8
    study = particle_study(cfg, ns, M, reps, use_cache=False)
    base = fg_rate_experiment(Transported(cfg.initial, 1.0), ns, reps, cfg.seed, M)
    assert abs(study.meanfield.slope - base.slope) < 0.05
    assert np.allclose(study.meanfield.means, base.means, rtol=1e-8)


def test_chemgap_zero_without_source():
    cfg = make_config(beta=1.0, eta=0.0, bump=BumpSource(0.5, 0.0), dt=0.05, horizon=0.5)
    study = particle_study(cfg, [8, 16, 32], 2048, 2, use_cache=False)
    assert np.all(study.chemgap.means == 0)
    assert np.all(study.meanfield.means > 0)


def test_study_requires_large_reference():
    with pytest.raises(DomainError):
        particle_study(make_config(), [8, 16, 32], 64, 2)


def test_frozen_gap_audit():
    m = ProductMeasure((Uniform1D(-0.5, 0.5),), (PointMass1D(0.0),))
    cfg = make_config(beta=0.0, eta=0.0, measure=m, dt=0.05, horizon=0.5, cells=512)
    rows = frozen_gap_audit(cfg, 32, 4, 1024)
    assert all(r["ok"] for r in rows)
    assert all(r["gap"] > 0 and r["w2"] > 0 for r in rows)
    with pytest.raises(DomainError):
        frozen_gap_audit(make_config(beta=1.0), 8, 1, 64)


# --- Dobrushin

def test_dobrushin_identical():
    cfg = make_config(beta=1.0, eta=0.5, dt=0.05, horizon=0.5)
    s = dobrushin_experiment(cfg.initial, cfg.initial, cfg, 64)
    assert np.all(s.measured == 0) and s.holds()


def test_dobrushin_translation_free_transport():
    cfg = make_config(beta=0.0, eta=0.0, dt=0.05, horizon=0.5)
    s = dobrushin_experiment(cfg.initial, ShiftedMeasure(cfg.initial, [0.2], [0.0]), cfg, 256)
    assert np.allclose(s.measured, 0.04, rtol=1e-10)
    assert np.all(np.diff(s.bound) >= 0) and s.holds()


def test_dobrushin_full_model():
    cfg = make_config(beta=1.0, eta=0.5, dt=0.05, horizon=0.5)
    s = dobrushin_experiment(cfg.initial, ShiftedMeasure(cfg.initial, [0.1], [0.0]), cfg, 256)
    assert s.holds()
    assert s.rows().shape == (len(s.times), 4)


# --- marginal identity

def test_marginal_examples():
    r = marginal_lemma_check([(0.5, 1.0)])
    assert r["equal"] and r["marginal"] == {(0.5, 1.0): Fraction(1)}
    r = marginal_lemma_check([(0.0, 0.0), (1.0, 2.0)])
    assert r["equal"] and set(r["marginal"].values()) == {Fraction(1, 2)}
    r = marginal_lemma_check([(1.0, 1.0), (1.0, 1.0), (3.0, 0.0)])
    assert r["equal"] and r["marginal"][(1.0, 1.0)] == Fraction(2, 3)
    assert r["symmetrized_atoms"] == 3 and r["symmetrized_mass"] == 1
    with pytest.raises(DomainError):
        marginal_lemma_check([(0.0,)] * 6)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_marginal_random(n):
    rng = np.random.default_rng(n)
    z = rng.integers(0, 2, size=(n, 2)).astype(float)
    assert marginal_lemma_check(z)["equal"]


# --- Euler bridge

def test_euler_compare_small():
    m = MonokineticMeasure(Bump1D(0.0, 1.0, 4.0), VelocityProfile(amplitude=0.25, wavenumber=math.pi))
    cfg = make_config(beta=1.0, eta=0.5, measure=m, dt=0.01, horizon=0.2, half_width=3.0, cells=128)
    c = euler_compare(cfg, [64, 256], [1 / 16, 1 / 32], reps=2)
    assert [r[0] for r in c.by_n] == [64, 256]
    assert [r[1] for r in c.by_h] == [1 / 16, 1 / 32]
    assert c.mass_drift < 1e-10 and c.momentum_drift < 1e-10
    assert not any(c.crossings)
    assert len(c.rows()) == 4
    with pytest.raises(DomainError):
        euler_compare(make_config(), [64], [1 / 16])


# --- parallel determinism

def test_map_ordered_preserves_order(monkeypatch):
    monkeypatch.delenv("MFCL_THREADS", raising=False)
    assert thread_count(3) == 3
    assert map_ordered(lambda x: x * x, list(range(20)), threads=4) == [x * x for x in range(20)]
    monkeypatch.setenv("MFCL_THREADS", "2")
    assert thread_count(8) == 2


def test_thread_count_does_not_change_results(monkeypatch):
    monkeypatch.delenv("MFCL_THREADS", raising=False)
    m = ProductMeasure.iid(1, Uniform1D(-1, 1), Uniform1D(-1, 1))
    a = fg_rate_experiment(m, [16, 32, 64], 6, seed=4, threads=1)
    b = fg_rate_experiment(m, [16, 32, 64], 6, seed=4, threads=3)
    assert np.array_equal(a.means, b.means)
