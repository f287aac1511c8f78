"""Finite-volume pressureless Euler solver and the monokinetic bridge."""

import math

import numpy as np
import pytest

from conftest import make_config
from mfcl.hydro import (CFLViolation, EulerState, crossing_indicator, euler_initial, euler_run, euler_step,
                        euler_to_csv, monokinetic_distance, monokinetic_sample)
from mfcl.measures import Bump1D, MonokineticMeasure, Uniform1D, VelocityProfile
from mfcl.model import BumpSource, DomainError, ParticleEnsemble, Physics, CuckerSmaleKernel, ExternalForce

OFF = Physics(kernel=CuckerSmaleKernel(0.0), bump=BumpSource(0.5, 0.0))


def setup(u=None, density=None, cells=256, a=4.0, physics=None, eta=0.0):
    m = MonokineticMeasure(density or Bump1D(0.0, 1.0, 4.0), u or VelocityProfile())
    cfg = make_config(measure=m, half_width=a, cells=cells, eta=eta)
    if physics is not None:
        cfg = cfg.with_(physics=physics)
    return m, cfg, euler_initial(m, cells, a, cfg)


def test_initial_state():
    m, cfg, s = setup()
    assert s.mass() == pytest.approx(1.0, abs=1e-13)
    assert s.cells == 256 and s.spacing == pytest.approx(1 / 32)
    with pytest.raises(DomainError):
        euler_initial(m, 9, 4.0, cfg)


def test_vacuum_velocity_is_zero():
    _, _, s = setup(u=VelocityProfile(offset=1.0))
    assert np.all(s.velocity()[s.density < 1e-12] == 0)


def test_static_state_bit_stable():
    _, _, s = setup()
    out = s
    for _ in range(20):
        out = euler_step(out, 0.01, OFF)
    assert np.array_equal(out.density, s.density) and np.array_equal(out.momentum, s.momentum)


def test_constant_velocity_translates():
    _, _, s = setup(u=VelocityProfile(offset=0.5))
    c0 = np.sum(s.centers() * s.density) * s.spacing
    out, info = euler_run(s, 1.0, OFF, dt_max=0.02)
    c1 = np.sum(out.centers() * out.density) * out.spacing
    assert c1 - c0 == pytest.approx(0.5, abs=1e-10)
    assert info["mass_drift"] < 1e-12


def test_mass_conserved_over_many_steps():
    phys = Physics(kernel=CuckerSmaleKernel(1.0), bump=BumpSource(0.5, 1.0), chemotaxis=0.5)
    _, _, s = setup(u=VelocityProfile(amplitude=0.25, wavenumber=math.pi), physics=phys)
    m0 = s.mass()
    for _ in range(1000):
        s = euler_step(s, 0.002, phys)
    assert abs(s.mass() - m0) < 1e-10


def test_momentum_conserved_alignment_only():
    phys = Physics(kernel=CuckerSmaleKernel(1.0), bump=BumpSource(0.5, 1.0))
    _, _, s = setup(u=VelocityProfile(offset=0.1, amplitude=0.25, wavenumber=math.pi), physics=phys)
    p0 = s.total_momentum()
    for _ in range(100):
        prev = s.total_momentum()
        s = euler_step(s, 0.005, phys)
        assert abs(s.total_momentum() - prev) < 1e-10
    assert abs(s.total_momentum() - p0) < 1e-10


def test_alignment_contracts_velocity_spread():
    phys = Physics(kernel=CuckerSmaleKernel(2.0), bump=BumpSource(0.5, 0.0))
    _, _, s = setup(u=VelocityProfile(amplitude=0.2, wavenumber=math.pi), physics=phys)
    occ = s.density > 1e-6
    spread0 = np.ptp(s.velocity()[occ])
    s, _ = euler_run(s, 0.5, phys, dt_max=0.005)
    assert np.ptp(s.velocity()[s.density > 1e-6]) < spread0


def test_cfl_violation():
    _, _, s = setup(u=VelocityProfile(offset=2.0))
    with pytest.raises(CFLViolation):
        euler_step(s, 0.1, OFF)


def test_crossing_is_detected_and_stops():
    # u = -x focuses all mass at the origin at t = 1
    _, _, s = setup(u=VelocityProfile(slope=-1.0), density=Uniform1D(-1.0, 1.0))
    out, info = euler_run(s, 2.0, OFF, dt_max=0.01)
    assert info["crossing"] and 0.8 < out.time < 1.0
    assert crossing_indicator(out) > 1 / (10 * 0.01)
    _, _, calm = setup(u=VelocityProfile(amplitude=0.25, wavenumber=math.pi))
    assert not euler_run(calm, 0.5, OFF, dt_max=0.01)[1]["crossing"]


def _coarsen(mu):
    return 0.5 * (mu[0::2] + mu[1::2])


def test_first_order_self_convergence():
    u = VelocityProfile(amplitude=0.25, wavenumber=math.pi)
    sols = {}
    for cells in (64, 128, 256, 512):
        _, _, s = setup(u=u, cells=cells, a=2.0)
        sols[cells], _ = euler_run(s, 0.25, OFF, dt_max=0.25 / 64)
    errs = []
    for c in (64, 128, 256):
        fine = _coarsen(sols[2 * c].density)
        errs.append(np.sum(np.abs(sols[c].density - fine)) * sols[c].spacing)
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(slopes >= 0.8)


def test_monokinetic_sample():
    m = MonokineticMeasure(Uniform1D(0.0, 1.0), VelocityProfile())
    e = monokinetic_sample(m, 4, seed=7)
    assert np.all(e.velocities == 0)
    assert np.array_equal(e.positions, monokinetic_sample(m, 4, seed=7).positions)
    u = VelocityProfile(amplitude=1.0, wavenumber=math.pi)
    m2 = MonokineticMeasure(Uniform1D(0.0, 1.0), u)
    exact = 2 / math.pi
    errs = [abs(np.mean(monokinetic_sample(m2, n, 1).velocities) - exact) for n in (100, 10_000, 1_000_000)]
    assert errs[2] < 5 / math.sqrt(1_000_000) and errs[2] < errs[0]


def test_distance_zero_on_own_cloud():
    _, _, s = setup(u=VelocityProfile(amplitude=0.2, wavenumber=1.0))
    cloud = s.graph_cloud()
    assert monokinetic_distance(cloud, s) == pytest.approx(0.0, abs=1e-12)
    shifted = ParticleEnsemble(cloud.positions, cloud.velocities + 0.3, cloud.weights)
    assert monokinetic_distance(shifted, s) == pytest.approx(0.3, abs=1e-12)
    with pytest.raises(DomainError):
        monokinetic_distance(ParticleEnsemble.uniform(np.zeros((1, 2)), np.zeros((1, 2))), s)


def test_sampling_baseline_decreases():
    m, _, s = setup(u=VelocityProfile(amplitude=0.2, wavenumber=1.0), cells=1024)
    d = [np.mean([monokinetic_distance(monokinetic_sample(m, n, 0, r), s) ** 2 for r in range(8)])
         for n in (64, 256, 1024)]
    assert d[0] > d[1] > d[2]


def test_euler_csv(tmp_path):
    _, _, s = setup(cells=16)
    lines = euler_to_csv(s, tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "x,mu,u,psi" and len(lines) == 17
