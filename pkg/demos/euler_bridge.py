"""Monokinetic particles versus the pressureless Euler system.

Particles start on the graph v = u(x) with u = 0.25 sin(pi x). Before any
crossing their phase-space cloud stays close to mu(t, x) delta(v - u(t, x)).
"""

import math

from mfcl.experiments import euler_compare
from mfcl.measures import Bump1D, MonokineticMeasure, VelocityProfile
from mfcl.model import BumpSource, CuckerSmaleKernel, ExternalForce, Physics, SimConfig

data = MonokineticMeasure(Bump1D(0.0, 1.0, 4.0), VelocityProfile(amplitude=0.25, wavenumber=math.pi))
phys = Physics(CuckerSmaleKernel(1.0, 1.0, 1.0), BumpSource(0.5, 1.0), ExternalForce(), chemotaxis=0.5)
cfg = SimConfig(1, 256, 0.01, 0.5, phys, 0.1, 0.5, data, 3.0, 128)

cmp_ = euler_compare(cfg, [64, 256, 1024], [1 / 32, 1 / 64, 1 / 128], reps=2)
for n, h, d in cmp_.by_n:
    print(f"N={n:5d} h=1/{round(1 / h)}  W2 = {d:.4f}")
for n, h, d in cmp_.by_h:
    print(f"N={n:5d} h=1/{round(1 / h)}  W2 = {d:.4f}")
print(f"mass drift {cmp_.mass_drift:.1e}, momentum drift (forces off) {cmp_.momentum_drift:.1e}")
