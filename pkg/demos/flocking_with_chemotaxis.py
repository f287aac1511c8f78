"""Cucker-Smale particles that also follow the chemical they secrete.

Runs the simulate configuration, then prints how the velocity spread, the
field maximum and the certified bounds evolve.
"""

from pathlib import Path

import numpy as np

from mfcl import dynamics
from mfcl.io import load_config

cfg, _ = load_config(Path(__file__).resolve().parents[1] / "configs" / "simulate.toml")
rec = dynamics.simulate(cfg)

print(f"N = {cfg.n_particles}, dt = {cfg.dt}, T = {cfg.horizon}")
print(f"{'t':>6} {'std(v)':>10} {'max|v|':>10} {'v bound':>10} {'max|z|':>10} {'z bound':>10} {'max psi':>10}")
for st in rec.states:
    v = st.ensemble.velocities[:, 0]
    row = rec.monitor[st.step_count]
    print(f"{st.time:6.2f} {v.std():10.4f} {row[1]:10.4f} {row[2]:10.3g} {row[4]:10.4f} {row[5]:10.4f} "
          f"{np.max(st.grid.values):10.4f}")

print("worst velocity ratio", round(rec.summary["max_velocity_ratio"], 4))
print("worst support ratio", round(rec.summary["max_support_ratio"], 4))
