"""A small mean-field study: particle runs against a Vlasov reference.

The full benchmark (N up to 4096, reference 16384, 32 replicates) takes about
half an hour; this version uses a few hundred particles and finishes in
seconds.
"""

from pathlib import Path

from mfcl.experiments import particle_study
from mfcl.io import load_config

cfg, _ = load_config(Path(__file__).resolve().parents[1] / "configs" / "meanfield.toml")
study = particle_study(cfg, [32, 64, 128, 256], reference_size=2048, reps=8)

for name, t in (("E W2^2 to reference", study.meanfield), ("E sup|grad gap|^2", study.chemgap)):
    print(name)
    for n, m, s in zip(t.ns, t.means, t.stderrs):
        print(f"  N={n:5d}  {m:.3e} +- {s:.1e}")
    print(f"  slope {t.slope:.3f} +- {t.slope_stderr:.3f}")
