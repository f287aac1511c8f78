"""How fast does an N-point sample approach its law in W2?

For the uniform law on [0, 1] the exact answer is E W2^2 = 1/(6N); the
generic rate N^{-1/2} is a worst case over laws.
"""

from mfcl.experiments import fg_rate_experiment
from mfcl.measures import PointMass1D, ProductMeasure, Uniform1D

law = ProductMeasure((Uniform1D(0.0, 1.0),), (PointMass1D(0.0),))
table = fg_rate_experiment(law, [32, 64, 128, 256, 512], reps=16, seed=1)

print(f"{'N':>6} {'E W2^2':>12} {'stderr':>10} {'1/(6N)':>12}")
for n, m, s in zip(table.ns, table.means, table.stderrs):
    print(f"{n:6d} {m:12.3e} {s:10.1e} {1 / (6 * n):12.3e}")
print(f"fitted slope {table.slope:.3f} (theory for this law: -1)")
