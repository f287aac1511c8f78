"""Exact and entropic optimal transport between weighted point clouds.

Solvers:

* the line: monotone (north-west corner on sorted atoms) coupling, optimal
  for every convex cost;
* equal-size uniform clouds: linear assignment (scipy);
* general weights: network simplex (POT ``emd``).

``brute_force_ot`` is an independent exact oracle for tiny instances:
enumeration of permutations in the uniform equal-size case, otherwise
negative-cycle cancelling on the residual graph, which stops only when the
Bellman-Ford search certifies that no improving cycle remains.
"""

from __future__ import annotations

import itertools
import math
import os
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .model import DomainError, ParticleEnsemble

for _backend in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
import ot  # noqa: E402

MARGINAL_TOL = 1e-10


class MarginalError(DomainError):
    pass


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling: ``mass[k]`` moves from source atom ``src[k]`` to target ``tgt[k]``.

    ``cost`` is the total ground cost (squared distances for ``p = 2``).
    """

    src: np.ndarray
    tgt: np.ndarray
    mass: np.ndarray
    cost: float
    p: int
    residual_src: float
    residual_tgt: float
    solver: str = ""

    @property
    def residual(self) -> float:
        return max(self.residual_src, self.residual_tgt)

    @property
    def distance(self) -> float:
        return max(self.cost, 0.0) ** (1.0 / self.p)

    def __len__(self):
        return int(self.mass.size)

    def dense(self, n_src: int, n_tgt: int) -> np.ndarray:
        g = np.zeros((n_src, n_tgt))
        np.add.at(g, (self.src, self.tgt), self.mass)
        return g


def ground_cost(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    if p == 2:
        return cdist(a, b, "sqeuclidean")
    if p == 1:
        return cdist(a, b, "euclidean")
    raise DomainError("only p in {1, 2} is supported")


def plan_cost(plan_src, plan_tgt, mass, a, b, p) -> float:
    """Cost recomputed pair by pair from the coordinates."""
    diff = a[plan_src] - b[plan_tgt]
    d2 = np.sum(diff * diff, axis=1)
    c = d2 if p == 2 else np.sqrt(d2)
    return float(np.sum(mass * c))


def _as_points(m) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(m, ParticleEnsemble):
        return m.phase_points(), m.weights
    pts, w = m
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts, np.asarray(w, dtype=float)


def _finish(src, tgt, mass, a, wa, b, wb, p, solver, ia, ib) -> TransportPlan:
    keep = mass > 0
    src, tgt, mass = src[keep], tgt[keep], mass[keep]
    rs = float(np.max(np.abs(np.bincount(src, mass, minlength=a.shape[0]) - wa)))
    rt = float(np.max(np.abs(np.bincount(tgt, mass, minlength=b.shape[0]) - wb)))
    cost = plan_cost(src, tgt, mass, a, b, p)
    return TransportPlan(ia[src], ib[tgt], mass, cost, p, rs, rt, solver)


def _prepare(mu, nu):
    a, wa = _as_points(mu)
    b, wb = _as_points(nu)
    if a.shape[1] != b.shape[1]:
        raise DomainError("clouds live in different dimensions")
    for w in (wa, wb):
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be nonnegative and sum to 1 within 1e-12")
    ia = np.flatnonzero(wa > 0)
    ib = np.flatnonzero(wb > 0)
    if ia.size < wa.size or ib.size < wb.size:
        warnings.warn(f"dropping {wa.size - ia.size + wb.size - ib.size} zero-weight atoms", stacklevel=3)
    a, wa, b, wb = a[ia], wa[ia], b[ib], wb[ib]
    # a coordinate that is the same constant in both clouds contributes nothing
    both = np.vstack([a, b])
    live = np.flatnonzero(np.ptp(both, axis=0) > 0)
    if live.size == 0:
        live = np.arange(min(1, both.shape[1]))
    return a[:, live], wa, b[:, live], wb, ia, ib


def sorted_coupling_1d(a, wa, b, wb):
    """Monotone coupling of two weighted clouds on the line: ``(i, j, mass)``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    oa = np.argsort(a, kind="stable")
    ob = np.argsort(b, kind="stable")
    ca = np.cumsum(np.asarray(wa, dtype=float)[oa])
    cb = np.cumsum(np.asarray(wb, dtype=float)[ob])
    ca[-1] = cb[-1] = 1.0
    brk = np.unique(np.concatenate([[0.0], ca, cb]))
    left, mass = brk[:-1], np.diff(brk)
    i = np.minimum(np.searchsorted(ca, left, side="right"), a.size - 1)
    j = np.minimum(np.searchsorted(cb, left, side="right"), b.size - 1)
    return oa[i], ob[j], mass


def w2sq_sorted_1d(a, wa, b, wb) -> float:
    i, j, m = sorted_coupling_1d(a, wa, b, wb)
    a = np.asarray(a, float).reshape(-1)
    b = np.asarray(b, float).reshape(-1)
    return float(np.sum(m * (a[i] - b[j]) ** 2))


def _is_uniform(w) -> bool:
    return bool(np.all(w == w[0])) or float(np.ptp(w)) < 1e-15


def _solve(mu, nu, p: int, allow_assignment: bool = True) -> TransportPlan:
    a, wa, b, wb, ia, ib = _prepare(mu, nu)
    if a.shape[1] == 1:
        i, j, m = sorted_coupling_1d(a[:, 0], wa, b[:, 0], wb)
        plan = _finish(i, j, m, a, wa, b, wb, p, "sorted-1d", ia, ib)
    elif allow_assignment and a.shape[0] == b.shape[0] and _is_uniform(wa) and _is_uniform(wb):
        r, c = linear_sum_assignment(ground_cost(a, b, p))
        plan = _finish(r, c, np.full(r.size, 1.0 / r.size), a, wa, b, wb, p, "assignment", ia, ib)
    else:
        M = ground_cost(a, b, p)
        G = ot.emd(wa, wb, M, numItermax=max(10_000_000, 50 * a.shape[0] * b.shape[0]))
        del M
        r, c = np.nonzero(G)
        plan = _finish(r, c, G[r, c], a, wa, b, wb, p, "network-simplex", ia, ib)
    if plan.residual > MARGINAL_TOL:
        raise MarginalError(f"marginal residual {plan.residual:.3e} exceeds {MARGINAL_TOL:g} ({plan.solver})")
    return plan


def w2_exact_uniform(A, B) -> tuple[float, TransportPlan]:
    """W2 between equal-size uniform clouds via linear assignment (sorting on the line)."""
    a, wa = _as_points(A)
    b, wb = _as_points(B)
    if a.shape[0] != b.shape[0]:
        raise DomainError(f"size mismatch: {a.shape[0]} vs {b.shape[0]}")
    if not (_is_uniform(wa) and _is_uniform(wb)):
        raise DomainError("w2_exact_uniform needs uniform weights")
    plan = _solve(A, B, 2)
    return plan.distance, plan


def w2_weighted(mu, nu) -> tuple[float, TransportPlan]:
    plan = _solve(mu, nu, 2)
    return plan.distance, plan


def w1(mu, nu) -> tuple[float, TransportPlan]:
    plan = _solve(mu, nu, 1)
    return plan.distance, plan


def w2(mu, nu) -> float:
    return w2_weighted(mu, nu)[0]


# ---------------------------------------------------------------------------
# brute-force oracle


BRUTE_LIMIT = 8


def _cycle_cancel(C: np.ndarray, wa: np.ndarray, wb: np.ndarray, tol: float = 1e-13):
    """Exact min-cost transport by cancelling negative residual cycles."""
    m, n = C.shape
    # north-west corner start
    F = np.zeros((m, n))
    ra, rb = wa.astype(float).copy(), wb.astype(float).copy()
    i = j = 0
    while i < m and j < n:
        q = min(ra[i], rb[j])
        F[i, j] += q
        ra[i] -= q
        rb[j] -= q
        if ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    nodes = m + n
    for _ in range(100_000):
        # residual edges: row i -> col j (cost C), col j -> row i (cost -C) if flow > 0
        edges = [(r, m + c, C[r, c]) for r in range(m) for c in range(n)]
        edges += [(m + c, r, -C[r, c]) for r in range(m) for c in range(n) if F[r, c] > tol]
        dist = np.zeros(nodes)
        pred = np.full(nodes, -1)
        last = -1
        for _ in range(nodes):
            last = -1
            for u, v, w in edges:
                if dist[u] + w < dist[v] - tol:
                    dist[v] = dist[u] + w
                    pred[v] = u
                    last = v
            if last < 0:
                break
        if last < 0:
            return F
        for _ in range(nodes):
            last = pred[last]
        cycle = [last]
        u = pred[last]
        while u != last:
            cycle.append(u)
            u = pred[u]
        cycle.reverse()
        pairs = list(zip(cycle, cycle[1:] + cycle[:1]))
        back = [(v, u - m) for u, v in pairs if u >= m]
        push = min(F[r, c] for r, c in back)
        for u, v in pairs:
            if u < m:
                F[u, v - m] += push
            else:
                F[v, u - m] -= push
        F[F < tol * 1e-3] = 0.0
    raise RuntimeError("cycle cancelling did not terminate")


def brute_force_ot(mu, nu, p: int = 2) -> tuple[float, TransportPlan]:
    """Exact optimum on instances with at most eight atoms per side."""
    a, wa = _as_points(mu)
    b, wb = _as_points(nu)
    if a.shape[0] > BRUTE_LIMIT or b.shape[0] > BRUTE_LIMIT:
        raise DomainError(f"brute_force_ot handles at most {BRUTE_LIMIT} atoms per side")
    C = ground_cost(a, b, p)
    ia, ib = np.arange(a.shape[0]), np.arange(b.shape[0])
    if a.shape[0] == b.shape[0] and _is_uniform(wa) and _is_uniform(wb):
        n = a.shape[0]
        best, best_perm = math.inf, None
        for perm in itertools.permutations(range(n)):
            c = C[np.arange(n), perm].sum()
            if c < best:
                best, best_perm = c, perm
        src, tgt = np.arange(n), np.asarray(best_perm)
        plan = _finish(src, tgt, np.full(n, 1.0 / n), a, wa, b, wb, p, "enumeration", ia, ib)
    else:
        F = _cycle_cancel(C, wa, wb)
        r, c = np.nonzero(F)
        plan = _finish(r, c, F[r, c], a, wa, b, wb, p, "cycle-cancelling", ia, ib)
    return plan.distance, plan


# ---------------------------------------------------------------------------
# entropic approximation


@dataclass(frozen=True)
class SinkhornResult:
    value: float
    epsilon: float
    residual: float
    converged: bool
    iterations: int

    @property
    def distance(self) -> float:
        return math.sqrt(max(self.value, 0.0))


def sinkhorn(mu, nu, eps: float, max_iters: int = 10_000, tol: float = 1e-9) -> SinkhornResult:
    """Transport cost ``<P, C>`` of the log-domain entropic plan (quadratic cost).

    The value is an upper bound of the exact squared W2 up to the marginal
    residual. ``converged`` is False when the residual stays above ``tol``.
    """
    if not eps > 0:
        raise DomainError("epsilon must be positive")
    a, wa, b, wb, _, _ = _prepare(mu, nu)
    M = ground_cost(a, b, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        P, log = ot.bregman.sinkhorn_log(wa, wb, M, eps, numItermax=max_iters, stopThr=tol, log=True)
    res = max(float(np.max(np.abs(P.sum(1) - wa))), float(np.max(np.abs(P.sum(0) - wb))))
    return SinkhornResult(float(np.sum(P * M)), eps, res, res <= tol * 10, int(log.get("niter", max_iters)))


# ---------------------------------------------------------------------------
# permutation symmetrization


SYM_LIMIT = 5


def configuration_cloud(points: np.ndarray) -> tuple[np.ndarray, list]:
    """Uniform measure on all relabellings of ``N`` phase points, in ``R^{2dN}``.

    Atom ``k`` is the configuration ``(z_{p[0]}, ..., z_{p[N-1]})`` with ``p``
    the ``k``-th permutation of ``itertools.permutations``.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n > SYM_LIMIT:
        raise DomainError(f"configuration clouds are limited to N <= {SYM_LIMIT}")
    perms = list(itertools.permutations(range(n)))
    atoms = np.array([points[list(p)].reshape(-1) for p in perms])
    return atoms, perms


def symmetrize_plan(plan: TransportPlan, n: int) -> TransportPlan:
    """Average of ``plan`` over the diagonal action of the symmetric group.

    ``plan`` couples two configuration clouds indexed as in
    :func:`configuration_cloud`; relabelling both sides by the same
    permutation maps atom ``p`` to atom ``p o sigma``.
    """
    if n > SYM_LIMIT:
        raise DomainError(f"symmetrize_plan is limited to N <= {SYM_LIMIT}")
    perms = list(itertools.permutations(range(n)))
    if n == 1:
        return plan
    index = {p: k for k, p in enumerate(perms)}
    src, tgt, mass = [], [], []
    scale = 1.0 / len(perms)
    for sigma in perms:
        act = np.array([index[tuple(p[s] for s in sigma)] for p in perms])
        src.append(act[plan.src])
        tgt.append(act[plan.tgt])
        mass.append(plan.mass * scale)
    src, tgt, mass = np.concatenate(src), np.concatenate(tgt), np.concatenate(mass)
    key = src * len(perms) + tgt
    uniq, inv = np.unique(key, return_inverse=True)
    agg = np.bincount(inv, weights=mass)
    return TransportPlan(uniq // len(perms), uniq % len(perms), agg, math.nan, plan.p,
                         math.nan, math.nan, plan.solver + "+symmetrized")


def evaluate_plan(plan: TransportPlan, mu, nu) -> TransportPlan:
    """Recompute cost and marginal residuals of ``plan`` against the clouds."""
    a, wa = _as_points(mu)
    b, wb = _as_points(nu)
    rs = float(np.max(np.abs(np.bincount(plan.src, plan.mass, minlength=a.shape[0]) - wa)))
    rt = float(np.max(np.abs(np.bincount(plan.tgt, plan.mass, minlength=b.shape[0]) - wb)))
    cost = plan_cost(plan.src, plan.tgt, plan.mass, a, b, plan.p)
    return TransportPlan(plan.src, plan.tgt, plan.mass, cost, plan.p, rs, rt, plan.solver)


# ---------------------------------------------------------------------------
# export


def plan_to_csv(plan: TransportPlan, path):
    from .io import write_csv

    rows = np.column_stack([plan.src, plan.tgt, plan.mass]) if len(plan) else np.zeros((0, 3))
    return write_csv(path, ["i", "j", "mass"], rows, int_columns=(0, 1))


def distances_to_csv(records, path):
    """``records``: iterable of ``(instance_id, N, distance, solver, residual)``."""
    from .io import write_table

    return write_table(path, ["instance", "N", "distance", "solver", "residual"], list(records))
