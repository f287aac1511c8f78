"""Compiled pairwise sums.

Sources are gathered into canonical order before the call, and each target
accumulates them left to right, so the result for a target depends only on
its own data and the ordered source list. The kernels release the GIL;
parallelism happens one level up, across independent runs.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True, fastmath=True)
def _cs_1d(xt, vt, xs, vs, ws, beta, il2, sigma, out):
    nt = xt.shape[0]
    ns = xs.shape[0]
    for i in range(nt):
        xi = xt[i]
        vi = vt[i]
        a = 0.0
        if sigma == 1.0:
            for j in range(ns):
                dx = xi - xs[j]
                a += ws[j] * (vi - vs[j]) * (1.0 / (1.0 + dx * dx * il2))
        elif sigma == 0.5:
            for j in range(ns):
                dx = xi - xs[j]
                a += ws[j] * (vi - vs[j]) * (1.0 / np.sqrt(1.0 + dx * dx * il2))
        else:
            for j in range(ns):
                dx = xi - xs[j]
                a += ws[j] * (vi - vs[j]) * (1.0 + dx * dx * il2) ** (-sigma)
        out[i] = -beta * a
    return out


@nb.njit(cache=True, nogil=True, fastmath=True)
def _cs_nd(xt, vt, xs, vs, ws, beta, il2, sigma, out):
    nt, d = xt.shape
    ns = xs.shape[0]
    acc = np.zeros(d)
    for i in range(nt):
        acc[:] = 0.0
        for j in range(ns):
            r2 = 0.0
            for k in range(d):
                dx = xt[i, k] - xs[j, k]
                r2 += dx * dx
            q = 1.0 + r2 * il2
            if sigma == 1.0:
                psi = 1.0 / q
            elif sigma == 0.5:
                psi = 1.0 / np.sqrt(q)
            else:
                psi = q ** (-sigma)
            c = ws[j] * psi
            for k in range(d):
                acc[k] += c * (vt[i, k] - vs[j, k])
        for k in range(d):
            out[i, k] = -beta * acc[k]
    return out


def cs_acceleration(xt, vt, xs, vs, ws, order, beta, length, sigma):
    """``-beta sum_j w_j psi(x_t - x_j) (v_t - v_j)`` with sources taken in ``order``."""
    order = np.asarray(order, dtype=np.int64)
    xs_o = np.ascontiguousarray(xs[order])
    vs_o = np.ascontiguousarray(vs[order])
    ws_o = np.ascontiguousarray(ws[order])
    il2 = 1.0 / float(length) ** 2
    if xt.shape[1] == 1:
        out = np.empty(xt.shape[0])
        _cs_1d(np.ascontiguousarray(xt[:, 0]), np.ascontiguousarray(vt[:, 0]), xs_o[:, 0].copy(),
               vs_o[:, 0].copy(), ws_o, float(beta), il2, float(sigma), out)
        return out[:, None]
    out = np.empty(xt.shape)
    _cs_nd(np.ascontiguousarray(xt), np.ascontiguousarray(vt), xs_o, vs_o, ws_o, float(beta), il2,
           float(sigma), out)
    return out


def generic_acceleration(func, xt, vt, xs, vs, ws, order, chunk=256):
    """Weighted pair sum for an arbitrary vectorised kernel ``func(dv, dx)``."""
    out = np.zeros_like(xt)
    xs_o, vs_o, ws_o = xs[order], vs[order], ws[order]
    for start in range(0, xt.shape[0], chunk):
        sl = slice(start, start + chunk)
        dv = vt[sl, None, :] - vs_o[None, :, :]
        dx = xt[sl, None, :] - xs_o[None, :, :]
        g = np.asarray(func(dv, dx), dtype=float)
        acc = np.zeros((g.shape[0], xt.shape[1]))
        for j in range(g.shape[1]):
            acc += ws_o[j] * g[:, j, :]
        out[sl] = acc
    return out
