"""Spectral norms of symmetric arrowhead matrices.

An arrowhead matrix ``[[a, z^T], [z, diag(d)]]`` has its largest eigenvalue
at the largest root of the secular function

    f(lam) = a - lam + sum_i z_i**2 / (lam - d_i),

which is convex and decreasing to the right of the coupled poles. The root is
found inside a guaranteed bracket by iterating on a one-pole rational model
of the sum, safeguarded by bisection.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _largest_eigenvalue(a, d, z, sign):
    m = d.shape[0]
    dmax_all = -np.inf
    dmax_coupled = -np.inf
    znorm2 = 0.0
    for i in range(m):
        di = sign * d[i]
        if di > dmax_all:
            dmax_all = di
        if z[i] != 0.0:
            znorm2 += z[i] * z[i]
            if di > dmax_coupled:
                dmax_coupled = di
    a = sign * a
    if znorm2 == 0.0:
        return max(a, dmax_all)
    lo = max(a, dmax_coupled)
    hi = lo + np.sqrt(znorm2)
    scale = abs(a) + abs(dmax_coupled) + np.sqrt(znorm2)
    x = hi
    for _ in range(200):
        psi = 0.0
        dpsi = 0.0
        for i in range(m):
            if z[i] != 0.0:
                r = 1.0 / (x - sign * d[i])
                t = z[i] * z[i] * r
                psi += t
                dpsi += t * r
        f = a - x + psi
        if f > 0.0:
            lo = x
        else:
            hi = x
        if abs(f) <= 1e-14 * (abs(a) + abs(x) + psi) or hi - lo <= 1e-15 * scale:
            break
        # replace psi by c + s/(lam - dmax) matching value and slope at x, then solve exactly
        gap = x - dmax_coupled
        s = dpsi * gap * gap
        c = psi - s / gap
        b = a + c - dmax_coupled
        disc = b * b + 4.0 * s
        if b > 0.0:
            u = 0.5 * (b + np.sqrt(disc))
        else:
            u = 2.0 * s / (np.sqrt(disc) - b) if disc > b * b else 0.0
        xn = dmax_coupled + u
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-16 * scale:
            x = xn
            break
        x = xn
    return max(x, dmax_all)


@njit(cache=True)
def _norms(corner, diag, arrow):
    k = corner.shape[0]
    out = np.empty(k)
    for i in range(k):
        top = _largest_eigenvalue(corner[i], diag[i], arrow[i], 1.0)
        bottom = _largest_eigenvalue(corner[i], diag[i], arrow[i], -1.0)
        out[i] = max(abs(top), abs(bottom))
    return out


def arrowhead_norms(corner, diag, arrow) -> np.ndarray:
    """Spectral norm of each arrowhead ``[[corner[i], arrow[i]^T], [arrow[i], diag(diag[i])]]``."""
    corner = np.ascontiguousarray(corner, dtype=np.float64)
    diag = np.ascontiguousarray(diag, dtype=np.float64)
    arrow = np.ascontiguousarray(arrow, dtype=np.float64)
    return _norms(corner, diag, arrow)


def third_derivative_norms(arrowheads) -> np.ndarray:
    """``||U^j||_op`` for every ``j`` from an :class:`~spectral_risk.models.Arrowheads`."""
    base = arrowhead_norms(arrowheads.corner, arrowheads.diag, arrowheads.arrow)
    return np.abs(arrowheads.scale) * base[arrowheads.index]
