"""Small dense linear-algebra helpers."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .errors import NotPositiveDefinite, NotSymmetric


def check_symmetric(A: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Return ``(A + A.T)/2`` after checking the asymmetry is within ``rtol`` (relative, max-abs)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotSymmetric("matrix must be square")
    scale = max(float(np.max(np.abs(A))) if A.size else 0.0, np.finfo(float).tiny)
    if float(np.max(np.abs(A - A.T))) > rtol * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")
    return 0.5 * (A + A.T)


def operator_norm(A: np.ndarray, *, rtol: float = 1e-9, dense_limit: int = 256, max_iter: int = 10000) -> float:
    """Spectral norm of a symmetric matrix.

    Uses a full eigendecomposition up to ``dense_limit`` rows and power
    iteration (on ``A``, deterministic start) beyond it.
    """
    A = np.asarray(A, dtype=float)
    p = A.shape[0]
    if p == 0:
        return 0.0
    if p <= dense_limit:
        ev = linalg.eigvalsh(A)
        return float(max(abs(ev[0]), abs(ev[-1])))
    v = np.ones(p) / np.sqrt(p) + np.linspace(0.0, 1e-3, p)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = A @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        new = np.sqrt(nrm)
        v = w / nrm
        if abs(new - est) <= rtol * new:
            return float(new)
        est = new
    return float(est)


def cholesky_or_raise(F: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`NotPositiveDefinite` on failure."""
    try:
        return linalg.cholesky(np.asarray(F, dtype=float), lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
