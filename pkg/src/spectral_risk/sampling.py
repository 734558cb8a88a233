"""Deterministic random streams and truncated-normal sampling.

Every random draw in the package goes through :func:`make_rng`, a Philox
counter-based generator. Independent sub-streams (one per repetition or job)
are derived with :func:`stream_seed`, so results never depend on the order in
which jobs execute.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def stream_seed(seed: int, k: int) -> int:
    """Seed of sub-stream ``k``: ``seed XOR (k * 0x9E3779B97F4A7C15) mod 2**64``."""
    return (int(seed) ^ ((int(k) * _GOLDEN) & _MASK64)) & _MASK64


def make_rng(seed: int, stream: int | None = None) -> np.random.Generator:
    """Return a Philox generator for ``seed`` (optionally a derived sub-stream)."""
    if stream is not None:
        seed = stream_seed(seed, stream)
    return np.random.Generator(np.random.Philox(int(seed) & _MASK64))


def truncated_normal(rng: np.random.Generator, size, bound: float, scale: float = 1.0) -> np.ndarray:
    """Draw N(0, scale**2) conditioned on |x| <= bound.

    Parameters
    ----------
    rng : numpy.random.Generator
    size : int or tuple of int
    bound : float
        Truncation half-width, in the units of the draw.
    scale : float
        Standard deviation of the untruncated normal.
    """
    shape = (size,) if np.isscalar(size) else tuple(size)
    total = int(np.prod(shape, dtype=np.int64))
    if bound <= 0 or scale <= 0:
        raise ValueError("bound and scale must be positive")
    c = bound / scale
    if c < 0.1:
        # rejection would discard almost every draw; invert the CDF instead
        lo = special.ndtr(-c)
        u = rng.uniform(size=total)
        out = np.clip(special.ndtri(lo + u * (special.ndtr(c) - lo)), -c, c)
        return (out * scale).reshape(shape)
    out = np.empty(total)
    filled = 0
    accept = special.erf(c / np.sqrt(2.0))
    while filled < total:
        need = total - filled
        draw = rng.standard_normal(int(need / accept * 1.1) + 16)
        keep = draw[np.abs(draw) <= c][:need]
        out[filled:filled + keep.size] = keep
        filled += keep.size
    return (out * scale).reshape(shape)


def _truncated_moment(c: float, k: int) -> float:
    """``E[Z^k | |Z| <= c]`` for standard normal ``Z`` by Gauss-Legendre quadrature."""
    t, w = leggauss(48)
    z = c * t
    dens = w * np.exp(-0.5 * z * z)
    return float(np.sum(dens * z**k) / np.sum(dens))


def truncated_normal_variance(bound: float, scale: float = 1.0) -> float:
    """Variance of N(0, scale**2) truncated to [-bound, bound]."""
    c = bound / scale
    if c < 1.0:
        # the closed form cancels badly for narrow intervals
        return scale**2 * _truncated_moment(c, 2)
    mass = special.erf(c / np.sqrt(2.0))
    pdf = np.exp(-0.5 * c * c) / np.sqrt(2.0 * np.pi)
    return float(scale**2 * (1.0 - 2.0 * c * pdf / mass))


def truncated_normal_fourth_moment(bound: float, scale: float = 1.0) -> float:
    """Fourth moment of N(0, scale**2) truncated to [-bound, bound]."""
    c = bound / scale
    if c < 1.0:
        return scale**4 * _truncated_moment(c, 4)
    mass = special.erf(c / np.sqrt(2.0))
    pdf = np.exp(-0.5 * c * c) / np.sqrt(2.0 * np.pi)
    # E[Z^4 | .] = 3 E[Z^2 | .] - 2 c^3 pdf / mass
    second = 1.0 - 2.0 * c * pdf / mass
    return float(scale**4 * (3.0 * second - 2.0 * c**3 * pdf / mass))
