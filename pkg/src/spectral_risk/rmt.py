"""Random matrices ``Q = T T^T + E`` and the extended Marchenko-Pastur limit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ValidationError
from .linalg import check_symmetric
from .parallel import run_jobs
from .sampling import make_rng, truncated_normal, truncated_normal_variance
from .spectral import AsymptoticRegime, SpectralMeasure, limit_h_at_zero

__all__ = [
    "StandardGaussian",
    "TruncatedGaussian",
    "RandomMatrixSpec",
    "EmpiricalSpectrum",
    "MPReport",
    "sample_matrix",
    "draw_entries",
    "empirical_spectrum",
    "truncated_inverse_trace",
    "verify_mp_limit",
    "inverse_spectrum_matrix",
]

POSITIVE_FLOOR = 1e-10
RANK_FLOOR = 1e-8


@dataclass(frozen=True)
class StandardGaussian:
    pass


@dataclass(frozen=True)
class TruncatedGaussian:
    bound: float

    def __post_init__(self):
        if not self.bound >= 0.1:
            raise ValidationError("truncation bound must be at least 0.1")


@dataclass(frozen=True, eq=False)
class RandomMatrixSpec:
    p: int
    n: int
    column_dist: StandardGaussian | TruncatedGaussian = StandardGaussian()
    shift: np.ndarray | None = field(default=None, repr=False)
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.n < 1:
            raise ValidationError("p and n must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if self.shift is not None:
            E = np.asarray(self.shift, dtype=float)
            if E.shape != (self.p, self.p):
                raise ValidationError("shift must be p x p")
            object.__setattr__(self, "shift", check_symmetric(E, rtol=1e-12))


@dataclass(frozen=True, eq=False)
class EmpiricalSpectrum:
    eigenvalues: np.ndarray
    p: int
    min_positive: float

    @classmethod
    def from_eigenvalues(cls, eigenvalues) -> "EmpiricalSpectrum":
        ev = np.sort(np.asarray(eigenvalues, dtype=float))
        pos = ev[ev > POSITIVE_FLOOR]
        return cls(ev, ev.size, float(pos[0]) if pos.size else float("nan"))


def draw_entries(spec: RandomMatrixSpec) -> np.ndarray:
    """Raw ``p x n`` draw before any variance normalization."""
    rng = make_rng(spec.seed)
    if isinstance(spec.column_dist, TruncatedGaussian):
        return truncated_normal(rng, (spec.p, spec.n), spec.column_dist.bound)
    return rng.standard_normal((spec.p, spec.n))


def sample_matrix(spec: RandomMatrixSpec) -> np.ndarray:
    """``p x n`` matrix with i.i.d. mean-zero, identity-covariance columns."""
    T = draw_entries(spec)
    if isinstance(spec.column_dist, TruncatedGaussian):
        T = T / np.sqrt(truncated_normal_variance(spec.column_dist.bound))
    return T


def empirical_spectrum(Q) -> EmpiricalSpectrum:
    """Sorted eigenvalues of a symmetric matrix.

    Raises
    ------
    NotSymmetric
        If ``Q`` deviates from symmetry by more than ``1e-10`` (relative).
    """
    S = check_symmetric(Q, rtol=1e-10)
    return EmpiricalSpectrum.from_eigenvalues(linalg.eigvalsh(S))


def truncated_inverse_trace(spectrum: EmpiricalSpectrum, cutoff: float) -> float:
    """``(1/p) sum 1/lam`` over eigenvalues ``lam >= cutoff``."""
    if cutoff < 0:
        raise ValidationError("cutoff must be nonnegative")
    ev = spectrum.eigenvalues
    keep = ev[(ev >= cutoff) & (ev > 0)]
    return float(np.sum(1.0 / keep) / spectrum.p)


def inverse_spectrum_matrix(measure: SpectralMeasure, p: int) -> np.ndarray:
    """Diagonal of ``F*^{-1}``: quantiles of ``measure`` at ``(i - 1/2)/p``."""
    q = (np.arange(1, p + 1) - 0.5) / p
    return np.asarray(measure.quantile(q), dtype=float).reshape(p)


@dataclass(frozen=True, eq=False)
class MPReport:
    gamma: float
    tau_bar: float
    p: int
    n: int
    values: np.ndarray
    mean: float
    std: float
    analytic: float

    @property
    def reps(self) -> int:
        return int(self.values.size)

    @property
    def gap(self) -> float:
        return abs(self.mean - self.analytic)


def _mp_rep(args):
    p, n, gamma, tau_bar, inv_diag, seed = args
    T = sample_matrix(RandomMatrixSpec(p, n, seed=seed)) / np.sqrt(p)
    G = T @ T.T
    if tau_bar > 0:
        Q = G + np.diag((n / p) * tau_bar * inv_diag)
        cutoff = 0.0
    else:
        Q = G
        cutoff = 0.0
        if gamma > 1:
            ev = linalg.eigvalsh(0.5 * (G + G.T))
            pos = ev[ev > RANK_FLOOR]
            cutoff = float(pos[0]) if pos.size else 0.0
    return truncated_inverse_trace(empirical_spectrum(Q), cutoff)


def verify_mp_limit(
    measure: SpectralMeasure,
    regime: AsymptoticRegime,
    p: int,
    reps: int,
    seed: int,
    *,
    threads: int = 1,
) -> MPReport:
    """Monte Carlo truncated inverse trace against ``limit_h_at_zero``.

    Each repetition samples ``T`` with columns of covariance ``I/p``, forms
    ``Q = T T^T + (n/p) tau_bar F*^{-1}`` and evaluates the truncated inverse
    trace. Repetition ``k`` uses sub-stream ``k`` of ``seed``.
    """
    n = int(round(p / regime.gamma))
    if n < 1 or p < 1 or reps < 1:
        raise ValidationError("need p >= 1, reps >= 1 and round(p/gamma) >= 1")
    from .sampling import stream_seed

    inv_diag = inverse_spectrum_matrix(measure, p)
    jobs = [(p, n, regime.gamma, regime.tau_bar, inv_diag, stream_seed(seed, k)) for k in range(reps)]
    values = np.array(run_jobs(_mp_rep, jobs, threads))
    return MPReport(
        gamma=regime.gamma,
        tau_bar=regime.tau_bar,
        p=p,
        n=n,
        values=values,
        mean=float(values.mean()),
        std=float(values.std()),
        analytic=limit_h_at_zero(measure, regime),
    )
