"""Limiting spectral measures and the weighted Stieltjes fixed point.

For a probability measure xi on the positive reals, an aspect ratio
``gamma = lim p/n`` and a limiting penalty ``tau_bar``, the weighted
transform is

    h0(a) = integral of 1 / ((tau_bar/gamma) * lam - a) d xi(lam),

and ``h`` solves ``h(a) = h0(a - 1/(gamma (1 + h(a))))``. The value of ``h``
at ``a = 0`` controls the asymptotic variance of the penalized estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import InvalidRegime, NoAdmissibleRoot, NoConvergence, PoleInDomain, ValidationError

__all__ = [
    "SpectralMeasure",
    "Dirac",
    "Uniform",
    "Semicircle",
    "Empirical",
    "AsymptoticRegime",
    "RiskBoundInputs",
    "h0_transform",
    "solve_h",
    "limit_h_at_zero",
    "variance_bound",
    "risk_bound",
]


class SpectralMeasure:
    """A probability measure on (0, inf)."""

    @property
    def lower(self) -> float:
        """Infimum of the support."""
        raise NotImplementedError

    def stieltjes(self, s: float, a: float) -> float:
        """Return the integral of ``1/(s*lam - a)``; requires ``a < s*lower`` or ``s = 0, a < 0``."""
        raise NotImplementedError

    def quantile(self, q):
        """Inverse distribution function evaluated at ``q`` in (0, 1)."""
        raise NotImplementedError

    def density_integral(self, fn, **kwargs) -> float:
        """Integral of ``fn`` against the measure (used for cross-checks)."""
        raise NotImplementedError


@dataclass(frozen=True)
class Dirac(SpectralMeasure):
    atom: float

    def __post_init__(self):
        if not self.atom > 0:
            raise ValidationError("Dirac atom must be positive")

    @property
    def lower(self):
        return self.atom

    def stieltjes(self, s, a):
        return 1.0 / (s * self.atom - a)

    def quantile(self, q):
        return np.full(np.shape(q), self.atom, dtype=float)

    def density_integral(self, fn, **kwargs):
        return float(fn(self.atom))


@dataclass(frozen=True)
class Uniform(SpectralMeasure):
    lower_edge: float
    upper_edge: float

    def __post_init__(self):
        if not 0 < self.lower_edge < self.upper_edge:
            raise ValidationError("uniform measure needs 0 < lower < upper")

    @property
    def lower(self):
        return self.lower_edge

    @property
    def width(self):
        return self.upper_edge - self.lower_edge

    def stieltjes(self, s, a):
        if s == 0.0:
            return -1.0 / a
        sw = s * self.width
        return math.log1p(sw / (s * self.lower_edge - a)) / sw

    def quantile(self, q):
        return self.lower_edge + np.asarray(q, dtype=float) * self.width

    def density_integral(self, fn, **kwargs):
        from scipy import integrate

        val, _ = integrate.quad(fn, self.lower_edge, self.upper_edge, **kwargs)
        return val / self.width


@dataclass(frozen=True)
class Semicircle(SpectralMeasure):
    """Semicircle law of radius one centred at ``center > 1``."""

    center: float

    def __post_init__(self):
        if not self.center > 1:
            raise ValidationError("semicircle center must exceed 1")

    @property
    def lower(self):
        return self.center - 1.0

    def stieltjes(self, s, a):
        u = s * self.center - a
        # (2/s^2)(u - sqrt(u^2 - s^2)), rationalized so that s = 0 is regular
        return 2.0 / (u + math.sqrt(max(u * u - s * s, 0.0)))

    def cdf(self, x):
        t = np.clip(np.asarray(x, dtype=float) - self.center, -1.0, 1.0)
        return 0.5 + (t * np.sqrt(1.0 - t * t) + np.arcsin(t)) / np.pi

    def quantile(self, q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.empty_like(q)
        for i, qi in enumerate(q.ravel()):
            out.flat[i] = optimize.brentq(
                lambda x: float(self.cdf(x)) - qi, self.center - 1.0, self.center + 1.0, xtol=1e-14
            )
        return out

    def density_integral(self, fn, **kwargs):
        from scipy import integrate

        c = self.center

        def integrand(x):
            return fn(x) * 2.0 / np.pi * math.sqrt(max(1.0 - (x - c) ** 2, 0.0))

        val, _ = integrate.quad(integrand, c - 1.0, c + 1.0, **kwargs)
        return val


@dataclass(frozen=True, eq=False)
class Empirical(SpectralMeasure):
    """Normalized counting measure of a finite set of positive eigenvalues."""

    eigenvalues: np.ndarray = field(repr=False)

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float).ravel()
        if ev.size == 0:
            raise ValidationError("empirical measure needs at least one eigenvalue")
        if not np.all(ev > 0):
            raise ValidationError("empirical eigenvalues must be positive")
        ev = np.sort(ev)
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def lower(self):
        return float(self.eigenvalues[0])

    def stieltjes(self, s, a):
        return float(np.mean(1.0 / (s * self.eigenvalues - a)))

    def quantile(self, q):
        m = self.eigenvalues.size
        idx = np.minimum((np.asarray(q, dtype=float) * m).astype(int), m - 1)
        return self.eigenvalues[idx]

    def density_integral(self, fn, **kwargs):
        return float(np.mean([fn(x) for x in self.eigenvalues]))


@dataclass(frozen=True)
class AsymptoticRegime:
    gamma: float
    tau_bar: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidRegime("gamma must be positive")
        if not self.tau_bar >= 0:
            raise InvalidRegime("tau_bar must be nonnegative")
        if self.gamma == 1 and self.tau_bar == 0:
            raise InvalidRegime("gamma = 1 with tau_bar = 0 has no finite limit")

    @property
    def scale(self) -> float:
        return self.tau_bar / self.gamma


@dataclass(frozen=True)
class RiskBoundInputs:
    lambda_star: float
    lambda_max: float
    radius_r: float

    def __post_init__(self):
        if not self.lambda_star >= 1:
            raise ValidationError("lambda_star must be at least 1")
        if not self.lambda_max > 0:
            raise ValidationError("lambda_max must be positive")
        # r = 0 is allowed: it reduces the risk bound to the variance bound
        if not self.radius_r >= 0:
            raise ValidationError("radius_r must be nonnegative")


def h0_transform(measure: SpectralMeasure, regime: AsymptoticRegime, a: float) -> float:
    """Weighted Stieltjes transform ``h0(a)``.

    Raises
    ------
    InvalidRegime
        If ``tau_bar = 0`` and ``a >= 0``.
    PoleInDomain
        If ``a`` is not strictly below ``(tau_bar/gamma) * inf supp``.
    """
    s = regime.scale
    if s == 0.0 and a >= 0:
        raise InvalidRegime("tau_bar = 0 requires a < 0")
    if a >= s * measure.lower:
        raise PoleInDomain(f"a={a} is not below the scaled support edge {s * measure.lower}")
    return measure.stieltjes(s, a)


def _fixed_point_map(measure, regime, a):
    s = regime.scale
    gamma = regime.gamma

    def T(h):
        return measure.stieltjes(s, a - 1.0 / (gamma * (1.0 + h)))

    return T


def _solve_at(measure, regime, a, h_start, omega, max_iter, tol):
    T = _fixed_point_map(measure, regime, a)
    h = h_start
    for _ in range(max_iter):
        th = T(h)
        if abs(th - h) <= tol:
            return th
        h = (1.0 - omega) * h + omega * th
    # Damping stalled: bracket between the monotone iterate and h0 at the shifted point.
    upper = measure.stieltjes(regime.scale, a)
    lo = min(h, upper)
    g = lambda x: x - T(x)
    if g(lo) > 0:
        lo = 0.0
    if g(upper) < 0:
        raise NoConvergence("fixed point not bracketed", iterations=max_iter, residual=abs(g(h)))
    return optimize.brentq(g, lo, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def solve_h(
    measure: SpectralMeasure,
    regime: AsymptoticRegime,
    a: float,
    *,
    omega: float = 0.5,
    steps: int = 40,
    a_start: float = -10.0,
    max_iter: int = 500,
    tol: float = 1e-13,
) -> float:
    """Solve ``h = h0(a - 1/(gamma (1 + h)))`` by damped iteration with continuation.

    The iteration starts from ``h = 0`` at ``a_start`` and follows the branch
    through ``steps`` geometrically spaced values of ``a`` up to the target.

    Raises
    ------
    InvalidRegime
        If ``a > 0``, or ``a = 0`` with ``tau_bar = 0``.
    NoConvergence
        If the final residual exceeds ``1e-10``.
    """
    if a > 0:
        raise InvalidRegime("solve_h needs a <= 0")
    if a == 0 and regime.tau_bar == 0:
        raise InvalidRegime("tau_bar = 0 requires a < 0")
    if a <= a_start:
        path = [a]
    else:
        end = -abs(a) if a < 0 else -1e-10
        path = list(-np.geomspace(-a_start, -end, steps))
        if a == 0:
            path.append(0.0)
    h = 0.0
    for ak in path:
        h = _solve_at(measure, regime, float(ak), h, omega, max_iter, tol)
    residual = abs(h - _fixed_point_map(measure, regime, a)(h))
    if not np.isfinite(h) or residual > 1e-10:
        raise NoConvergence("fixed-point residual too large", iterations=max_iter, residual=residual)
    return float(h)


def _dirac_limit(atom, gamma, tau_bar):
    lt = atom * tau_bar
    b = lt + 1.0 - gamma
    disc = math.sqrt(b * b + 4.0 * lt * gamma)
    if b > 0:
        return 2.0 * gamma / (b + disc)
    return (disc - b) / (2.0 * lt)


def _uniform_limit(measure: Uniform, gamma, tau_bar):
    s = tau_bar / gamma
    sw = s * measure.width

    def phi(h):
        return math.expm1(sw * h) - sw / (s * measure.lower_edge + 1.0 / (gamma * (1.0 + h)))

    upper = math.log(measure.upper_edge / measure.lower_edge) / sw
    if phi(upper) < 0:
        upper *= 2.0
        while phi(upper) < 0:
            upper *= 2.0
    return optimize.bisect(phi, 0.0, upper, xtol=1e-13, maxiter=400)


def semicircle_cubic(center: float, gamma: float, tau_bar: float) -> np.ndarray:
    """Coefficients (highest degree first) of the cubic satisfied by ``h`` at ``a = 0``."""
    s = tau_bar / gamma
    return np.array([s * s / 4.0, s * s / 4.0 - s * center, 1.0 - s * center - 1.0 / gamma, 1.0])


def _semicircle_limit(measure: Semicircle, gamma, tau_bar):
    s = tau_bar / gamma
    c = measure.center
    roots = np.roots(semicircle_cubic(c, gamma, tau_bar))
    admissible = []
    for r in roots:
        if abs(r.imag) > 1e-9 * max(1.0, abs(r.real)):
            continue
        h = r.real
        if h <= 0:
            continue
        x = s * c + 1.0 / (gamma * (1.0 + h))
        # squaring the square root admits spurious roots; keep those with the right sign
        if s * s * h / 2.0 > x * (1.0 + 1e-9) or x <= s:
            continue
        admissible.append(h)
    if not admissible:
        raise NoAdmissibleRoot(f"no admissible cubic root for center={c}, gamma={gamma}, tau_bar={tau_bar}")
    h = min(admissible)
    # polish against the fixed-point equation
    g = lambda t: t - measure.stieltjes(s, -1.0 / (gamma * (1.0 + t)))
    try:
        h = optimize.newton(g, h, tol=1e-15, maxiter=50)
    except RuntimeError:
        pass
    return float(h)


def _richardson_zero(measure, regime, eps=(1e-2, 1e-3, 1e-4)):
    x = np.asarray(eps, dtype=float)
    y = np.array([solve_h(measure, regime, -e) for e in x])
    # Neville extrapolation of the interpolating polynomial to 0
    table = y.copy()
    for k in range(1, len(x)):
        for i in range(len(x) - k):
            table[i] = (x[i + k] * table[i] - x[i] * table[i + 1]) / (x[i + k] - x[i])
    return float(table[0])


def limit_h_at_zero(measure: SpectralMeasure, regime: AsymptoticRegime) -> float:
    """Limit of ``h(a)`` as ``a -> 0-``.

    For ``tau_bar = 0`` the value does not depend on the measure:
    ``gamma/(1-gamma)`` below the interpolation threshold and ``1/(gamma-1)``
    above it.
    """
    gamma, tau_bar = regime.gamma, regime.tau_bar
    if tau_bar == 0:
        if gamma < 1:
            return gamma / (1.0 - gamma)
        return 1.0 / (gamma - 1.0)
    if isinstance(measure, Dirac):
        return _dirac_limit(measure.atom, gamma, tau_bar)
    if isinstance(measure, Uniform):
        return _uniform_limit(measure, gamma, tau_bar)
    if isinstance(measure, Semicircle):
        return _semicircle_limit(measure, gamma, tau_bar)
    return _richardson_zero(measure, regime)


def _constant(regime: AsymptoticRegime, inputs: RiskBoundInputs) -> float:
    return inputs.lambda_star if (regime.gamma > 1 and regime.tau_bar == 0) else 1.0


def variance_bound(measure: SpectralMeasure, regime: AsymptoticRegime, inputs: RiskBoundInputs) -> float:
    """``2 (1 + sqrt(lambda*))^2 C h(0)`` with ``C = lambda*`` only when gamma > 1 and tau_bar = 0."""
    lead = 2.0 * (1.0 + math.sqrt(inputs.lambda_star)) ** 2
    return lead * _constant(regime, inputs) * limit_h_at_zero(measure, regime)


def risk_bound(measure: SpectralMeasure, regime: AsymptoticRegime, inputs: RiskBoundInputs) -> float:
    """Variance bound plus the bias contribution ``lambda_max r^2`` inside the bracket."""
    lead = 2.0 * (1.0 + math.sqrt(inputs.lambda_star)) ** 2
    h = limit_h_at_zero(measure, regime)
    return lead * (_constant(regime, inputs) * h + inputs.lambda_max * inputs.radius_r**2)
