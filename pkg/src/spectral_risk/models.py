"""Synthetic regression models with analytic derivative oracles.

All models share the working log-likelihood

    log f_theta(x, y) = -(y - g_theta(x))**2 / (2 v) - log Z,

where ``v`` is the variance of the truncated noise and ``Z`` normalizes the
density on the truncation interval. With this scale the score has mean zero
and the information identity ``E[J J^T] = -E[d^2 log f]`` holds exactly.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

from .errors import IndexOutOfRange, ValidationError
from .sampling import make_rng, truncated_normal, truncated_normal_variance

__all__ = [
    "Model",
    "LinearModel",
    "ExponentialModel",
    "AdditiveModel",
    "Dataset",
    "Arrowheads",
    "build_model",
    "generate",
    "fisher_matrix",
    "third_derivative",
    "MODEL_KINDS",
]


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    seed: int | None = None

    @property
    def n(self) -> int:
        return int(self.y.size)

    def to_csv(self, fh=None) -> str | None:
        """Write ``x_1..x_d,y`` rows to ``fh`` (or return them as a string)."""
        out = io.StringIO() if fh is None else fh
        d = self.X.shape[1]
        out.write(",".join([f"x_{k + 1}" for k in range(d)] + ["y"]) + "\n")
        for row, yi in zip(self.X, self.y):
            out.write(",".join(repr(float(v)) for v in row) + "," + repr(float(yi)) + "\n")
        return out.getvalue() if fh is None else None


@dataclass(frozen=True, eq=False)
class Arrowheads:
    """Third-derivative matrices in arrowhead form.

    ``U^j`` has the same nonzero spectrum as ``scale[j]`` times the arrowhead
    matrix ``[[corner[i], arrow[i]^T], [arrow[i], diag(diag[i])]]`` with
    ``i = index[j]``.
    """

    scale: np.ndarray
    index: np.ndarray
    corner: np.ndarray
    diag: np.ndarray
    arrow: np.ndarray

    def __sub__(self, other: "Arrowheads") -> "Arrowheads":
        return Arrowheads(self.scale, self.index, self.corner - other.corner,
                          self.diag - other.diag, self.arrow - other.arrow)


def _sphere(rng, p, radius):
    u = rng.standard_normal(p)
    return radius * u / np.linalg.norm(u)


class Model:
    """Base class: subclasses supply the mean function and its derivatives."""

    kind = "base"
    is_linear = False

    def __init__(self, p, *, noise_bound=1.0, noise_scale=1.0, covariate_bound=1.0,
                 radius=1.0, seed=0, theta_star=None):
        if p < 1:
            raise ValidationError("p must be positive")
        if noise_bound <= 0 or noise_scale <= 0 or covariate_bound <= 0 or radius < 0:
            raise ValidationError("bounds and scales must be positive")
        self.p = int(p)
        self.noise_bound = float(noise_bound)
        self.noise_scale = float(noise_scale)
        self.covariate_bound = float(covariate_bound)
        self.radius = float(radius)
        self.seed = int(seed)
        self._setup(make_rng(self.seed, 1))
        if theta_star is None:
            theta_star = _sphere(make_rng(self.seed, 0), self.p, 0.9 * self.radius)
        theta_star = np.asarray(theta_star, dtype=float).reshape(self.p)
        if np.linalg.norm(theta_star) > self.radius * (1 + 1e-12):
            raise ValidationError("theta_star must lie in the parameter ball")
        self.theta_star = theta_star
        self.noise_variance = truncated_normal_variance(self.noise_bound, self.noise_scale)
        v = self.noise_variance
        self._log_norm = math.log(math.sqrt(2 * math.pi * v) * special.erf(self.noise_bound / math.sqrt(2 * v)))

    def _setup(self, rng):
        pass

    @property
    def d(self) -> int:
        return self.p

    @property
    def covariate_variance(self) -> float:
        return truncated_normal_variance(self.covariate_bound)

    def sample_covariates(self, rng, n) -> np.ndarray:
        return truncated_normal(rng, (n, self.d), self.covariate_bound)

    # mean function -------------------------------------------------------
    def mean(self, theta, X) -> np.ndarray:
        raise NotImplementedError

    def mean_grad(self, theta, X) -> np.ndarray:
        """``(n, p)`` array of gradients of ``g_theta`` at each row of ``X``."""
        raise NotImplementedError

    def mean_hessian(self, theta, x) -> np.ndarray:
        raise NotImplementedError

    def weighted_mean_hessian(self, theta, X, w) -> np.ndarray:
        """``sum_i w_i * d^2 g_theta(x_i)``."""
        raise NotImplementedError

    def mean_third(self, theta, x, j) -> np.ndarray:
        """``d/d theta_j`` of the Hessian of ``g_theta(x)``."""
        raise NotImplementedError

    def arrowheads(self, theta, x, y) -> Arrowheads:
        raise NotImplementedError

    # likelihood ----------------------------------------------------------
    def residual(self, theta, X, y):
        return np.asarray(y, dtype=float) - self.mean(theta, X)

    def log_density(self, theta, x, y) -> float:
        """Working log-density on the truncation interval."""
        rho = float(self.residual(theta, np.atleast_2d(x), np.atleast_1d(y))[0])
        return -rho * rho / (2.0 * self.noise_variance) - self._log_norm

    def score(self, theta, X, y) -> np.ndarray:
        """Rows are ``J_i = d log f / d theta``."""
        X = np.atleast_2d(X)
        rho = self.residual(theta, X, np.atleast_1d(y))
        return rho[:, None] * self.mean_grad(theta, X) / self.noise_variance

    def hessian_log_density(self, theta, x, y) -> np.ndarray:
        x = np.atleast_2d(x)
        rho = float(self.residual(theta, x, np.atleast_1d(y))[0])
        gr = self.mean_grad(theta, x)[0]
        return (rho * self.mean_hessian(theta, x[0]) - np.outer(gr, gr)) / self.noise_variance

    def third_derivative(self, j, theta, x, y) -> np.ndarray:
        """``U^j``: derivative in ``theta_j`` of the Hessian of ``log f``."""
        if not 0 <= j < self.p:
            raise IndexOutOfRange(f"index {j} outside 0..{self.p - 1}")
        x = np.atleast_2d(x)
        rho = float(self.residual(theta, x, np.atleast_1d(y))[0])
        gr = self.mean_grad(theta, x)[0]
        H = self.mean_hessian(theta, x[0])
        hj = H[:, j]
        U = rho * self.mean_third(theta, x[0], j) - gr[j] * H - np.outer(gr, hj) - np.outer(hj, gr)
        return U / self.noise_variance

    def fisher_residual_sample(self, theta, x, y) -> np.ndarray:
        """``w(z) = -(d^2 log f + J J^T)``; its sample mean is the Fisher residual."""
        x = np.atleast_2d(x)
        J = self.score(theta, x, y)[0]
        return -(self.hessian_log_density(theta, x, y) + np.outer(J, J))

    def nll(self, theta, data: Dataset) -> float:
        rho = self.residual(theta, data.X, data.y)
        return float(np.mean(rho * rho) / (2.0 * self.noise_variance) + self._log_norm)

    def nll_grad(self, theta, data: Dataset) -> np.ndarray:
        rho = self.residual(theta, data.X, data.y)
        G = self.mean_grad(theta, data.X)
        return -(G.T @ rho) / (data.n * self.noise_variance)

    def nll_hessian(self, theta, data: Dataset) -> np.ndarray:
        rho = self.residual(theta, data.X, data.y)
        G = self.mean_grad(theta, data.X)
        H = G.T @ G
        if not self.is_linear:
            H = H - self.weighted_mean_hessian(theta, data.X, rho)
        H = H / (data.n * self.noise_variance)
        return 0.5 * (H + H.T)

    def empirical_fisher(self, theta, data: Dataset) -> np.ndarray:
        J = self.score(theta, data.X, data.y)
        F = J.T @ J / data.n
        return 0.5 * (F + F.T)

    def exact_fisher(self) -> np.ndarray | None:
        """Closed-form Fisher matrix at ``theta_star`` when available."""
        return None


class LinearModel(Model):
    """``g_theta(x) = x^T theta``."""

    kind = "linear"
    is_linear = True

    def mean(self, theta, X):
        return np.atleast_2d(X) @ theta

    def mean_grad(self, theta, X):
        return np.array(np.atleast_2d(X), dtype=float)

    def mean_hessian(self, theta, x):
        return np.zeros((self.p, self.p))

    def weighted_mean_hessian(self, theta, X, w):
        return np.zeros((self.p, self.p))

    def mean_third(self, theta, x, j):
        return np.zeros((self.p, self.p))

    def exact_fisher(self):
        return (self.covariate_variance / self.noise_variance) * np.eye(self.p)

    def arrowheads(self, theta, x, y):
        z = np.zeros((1, 1))
        return Arrowheads(np.zeros(self.p), np.zeros(self.p, dtype=int), np.zeros(1), z, z)


class ExponentialModel(Model):
    """``g_theta(x) = (1/p) sum_j x_j exp(theta_j x_j)``."""

    kind = "exponential"

    def _terms(self, theta, X):
        X = np.atleast_2d(X)
        return X, np.exp(X * theta) / self.p

    def mean(self, theta, X):
        X, e = self._terms(theta, X)
        return np.sum(X * e, axis=1)

    def mean_grad(self, theta, X):
        X, e = self._terms(theta, X)
        return X**2 * e

    def mean_hessian(self, theta, x):
        X, e = self._terms(theta, x)
        return np.diag((X**3 * e)[0])

    def weighted_mean_hessian(self, theta, X, w):
        X, e = self._terms(theta, X)
        return np.diag(np.asarray(w) @ (X**3 * e))

    def mean_third(self, theta, x, j):
        X, e = self._terms(theta, x)
        T = np.zeros((self.p, self.p))
        T[j, j] = X[0, j] ** 4 * e[0, j]
        return T

    def exact_fisher(self, nodes: int = 64) -> np.ndarray:
        t, w = leggauss(nodes)
        b = self.covariate_bound
        x = b * t
        dens = w * b * np.exp(-0.5 * x * x)
        dens /= dens.sum()
        e = np.exp(np.outer(self.theta_star, x))
        m = (e * x**2) @ dens
        s = (e**2 * x**4) @ dens
        F = np.outer(m, m)
        F[np.diag_indices(self.p)] = s
        return F / (self.p**2 * self.noise_variance)

    def arrowheads(self, theta, x, y):
        x = np.asarray(x, dtype=float).reshape(self.p)
        v = self.noise_variance
        rho = float(y - self.mean(theta, x[None, :])[0])
        e = np.exp(theta * x) / self.p
        g, h, q = x**2 * e, x**3 * e, x**4 * e
        corner = (rho * q - 3.0 * g * h) / v
        diag = -np.outer(g, h) / v
        arrow = -np.outer(h, g) / v
        idx = np.arange(self.p)
        diag[idx, idx] = 0.0
        arrow[idx, idx] = 0.0
        return Arrowheads(np.ones(self.p), idx, corner, diag, arrow)


class AdditiveModel(Model):
    """Average of ``M`` tanh submodels acting on disjoint parameter blocks.

    ``g_theta(x) = (1/M) sum_m tanh(a_m^T x + sum_{l in block m} theta_l phi_l(x))``
    with fixed random features ``phi_l(x) = cos(w_l^T x + c_l)``.
    """

    kind = "additive"

    def __init__(self, p, *, M=None, d=8, **kwargs):
        self.M = int(math.ceil(p**0.8 - 1e-9)) if M is None else int(M)
        if not 1 <= self.M <= p:
            raise ValidationError("need 1 <= M <= p")
        self._d = int(d)
        super().__init__(p, **kwargs)

    def _setup(self, rng):
        d = self._d
        self.W = rng.standard_normal((self.p, d)) / np.sqrt(d)
        self.c = rng.uniform(0.0, 2.0 * np.pi, self.p)
        self.A = rng.standard_normal((self.M, d)) / np.sqrt(d)
        self.blocks = np.array_split(np.arange(self.p), self.M)
        self.starts = np.array([b[0] for b in self.blocks])
        self.block_of = np.repeat(np.arange(self.M), [b.size for b in self.blocks])

    @property
    def d(self):
        return self._d

    @property
    def partition_sizes(self):
        return [b.size for b in self.blocks]

    def features(self, X):
        return np.cos(np.atleast_2d(X) @ self.W.T + self.c)

    def _state(self, theta, X):
        X = np.atleast_2d(X)
        Phi = self.features(X)
        u = X @ self.A.T + np.add.reduceat(Phi * theta, self.starts, axis=1)
        t = np.tanh(u)
        s1 = 1.0 - t * t
        return Phi, t, s1

    def mean(self, theta, X):
        _, t, _ = self._state(theta, X)
        return t.mean(axis=1)

    def mean_grad(self, theta, X):
        Phi, _, s1 = self._state(theta, X)
        return s1[:, self.block_of] * Phi / self.M

    def mean_hessian(self, theta, x):
        Phi, t, s1 = self._state(theta, x)
        s2 = -2.0 * t * s1
        H = np.zeros((self.p, self.p))
        for m, blk in enumerate(self.blocks):
            f = Phi[0, blk]
            H[np.ix_(blk, blk)] = s2[0, m] / self.M * np.outer(f, f)
        return H

    def weighted_mean_hessian(self, theta, X, w):
        Phi, t, s1 = self._state(theta, X)
        s2 = -2.0 * t * s1
        H = np.zeros((self.p, self.p))
        w = np.asarray(w, dtype=float)
        for m, blk in enumerate(self.blocks):
            F = Phi[:, blk]
            H[np.ix_(blk, blk)] = (F.T * (w * s2[:, m])) @ F / self.M
        return H

    def mean_third(self, theta, x, j):
        Phi, t, s1 = self._state(theta, x)
        m = self.block_of[j]
        s3 = (6.0 * t[0, m] ** 2 - 2.0) * s1[0, m]
        blk = self.blocks[m]
        f = Phi[0, blk]
        T = np.zeros((self.p, self.p))
        T[np.ix_(blk, blk)] = s3 / self.M * Phi[0, j] * np.outer(f, f)
        return T

    def arrowheads(self, theta, x, y):
        Phi, t, s1 = self._state(theta, x)
        Phi, t, s1 = Phi[0], t[0], s1[0]
        s2 = -2.0 * t * s1
        s3 = (6.0 * t * t - 2.0) * s1
        M, v = self.M, self.noise_variance
        rho = float(y - t.mean())
        alpha = np.sqrt(np.add.reduceat(Phi * Phi, self.starts))
        c = s1 * alpha / M
        dd = s2 * alpha**2 / M
        lead = s2 * alpha / M
        corner = (rho * s3 * alpha**2 / M - s1 / M * dd - 2.0 * lead * c) / v
        diag = -np.outer(s1 / M, dd) / v
        arrow = -np.outer(lead, c) / v
        idx = np.arange(M)
        diag[idx, idx] = 0.0
        arrow[idx, idx] = 0.0
        return Arrowheads(Phi.copy(), self.block_of.copy(), corner, diag, arrow)


MODEL_KINDS = {"linear": LinearModel, "exponential": ExponentialModel, "additive": AdditiveModel}


def build_model(kind: str, p: int, seed: int = 0, **options) -> Model:
    """Instantiate a model by name (``linear``, ``exponential`` or ``additive``)."""
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValidationError(f"unknown model kind {kind!r}") from None
    return cls(p, seed=seed, **options)


def generate(model: Model, n: int, seed: int) -> Dataset:
    """Draw ``n`` samples ``(x_i, y_i)`` from ``model`` at ``theta_star``."""
    if n < 1:
        raise ValidationError("n must be positive")
    X = model.sample_covariates(make_rng(seed, 0), n)
    eps = truncated_normal(make_rng(seed, 1), n, model.noise_bound, model.noise_scale)
    return Dataset(X, model.mean(model.theta_star, X) + eps, seed)


def fisher_matrix(model: Model, mc_samples: int, seed: int, *, method: str = "auto",
                  chunk: int = 4096) -> np.ndarray:
    """Fisher information at ``theta_star``.

    ``method="auto"`` uses the closed form when the model has one and Monte
    Carlo otherwise; ``"mc"`` forces Monte Carlo. The Monte Carlo estimate
    averages ``E[J J^T | x] = grad g grad g^T / v`` over fresh covariates,
    which removes the noise contribution from the sampling error.
    """
    if mc_samples < 1:
        raise ValidationError("mc_samples must be positive")
    if method == "auto":
        F = model.exact_fisher()
        if F is not None:
            return F
    elif method != "mc":
        raise ValidationError(f"unknown method {method!r}")
    rng = make_rng(seed, 2)
    F = np.zeros((model.p, model.p))
    done = 0
    while done < mc_samples:
        k = min(chunk, mc_samples - done)
        G = model.mean_grad(model.theta_star, model.sample_covariates(rng, k))
        F += G.T @ G
        done += k
    F /= mc_samples * model.noise_variance
    return 0.5 * (F + F.T)


def third_derivative(model: Model, j: int, theta, z) -> np.ndarray:
    """``U^j(theta, z)`` for a sample ``z = (x, y)``."""
    x, y = z
    return model.third_derivative(j, np.asarray(theta, dtype=float), x, y)
