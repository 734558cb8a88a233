"""Ridge-penalized maximum likelihood, its bias-variance decomposition and risk sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .errors import IllConditioned, NotConverged, SingularSystem, ValidationError
from .linalg import cholesky_or_raise
from .models import Dataset, Model, build_model, fisher_matrix, generate
from .parallel import run_jobs
from .sampling import make_rng, stream_seed
from .spectral import AsymptoticRegime, Dirac, Empirical, limit_h_at_zero

__all__ = [
    "FitResult",
    "DecompositionTerms",
    "RiskReport",
    "fit",
    "decompose",
    "weighted_risk",
    "prediction_risk",
    "prediction_risk_with_se",
    "descent_sweep",
    "decaying_tau",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("gamma", "tau", "p", "n", "rep", "weighted_risk", "variance_part", "bias_part",
               "prediction_risk", "analytic_h")
MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: np.ndarray
    tau: float
    objective: float
    iterations: int
    grad_norm: float
    converged: bool
    history: tuple = field(default=(), repr=False)


@dataclass(frozen=True, eq=False)
class DecompositionTerms:
    V0: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    B0: np.ndarray
    R: np.ndarray
    reconstruction_error: float

    @property
    def variance(self) -> np.ndarray:
        return self.V0 @ (self.V1 + self.V2)

    @property
    def bias(self) -> np.ndarray:
        return self.V0 @ self.B0


def _objective(model, data, theta, tau):
    return model.nll(theta, data) + 0.5 * tau * float(theta @ theta)


def _newton(model, data, tau, theta0, tol, max_iter):
    theta = np.array(theta0, dtype=float)
    obj = _objective(model, data, theta, tau)
    history = [obj]
    gnorm = math.inf
    for it in range(max_iter + 1):
        grad = model.nll_grad(theta, data) + tau * theta
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return FitResult(theta, tau, obj, it, gnorm, True, tuple(history))
        if it == max_iter:
            break
        H = model.nll_hessian(theta, data) + tau * np.eye(model.p)
        shift = 0.0
        while True:
            try:
                c = linalg.cho_factor(H + shift * np.eye(model.p), lower=True)
                break
            except linalg.LinAlgError:
                shift = max(2.0 * shift, 1e-8 * max(1.0, float(np.abs(H).max())))
        step = -linalg.cho_solve(c, grad)
        slope = float(grad @ step)
        t = 1.0
        while t > 1e-12:
            cand = theta + t * step
            cand_obj = _objective(model, data, cand, tau)
            if cand_obj <= obj + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            # no decrease possible at machine precision
            return FitResult(theta, tau, obj, it, gnorm, gnorm <= tol, tuple(history))
        theta, obj = cand, cand_obj
        history.append(obj)
    return FitResult(theta, tau, obj, max_iter, gnorm, False, tuple(history))


def fit(model: Model, dataset: Dataset, tau: float, *, method: str = "auto", tol: float = 1e-8,
        max_iter: int = 500, restarts: int = 5, seed: int = 0) -> FitResult:
    """Minimize ``M_n(theta) + (tau/2)||theta||^2``.

    The linear model uses the closed form (``method="auto"``); otherwise a
    damped Newton iteration with Armijo backtracking starts at 0 and, if it
    fails, at up to ``restarts - 1`` random points in the parameter ball.

    Raises
    ------
    SingularSystem
        If ``tau <= 0``.
    NotConverged
        If no start converges; ``.result`` holds the best iterate.
    """
    if not tau > 0:
        raise SingularSystem("the penalty must be positive")
    if method == "auto" and model.is_linear:
        X, y = dataset.X, dataset.y
        n = dataset.n
        A = X.T @ X / n + tau * model.noise_variance * np.eye(model.p)
        theta = linalg.solve(A, X.T @ y / n, assume_a="pos")
        grad = model.nll_grad(theta, dataset) + tau * theta
        return FitResult(theta, tau, _objective(model, dataset, theta, tau), 0,
                         float(np.linalg.norm(grad)), True)
    starts = [np.zeros(model.p)]
    rng = make_rng(seed, 7)
    for _ in range(max(restarts, 1) - 1):
        u = rng.standard_normal(model.p)
        starts.append(0.5 * model.radius * rng.uniform() * u / np.linalg.norm(u))
    best = None
    for theta0 in starts:
        res = _newton(model, dataset, tau, theta0, tol, max_iter)
        if res.converged:
            return res
        if best is None or res.objective < best.objective:
            best = res
    raise NotConverged(f"Newton did not reach gradient norm {tol}", result=best)


def taylor_remainder(model: Model, dataset: Dataset, theta_hat, H=None) -> np.ndarray:
    """Exact remainder of the first-order expansion of the score at ``theta_star``."""
    if model.is_linear:
        return np.zeros(model.p)
    ts = model.theta_star
    if H is None:
        H = model.nll_hessian(ts, dataset)
    return model.nll_grad(theta_hat, dataset) - model.nll_grad(ts, dataset) - H @ (theta_hat - ts)


def decompose(model: Model, dataset: Dataset, fit_result: FitResult, F_star=None) -> DecompositionTerms:
    """Split ``theta_star - theta_hat`` into ``V0 (V1 + V2 + B0)``.

    With ``A = F_hat + tau I`` and ``H`` the Hessian of ``M_n`` at
    ``theta_star``: ``V0 = (H + tau I)^{-1} A``, ``V1 = A^{-1} grad M_n(theta_star)``,
    ``V2 = A^{-1} R`` and ``B0 = A^{-1} tau theta_star``.

    Raises
    ------
    IllConditioned
        If ``F_hat + tau I`` has condition number above ``1e12``.
    """
    if not fit_result.converged:
        raise ValidationError("decomposition needs a converged fit")
    tau = fit_result.tau
    ts, th = model.theta_star, fit_result.theta_hat
    p = model.p
    F_hat = model.empirical_fisher(ts, dataset)
    A = F_hat + tau * np.eye(p)
    ev = linalg.eigvalsh(A)
    if ev[0] <= 0 or ev[-1] / ev[0] > MAX_CONDITION:
        raise IllConditioned(f"F_hat + tau I has condition number {ev[-1] / max(ev[0], 1e-300):.3g}")
    H = model.nll_hessian(ts, dataset)
    grad_star = model.nll_grad(ts, dataset)
    R = taylor_remainder(model, dataset, th, H)
    cA = linalg.cho_factor(A, lower=True)
    V0 = linalg.solve(H + tau * np.eye(p), A)
    V1 = linalg.cho_solve(cA, grad_star)
    V2 = linalg.cho_solve(cA, R)
    B0 = linalg.cho_solve(cA, tau * ts)
    # the identity is exact up to the stationarity residual of the fit
    diff = ts - th
    err = float(np.linalg.norm(diff - V0 @ (V1 + V2 + B0)))
    return DecompositionTerms(V0, V1, V2, B0, R, err)


def weighted_risk(theta_hat, theta_star, F_star) -> float:
    """``(theta_hat - theta_star)^T F* (theta_hat - theta_star)``.

    Raises
    ------
    NotPositiveDefinite
        If ``F_star`` is not symmetric positive definite.
    """
    L = cholesky_or_raise(F_star)
    d = np.asarray(theta_hat, dtype=float) - np.asarray(theta_star, dtype=float)
    return float(np.sum((L.T @ d) ** 2))


def prediction_risk_with_se(model: Model, theta_hat, mc_samples: int, seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of ``E (g_hat(x) - g_star(x))^2`` and its standard error."""
    if mc_samples < 1:
        raise ValidationError("mc_samples must be positive")
    X = model.sample_covariates(make_rng(seed, 3), mc_samples)
    sq = (model.mean(theta_hat, X) - model.mean(model.theta_star, X)) ** 2
    se = float(sq.std(ddof=1) / math.sqrt(mc_samples)) if mc_samples > 1 else float("nan")
    return float(sq.mean()), se


def prediction_risk(model: Model, theta_hat, mc_samples: int, seed: int) -> float:
    return prediction_risk_with_se(model, theta_hat, mc_samples, seed)[0]


def decaying_tau(p: int) -> float:
    """Penalty used when the limiting penalty is zero: ``max(1e-6, p^{-1/2}/10)``."""
    return max(1e-6, p**-0.5 / 10.0)


@dataclass(frozen=True, eq=False)
class RiskReport:
    gamma: float
    tau: float
    p: int
    n: int
    analytic_h: float
    weighted_risk: np.ndarray
    variance_part: np.ndarray
    bias_part: np.ndarray
    prediction_risk: np.ndarray
    trace_functional: np.ndarray

    @property
    def reps(self) -> int:
        return int(self.weighted_risk.size)

    def summary(self, column: str) -> dict:
        x = getattr(self, column)
        return {"mean": float(x.mean()), "std": float(x.std()), "median": float(np.median(x)),
                "reps": self.reps}

    def rows(self):
        """Per-repetition rows in :data:`CSV_COLUMNS` order."""
        for k in range(self.reps):
            yield (self.gamma, self.tau, self.p, self.n, k, float(self.weighted_risk[k]),
                   float(self.variance_part[k]), float(self.bias_part[k]),
                   float(self.prediction_risk[k]), self.analytic_h)


def _sweep_rep(args):
    model, n, tau, F_star, seed, mc = args
    data = generate(model, n, seed)
    res = fit(model, data, tau, seed=seed)
    terms = decompose(model, data, res, F_star)
    L = linalg.cholesky(F_star, lower=True)
    wnorm = lambda v: float(np.sum((L.T @ v) ** 2))
    F_hat = model.empirical_fisher(model.theta_star, data)
    A = F_hat + tau * np.eye(model.p)
    trace_fn = float(np.trace(linalg.solve(A, F_star, assume_a="pos")) / n)
    return (
        weighted_risk(res.theta_hat, model.theta_star, F_star),
        wnorm(terms.variance),
        wnorm(terms.bias),
        prediction_risk(model, res.theta_hat, mc, stream_seed(seed, 11)),
        trace_fn,
    )


def _overlay_measure(F_star):
    diag = np.diag(F_star)
    if np.allclose(F_star, np.diag(diag)) and np.allclose(diag, diag[0]):
        return Dirac(1.0 / diag[0])
    return Empirical(1.0 / linalg.eigvalsh(F_star))


def descent_sweep(model_kind: str, gammas, tau_bar, p: int, reps: int, seed: int, *,
                  model_options: dict | None = None, fisher_mc: int = 20000,
                  prediction_mc: int = 2000, threads: int = 1) -> list[RiskReport]:
    """Risk versus aspect ratio ``gamma = p/n``.

    ``tau_bar`` is a number or the string ``"gamma"`` (penalty equal to the
    aspect ratio). A zero limit uses :func:`decaying_tau`. The analytic
    overlay is the limit of the fixed-point transform at the spectrum of
    ``F*^{-1}`` (undefined, and reported as NaN, at ``gamma = 1`` without a
    penalty).
    """
    model = build_model(model_kind, p, seed, **(model_options or {}))
    F_star = fisher_matrix(model, fisher_mc, seed)
    measure = _overlay_measure(F_star)
    reports = []
    for gi, gamma in enumerate(gammas):
        gamma = float(gamma)
        tb = gamma if tau_bar == "gamma" else float(tau_bar)
        if tb == 0 and gamma == 1:
            raise ValidationError("gamma = 1 needs a positive limiting penalty")
        tau = decaying_tau(p) if tb == 0 else tb
        n = max(1, int(round(p / gamma)))
        analytic = limit_h_at_zero(measure, AsymptoticRegime(gamma, tb))
        jobs = [(model, n, tau, F_star, stream_seed(seed, 1000 * (gi + 1) + k), prediction_mc)
                for k in range(reps)]
        out = np.array(run_jobs(_sweep_rep, jobs, threads))
        reports.append(RiskReport(gamma, tau, p, n, analytic, *out.T))
    return reports
