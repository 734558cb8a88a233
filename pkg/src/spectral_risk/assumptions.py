"""Monte Carlo measurements of the regularity quantities behind the risk bounds."""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from ._arrowhead import third_derivative_norms
from .errors import IllConditioned, ValidationError
from .estimators import MAX_CONDITION, decompose
from .linalg import operator_norm
from .models import Model, build_model, fisher_matrix, generate
from .parallel import run_jobs
from .sampling import make_rng, stream_seed

__all__ = [
    "CrossTermResult",
    "FisherResidualResult",
    "DerivativeSums",
    "AssumptionReport",
    "cross_term",
    "cross_term_statistic",
    "cross_term_bruteforce",
    "cross_term_grid",
    "fisher_residual",
    "bernstein_envelope",
    "derivative_sums",
    "s_p_components",
    "s_p_report",
    "taylor_residual_norm",
    "taylor_envelope",
    "assumption_report",
]


def _model(model, p, seed, model_options):
    if isinstance(model, Model):
        if model.p != p:
            raise ValidationError("model dimension does not match p")
        return model
    return build_model(model, p, seed, **(model_options or {}))


# cross term -----------------------------------------------------------------

def _sandwich_factor(J, tau):
    """``K = (J^T J/n + tau I)^{-1} J^T`` without forming a p x p inverse when n < p."""
    n, p = J.shape
    if n < p:
        G = J @ J.T / n
        ev = linalg.eigvalsh(G)
        cond = (ev[-1] + tau) / tau
        K = J.T @ linalg.solve(G + tau * np.eye(n), np.eye(n), assume_a="pos")
    else:
        A = J.T @ J / n + tau * np.eye(p)
        ev = linalg.eigvalsh(A)
        cond = ev[-1] / ev[0]
        K = linalg.solve(A, J.T, assume_a="pos")
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditioned(f"F_hat + tau I has condition number {cond:.3g}")
    return K


def cross_term_statistic(J, F_star, tau) -> float:
    """``(1/n^2) sum_{i<j} J_i^T S J_j`` with ``S = A^{-1} F* A^{-1}``, ``A = F_hat + tau I``."""
    J = np.atleast_2d(J)
    n = J.shape[0]
    if n < 2:
        return 0.0
    K = _sandwich_factor(J, tau)
    Q = K.T @ F_star @ K
    v = Q.sum()
    return float((v - np.trace(Q)) / (2.0 * n * n))


def cross_term_bruteforce(J, F_star, tau) -> float:
    """Reference double loop for :func:`cross_term_statistic`."""
    J = np.atleast_2d(J)
    n, p = J.shape
    A = J.T @ J / n + tau * np.eye(p)
    Ainv = linalg.inv(A)
    S = Ainv @ F_star @ Ainv
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += J[i] @ S @ J[j]
    return total / n**2


@dataclass(frozen=True, eq=False)
class CrossTermResult:
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float:
        return float(self.values.std())

    @property
    def se(self) -> float:
        return self.std / math.sqrt(self.values.size)

    @property
    def all_pairs_values(self) -> np.ndarray:
        """The same statistic summed over ordered pairs ``i != j`` (twice the ``i < j`` value)."""
        return 2.0 * self.values


def _cross_rep(args):
    model, n, tau, F_star, seed = args
    data = generate(model, n, seed)
    J = model.score(model.theta_star, data.X, data.y)
    return cross_term_statistic(J, F_star, tau)


def cross_term(model, p: int, n: int, tau: float, reps: int, seed: int, *, model_options=None,
               fisher_mc: int = 20000, threads: int = 1) -> CrossTermResult:
    """Off-diagonal score statistic over ``reps`` independent datasets at ``theta_star``."""
    if not tau > 0:
        raise ValidationError("tau must be positive")
    m = _model(model, p, seed, model_options)
    F_star = fisher_matrix(m, fisher_mc, seed)
    jobs = [(m, n, tau, F_star, stream_seed(seed, k)) for k in range(reps)]
    return CrossTermResult(np.array(run_jobs(_cross_rep, jobs, threads)))


def cross_term_grid(kinds, p_grid, ratios, tau: float, reps: int, seed: int, *, threads: int = 1):
    """Per-repetition cross terms over models, ``p`` values and ratios ``p/n``.

    Returns a list of ``(model, ratio, p, n, rep, value)`` tuples.
    """
    jobs = []
    for kind in kinds:
        for p in p_grid:
            model = build_model(kind, int(p), seed)
            F_star = fisher_matrix(model, 20000, seed)
            for ratio in ratios:
                n = max(1, int(round(p / ratio)))
                for k in range(reps):
                    key = (kind, float(ratio), int(p), n, k)
                    jobs.append((key, (model, n, tau, F_star, stream_seed(seed, k))))
    values = run_jobs(lambda job: _cross_rep(job[1]), jobs, threads)
    return [key + (val,) for (key, _), val in zip(jobs, values)]


# Fisher residual ------------------------------------------------------------

def bernstein_envelope(t, p: int, n: int, nu_sq: float, kappa: float):
    """``2p exp(-n t^2 / 2 / (nu^2 + kappa t / 3))``."""
    t = np.asarray(t, dtype=float)
    return 2.0 * p * np.exp(-n * t * t / 2.0 / (nu_sq + kappa * t / 3.0))


def _residual_moments(model: Model, samples: int, seed: int):
    """Monte Carlo ``||E[w w^T]||_op`` and the largest observed ``||w(z)||_op``."""
    data = generate(model, samples, seed)
    ts = model.theta_star
    v = model.noise_variance
    if model.is_linear:
        rho = model.residual(ts, data.X, data.y)
        c = (1.0 - rho**2 / v) / v
        sq = np.sum(data.X**2, axis=1)
        kappa = float(np.max(np.abs(c) * sq))
        M2 = (data.X.T * (c**2 * sq)) @ data.X / samples
        return operator_norm(0.5 * (M2 + M2.T)), kappa
    acc = np.zeros((model.p, model.p))
    kappa = 0.0
    for x, y in zip(data.X, data.y):
        w = model.fisher_residual_sample(ts, x[None, :], np.array([y]))
        w = 0.5 * (w + w.T)
        acc += w @ w
        kappa = max(kappa, operator_norm(w))
    acc /= samples
    return operator_norm(0.5 * (acc + acc.T)), kappa


@dataclass(frozen=True, eq=False)
class FisherResidualResult:
    p: int
    n: int
    opnorms: np.ndarray
    t_grid: np.ndarray
    exceedance: np.ndarray
    envelope: np.ndarray
    nu_sq: float
    kappa: float
    mean_residual: np.ndarray
    se_residual: np.ndarray

    @property
    def reps(self) -> int:
        return int(self.opnorms.size)


def _residual_rep(args):
    model, n, seed = args
    data = generate(model, n, seed)
    ts = model.theta_star
    W = model.nll_hessian(ts, data) - model.empirical_fisher(ts, data)
    W = 0.5 * (W + W.T)
    return W, operator_norm(W)


def fisher_residual(model, p: int, n: int, reps: int, seed: int, *, t_grid=None, mc_samples: int = 2000,
                    model_options=None, threads: int = 1) -> FisherResidualResult:
    """Operator norms of the Fisher residual next to the matrix Bernstein envelope."""
    m = _model(model, p, seed, model_options)
    nu_sq, kappa = _residual_moments(m, mc_samples, stream_seed(seed, 2**32))
    jobs = [(m, n, stream_seed(seed, k)) for k in range(reps)]
    out = run_jobs(_residual_rep, jobs, threads)
    Ws = np.array([w for w, _ in out])
    norms = np.array([s for _, s in out])
    if t_grid is None:
        lo = max(float(np.median(norms)) / 2.0, 1e-12)
        t_grid = np.geomspace(lo, 3.0 * float(norms.max()) + lo, 10)
    t_grid = np.asarray(t_grid, dtype=float)
    exceed = np.array([(norms >= t).mean() for t in t_grid])
    se = Ws.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.full((p, p), np.nan)
    return FisherResidualResult(p, n, norms, t_grid, exceed, bernstein_envelope(t_grid, p, n, nu_sq, kappa),
                                nu_sq, kappa, Ws.mean(axis=0), se)


# third derivatives ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DerivativeSums:
    """Random-search estimates of the per-index sup (``beta``) and Lipschitz constant (``alpha``).

    Both are lower bounds of the quantities they estimate.
    """

    beta: np.ndarray
    alpha: np.ndarray

    @property
    def sum_beta_sq(self) -> float:
        return float(np.sum(self.beta**2))

    @property
    def sum_alpha_sq(self) -> float:
        return float(np.sum(self.alpha**2))


def _ball(rng, p, radius):
    u = rng.standard_normal(p)
    return radius * rng.uniform() ** (1.0 / p) * u / np.linalg.norm(u)


def _derivative_chunk(args):
    model, thetas, primes, dists, X, y = args
    beta = np.zeros(model.p)
    alpha = np.zeros(model.p)
    for th, th2, dist in zip(thetas, primes, dists):
        for x, yi in zip(X, y):
            a1 = model.arrowheads(th, x, yi)
            a2 = model.arrowheads(th2, x, yi)
            np.maximum(beta, third_derivative_norms(a1), out=beta)
            np.maximum(alpha, third_derivative_norms(a1 - a2) / dist, out=alpha)
    return beta, alpha


def derivative_sums(model, p: int, K: int, L: int, seed: int, *, M=None, perturbation: float = 1e-2,
                    model_options=None, threads: int = 1) -> DerivativeSums:
    """Estimate ``sum_j beta_j^2`` and ``sum_j alpha_j^2`` from ``K`` parameters and ``L`` samples.

    Parameters are drawn uniformly from the ball of radius ``r``; each is
    paired with a perturbation of relative size ``perturbation`` for the
    Lipschitz quotient. Samples are drawn from the model at ``theta_star``.
    """
    opts = dict(model_options or {})
    if M is not None:
        opts["M"] = M
    m = _model(model, p, seed, opts)
    if m.is_linear:
        return DerivativeSums(np.zeros(p), np.zeros(p))
    rng = make_rng(seed, 5)
    thetas, primes, dists = [], [], []
    for _ in range(K):
        th = _ball(rng, p, m.radius)
        u = rng.standard_normal(p)
        step = perturbation * m.radius * u / np.linalg.norm(u)
        thetas.append(th)
        primes.append(th + step)
        dists.append(float(np.linalg.norm(step)))
    data = generate(m, L, stream_seed(seed, 6))
    chunks = max(1, min(threads, K))
    idx = np.array_split(np.arange(K), chunks)
    jobs = [(m, [thetas[i] for i in c], [primes[i] for i in c], [dists[i] for i in c], data.X, data.y)
            for c in idx]
    parts = run_jobs(_derivative_chunk, jobs, threads)
    beta = np.max([b for b, _ in parts], axis=0)
    alpha = np.max([a for _, a in parts], axis=0)
    return DerivativeSums(beta, alpha)


# s_p and Taylor residual ----------------------------------------------------

S_P_NAMES = ("nu", "kappa", "alpha", "beta")


def s_p_components(nu_sq: float, kappa: float, sum_alpha_sq: float, sum_beta_sq: float, p: int) -> tuple:
    """Scaled terms ``(nu^2 log p / p, (kappa log p / p)^2, sum alpha^2, sum beta^2)``."""
    lp = math.log(p) if p > 1 else 0.0
    return (nu_sq * lp / p, (kappa * lp / p) ** 2, float(sum_alpha_sq), float(sum_beta_sq))


def s_p_report(components) -> tuple[float, str]:
    """Maximum of the four scaled components and the name of the one attaining it."""
    comps = tuple(float(c) for c in components)
    if len(comps) != 4:
        raise ValidationError("s_p needs four components")
    k = int(np.argmax(comps))
    return comps[k], S_P_NAMES[k]


def taylor_residual_norm(model: Model, dataset, fit_result, F_star) -> float:
    """``||V2||^2_{F*}`` of the decomposition of ``fit_result``."""
    terms = decompose(model, dataset, fit_result, F_star)
    if not np.any(terms.V2):
        return 0.0
    return float(terms.V2 @ F_star @ terms.V2)


def taylor_envelope(lambda_max: float, tau: float, radius: float, sum_beta_sq: float,
                    sum_alpha_sq: float) -> float:
    """Rate ``lambda_max / tau^2 * max(r^6 sum beta^2, r^4 sum alpha^2)`` (no constant)."""
    return lambda_max / tau**2 * max(radius**6 * sum_beta_sq, radius**4 * sum_alpha_sq)


# report ---------------------------------------------------------------------

@dataclass
class AssumptionReport:
    model: str
    p: int
    n: int
    M: int
    nu_sq: float
    kappa: float
    sum_beta_sq: float
    sum_alpha_sq: float
    s_p: float
    s_p_term: str
    cross_term_mean: float
    cross_term_std: float
    fisher_residual_opnorm: float
    bernstein_bound_prob: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.__dataclass_fields__) + "\n"

    def to_csv_row(self) -> str:
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in self.to_dict().values()) + "\n"


def assumption_report(kind: str, p: int, n: int, tau: float, reps: int, seed: int, *, K: int = 100,
                      L: int = 100, mc_samples: int = 2000, model_options=None,
                      threads: int = 1) -> AssumptionReport:
    """Collect every measured quantity for one model at one ``(p, n)``."""
    m = _model(kind, p, seed, model_options)
    fr = fisher_residual(m, p, n, reps, seed, mc_samples=mc_samples, threads=threads)
    ds = derivative_sums(m, p, K, L, seed, threads=threads)
    ct = cross_term(m, p, n, tau, reps, seed, threads=threads)
    s_p, term = s_p_report(s_p_components(fr.nu_sq, fr.kappa, ds.sum_alpha_sq, ds.sum_beta_sq, p))
    t = float(np.median(fr.opnorms))
    return AssumptionReport(
        model=m.kind, p=p, n=n, M=getattr(m, "M", 0), nu_sq=fr.nu_sq, kappa=fr.kappa,
        sum_beta_sq=ds.sum_beta_sq, sum_alpha_sq=ds.sum_alpha_sq, s_p=s_p, s_p_term=term,
        cross_term_mean=ct.mean, cross_term_std=ct.std,
        fisher_residual_opnorm=t,
        bernstein_bound_prob=float(min(1.0, bernstein_envelope(t, p, n, fr.nu_sq, fr.kappa))),
    )
