"""Command-line experiment driver.

Usage::

    spectral-risk <stieltjes|descent|mp-verify|assumptions> [--config FILE]
                  [--seed U64] [--out DIR] [--threads N] [--plot] [--section.key VALUE ...]

Exit status is 0 on success, 1 on invalid configuration and 2 on numerical
failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import warnings

import numpy as np

from . import assumptions, estimators, rmt, spectral
from .errors import ConfigError, NumericalError, SpectralRiskError, ValidationError
from .output import csv_text, write_csv, write_json, atomic_write_text
from .parallel import default_threads, run_jobs
from .plotting import line_chart

SUBCOMMANDS = ("stieltjes", "descent", "mp-verify", "assumptions")
SEED_ENV = "SPECTRAL_RISK_SEED"

_STIELTJES_GAMMAS = [round(0.05 * k, 2) for k in range(1, 20)] + [1.05, 1.1, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 7.5, 10.0]

DEFAULTS = {
    "out": "spectral_risk_out",
    "plot": False,
    "stieltjes": {
        "measure": {"kind": "dirac", "atom": 1.0},
        "gammas": _STIELTJES_GAMMAS,
        "tau_bars": [0.0, "gamma"],
    },
    "descent": {
        "model": "linear",
        "model_options": {},
        "p": 256,
        "reps": 20,
        "gammas": [0.25, 0.5, 0.8, 0.9, 1.5, 2.5, 3.0, 10.0],
        "tau_bar": 0.0,
        "fisher_mc": 20000,
        "prediction_mc": 2000,
    },
    "mp-verify": {
        "measure": {"kind": "dirac", "atom": 1.0},
        "p": 512,
        "reps": 10,
        "regimes": [[0.5, 0.0], [2.0, 0.0], [1.0, 1.0]],
    },
    "assumptions": {
        "models": ["linear", "exponential"],
        "p_grid": list(range(10, 501, 10)),
        "ratios": [2, 5, 10],
        "tau": 0.01,
        "reps": 10,
        "report": {"enabled": True, "p": 100, "ratio": 2, "K": 100, "L": 100, "mc_samples": 2000},
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parse_value(text):
    try:
        return json.loads(text)
    except (TypeError, ValueError):
        return text


def _set_path(cfg, path, value):
    keys = path.split(".")
    node = cfg
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def _parse_overrides(extra):
    overrides = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, val = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for {tok}")
            key, val = tok[2:], extra[i + 1]
            i += 2
        overrides.append((key, _parse_value(val)))
    return overrides


def _merge(base, update):
    for key, val in update.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _merge(base[key], val)
        else:
            base[key] = copy.deepcopy(val)
    return base


def resolve_config(argv) -> dict:
    """Merge defaults, the config file, the environment and flags into one document."""
    parser = _Parser(prog="spectral-risk", description="Asymptotic risk experiments.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config")
    parser.add_argument("--seed")
    parser.add_argument("--out")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--plot", action="store_true", default=None)
    args, extra = parser.parse_known_args(argv)
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        _merge(cfg, user)
    for key, val in _parse_overrides(extra):
        _set_path(cfg, key, val)
    cfg["subcommand"] = args.subcommand
    if args.seed is not None:
        cfg["seed"] = args.seed
    elif cfg.get("seed") is None:
        cfg["seed"] = os.environ.get(SEED_ENV, 0)
    try:
        seed = int(cfg["seed"])
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer") from None
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cfg["seed"] = seed
    if args.out is not None:
        cfg["out"] = args.out
    if args.threads is not None:
        cfg["threads"] = args.threads
    cfg.setdefault("threads", default_threads())
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    if args.plot:
        cfg["plot"] = True
    return cfg


# validation -----------------------------------------------------------------

def build_measure(spec) -> spectral.SpectralMeasure:
    if not isinstance(spec, dict):
        raise ConfigError("measure must be an object")
    kind = spec.get("kind")
    try:
        if kind == "dirac":
            return spectral.Dirac(float(spec["atom"]))
        if kind == "uniform":
            return spectral.Uniform(float(spec["lower"]), float(spec["upper"]))
        if kind == "semicircle":
            return spectral.Semicircle(float(spec["center"]))
        if kind == "empirical":
            return spectral.Empirical(np.asarray(spec["eigenvalues"], dtype=float))
    except KeyError as exc:
        raise ConfigError(f"measure is missing {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad measure: {exc}") from None
    raise ConfigError(f"unknown measure kind {kind!r}")


def _tau_for(tau_bar, gamma):
    if tau_bar == "gamma":
        return gamma
    try:
        return float(tau_bar)
    except (TypeError, ValueError):
        raise ConfigError(f"tau_bar must be a number or 'gamma', got {tau_bar!r}") from None


def _positive_int(section, key):
    val = section.get(key)
    if not isinstance(val, int) or isinstance(val, bool) or val < 1:
        raise ConfigError(f"{key} must be a positive integer")
    return val


def _number_list(section, key):
    vals = section.get(key)
    if not isinstance(vals, list) or not vals:
        raise ConfigError(f"{key} must be a nonempty list")
    try:
        return [float(v) for v in vals]
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must contain numbers") from None


def validate(cfg) -> dict:
    """Check the active section and return the objects the pipeline needs."""
    sub = cfg["subcommand"]
    sec = cfg.get(sub)
    if not isinstance(sec, dict):
        raise ConfigError(f"missing section {sub!r}")
    plan = {}
    if sub == "stieltjes":
        plan["measure"] = build_measure(sec.get("measure"))
        gammas = _number_list(sec, "gammas")
        tbs = sec.get("tau_bars")
        if not isinstance(tbs, list) or not tbs:
            raise ConfigError("tau_bars must be a nonempty list")
        plan["regimes"] = [(tb, spectral.AsymptoticRegime(g, _tau_for(tb, g))) for tb in tbs for g in gammas]
    elif sub == "descent":
        if sec.get("model") not in ("linear", "exponential", "additive"):
            raise ConfigError("model must be linear, exponential or additive")
        _positive_int(sec, "p")
        _positive_int(sec, "reps")
        _positive_int(sec, "fisher_mc")
        _positive_int(sec, "prediction_mc")
        for g in _number_list(sec, "gammas"):
            spectral.AsymptoticRegime(g, _tau_for(sec.get("tau_bar"), g))
    elif sub == "mp-verify":
        plan["measure"] = build_measure(sec.get("measure"))
        _positive_int(sec, "p")
        _positive_int(sec, "reps")
        regs = sec.get("regimes")
        if not isinstance(regs, list) or not regs:
            raise ConfigError("regimes must be a nonempty list of [gamma, tau_bar]")
        try:
            plan["regimes"] = [spectral.AsymptoticRegime(float(g), float(t)) for g, t in regs]
        except (TypeError, ValueError):
            raise ConfigError("regimes must be pairs of numbers") from None
    elif sub == "assumptions":
        models = sec.get("models")
        if not isinstance(models, list) or not set(models) <= {"linear", "exponential", "additive"}:
            raise ConfigError("models must list linear, exponential or additive")
        for p in sec.get("p_grid") or []:
            if not isinstance(p, int) or p < 1:
                raise ConfigError("p_grid must hold positive integers")
        if not sec.get("p_grid"):
            raise ConfigError("p_grid must be nonempty")
        ratios = _number_list(sec, "ratios")
        if min(ratios) <= 0:
            raise ConfigError("ratios must be positive")
        if not float(sec.get("tau", 0)) > 0:
            raise ConfigError("tau must be positive")
        _positive_int(sec, "reps")
        rep = sec.get("report") or {}
        if rep.get("enabled"):
            for key in ("p", "K", "L", "mc_samples"):
                _positive_int(rep, key)
    return plan


# pipelines ------------------------------------------------------------------

def _maybe_plot(cfg, path, series, **labels):
    if not cfg.get("plot"):
        return
    try:
        atomic_write_text(path, line_chart(series, **labels))
    except Exception as exc:  # plots are a courtesy
        warnings.warn(f"plot {os.path.basename(path)} failed: {exc}")


def _run_stieltjes(cfg, plan, out):
    measure = plan["measure"]
    rows = [(g.gamma, g.tau_bar, spectral.limit_h_at_zero(measure, g)) for _, g in plan["regimes"]]
    write_csv(os.path.join(out, "h_curve.csv"), ("gamma", "tau_bar", "h"), rows)
    series = []
    for tb in cfg["stieltjes"]["tau_bars"]:
        pts = [(g.gamma, h) for (t, g), (_, _, h) in zip(plan["regimes"], rows) if t == tb]
        for branch in ([q for q in pts if q[0] < 1], [q for q in pts if q[0] > 1]) if tb == 0 else (pts,):
            if branch:
                series.append({"label": f"tau_bar={tb}", "x": [q[0] for q in branch], "y": [q[1] for q in branch]})
    _maybe_plot(cfg, os.path.join(out, "h_curve.svg"), series, title="h at a = 0", xlabel="gamma", ylabel="h")


def _run_descent(cfg, plan, out):
    sec = cfg["descent"]
    reports = estimators.descent_sweep(
        sec["model"], sec["gammas"], sec["tau_bar"], sec["p"], sec["reps"], cfg["seed"],
        model_options=sec.get("model_options") or {}, fisher_mc=sec["fisher_mc"],
        prediction_mc=sec["prediction_mc"], threads=cfg["threads"])
    rows = [row for r in reports for row in r.rows()]
    write_csv(os.path.join(out, "descent.csv"), estimators.CSV_COLUMNS, rows)
    summary = []
    for r in reports:
        v, w = r.summary("variance_part"), r.summary("weighted_risk")
        summary.append((r.gamma, r.tau, r.p, r.n, r.reps, v["mean"], v["std"], v["median"], w["mean"], w["std"],
                        float(np.median(r.trace_functional)), r.analytic_h))
    write_csv(os.path.join(out, "descent_summary.csv"),
              ("gamma", "tau", "p", "n", "reps", "variance_mean", "variance_std", "variance_median",
               "risk_mean", "risk_std", "trace_functional_median", "analytic_h"), summary)
    xs = [r.gamma for r in reports]
    _maybe_plot(cfg, os.path.join(out, "descent.svg"), [
        {"label": "variance", "x": xs, "y": [s[5] for s in summary], "err": [s[6] for s in summary]},
        {"label": "analytic h", "x": xs, "y": [r.analytic_h for r in reports]},
    ], title="variance versus gamma", xlabel="gamma", ylabel="risk")


def _run_mp(cfg, plan, out):
    sec = cfg["mp-verify"]
    reports = [rmt.verify_mp_limit(plan["measure"], g, sec["p"], sec["reps"], cfg["seed"], threads=cfg["threads"])
               for g in plan["regimes"]]
    rows = [(r.gamma, r.tau_bar, r.p, r.n, k, float(v)) for r in reports for k, v in enumerate(r.values)]
    write_csv(os.path.join(out, "mp_verify.csv"), ("gamma", "tau_bar", "p", "n", "rep", "value"), rows)
    write_csv(os.path.join(out, "mp_summary.csv"),
              ("gamma", "tau_bar", "p", "n", "reps", "mean", "std", "analytic", "gap"),
              [(r.gamma, r.tau_bar, r.p, r.n, r.reps, r.mean, r.std, r.analytic, r.gap) for r in reports])


def _run_assumptions(cfg, plan, out):
    sec = cfg["assumptions"]
    rows = assumptions.cross_term_grid(sec["models"], sec["p_grid"], sec["ratios"], float(sec["tau"]),
                                       sec["reps"], cfg["seed"], threads=cfg["threads"])
    write_csv(os.path.join(out, "cross_term.csv"), ("model", "ratio", "p", "n", "rep", "value"), rows)
    groups = {}
    for model, ratio, p, n, _, val in rows:
        groups.setdefault((model, ratio, p, n), []).append(val)
    summary = []
    for (model, ratio, p, n), vals in groups.items():
        a = np.asarray(vals)
        summary.append((model, ratio, p, n, float(a.mean()), float(a.std()), float(a.std() / np.sqrt(a.size))))
    write_csv(os.path.join(out, "cross_term_summary.csv"), ("model", "ratio", "p", "n", "mean", "std", "se"), summary)
    for model in sec["models"]:
        for ratio in sec["ratios"]:
            pts = [s for s in summary if s[0] == model and s[1] == float(ratio)]
            write_csv(os.path.join(out, f"cross_term_{model}_ratio{ratio}.csv"), ("p", "mean", "std"),
                      [(s[2], s[4], s[5]) for s in pts])
            _maybe_plot(cfg, os.path.join(out, f"cross_term_{model}_ratio{ratio}.svg"),
                        [{"label": model, "x": [s[2] for s in pts], "y": [s[4] for s in pts],
                          "err": [s[5] for s in pts]}],
                        title=f"off-diagonal term, p/n = {ratio}", xlabel="p", ylabel="value")
    rep = sec.get("report") or {}
    if rep.get("enabled"):
        p = rep["p"]
        n = max(1, int(round(p / float(rep.get("ratio", 2)))))
        reports = [assumptions.assumption_report(kind, p, n, float(sec["tau"]), sec["reps"], cfg["seed"],
                                                 K=rep["K"], L=rep["L"], mc_samples=rep["mc_samples"],
                                                 threads=cfg["threads"]) for kind in sec["models"]]
        write_json(os.path.join(out, "assumption_report.json"), [r.to_dict() for r in reports])
        atomic_write_text(os.path.join(out, "assumption_report.csv"),
                          assumptions.AssumptionReport.csv_header() + "".join(r.to_csv_row() for r in reports))


_PIPELINES = {"stieltjes": _run_stieltjes, "descent": _run_descent, "mp-verify": _run_mp,
              "assumptions": _run_assumptions}


def run(cfg: dict) -> int:
    """Validate ``cfg``, run the selected pipeline and write its outputs."""
    sub = cfg["subcommand"]
    try:
        plan = validate(cfg)
    except ValidationError as exc:
        print(f"spectral-risk: invalid configuration: {exc}", file=sys.stderr)
        return 1
    out = cfg["out"]
    try:
        os.makedirs(out, exist_ok=True)
        write_json(os.path.join(out, "config.resolved.json"), cfg)
    except OSError as exc:
        print(f"spectral-risk: cannot write to {out}: {exc}", file=sys.stderr)
        return 1
    try:
        _PIPELINES[sub](cfg, plan, out)
    except ValidationError as exc:
        print(f"spectral-risk: invalid configuration in stage {sub}: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"spectral-risk: numerical failure in stage {sub}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    try:
        cfg = resolve_config(sys.argv[1:] if argv is None else argv)
    except SpectralRiskError as exc:
        print(f"spectral-risk: invalid configuration: {exc}", file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
