"""Batch experiment driver.

Usage::

    projlearn <experiment> --config run.yaml [--seed N] [--out DIR] [--workers N]
    projlearn replay path/to/manifest.json [--out DIR] [--workers N]

Exit codes: 0 all gates pass, 1 a numeric gate failed, 2 configuration
error, 3 replay mismatch (versions, edited config or artifacts).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import re
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy
import yaml

from projlearn import analysis, minimax
from projlearn.estimator import EstimatorConfig, choose_R, ml_estimate
from projlearn.problem import (
    DesignMeasure,
    ForwardOperator,
    GroundTruth,
    ProblemSpec,
    SubspaceFamily,
    make_ground_truth,
)
from projlearn.sampling import SeedPlan, synthesize

EXPERIMENTS = ("simulate", "rates", "concentration", "highprob", "diagnose", "minimax-pack")
EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_REPLAY = 0, 1, 2, 3
MANIFEST_FORMAT = 1


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


class ConfigError(ValueError):
    def __init__(self, path: tuple, message: str):
        super().__init__(message)
        self.path = path
        self.message = message


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads "1e-8" as a string; accept exponent floats without a dot.
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+][0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _marks(node, path=(), out=None) -> dict:
    """Map key paths to 1-based line numbers."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            _marks(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _marks(v, path + (i,), out)
    return out


class _Section:
    """Consumes keys from one mapping and rejects leftovers."""

    def __init__(self, data, path: tuple):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(path, "expected a mapping")
        self.data = dict(data)
        self.path = path

    def sub(self, key, required=False) -> "_Section":
        if key not in self.data and required:
            raise ConfigError(self.path + (key,), "missing required section")
        return _Section(self.data.pop(key, None), self.path + (key,))

    def take(self, key, conv, default=None, required=False, check=None, hint=""):
        p = self.path + (key,)
        if key not in self.data:
            if required:
                raise ConfigError(p, "missing required key")
            return default
        raw = self.data.pop(key)
        try:
            value = conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(p, f"invalid value {raw!r}: {exc}") from None
        if check is not None and not check(value):
            raise ConfigError(p, f"invalid value {raw!r}" + (f": {hint}" if hint else ""))
        return value

    def done(self):
        if self.data:
            key = sorted(self.data, key=str)[0]
            raise ConfigError(self.path + (key,), "unknown key")


def _int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ValueError("expected an integer")
    return int(v)


def _float(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError("expected a number")
    v = float(v)
    if not math.isfinite(v):
        raise ValueError("expected a finite number")
    return v


def _bool(v) -> bool:
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


def _str(v) -> str:
    if not isinstance(v, str):
        raise ValueError("expected a string")
    return v


def _floats(v) -> list:
    if not isinstance(v, list) or not v:
        raise ValueError("expected a non-empty list")
    return [_float(x) for x in v]


def _ints(v) -> list:
    if not isinstance(v, list) or not v:
        raise ValueError("expected a non-empty list")
    return [_int(x) for x in v]


def _matrix(v) -> list:
    if not isinstance(v, list) or not v:
        raise ValueError("expected a list of rows")
    return [_floats(row) for row in v]


_pos = (lambda x: x > 0, "must be positive")
_nonneg = (lambda x: x >= 0, "must be >= 0")


def _parse_problem(sec: _Section) -> ProblemSpec:
    M = sec.take("ambient_dim", _int, required=True, check=lambda x: x >= 2, hint="must be >= 2")
    delta = sec.take("noise_delta", _float, 0.0, check=_nonneg[0], hint=_nonneg[1])
    norm = sec.take("kernel_normalization", _str, "sup", check=lambda x: x in ("sup", "none"), hint="'sup' or 'none'")
    inj = sec.take("require_injective", _bool, True)

    fw = sec.sub("forward", required=True)
    kind = fw.take("kind", _str, required=True, check=lambda x: x in ("diagonal_cosine", "dense_matrix"),
                   hint="'diagonal_cosine' or 'dense_matrix'")
    try:
        if kind == "diagonal_cosine":
            power_t = fw.take("power_t", _float, check=_pos[0], hint=_pos[1])
            singulars = fw.take("singulars", _floats)
            if (power_t is None) == (singulars is None):
                raise ConfigError(fw.path, "give exactly one of power_t or singulars")
            forward = ForwardOperator.power_law(M, power_t) if power_t is not None else ForwardOperator(kind, singulars=singulars)
        else:
            forward = ForwardOperator(kind, matrix=fw.take("matrix", _matrix, required=True))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(fw.path, str(exc)) from None
    fw.done()

    ds = sec.sub("design")
    dkind = ds.take("kind", _str, "uniform01", check=lambda x: x in ("uniform01", "density01"),
                    hint="'uniform01' or 'density01'")
    coeffs = ds.take("coefficients", _floats, ())
    ds.done()
    try:
        design = DesignMeasure(dkind, tuple(coeffs))
    except ValueError as exc:
        raise ConfigError(ds.path, str(exc)) from None

    ss = sec.sub("subspaces")
    skind = ss.take("kind", _str, "coordinate", check=lambda x: x in ("coordinate", "rotated"),
                    hint="'coordinate' or 'rotated'")
    sseed = ss.take("seed", _int, check=_nonneg[0], hint=_nonneg[1])
    ss.done()
    if skind == "rotated":
        if sseed is None:
            raise ConfigError(ss.path + ("seed",), "rotated subspaces need a seed")
        family = SubspaceFamily.random_rotation(M, sseed)
    else:
        family = SubspaceFamily()
    sec.done()
    try:
        return ProblemSpec(M, forward, design, delta, family, norm, inj)
    except ValueError as exc:
        raise ConfigError(sec.path, str(exc)) from None


def _parse_truth(sec: _Section, spec: ProblemSpec) -> GroundTruth:
    kind = sec.take("kind", _str, "polynomial_decay", check=lambda x: x in ("polynomial_decay", "sparse_in_V_m"),
                    hint="'polynomial_decay' or 'sparse_in_V_m'")
    s = sec.take("s", _float, 1.0, check=_pos[0], hint=_pos[1])
    margin = sec.take("margin", _float, 0.01, check=_nonneg[0], hint=_nonneg[1])
    m = sec.take("m", _int)
    values = sec.take("values", _floats)
    sec.done()
    try:
        return make_ground_truth(spec.subspaces, spec.ambient_dim, kind, s, margin, m, values)
    except ValueError as exc:
        raise ConfigError(sec.path, str(exc)) from None


def _check_m(path, m: int, spec: ProblemSpec):
    if not 1 <= m <= spec.ambient_dim // 2:
        raise ConfigError(path, f"m = {m} must lie in [1, ambient_dim // 2 = {spec.ambient_dim // 2}]")


@dataclass
class RunConfig:
    experiment: str
    master_seed: int
    output_dir: str
    workers: int
    problem: ProblemSpec
    params: dict
    raw: dict = field(repr=False)


def _parse_params(experiment: str, sec: _Section, spec: ProblemSpec) -> dict:
    p: dict = {}
    M = spec.ambient_dim
    if experiment in ("simulate", "rates", "highprob", "diagnose"):
        p["truth"] = _parse_truth(sec.sub("truth"), spec)
    if experiment == "simulate":
        p["n"] = sec.take("n", _int, required=True, check=_pos[0], hint=_pos[1])
        p["m"] = sec.take("m", _int, required=True)
        _check_m(sec.path + ("m",), p["m"], spec)
        p["pinv_rel_tol"] = sec.take("pinv_rel_tol", _float, 1e-12, check=lambda x: 0 < x < 1, hint="must lie in (0, 1)")
        p["truncation_R"] = sec.take("truncation_R", _float, check=_nonneg[0], hint=_nonneg[1])
        default_tol = 1e-8 if spec.noise_delta == 0 else None
        p["recovery_tol"] = sec.take("recovery_tol", _float, default_tol, check=_pos[0], hint=_pos[1])
    elif experiment == "rates":
        if spec.noise_delta <= 0:
            raise ConfigError(("problem", "noise_delta"), "rates needs a positive noise level")
        p["grid_N"] = sec.take("grid_N", _ints, required=True,
                               check=lambda g: len(g) >= 4 and all(b > a > 0 for a, b in zip(g, g[1:])),
                               hint="at least 4 strictly increasing positive sizes")
        p["trials"] = sec.take("trials", _int, 200, check=_pos[0], hint=_pos[1])
        p["p"] = sec.take("p", _float, 2.0, check=_pos[0], hint=_pos[1])
        p["t"] = sec.take("t", _float, check=_pos[0], hint=_pos[1])
        p["D2"] = sec.take("D2", _float, check=_nonneg[0], hint=_nonneg[1])
        p["R_multiplier"] = sec.take("R_multiplier", _float, 1.0, check=_pos[0], hint=_pos[1])
        p["eta"] = sec.take("eta", _float, 0.1, check=lambda x: 0 < x < 1, hint="must lie in (0, 1)")
        p["slope_tol"] = sec.take("slope_tol", _float, 0.1, check=_pos[0], hint=_pos[1])
        p["max_constant_spread"] = sec.take("max_constant_spread", _float, 3.0, check=lambda x: x > 1, hint="must exceed 1")
    elif experiment == "concentration":
        p["n_values"] = sec.take("n_values", _ints, required=True,
                                 check=lambda g: all(b > a > 0 for a, b in zip(g, g[1:])) and g[0] > 0,
                                 hint="strictly increasing positive sizes")
        p["trials"] = sec.take("trials", _int, 1000, check=lambda x: x >= 100, hint="must be >= 100")
        p["etas"] = sec.take("etas", _floats, [0.1, 0.05], check=lambda e: all(0 < x < 1 for x in e),
                             hint="each eta must lie in (0, 1)")
        p["scaling_band"] = sec.take("scaling_band", _floats, [0.8, 1.2],
                                     check=lambda b: len(b) == 2 and 0 < b[0] < b[1], hint="[low, high] with 0 < low < high")
    elif experiment in ("highprob", "diagnose"):
        p["n"] = sec.take("n", _int, required=True, check=_pos[0], hint=_pos[1])
        p["m"] = sec.take("m", _int, required=True)
        _check_m(sec.path + ("m",), p["m"], spec)
        p["trials"] = sec.take("trials", _int, 500, check=_pos[0], hint=_pos[1])
        p["D2"] = sec.take("D2", _float, check=_nonneg[0], hint=_nonneg[1])
        if experiment == "highprob":
            p["R"] = sec.take("R", _float, check=_pos[0], hint=_pos[1])
            p["eta"] = sec.take("eta", _float, 0.1, check=lambda x: 0 < x < 1, hint="must lie in (0, 1)")
            p["t"] = sec.take("t", _float, check=_pos[0], hint=_pos[1])
        else:
            p["m_max"] = sec.take("m_max", _int, M // 2, check=lambda x: 1 <= x <= M, hint=f"must lie in [1, {M}]")
            p["min_event_trials"] = sec.take("min_event_trials", _int, 1, check=_nonneg[0], hint=_nonneg[1])
            p["quadrature_check"] = sec.take("quadrature_check", _bool, True)
    elif experiment == "minimax-pack":
        if spec.noise_delta <= 0:
            raise ConfigError(("problem", "noise_delta"), "minimax-pack needs a positive noise level")
        p["s"] = sec.take("s", _float, required=True, check=_pos[0], hint=_pos[1])
        p["t"] = sec.take("t", _float, required=True, check=_pos[0], hint=_pos[1])
        p["R"] = sec.take("R", _float, required=True, check=_pos[0], hint=_pos[1])
        p["epsilon"] = sec.take("epsilon", _float, required=True, check=_pos[0], hint=_pos[1])
        p["D3"] = sec.take("D3", _float, 1.0, check=_pos[0], hint=_pos[1])
        p["sign_k"] = sec.take("sign_k", _ints, [36, 56], check=lambda ks: all(k >= 28 for k in ks), hint="each k must be >= 28")
        p["variant"] = sec.take("variant", _str, "budget", check=lambda x: x in ("budget", "literal"),
                                hint="'budget' or 'literal'")
        k = minimax.packing_dimension(p["s"], p["R"], p["epsilon"])
        if p["epsilon"] > 56.0 ** (-p["s"]) * p["R"] * (1 + 1e-12):
            raise ConfigError(sec.path + ("epsilon",), "epsilon must not exceed 56^-s R")
        if 2 * k > M:
            raise ConfigError(("problem", "ambient_dim"), f"packing needs 2k = {2 * k} <= ambient_dim")
    sec.done()
    return p


def load_config(path, seed: int | None = None, out: str | None = None, workers: int | None = None,
                experiment: str | None = None) -> RunConfig:
    """Parse and validate a run configuration; raises :class:`ConfigError`."""
    text = Path(path).read_text()
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError((), f"YAML syntax error at line {mark.line + 1 if mark else '?'}: {exc}") from None
    return parse_config(data, seed, out, workers, experiment)


def parse_config(data, seed=None, out=None, workers=None, experiment=None) -> RunConfig:
    raw = json.loads(json.dumps(data)) if data is not None else {}
    root = _Section(data, ())
    exp = root.take("experiment", _str, experiment, check=lambda x: x in EXPERIMENTS, hint=f"one of {EXPERIMENTS}")
    if exp is None:
        raise ConfigError(("experiment",), "missing required key")
    if experiment is not None and exp != experiment:
        raise ConfigError(("experiment",), f"config is for {exp!r}, not {experiment!r}")
    master = root.take("master_seed", _int, 0, check=lambda x: 0 <= x < 2**64, hint="must be a 64-bit unsigned integer")
    out_dir = root.take("output_dir", _str, f"runs/{exp}")
    n_workers = root.take("workers", _int, 1, check=lambda x: x >= 1, hint="must be >= 1")
    spec = _parse_problem(root.sub("problem", required=True))
    params = _parse_params(exp, root.sub("params"), spec)
    root.done()
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError(("master_seed",), "--seed must be a 64-bit unsigned integer")
        master = seed
    if workers is not None:
        if workers < 1:
            raise ConfigError(("workers",), "--workers must be >= 1")
        n_workers = workers
    raw["experiment"] = exp
    raw["master_seed"] = master
    raw.pop("workers", None)
    raw.pop("output_dir", None)
    return RunConfig(exp, master, out or out_dir, n_workers, spec, params, raw)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def csv_text(rows: list[dict]) -> str:
    header = list(rows[0])
    lines = [",".join(header)]
    lines += [",".join(_fmt(r[h]) for h in header) for r in rows]
    return "\n".join(lines) + "\n"


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        # shortest repr round-trips exactly; non-finite values become strings
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n"


@dataclass
class Outcome:
    artifacts: dict  # name -> text
    metrics: dict
    gates: dict  # name -> {"pass": bool, ...}


def _gate(passed: bool, **info) -> dict:
    return {"pass": bool(passed), **info}


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _run_simulate(cfg: RunConfig) -> Outcome:
    spec, p = cfg.problem, cfg.params
    truth = p["truth"]
    data = synthesize(spec, truth, p["n"], SeedPlan(cfg.master_seed, 0))
    report = ml_estimate(spec, data, EstimatorConfig(p["m"], p["pinv_rel_tol"], p["truncation_R"]))
    err = float(np.linalg.norm(report.coeffs - truth.coeffs))
    rows = [{"j": j + 1, "estimate": e, "truth": f} for j, (e, f) in enumerate(zip(report.coeffs, truth.coeffs))]
    gates = {}
    if p["recovery_tol"] is not None:
        gates["noiseless_recovery"] = _gate(err <= p["recovery_tol"], value=err, threshold=p["recovery_tol"])
    metrics = {"recovery_error": err, "rank_used": report.rank_used,
               "empirical_lambda_min": report.empirical_lambda_min, "truncated": report.truncated,
               "residual_empirical_norm": report.residual_empirical_norm}
    data_rows = [{"x": x, "y": y} for x, y in zip(data.points, data.observations)]
    return Outcome({"data.csv": csv_text(data_rows), "estimate.csv": csv_text(rows),
                    "report.json": report.to_json() + "\n"}, metrics, gates)


def _run_rates(cfg: RunConfig) -> Outcome:
    spec, p = cfg.problem, cfg.params
    B = analysis.assemble_b_nu(spec)
    D2 = p["D2"]
    if D2 is None:
        D2 = analysis.certify_classes(B, spec.subspaces).D2_max
    try:
        fit = analysis.rate_experiment(
            spec, p["truth"], p["grid_N"], p["trials"], p["p"], cfg.master_seed, p["t"], D2,
            p["R_multiplier"], p["eta"], B, cfg.workers,
        )
    except ValueError as exc:
        raise ConfigError(("params", "grid_N"), str(exc)) from None
    metrics = {"slope": fit.slope, "slope_stderr": fit.slope_stderr, "theory_slope": fit.theory_slope,
               "constant_spread": fit.constant_spread, "D2": D2}
    gap = abs(fit.slope - fit.theory_slope)
    gates = {
        "rate_slope": _gate(gap <= p["slope_tol"], value=fit.slope, target=fit.theory_slope, tolerance=p["slope_tol"]),
        "rate_constant_stability": _gate(fit.constant_spread < p["max_constant_spread"], value=fit.constant_spread,
                                         threshold=p["max_constant_spread"]),
    }
    return Outcome({"rates.csv": csv_text(fit.rows())}, metrics, gates)


def _run_concentration(cfg: RunConfig) -> Outcome:
    spec, p = cfg.problem, cfg.params
    B = analysis.assemble_b_nu(spec)
    tables = [
        analysis.concentration_experiment(spec, n, p["trials"], p["etas"], _sub_seed(cfg.master_seed, k), B, cfg.workers)
        for k, n in enumerate(p["n_values"])
    ]
    rows = [r for tab in tables for r in tab.rows()]
    dev_rows = [{"n": tab.n, "trial": i, "hs_deviation": d} for tab in tables for i, d in enumerate(tab.deviations)]
    worst = max(x - e for tab in tables for e, x in zip(tab.etas, tab.exceedance))
    gates = {"concentration_exceedance": _gate(worst <= 0, value=worst, threshold=0.0)}
    metrics = {"medians": {str(t.n): t.median for t in tables}}
    if len(tables) > 1:
        lo, hi = p["scaling_band"]
        ratios = []
        ok = True
        for a, b in zip(tables, tables[1:]):
            ratio = a.median / b.median
            expected = math.sqrt(b.n / a.n)
            ratios.append({"n_small": a.n, "n_large": b.n, "median_ratio": ratio,
                           "band": [lo * expected, hi * expected]})
            ok &= lo * expected <= ratio <= hi * expected
        metrics["median_ratios"] = ratios
        gates["concentration_scaling"] = _gate(ok, ratios=ratios)
    return Outcome({"concentration.csv": csv_text(rows), "deviations.csv": csv_text(dev_rows)}, metrics, gates)


def _sub_seed(master: int, k: int) -> int:
    """Independent master seed for the ``k``-th sub-experiment of a run."""
    return SeedPlan(master, k).trial_seed


def _d2_at(spec, B, m, given):
    return analysis.cross_term(B, spec.subspaces, m) if given is None else given


def _run_diagnose(cfg: RunConfig) -> Outcome:
    spec, p = cfg.problem, cfg.params
    B = analysis.assemble_b_nu(spec)
    fam = spec.subspaces
    lam = analysis.lambda_profile(B, fam, p["m_max"])
    half = spec.ambient_dim // 2
    prof = [{"m": m, "lambda_m": float(lam[m - 1]),
             "cross_term": analysis.cross_term(B, fam, m) if m <= half else float("nan")}
            for m in range(1, p["m_max"] + 1)]
    artifacts = {"lambda_profile.csv": csv_text(prof)}
    metrics: dict = {"assembly": B.method}
    gates: dict = {}
    try:
        cert = analysis.certify_classes(B, fam, (1, min(p["m_max"], half)))
        metrics["certificate"] = cert.to_dict()
        gates["class_certificate"] = _gate(cert.holds(), t_fit=cert.t_fit)
    except ValueError as exc:
        gates["class_certificate"] = _gate(False, reason=str(exc))
    if p["quadrature_check"]:
        quad = analysis.assemble_b_nu(spec, method="quadrature")
        gap = float(np.max(np.abs(quad.matrix - B.matrix)))
        gates["b_nu_quadrature_agreement"] = _gate(gap <= 1e-8, value=gap, threshold=1e-8)
    if p["trials"] > 0:
        D2 = _d2_at(spec, B, p["m"], p["D2"])
        rep = analysis.inverse_bounds_experiment(spec, p["truth"], p["n"], p["m"], p["trials"],
                                                 cfg.master_seed, D2, B, cfg.workers)
        artifacts["inequalities.csv"] = csv_text(rep.rows())
        metrics["event_trials"] = rep.event_trials
        metrics["lambda_m"] = rep.lambda_m
        enough = rep.event_trials >= p["min_event_trials"]
        gates["event_inequalities"] = _gate(rep.ok and enough, violations=rep.violations,
                                                   event_trials=rep.event_trials)
    return Outcome(artifacts, metrics, gates)


def _run_highprob(cfg: RunConfig) -> Outcome:
    spec, p = cfg.problem, cfg.params
    B = analysis.assemble_b_nu(spec)
    truth, n, m = p["truth"], p["n"], p["m"]
    D2 = _d2_at(spec, B, m, p["D2"])
    ev = analysis.truncation_event_experiment(spec, truth, n, m, p["trials"], cfg.master_seed, p["R"], D2, B, cfg.workers)
    row = {"n": ev.n, "m": ev.m, "R": ev.R, "trials": ev.trials, "event_fraction": ev.event_fraction,
           "joint_count": ev.joint_count}
    artifacts = {"truncation.csv": csv_text([row])}
    metrics: dict = {"truncation": row}
    gates = {"truncation_tail": _gate(ev.joint_count == 0, value=ev.joint_count, threshold=0)}
    lam_m = float(analysis.lambda_profile(B, spec.subspaces, m)[-1])
    n_min = analysis.min_n_for_probability_condition(lam_m, p["eta"])
    if n >= n_min:
        t = p["t"] if p["t"] is not None else analysis.certify_classes(B, spec.subspaces).t_fit
        hp = analysis.high_prob_bound_check(spec, truth, n, m, p["eta"], p["trials"], _sub_seed(cfg.master_seed, 1),
                                            t, B, cfg.workers)
        artifacts["quantile.csv"] = csv_text([hp.__dict__])
        metrics["quantile"] = hp.__dict__
    else:
        metrics["quantile"] = {"skipped": f"probability condition needs N >= {n_min}"}
    return Outcome(artifacts, metrics, gates)


def _run_minimax(cfg: RunConfig) -> Outcome:
    spec, p = cfg.problem, cfg.params
    seed = cfg.master_seed
    sign_rows = []
    sign_ok = True
    for i, k in enumerate(p["sign_k"]):
        sp = minimax.build_sign_packing(k, _sub_seed(seed, i))
        d2 = sp.min_squared_distance()
        margin = math.log(sp.cardinality - 1) - k / 36
        ok = sp.cardinality >= 4 and d2 >= k and margin > 0
        sign_ok &= ok
        sign_rows.append({"k": k, "K": sp.cardinality, "min_squared_distance": d2, "log_margin": margin})
    B = analysis.assemble_b_nu(spec)
    pk = minimax.build_function_packing(spec, p["s"], p["R"], p["epsilon"], _sub_seed(seed, len(p["sign_k"])), B)
    props = minimax.verify_packing_properties(spec, pk, p["t"], p["D3"])
    n_eps = minimax.fano_threshold(p["s"], p["t"], p["R"], spec.noise_delta, p["epsilon"], p["D3"], p["variant"])
    budget = minimax.kl_budget(pk, n_eps)
    export = {**pk.to_dict(), "margins": props, "fano": {"variant": p["variant"], **budget}}
    kl_rows = [{"i": i, "j": j, "kl": pk.kl_matrix[i, j]}
               for i in range(pk.cardinality) for j in range(i + 1, pk.cardinality)]
    gates = {
        "packing_sign_vectors": _gate(sign_ok),
        "packing_properties": _gate(props["ok"]),
        "fano_kl_budget": _gate(budget["ok"], value=budget["n_kl_max"], threshold=budget["allowance"], n=n_eps),
    }
    return Outcome({"sign_packings.csv": csv_text(sign_rows), "kl_pairs.csv": csv_text(kl_rows),
                    "packing.json": json_text(export)}, {"n_epsilon": n_eps, "K": pk.cardinality, "k": pk.k}, gates)


RUNNERS = {
    "simulate": _run_simulate,
    "rates": _run_rates,
    "concentration": _run_concentration,
    "diagnose": _run_diagnose,
    "highprob": _run_highprob,
    "minimax-pack": _run_minimax,
}


# ---------------------------------------------------------------------------
# run / replay
# ---------------------------------------------------------------------------


def _sha(text: str | bytes) -> str:
    return hashlib.sha256(text.encode() if isinstance(text, str) else text).hexdigest()


def versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def execute(cfg: RunConfig, config_path=None) -> tuple[int, Path]:
    """Run an experiment and write its artifacts; returns ``(exit_code, output_dir)``."""
    outcome = RUNNERS[cfg.experiment](cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    failed = [name for name, g in outcome.gates.items() if not g["pass"]]
    summary = {"experiment": cfg.experiment, "master_seed": cfg.master_seed,
               "all_pass": not failed, "gates": outcome.gates, "metrics": outcome.metrics}
    files = dict(outcome.artifacts)
    files["summary.json"] = json_text(summary)
    for name, text in files.items():
        (out / name).write_text(text)
    manifest = {
        "format": MANIFEST_FORMAT,
        "experiment": cfg.experiment,
        "master_seed": cfg.master_seed,
        "workers": cfg.workers,
        "config": cfg.raw,
        "config_path": str(Path(config_path).resolve()) if config_path else None,
        "config_sha256": _sha(Path(config_path).read_bytes()) if config_path else None,
        "versions": versions(),
        "artifacts": {name: _sha(text) for name, text in sorted(files.items())},
    }
    (out / "manifest.json").write_text(json_text(manifest))
    for name in failed:
        print(f"gate failed: {name}", file=sys.stderr)
    return (EXIT_GATE if failed else EXIT_OK), out


def replay(manifest_path, out=None, workers=None) -> int:
    manifest_path = Path(manifest_path)
    try:
        man = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"replay: cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_REPLAY
    if man.get("format") != MANIFEST_FORMAT:
        print("replay: unsupported manifest format", file=sys.stderr)
        return EXIT_REPLAY
    now = versions()
    if man.get("versions") != now:
        print(f"replay: version mismatch: recorded {man.get('versions')}, running {now}", file=sys.stderr)
        return EXIT_REPLAY
    cpath = man.get("config_path")
    if cpath is not None:
        try:
            current = _sha(Path(cpath).read_bytes())
        except OSError:
            print(f"replay: config file {cpath} is missing", file=sys.stderr)
            return EXIT_REPLAY
        if current != man.get("config_sha256"):
            print(f"replay: config file {cpath} was edited since the run", file=sys.stderr)
            return EXIT_REPLAY
    try:
        cfg = parse_config(man["config"], workers=workers)
    except ConfigError as exc:
        print(f"replay: recorded config is invalid: {exc.message}", file=sys.stderr)
        return EXIT_REPLAY
    with tempfile.TemporaryDirectory() as tmp:
        cfg.output_dir = str(out) if out is not None else tmp
        execute(cfg)
        target = Path(cfg.output_dir)
        bad = [name for name, digest in man["artifacts"].items()
               if not (target / name).exists() or _sha((target / name).read_bytes()) != digest]
    if bad:
        print(f"replay: artifacts differ: {', '.join(bad)}", file=sys.stderr)
        return EXIT_REPLAY
    print(f"replay: {len(man['artifacts'])} artifacts identical")
    return EXIT_OK


def _diagnostic(path, exc: ConfigError, lines: dict) -> str:
    keys = exc.path
    line = None
    while line is None and keys is not None:
        line = lines.get(tuple(keys))
        keys = keys[:-1] if keys else None
    field_name = ".".join(str(k) for k in exc.path) or "<root>"
    where = f"{path}:{line}" if line else str(path)
    return f"{where}: {field_name}: {exc.message}"


def _line_marks(path) -> dict:
    try:
        node = yaml.compose(Path(path).read_text(), Loader=_Loader)
    except (yaml.YAMLError, OSError):
        return {}
    return _marks(node) if node is not None else {}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="projlearn", description="Projection-regularized inverse learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, type=Path, help="YAML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override master_seed (u64)")
        sp.add_argument("--out", type=str, default=None, help="output directory")
        sp.add_argument("--workers", type=int, default=None, help="worker processes")
    rp = sub.add_parser("replay", help="re-run from a manifest and compare artifacts")
    rp.add_argument("manifest", type=Path)
    rp.add_argument("--out", type=str, default=None, help="keep replayed artifacts here")
    rp.add_argument("--workers", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "replay":
        return replay(args.manifest, args.out, args.workers)
    if not args.config.exists():
        print(f"{args.config}: config file not found", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.seed, args.out, args.workers, args.command)
        code, out = execute(cfg, args.config)
    except ConfigError as exc:
        print(_diagnostic(args.config, exc, _line_marks(args.config)), file=sys.stderr)
        return EXIT_CONFIG
    print(f"{cfg.experiment}: artifacts in {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
