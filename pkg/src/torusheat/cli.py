"""Batch runner: every subcommand writes one table (CSV by default, or JSON).

Parameters come from flags and/or a JSON ``--config`` whose keys are the
flag names (``tol``, ``t``, ``metric``, ...); flags win over the file. The
first CSV line is a comment with the tool version and the SHA-256 of the
resolved parameters, so identical inputs give byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .asymptotics import (
    S4Series,
    form_factor_limits,
    large_t_terms,
    s4_heat_trace,
    s4_optimal_truncation,
    s4_spectral_sum,
    small_t_terms,
)
from .clifford import build_gammas
from .duhamel import form_factor_v, heat_trace_second_order
from .errors import CertificationError, SecularZeroModeError
from .fields import field_strength, load_field, load_gauge_field
from .lattice import (
    ConstantMetric,
    coth_trace,
    coth_trace_sum,
    lattice_count,
    poisson_dual,
    theta,
    theta_sum,
    weyl_prediction,
)
from .oracle import assemble_laplace, exact_heat_trace, spectrum
from .spectral_action import (
    CutoffFunction,
    action_asymptotics,
    dirac_heat_coefficients,
    large_p_form_factor,
    spectral_action_exact,
    universal_w_limit,
)

OUTPUT_DIR_ENV = "TORUSHEAT_OUTPUT_DIR"

EXIT_OK, EXIT_VALIDATION, EXIT_CERTIFICATION = 0, 2, 3

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_LIST = {"type": "array", "items": _POS, "minItems": 1}
_INT_LIST = {"type": "array", "items": {"type": "integer"}, "minItems": 1}
_METRIC = {"type": "array", "items": {"type": "array", "items": _NUM}, "minItems": 1}
_FIELD = {"type": ["object", "string"]}
_GAUGE = {"type": ["object", "array", "string"]}

_COMMON = {
    "dim": {"type": "integer", "minimum": 1},
    "metric": _METRIC,
    "tol": _POS,
    "out": {"type": "string"},
    "format": {"enum": ["csv", "json"]},
    "threads": {"type": "integer", "minimum": 1},
}

_SCHEMAS = {
    "theta": {"t": _POS_LIST, "method": {"enum": ["direct", "poisson", "auto"]}},
    "coth": {"t": _POS_LIST},
    "weyl": {"lam": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}},
    "formfactor": {"p": _INT_LIST, "t": _POS_LIST},
    "duhamel": {"t": _POS_LIST, "E": _FIELD, "omega": _GAUGE, "Q": {"type": "integer", "minimum": 0}},
    "asymptotics": {"t": _POS_LIST, "E": _FIELD, "omega": _GAUGE},
    "s4": {"kmax": {"type": "integer", "minimum": 0}, "t": _POS_LIST,
           "exact_rationals": {"type": "boolean"}},
    "action": {"Lambda": _POS_LIST, "A": _GAUGE,
               "f": {"enum": ["exponential", "indicator_unit"]},
               "Q": {"type": "integer", "minimum": 0}},
    "wfactor": {"p": _INT_LIST, "Lambda": _POS},
}

_DEFAULTS = {
    "theta": {"dim": 1, "t": [1.0], "tol": 1e-12, "method": "direct"},
    "coth": {"t": [2.0], "tol": 1e-14},
    "weyl": {"dim": 2, "lam": [100.0]},
    "formfactor": {"p": [1], "t": [0.01], "tol": 1e-13},
    "duhamel": {"dim": 1, "t": [1.0], "tol": 1e-10, "Q": 0},
    "asymptotics": {"dim": 1, "t": [0.001, 50.0], "tol": 1e-12},
    "s4": {"kmax": 5, "exact_rationals": False},
    "action": {"dim": 2, "Lambda": [5.0], "f": "exponential", "tol": 1e-10},
    "wfactor": {"dim": 2, "p": [50, 60, 70, 80, 90, 100], "Lambda": 1.0, "tol": 1e-10},
}


def _schema(command: str) -> dict:
    return {"type": "object", "properties": {**_COMMON, **_SCHEMAS[command]},
            "additionalProperties": False}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="torusheat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"torusheat {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        c = sub.add_parser(name, help=help_text)
        c.add_argument("--config", help="JSON file with parameters (keys = flag names)")
        c.add_argument("--out", help=f"output file; default stdout or ${OUTPUT_DIR_ENV}/<command>.<fmt>")
        c.add_argument("--format", choices=["csv", "json"])
        c.add_argument("--threads", type=int, help="worker bound; results do not depend on it")
        return c

    def metric_flags(c):
        c.add_argument("--dim", type=int, help="torus dimension (identity metric)")
        c.add_argument("--metric", type=json.loads, help="inverse metric rows as JSON")

    c = command("theta", "free heat trace sum_q exp(-t qᵀGq)")
    metric_flags(c)
    c.add_argument("--t", type=float, nargs="+")
    c.add_argument("--tol", type=float)
    c.add_argument("--method", choices=["direct", "poisson", "auto"])

    c = command("coth", "circle trace of exp(-t|∂|) against coth(t/2)")
    c.add_argument("--t", type=float, nargs="+")
    c.add_argument("--tol", type=float)

    c = command("weyl", "lattice eigenvalue count against the Weyl law")
    metric_flags(c)
    c.add_argument("--lam", type=float, nargs="+")

    c = command("formfactor", "circle form factor v(p,t) and its limit laws")
    c.add_argument("--p", type=int, nargs="+")
    c.add_argument("--t", type=float, nargs="+")
    c.add_argument("--tol", type=float)

    c = command("duhamel", "second-order heat trace, optionally against the oracle")
    metric_flags(c)
    c.add_argument("--t", type=float, nargs="+")
    c.add_argument("--tol", type=float)
    c.add_argument("--E", help="endomorphism field (JSON file)")
    c.add_argument("--omega", help="connection (JSON file)")
    c.add_argument("--Q", type=int, help="oracle cutoff; 0 skips the oracle")

    c = command("asymptotics", "small-t and large-t formulas against the Duhamel trace")
    metric_flags(c)
    c.add_argument("--t", type=float, nargs="+")
    c.add_argument("--tol", type=float)
    c.add_argument("--E", help="endomorphism field (JSON file)")
    c.add_argument("--omega", help="connection (JSON file)")

    c = command("s4", "S⁴ heat coefficients, spectral sum and optimal truncation")
    c.add_argument("--kmax", type=int)
    c.add_argument("--t", type=float, nargs="+", help="emit the trace table at these t")
    c.add_argument("--exact-rationals", dest="exact_rationals", action="store_true", default=None)

    c = command("action", "exact spectral action against its large-Λ series")
    metric_flags(c)
    c.add_argument("--Lambda", type=float, nargs="+")
    c.add_argument("--A", help="gauge field (JSON file)")
    c.add_argument("--f", choices=["exponential", "indicator_unit"])
    c.add_argument("--Q", type=int)
    c.add_argument("--tol", type=float)

    c = command("wfactor", "large-momentum form factor w(p) of the Dirac spectral action")
    metric_flags(c)
    c.add_argument("--p", type=int, nargs="+")
    c.add_argument("--Lambda", type=float)
    c.add_argument("--tol", type=float)
    return p


def _resolve(args: argparse.Namespace) -> dict:
    command = args.command
    params: dict = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        jsonschema.validate(cfg, _schema(command))
        params.update(cfg)
    for key in _schema(command)["properties"]:
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    jsonschema.validate(params, _schema(command))
    merged = dict(_DEFAULTS[command])
    if "metric" in params:
        merged.pop("dim", None)
    merged.update(params)
    return merged


def _metric(params: dict) -> ConstantMetric:
    if params.get("metric") is not None:
        m = ConstantMetric(params["metric"])
        if params.get("dim", m.dim) != m.dim:
            raise ValueError(f"dim={params['dim']} contradicts a {m.dim}-dimensional metric")
        return m
    return ConstantMetric.identity(int(params.get("dim", 1)))


def _field(params, key, dim, gauge=False):
    src = params.get(key)
    if src is None:
        return None
    f = load_gauge_field(src) if gauge else load_field(src, "hermitian")
    if f.dim != dim:
        raise ValueError(f"{key} has dimension {f.dim}, metric has {dim}")
    return f


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, str, Fraction)):
        return str(x)
    return repr(float(x))


def _config_hash(command: str, params: dict) -> str:
    payload = {k: v for k, v in params.items() if k not in ("out", "format", "threads")}
    text = json.dumps({"command": command, "params": payload}, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _render(command, params, columns, rows) -> str:
    digest = _config_hash(command, params)
    if params.get("format", "csv") == "json":
        doc = {"tool": "torusheat", "version": __version__, "config_sha256": digest,
               "columns": columns,
               "rows": [[None if v is None else (str(v) if isinstance(v, Fraction) else v)
                         for v in row] for row in rows]}
        return json.dumps(doc, indent=1) + "\n"
    buf = io.StringIO()
    buf.write(f"# torusheat {__version__} config={digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_num(v) for v in row])
    return buf.getvalue()


def _run_theta(p):
    metric = _metric(p)
    fn = {"direct": theta_sum, "poisson": poisson_dual, "auto": theta}[p["method"]]
    rows = []
    for t in p["t"]:
        r = fn(metric, t, tol=p["tol"])
        rows.append([t, r.value, r.tail_bound, r.cutoff_used])
    return ["t", "value", "tail_bound", "Q"], rows


def _run_coth(p):
    rows = []
    for t in p["t"]:
        closed, series = coth_trace(t), coth_trace_sum(t, p["tol"])
        rows.append([t, closed, series, abs(closed - series)])
    return ["t", "closed_form", "series_sum", "abs_diff"], rows


def _run_weyl(p):
    metric = _metric(p)
    rows = []
    for lam in p["lam"]:
        n = lattice_count(metric, lam)
        w = weyl_prediction(metric, lam)
        rows.append([lam, n, w, n / w if w > 0 else None])
    return ["lambda", "count", "weyl", "ratio"], rows


def _run_formfactor(p):
    rows = []
    for t in p["t"]:
        for q in p["p"]:
            v = form_factor_v(q, t, p["tol"])
            lim = form_factor_limits(q, t, ("bv",) if q == 0 else ("bv", "large_t", "large_p"))
            rows.append([q, t, v, lim.bv, lim.large_t, lim.large_p])
    return ["p", "t", "v", "bv", "large_t", "large_p"], rows


def _run_duhamel(p):
    metric = _metric(p)
    E = _field(p, "E", metric.dim)
    om = _field(p, "omega", metric.dim, gauge=True)
    rows = []
    spec = None
    if p["Q"]:
        spec = spectrum(assemble_laplace(metric, E, om, p["Q"]))
    for t in p["t"]:
        b = heat_trace_second_order(metric, E, om, t, p["tol"], workers=p.get("threads"))
        exact = exact_heat_trace(spec, t) if spec is not None else None
        rows.append([t, b.K0, b.K1, b.K2_E, b.K2_omega, b.total, b.error_bound, exact,
                     None if exact is None else exact - b.total])
    return ["t", "K0", "K1", "K2_E", "K2_omega", "total", "error_bound", "oracle",
            "residual"], rows


def _run_asymptotics(p):
    metric = _metric(p)
    E = _field(p, "E", metric.dim)
    om = _field(p, "omega", metric.dim, gauge=True)
    F = field_strength(om) if om is not None else None
    rows = []
    for t in p["t"]:
        b = heat_trace_second_order(metric, E, om, t, p["tol"], workers=p.get("threads"))
        small = small_t_terms(metric, E, F, t).total
        try:
            large = large_t_terms(metric, E, F, t).total
        except SecularZeroModeError:
            large = None
        rows.append([t, b.total - b.K0, small, large])
    return ["t", "duhamel_minus_free", "small_t", "large_t"], rows


def _run_s4(p):
    if p.get("t"):
        rows = []
        for t in p["t"]:
            opt = s4_optimal_truncation(t)
            rows.append([t, s4_spectral_sum(t), s4_heat_trace(t, p["kmax"]), opt.k_stop,
                         opt.value, opt.error_estimate])
        return ["t", "spectral_sum", "series", "optimal_k", "optimal_value",
                "optimal_error"], rows
    series = S4Series.build(p["kmax"])
    rows = []
    for k, a in enumerate(series.coefficients):
        bound = series.lower_bound(k)
        if p["exact_rationals"]:
            rows.append([k, a, bound])
        else:
            rows.append([k, float(a), float(bound)])
    return ["k", "a_k", "lower_bound"], rows


def _run_action(p):
    metric = _metric(p)
    A = _field(p, "A", metric.dim, gauge=True)
    gam = build_gammas(metric)
    f = CutoffFunction(p["f"])
    series = action_asymptotics(dirac_heat_coefficients(metric, A, gam), f)
    rows = []
    for lam in p["Lambda"]:
        exact = spectral_action_exact(metric, A, gam, f, lam, p.get("Q"), p["tol"])
        approx = series.evaluate(lam)
        rows.append([lam, exact, approx, exact / approx if approx else None])
    return ["Lambda", "exact", "asymptotic", "ratio"], rows


def _run_wfactor(p):
    metric = _metric(p)
    gam = build_gammas(metric)
    rows = []
    for r in large_p_form_factor(metric, gam, p["p"], p["Lambda"], rel_tol=p["tol"]):
        k = np.zeros(metric.dim)
        k[0] = r.p
        p2 = float(metric.norm2(k))
        rows.append([r.p, r.w, r.p4w, universal_w_limit(metric, gam.spinor_rank, p2, p["Lambda"])
                     * p2 * p2])
    return ["p", "w", "p4w", "universal_p4w"], rows


_RUNNERS = {
    "theta": _run_theta, "coth": _run_coth, "weyl": _run_weyl,
    "formfactor": _run_formfactor, "duhamel": _run_duhamel,
    "asymptotics": _run_asymptotics, "s4": _run_s4, "action": _run_action,
    "wfactor": _run_wfactor,
}


def _write(command, params, text):
    out = params.get("out")
    if out is None and os.environ.get(OUTPUT_DIR_ENV):
        out = str(Path(os.environ[OUTPUT_DIR_ENV]) / f"{command}.{params.get('format', 'csv')}")
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        fh.write(text)


def run(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        params = _resolve(args)
        columns, rows = _RUNNERS[args.command](params)
        _write(args.command, params, _render(args.command, params, columns, rows))
    except CertificationError as exc:
        print(f"torusheat: certification failed: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATION
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        print(f"torusheat: invalid configuration at {where}: {exc.message}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"torusheat: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))
