"""``conecover`` command-line interface.

One subcommand per capability; each writes a single JSON or TSV document to
standard output. Exit status 0 on success, 1 on domain errors (the message
is copied into the report's ``error`` field), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .branching import couple_check
from .errors import ConeCoverError, NotTransientEnough
from .generating import TSV_HEADER, analyze, classify_analytic, q_loop, solve_F
from .generators import GENERATORS, make_generator
from .graph import BaseGraph, load_spec, vertex_to_str
from .spectral import (
    classify_rwdcre,
    count_levels,
    cw_certify,
    ergodicity_verdict,
    halfline_test_function,
    truncated_pf_details,
)
from .walk import empirical_entropy_speed, empirical_recurrence, simulate

SUBCOMMANDS = ("validate", "classify", "growth", "simulate", "couple", "analyze", "rwdcre", "sweep")
DEFAULT_TOL = 1e-12


# ---------------------------------------------------------------------------
# JSON with 17 significant digits


def _num(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return "null"
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON; floats carry 17 significant digits, non-finite
    floats become ``null``."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(_key(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    return json.dumps(str(obj))


def _key(k) -> str:
    return k if isinstance(k, str) else vertex_to_str(k)


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text: str) -> int:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    if not v.is_integer() or v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(v)


def _nonneg_int(text: str) -> int:
    if text.strip() in ("0", "0.0"):
        return 0
    return _positive_int(text)


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text!r}")
    return v


def _tol(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a tolerance in (0, 1), got {text!r}")
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"expected a tolerance in (0, 1), got {text!r}")
    return v


def _param(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected K=V, got {text!r}")
    k, v = text.split("=", 1)
    if not k:
        raise argparse.ArgumentTypeError(f"expected K=V, got {text!r}")
    return k, v


def _common(p: argparse.ArgumentParser, runs=None, horizon=None):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", metavar="PATH", help="JSON base-graph spec")
    src.add_argument("--generator", choices=GENERATORS, help="built-in generator")
    p.add_argument("--params", type=_param, nargs="+", action="extend", default=[], metavar="K=V",
                   help="generator parameters")
    p.add_argument("--seed", type=_seed, default=0, help="unsigned 64-bit seed (default 0)")
    p.add_argument("--format", choices=("json", "tsv"), default="json")
    p.add_argument("--strict", action="store_true", help="treat spec warnings as errors")
    p.add_argument("--tol", type=_tol, default=DEFAULT_TOL, help=f"numerical tolerance (default {DEFAULT_TOL})")
    if runs is not None:
        p.add_argument("--runs", type=_nonneg_int, default=runs, help=f"Monte Carlo runs (default {runs})")
    if horizon is not None:
        p.add_argument("--horizon", type=_positive_int, default=horizon, help=f"steps per run (default {horizon})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conecover", description="Random walks on directed covers of graphs.")
    parser.add_argument("--version", action="version", version=f"conecover {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a spec and summarise it")
    _common(p)

    p = sub.add_parser("classify", help="spectral and analytic recurrence verdict with escape evidence")
    _common(p, runs=0, horizon=10_000)
    p.add_argument("--radius", type=_positive_int, default=50)

    p = sub.add_parser("growth", help="exact level sizes of the cover")
    _common(p)
    p.add_argument("--levels", type=_positive_int, default=32)

    p = sub.add_parser("simulate", help="Monte Carlo rate of escape, entropy and returns")
    _common(p, runs=1000, horizon=10_000)

    p = sub.add_parser("couple", help="branching extinction vs. loop-visit frequency")
    _common(p, runs=10_000, horizon=10_000)
    p.add_argument("--cap", type=_positive_int, default=1000, help="population cap (default 1000)")

    p = sub.add_parser("analyze", help="generating-function analysis")
    _common(p)
    p.add_argument("--radius", type=_positive_int, default=None, help="truncation radius for infinite graphs")

    p = sub.add_parser("rwdcre", help="classify the walk in a random environment on Z")
    p.add_argument("--params", type=_param, nargs="+", action="extend", default=[], metavar="K=V",
                   help="omega_support, omega_weights, nu_support, nu_weights")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--runs", type=_positive_int, default=200, help="Lyapunov trials (default 200)")
    p.add_argument("--horizon", type=_positive_int, default=2000, help="product length (default 2000)")
    p.add_argument("--format", choices=("json", "tsv"), default="json")

    p = sub.add_parser("sweep", help="verdicts and speeds over a parameter grid")
    p.add_argument("--generator", choices=GENERATORS, required=True)
    p.add_argument("--params", type=_param, nargs="+", action="extend", default=[], metavar="K=V",
                   help="fixed parameters")
    p.add_argument("--grid", type=_param, action="append", default=[], metavar="K=START:STOP:STEP",
                   help="grid axis (inclusive range or comma list); at most two")
    p.add_argument("--mode", choices=("analyze", "classify"), default="analyze")
    p.add_argument("--radius", type=_positive_int, default=50)
    p.add_argument("--tol", type=_tol, default=DEFAULT_TOL)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--format", choices=("json", "tsv"), default="tsv")
    return parser


def _graph(args) -> BaseGraph:
    if getattr(args, "spec", None):
        return load_spec(args.spec, strict=args.strict)
    return make_generator(args.generator, dict(args.params))


def _envelope(args, g: BaseGraph | None, tolerances: dict) -> dict:
    return {
        "tool": "conecover",
        "version": __version__,
        "command": args.command,
        "spec_hash": g.spec_hash() if g is not None else None,
        "source": getattr(args, "spec", None) or getattr(args, "generator", None),
        "params": dict(getattr(args, "params", [])),
        "seed": args.seed,
        "tolerances": tolerances,
    }


def _tsv_header(report: dict) -> str:
    keys = ("tool", "version", "command", "spec_hash", "seed")
    head = " ".join(f"{k}={report[k]}" for k in keys)
    tol = " ".join(f"{k}={_num(v) if isinstance(v, float) else v}" for k, v in report["tolerances"].items())
    return f"# {head} {tol}\n"


# ---------------------------------------------------------------------------
# subcommands: each returns (result dict, tsv body)


def _kv_tsv(d: dict) -> str:
    lines = ["key\tvalue"]
    for k, v in d.items():
        if isinstance(v, (dict, list, tuple)):
            v = json.dumps(json.loads(dumps(v, indent=0)), separators=(",", ":"))
        elif isinstance(v, float):
            v = _num(v)
        lines.append(f"{k}\t{v}")
    return "\n".join(lines) + "\n"


def cmd_validate(args, g):
    res = {
        "valid": True,
        "name": g.name,
        "finite": g.finite,
        "root": vertex_to_str(g.root),
        "n_vertices": len(g.vertices) if g.finite else None,
        "warnings": list(getattr(g, "warnings", [])),
        "description": g.describe(),
    }
    return res, _kv_tsv(res)


def _test_function(g: BaseGraph, radius: int):
    """Known positive test function and level, else ``f = 1`` with the
    smallest row sum on the ball."""
    if g.name == "halfline_critical":
        return "i/(i+1)", halfline_test_function, 1.0
    lam = min(sum(x for _, x in g.m_row(i)) for i in g.ball(radius))
    return "1", lambda i: 1.0, lam


def cmd_classify(args, g):
    est, verts = truncated_pf_details(g, "M", args.radius, tol=max(args.tol, 1e-10))
    fname, f, lam = _test_function(g, args.radius)
    cw = cw_certify(g, f, lam, args.radius)
    res = {
        "rho_lower": est.value,
        "pf_bracket": [est.lower, est.upper],
        "radius": args.radius,
        "n_ball": len(verts),
        "cw_certificate": dict(cw.to_dict(), test_function=fname),
        "ergodicity": ergodicity_verdict(g, args.radius, tol=max(args.tol, 1e-10)).to_dict(),
    }
    if g.finite:
        sol = solve_F(g, tol=min(args.tol, 1e-14))
        cls = classify_analytic(g, sol)
        res["analytic"] = {"verdict": cls.verdict, "U_root": cls.U_root, "q_loop": cls.q_loop, "lambda_M": cls.spectral_lambda,
                           "note": cls.spectral_note}
        verdict = cls.verdict
        if verdict == "recurrent_or_critical" and cls.spectral_lambda is not None:
            verdict = "recurrent" if cls.spectral_lambda < 1 - 1e-9 else "critical"
    elif est.value > 1 + 1e-9:
        verdict = "transient"
    else:
        verdict = "inconclusive"
    res["verdict"] = verdict
    res["verdict_basis"] = (
        "analytic first-passage probabilities" if g.finite
        else "truncated Perron value > 1 implies transience" if verdict == "transient"
        else "no spectral decision on a truncation"
    )
    if args.runs > 0:
        res["escape_evidence"] = empirical_recurrence(g, args.horizon, args.runs, args.seed)
        res["escape_evidence"].pop("returns_per_run", None)
    flat = {k: v for k, v in res.items() if not isinstance(v, dict)}
    flat["cw_success"] = cw.success
    flat["cw_lambda"] = cw.lam
    if "escape_evidence" in res:
        ev = res["escape_evidence"]
        flat["late_escape_fraction"] = ev["late_escape_fraction"]
        flat["returns_growth_exponent"] = ev["returns_growth_exponent"]
    return res, _kv_tsv(flat)


def cmd_growth(args, g):
    lc = count_levels(g, args.levels)
    res = {"levels": args.levels, "counts": lc.counts, "roots": lc.roots, "complete": lc.complete}
    return res, lc.to_tsv()


def cmd_simulate(args, g):
    if args.runs <= 1:
        run = simulate(g, args.horizon, args.seed)
        return run.summary(), run.to_tsv()
    rec = empirical_recurrence(g, args.horizon, args.runs, args.seed)
    rec.pop("returns_per_run", None)
    res = {"recurrence": rec}
    q = None
    if g.finite:
        sol = analyze(g, tol=args.tol)
        if sol.Q is not None:
            q = sol.q_map()
            res["analytic"] = {"ell0": sol.ell0, "h": sol.h}
    try:
        res["speed_entropy"] = empirical_entropy_speed(g, args.runs, args.horizon, args.seed, q=q)
    except NotTransientEnough as exc:
        res["speed_entropy"] = {"skipped": str(exc)}
    flat = {f"recurrence.{k}": v for k, v in rec.items() if not isinstance(v, (list, dict))}
    se = res["speed_entropy"]
    flat.update({f"speed_entropy.{k}": v for k, v in se.items() if not isinstance(v, dict)})
    return res, _kv_tsv(flat)


def cmd_couple(args, g):
    res = couple_check(g, trials=args.runs, cap=args.cap, horizon=args.horizon, seed=args.seed)
    if g.finite:
        res["q_loop_analytic"] = q_loop(g, solve_F(g, tol=min(args.tol, 1e-14)))
    return res, _kv_tsv(res)


def cmd_analyze(args, g):
    sol = analyze(g, tol=args.tol, truncation_radius=args.radius)
    spec_id = args.spec or args.generator
    return sol.to_dict(), TSV_HEADER + "\n" + sol.tsv_row(spec_id) + "\n"


def _rwdcre_inputs(params: dict):
    from .generators import _as_list

    def get(name, default):
        return _as_list(params.get(name, default))

    return (get("omega_support", "0.5"), get("omega_weights", "1")), (get("nu_support", "0.4"), get("nu_weights", "1"))


def cmd_rwdcre(args, g):
    omega, nu = _rwdcre_inputs(dict(args.params))
    v = classify_rwdcre(omega, nu, n=args.horizon, trials=args.runs, seed=args.seed)
    res = v.to_dict()
    res["omega"] = {"support": omega[0], "weights": omega[1]}
    res["nu"] = {"support": nu[0], "weights": nu[1]}
    return res, _kv_tsv(res)


# sweep


def parse_axis(name: str, text: str) -> list[float]:
    """``START:STOP:STEP`` (inclusive) or a comma list; empty text gives an
    empty axis."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"--grid {name}: expected START:STOP:STEP")
        a, b, s = (float(x) for x in parts)
        if s <= 0:
            raise ValueError(f"--grid {name}: step must be positive")
        n = int(math.floor((b - a) / s + 1e-9)) + 1
        return [round(a + k * s, 12) for k in range(max(n, 0))]
    return [float(x) for x in text.split(",") if x.strip()]


SWEEP_COLUMNS = ("verdict", "q_loop", "ell0", "h", "rho_lower", "error")


def _sweep_point(args, params: dict) -> dict:
    try:
        g = make_generator(args.generator, params)
        if args.mode == "analyze" and g.finite:
            sol = analyze(g, tol=args.tol)
            return {"verdict": sol.verdict, "q_loop": sol.q_loop, "ell0": sol.ell0, "h": sol.h,
                    "rho_lower": sol.spectral_lambda}
        est, _ = truncated_pf_details(g, "M", args.radius, tol=max(args.tol, 1e-10))
        verdict = "transient" if est.value > 1 + 1e-9 else (
            "recurrent" if g.finite and est.value < 1 - 1e-9 else "inconclusive")
        return {"verdict": verdict, "rho_lower": est.value}
    except ConeCoverError as exc:
        return {"verdict": "error", "error": str(exc)}


def cmd_sweep(args):
    if len(args.grid) > 2:
        raise _Usage("--grid: at most two axes")
    axes = [(k, parse_axis(k, v)) for k, v in args.grid]
    names = [k for k, _ in axes]
    points: list[tuple] = [()]
    for _, vals in axes:
        points = [p + (v,) for p in points for v in vals]
    if not axes or any(len(v) == 0 for _, v in axes):
        points = []
    fixed = dict(args.params)
    rows = []
    prev = None
    flipped = False
    for pt in sorted(points):
        params = dict(fixed, **{k: repr(v) for k, v in zip(names, pt)})
        row = dict(zip(names, pt))
        row.update(_sweep_point(args, params))
        mark = 0
        if prev is not None and row["verdict"] != prev and not flipped:
            mark, flipped = 1, True
        prev = row["verdict"]
        row["transition"] = mark
        rows.append(row)
    cols = names + list(SWEEP_COLUMNS) + ["transition"]
    lines = ["\t".join(cols)]
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append("" if v is None else _num(v) if isinstance(v, float) else str(v))
        lines.append("\t".join(cells))
    return {"axes": names, "mode": args.mode, "rows": rows}, "\n".join(lines) + "\n"


class _Usage(Exception):
    pass


COMMANDS = {
    "validate": cmd_validate,
    "classify": cmd_classify,
    "growth": cmd_growth,
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "analyze": cmd_analyze,
    "rwdcre": cmd_rwdcre,
}


def _tolerances(args) -> dict:
    tol = {}
    for k in ("tol", "radius", "levels", "runs", "horizon", "cap"):
        if hasattr(args, k):
            tol[k] = getattr(args, k)
    return tol


def dispatch(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    tolerances = _tolerances(args)
    g = None
    report = None
    try:
        if args.command == "sweep":
            report = _envelope(args, None, tolerances)
            try:
                result, tsv = cmd_sweep(args)
            except (_Usage, ValueError) as exc:
                parser.error(str(exc))
        elif args.command == "rwdcre":
            report = _envelope(args, None, tolerances)
            result, tsv = cmd_rwdcre(args, None)
        else:
            g = _graph(args)
            report = _envelope(args, g, tolerances)
            result, tsv = COMMANDS[args.command](args, g)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConeCoverError, ValueError, OSError, json.JSONDecodeError) as exc:
        report = report or _envelope(args, g, tolerances)
        report["error"] = str(exc)
        print(f"conecover: error: {exc}", file=err)
        out.write(_tsv_header(report) + f"error\t{exc}\n" if args.format == "tsv" else dumps(report) + "\n")
        return 1
    if args.format == "tsv":
        out.write(_tsv_header(report) + tsv)
    else:
        report["result"] = result
        out.write(dumps(report) + "\n")
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
