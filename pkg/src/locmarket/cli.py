"""Command-line front end.

Exit status is 0 on success, 1 for invalid input (bad arguments, unknown
fixture, malformed or invalid instance) and 2 when a solve fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Sequence, TextIO

from .dcopf import Dispatch, DispatchInfeasible, SolverFailure, solve_dispatch
from .linprog import NumericalError, SolverConfig
from .market import (
    FIXTURE_NAMES,
    InstanceParseError,
    InvalidInstanceError,
    MarketInstance,
    fixture,
    load_instance,
    validate,
)
from .metrics import DEFAULT_TOL, compute_locs
from .pricing import PricingError, PricingResult, PricingRule, pareto_sweep, price

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2

COMPARE_RULES = (
    PricingRule("CH"), PricingRule("IP"), PricingRule("MinMWP"), PricingRule("Join"),
    PricingRule.scalarized(1, 1, 1),
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="locmarket", description="Market clearing, dual pricing and LOC audits.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, rule=False, grid=False):
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--fixture", choices=None, metavar="NAME",
                         help=f"built-in instance: {', '.join(FIXTURE_NAMES)}")
        src.add_argument("--instance", metavar="PATH", help="JSON instance file")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out", metavar="PATH", help="write to a file instead of stdout")
        p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="LOC and congestion tolerance")
        if rule:
            p.add_argument("--rule", required=True, choices=("ch", "ip", "minmwp", "join", "scalarize"))
            p.add_argument("--weights", metavar="a,b,c", help="CH,IP,MinMWP weights for scalarize")
        if grid:
            p.add_argument("--grid", type=int, required=True, metavar="N")

    common(sub.add_parser("validate", help="check an instance"))
    common(sub.add_parser("dispatch", help="solve the clearing problem"))
    common(sub.add_parser("price", help="price with one rule and audit the result"), rule=True)
    common(sub.add_parser("compare", help="all five rules side by side"))
    common(sub.add_parser("pareto", help="scalarization sweep over the weight simplex"), grid=True)
    common(sub.add_parser("heatmap", help="node x period price matrix"), rule=True)
    return parser


def _load(args) -> MarketInstance:
    if args.fixture is not None:
        try:
            return fixture(args.fixture)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
    try:
        text = Path(args.instance).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read instance: {exc}") from None
    return load_instance(text)


def _rule(args) -> PricingRule:
    weights = None
    if args.weights is not None:
        if args.rule != "scalarize":
            raise UsageError("--weights is only valid with --rule scalarize")
        try:
            weights = tuple(float(w) for w in args.weights.split(","))
        except ValueError:
            raise UsageError(f"cannot parse weights {args.weights!r}") from None
    elif args.rule == "scalarize":
        raise UsageError("--rule scalarize needs --weights a,b,c")
    try:
        return PricingRule.parse(args.rule, weights)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def emit_heatmap(result: PricingResult, instance: MarketInstance) -> str:
    """Nodal prices as CSV: one row per node, one column per period."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node"] + [str(t + 1) for t in range(instance.periods)])
    for i, v in enumerate(instance.nodes):
        w.writerow([v] + [f"{round(result.prices.p[i, t], 2) + 0.0:.2f}" for t in range(instance.periods)])
    return buf.getvalue()


def _csv(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _money(v: float) -> str:
    return f"{round(v, 2) + 0.0:.2f}"


def dispatch_csv(d: Dispatch) -> str:
    rows = []
    for i, bid in enumerate(d.buyer_ids):
        rows += [["buyer", bid, t + 1, f"{d.x[i, t]:.6g}", ""] for t in range(d.periods)]
    for i, sid in enumerate(d.seller_ids):
        rows += [["seller", sid, t + 1, f"{d.y[i, t]:.6g}", int(d.u[i, t])] for t in range(d.periods)]
    for k, lid in enumerate(d.line_ids):
        rows += [["line", lid, t + 1, f"{d.f[k, t]:.6g}", ""] for t in range(d.periods)]
    return _csv(rows, ["kind", "id", "period", "quantity", "commitment"])


def compare_rows(instance: MarketInstance, dispatch: Dispatch, config: SolverConfig,
                 tol: float = DEFAULT_TOL) -> list[dict]:
    """LP objective and metrics totals for each of the five rules."""
    out = []
    for rule in COMPARE_RULES:
        res = price(instance, dispatch, rule, config)
        rep = compute_locs(instance, dispatch, res.prices, config, tol)
        out.append({
            "rule": rule.label,
            "objective": res.objective,
            "gloc": rep.gloc, "lloc": rep.lloc, "mwp": rep.mwp,
            "prices": res.prices.to_dict(instance)["nodal"],
            "flags": sorted({c.flag for c in rep.congestion if c.flag}),
        })
    return out


def _write(text: str, args, stdout: TextIO) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        stdout.write(text)
        if not text.endswith("\n"):
            stdout.write("\n")


def _execute(args, stdout: TextIO) -> int:
    instance = _load(args)
    diags = validate(instance)
    errs = [d for d in diags if d.level == "error"]
    if args.command == "validate":
        if args.format == "json":
            text = json.dumps({"errors": [str(d) for d in errs],
                               "warnings": [str(d) for d in diags if d.level == "warning"]}, indent=2)
        else:
            text = _csv([[d.level, d.path, d.message] for d in diags], ["level", "path", "message"])
        _write(text, args, stdout)
        return EXIT_INVALID if errs else EXIT_OK
    if errs:
        raise InvalidInstanceError(errs)

    config = SolverConfig()
    dispatch = solve_dispatch(instance, config)
    if args.command == "dispatch":
        _write(dispatch.to_json() if args.format == "json" else dispatch_csv(dispatch), args, stdout)
        return EXIT_OK

    if args.command in ("price", "heatmap"):
        rule = _rule(args)
        res = price(instance, dispatch, rule, config)
        if args.command == "heatmap":
            if args.format == "json":
                text = json.dumps({"nodes": list(instance.nodes), "periods": instance.periods,
                                   "prices": res.prices.p.tolist()}, indent=2)
            else:
                text = emit_heatmap(res, instance)
            _write(text, args, stdout)
            return EXIT_OK
        rep = compute_locs(instance, dispatch, res.prices, config, args.tol)
        if args.format == "json":
            text = json.dumps({"pricing": res.to_dict(instance), "report": rep.to_dict()}, indent=2)
        else:
            text = rep.to_csv()
        _write(text, args, stdout)
        return EXIT_OK

    if args.command == "compare":
        rows = compare_rows(instance, dispatch, config, args.tol)
        if args.format == "json":
            text = json.dumps({"instance": instance.name, "welfare": dispatch.welfare, "rules": rows}, indent=2)
        else:
            text = _csv([[r["rule"], _money(r["objective"]), _money(r["gloc"]), _money(r["lloc"]),
                          _money(r["mwp"]), ";".join(r["flags"])] for r in rows],
                        ["rule", "objective", "gloc", "lloc", "mwp", "flags"])
        _write(text, args, stdout)
        return EXIT_OK

    if args.command == "pareto":
        if args.grid < 1:
            raise UsageError("--grid must be a positive integer")
        points = pareto_sweep(instance, dispatch, args.grid, config)
        if args.format == "json":
            text = json.dumps([{"weights": list(pt.weights), "gloc": pt.gloc, "lloc": pt.lloc, "mwp": pt.mwp,
                                "objective": pt.objective, "error": pt.error} for pt in points], indent=2)
        else:
            text = _csv([[f"{w:.4g}" for w in pt.weights] + [_money(pt.gloc), _money(pt.lloc), _money(pt.mwp)]
                         for pt in points], ["wCH", "wIP", "wMWP", "gloc", "lloc", "mwp"])
        _write(text, args, stdout)
        return EXIT_OK
    raise UsageError(f"unknown command {args.command!r}")


def run(argv: Sequence[str], stdout: TextIO | None = None, stderr: TextIO | None = None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(list(argv))
        return _execute(args, stdout)
    except UsageError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_INVALID
    except InstanceParseError as exc:
        print(f"error: invalid instance document at {exc}", file=stderr)
        return EXIT_INVALID
    except InvalidInstanceError as exc:
        print(f"error: instance failed validation: {exc}", file=stderr)
        return EXIT_INVALID
    except DispatchInfeasible as exc:
        print(f"solver: {exc}", file=stderr)
        return EXIT_SOLVER
    except (SolverFailure, PricingError, NumericalError) as exc:
        print(f"solver: {exc}", file=stderr)
        return EXIT_SOLVER


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
