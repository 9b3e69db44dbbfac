"""LP and MILP solving for every other module in the package.

``solve_lp`` returns primal values, row duals and reduced costs. Duals are
sensitivities of the optimal objective (in the model's own sense) to the
active row bound, so for a maximisation problem a binding ``<=`` row has a
nonnegative dual.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import highs, simplex
from .bnb import branch_and_bound
from .model import (
    INF,
    LpBuilder,
    LpModel,
    LpSolution,
    ModelError,
    NumericalError,
    Sense,
    SolverConfig,
    Status,
)

__all__ = [
    "INF", "LpBuilder", "LpModel", "LpSolution", "ModelError", "NumericalError",
    "Sense", "SolverConfig", "Status", "solve_lp", "solve_milp", "fix_binaries",
    "duality_residual", "to_lp_text",
]

DEFAULT_CONFIG = SolverConfig()


def _use_simplex(model: LpModel, config: SolverConfig) -> bool:
    if config.backend == "auto":
        return model.n_vars + model.n_rows <= config.auto_size
    return config.backend == "simplex"


def solve_lp(model: LpModel, config: SolverConfig | None = None) -> LpSolution:
    """Solve a continuous model. Binary variables must be relaxed first."""
    config = config or DEFAULT_CONFIG
    if model.has_binaries:
        raise ModelError("solve_lp got binary variables; call model.relaxed() or fix_binaries()")
    if _use_simplex(model, config):
        return simplex.solve(model, config)
    return highs.solve_lp(model, config)


def solve_milp(model: LpModel, config: SolverConfig | None = None) -> LpSolution:
    """Solve to an integral optimum. Duals are not reported.

    Continuous values are polished by re-solving the LP with binaries pinned
    to their rounded values.
    """
    config = config or DEFAULT_CONFIG
    if not model.has_binaries:
        sol = solve_lp(model, config)
        sol.duals = sol.reduced_costs = None
        return sol
    if _use_simplex(model, config):
        sol = branch_and_bound(model, config, solve_lp)
    else:
        sol = highs.solve_milp(model, config)
    if sol.x is None or sol.status not in (Status.OPTIMAL, Status.LIMIT):
        return sol
    bins = model.binaries
    pattern = {model.var_names[j]: int(round(sol.x[j])) for j in bins}
    polished = solve_lp(fix_binaries(model, pattern), config)
    if polished.status is Status.OPTIMAL:
        sol.x = polished.x
        sol.objective = polished.objective
    sol.duals = sol.reduced_costs = None
    return sol


def fix_binaries(model: LpModel, values: Mapping[str, int] | Mapping[int, int]) -> LpModel:
    """Pin every binary to the given 0/1 value and return the resulting LP."""
    lb = np.array(model.lb)
    ub = np.array(model.ub)
    for j in model.binaries:
        name = model.var_names[j]
        if name in values:
            v = values[name]
        elif int(j) in values:
            v = values[int(j)]
        else:
            raise ModelError(f"no value given for binary {name!r}")
        if v not in (0, 1):
            raise ModelError(f"binary {name!r} must be fixed to 0 or 1, got {v!r}")
        lb[j] = ub[j] = float(v)
    return model.relaxed().with_bounds(lb, ub)


def duality_residual(model: LpModel, sol: LpSolution) -> float:
    """|primal objective - dual objective| for an optimal LP solution.

    The dual objective is assembled from row duals times the active row bound
    and reduced costs times the active variable bound.
    """
    if sol.duals is None or sol.reduced_costs is None:
        raise ModelError("solution carries no duals")
    x = sol.x
    act = model.A @ x
    dual_obj = model.offset
    for i, yi in enumerate(sol.duals):
        if yi == 0.0:
            continue
        lo, hi = model.row_lb[i], model.row_ub[i]
        bound = lo if abs(act[i] - lo) <= abs(act[i] - hi) else hi
        dual_obj += yi * bound
    for j, dj in enumerate(sol.reduced_costs):
        if dj == 0.0:
            continue
        lo, hi = model.lb[j], model.ub[j]
        bound = lo if abs(x[j] - lo) <= abs(x[j] - hi) else hi
        dual_obj += dj * bound
    return abs(sol.objective - dual_obj)


def _fmt(v: float) -> str:
    if v == INF:
        return "+inf"
    if v == -INF:
        return "-inf"
    return repr(float(v))


def to_lp_text(model: LpModel) -> str:
    """Render the model in CPLEX LP format for cross-checking elsewhere."""
    def clean(name: str) -> str:
        return "".join(ch if ch.isalnum() or ch in "_.[]" else "_" for ch in name)

    names = [clean(n) for n in model.var_names]
    out = ["\\ generated by locmarket", "Maximize" if model.sense is Sense.MAXIMIZE else "Minimize"]
    def linear(pairs) -> str:
        text = ""
        for j, v in pairs:
            text += f" {'-' if v < 0 else '+'} {_fmt(abs(v))} {names[j]}"
        return text.lstrip(" +") or f"0 {names[0]}"

    out.append(" obj: " + linear((j, c) for j, c in enumerate(model.obj) if c != 0.0))
    out.append("Subject To")
    A = model.A.tocsr()
    for i, rname in enumerate(model.row_names):
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        vals = A.data[A.indptr[i]:A.indptr[i + 1]]
        expr = linear(zip(cols, vals))
        lo, hi = model.row_lb[i], model.row_ub[i]
        tag = clean(rname)
        if lo == hi:
            out.append(f" {tag}: {expr} = {_fmt(lo)}")
        else:
            if np.isfinite(lo):
                out.append(f" {tag}_lo: {expr} >= {_fmt(lo)}")
            if np.isfinite(hi):
                out.append(f" {tag}_hi: {expr} <= {_fmt(hi)}")
    out.append("Bounds")
    for j, n in enumerate(names):
        out.append(f" {_fmt(model.lb[j])} <= {n} <= {_fmt(model.ub[j])}")
    if model.has_binaries:
        out.append("Binaries")
        out.append(" " + " ".join(names[j] for j in model.binaries))
    out.append("End")
    return "\n".join(out) + "\n"
