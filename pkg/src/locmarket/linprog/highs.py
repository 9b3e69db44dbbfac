"""HiGHS backend through :mod:`scipy.optimize`, used for models too large
for the dense in-house simplex."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.optimize import LinearConstraint, linprog, milp

from .model import LpModel, LpSolution, Sense, SolverConfig, Status

_LINPROG_STATUS = {0: Status.OPTIMAL, 1: Status.LIMIT, 2: Status.INFEASIBLE, 3: Status.UNBOUNDED}


def _bounds(lb, ub):
    return [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b)
            for a, b in zip(lb, ub)]


def solve_lp(model: LpModel, config: SolverConfig) -> LpSolution:
    sign = -1.0 if model.sense is Sense.MAXIMIZE else 1.0
    A = model.A.tocsr()
    lo, hi = model.row_lb, model.row_ub
    eq = np.flatnonzero(lo == hi)
    up = np.flatnonzero((lo != hi) & np.isfinite(hi))
    dn = np.flatnonzero((lo != hi) & np.isfinite(lo))
    A_ub = sp.vstack([A[up], -A[dn]]).tocsr() if (up.size + dn.size) else None
    b_ub = np.concatenate([hi[up], -lo[dn]]) if A_ub is not None else None
    A_eq = A[eq] if eq.size else None
    b_eq = lo[eq] if eq.size else None
    res = linprog(
        sign * model.obj, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
        bounds=_bounds(model.lb, model.ub), method="highs",
        options={"primal_feasibility_tolerance": config.feas_tol,
                 "dual_feasibility_tolerance": min(config.opt_tol, 1e-7),
                 "maxiter": config.max_iter, "presolve": True},
    )
    status = _LINPROG_STATUS.get(res.status)
    if status is None:
        status = Status.LIMIT
    if status is not Status.OPTIMAL:
        return LpSolution(status, None if res.x is None else np.asarray(res.x), np.nan,
                          iterations=int(getattr(res, "nit", 0)), message=str(res.message))
    x = np.asarray(res.x, dtype=float)
    duals = np.zeros(model.n_rows)
    if eq.size:
        duals[eq] = res.eqlin.marginals
    if up.size:
        duals[up] += res.ineqlin.marginals[:up.size]
    if dn.size:
        duals[dn] -= res.ineqlin.marginals[up.size:]
    reduced = np.asarray(res.lower.marginals) + np.asarray(res.upper.marginals)
    return LpSolution(Status.OPTIMAL, x, model.objective_value(x), duals=sign * duals,
                      reduced_costs=sign * reduced, iterations=int(res.nit))


def solve_milp(model: LpModel, config: SolverConfig) -> LpSolution:
    sign = -1.0 if model.sense is Sense.MAXIMIZE else 1.0
    constraints = []
    if model.n_rows:
        constraints.append(LinearConstraint(model.A, model.row_lb, model.row_ub))
    def run(presolve: bool):
        return milp(
            sign * model.obj, integrality=model.binary.astype(int),
            bounds=(model.lb, model.ub), constraints=constraints,
            options={"node_limit": config.node_limit, "mip_rel_gap": 1e-9,
                     "presolve": presolve},
        )

    res = run(True)
    if res.status == 2:
        # HiGHS MIP presolve occasionally reports feasible models as
        # infeasible; confirm without it before trusting the verdict
        res = run(False)
    bound = None
    if getattr(res, "mip_dual_bound", None) is not None:
        bound = sign * float(res.mip_dual_bound) + model.offset
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    if res.status == 0:
        x = np.asarray(res.x, dtype=float)
        return LpSolution(Status.OPTIMAL, x, model.objective_value(x), bound=bound, nodes=nodes)
    if res.status == 2:
        return LpSolution(Status.INFEASIBLE, None, np.nan, nodes=nodes, message=str(res.message))
    if res.status == 3:
        return LpSolution(Status.UNBOUNDED, None, np.nan, nodes=nodes, message=str(res.message))
    x = None if res.x is None else np.asarray(res.x, dtype=float)
    obj = model.objective_value(x) if x is not None else np.nan
    return LpSolution(Status.LIMIT, x, obj, bound=bound, nodes=nodes, message=str(res.message))
