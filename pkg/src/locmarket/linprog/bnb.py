"""Best-bound branch-and-bound over binary variables."""

from __future__ import annotations

import heapq
import itertools
from typing import Callable

import numpy as np

from .model import LpModel, LpSolution, Sense, SolverConfig, Status

LpSolver = Callable[[LpModel, SolverConfig], LpSolution]


def branch_and_bound(model: LpModel, config: SolverConfig, solve_relaxation: LpSolver) -> LpSolution:
    """Most-fractional branching with lowest-index tie-break."""
    # work internally as minimisation of ``sign * objective``
    sign = -1.0 if model.sense is Sense.MAXIMIZE else 1.0
    relaxed = model.relaxed()
    bins = model.binaries
    tol = config.int_tol
    gap_tol = config.opt_tol

    counter = itertools.count()
    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = []
    incumbent: np.ndarray | None = None
    incumbent_key = np.inf
    nodes = 0
    iterations = 0

    root = solve_relaxation(relaxed, config)
    iterations += root.iterations
    if root.status is Status.UNBOUNDED:
        return LpSolution(Status.UNBOUNDED, None, np.nan, message="relaxation unbounded")
    if root.status is not Status.OPTIMAL:
        return LpSolution(root.status, None, np.nan, iterations=iterations, message="root relaxation")
    heapq.heappush(heap, (sign * root.objective, next(counter), np.array(model.lb), np.array(model.ub), root))

    while heap:
        key, _, lb, ub, sol = heapq.heappop(heap)
        if key >= incumbent_key - gap_tol:
            continue
        nodes += 1
        if nodes > config.node_limit:
            heapq.heappush(heap, (key, next(counter), lb, ub, sol))
            break
        xb = sol.x[bins]
        frac = np.abs(xb - np.round(xb))
        if frac.max(initial=0.0) <= tol:
            incumbent, incumbent_key = sol.x, key
            continue
        # most fractional: distance to 0.5 smallest; argmin returns lowest index on ties
        k = int(np.argmin(np.abs(xb - 0.5) + np.where(frac > tol, 0.0, np.inf)))
        j = int(bins[k])
        for fixed in (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = fixed
            child = solve_relaxation(relaxed.with_bounds(clb, cub), config)
            iterations += child.iterations
            if child.status is Status.OPTIMAL:
                ckey = sign * child.objective
                if ckey < incumbent_key - gap_tol:
                    heapq.heappush(heap, (ckey, next(counter), clb, cub, child))
            elif child.status is Status.LIMIT:
                return LpSolution(Status.LIMIT, incumbent, _obj(model, incumbent),
                                  iterations=iterations, nodes=nodes, message="LP iteration limit")

    open_keys = [h[0] for h in heap]
    if open_keys:
        bound_key = min(min(open_keys), incumbent_key)
        status = Status.LIMIT
    else:
        bound_key = incumbent_key
        status = Status.OPTIMAL if incumbent is not None else Status.INFEASIBLE
    if incumbent is None:
        return LpSolution(status, None, np.nan, iterations=iterations, nodes=nodes,
                          bound=None if not open_keys else sign * bound_key)
    return LpSolution(status, incumbent, _obj(model, incumbent), bound=sign * bound_key,
                      iterations=iterations, nodes=nodes)


def _obj(model: LpModel, x):
    return np.nan if x is None else model.objective_value(x)
