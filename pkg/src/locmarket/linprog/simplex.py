"""Bounded-variable primal simplex with dual extraction.

Internally every model is put in the form ``min c.z`` subject to
``A x - s + D a = 0`` where ``s`` are row activities bounded by the row
bounds and ``a`` are phase-1 artificials. The basis inverse is kept dense and
updated in product form; it is refactored periodically.
"""

from __future__ import annotations

import numpy as np

from .model import LpModel, LpSolution, NumericalError, Sense, SolverConfig, Status

_BASIC, _LOWER, _UPPER, _FREE = 0, 1, 2, 3
_PIV_TOL = 1e-9
_REFACTOR_EVERY = 64
_DEGENERATE_STREAK = 30


class _Engine:
    def __init__(self, M, lo, hi, cfg: SolverConfig):
        self.M = M
        self.m, self.N = M.shape
        self.lo = lo
        self.hi = hi
        self.cfg = cfg
        self.val = np.zeros(self.N)
        self.state = np.full(self.N, _LOWER, dtype=np.int8)
        self.basis = np.zeros(self.m, dtype=np.int64)
        self.Binv = np.eye(self.m)
        self.iterations = 0
        self.pivots: list[tuple[int, int]] = []

    def refactor(self):
        B = self.M[:, self.basis]
        try:
            Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular simplex basis") from exc
        if not np.all(np.isfinite(Binv)) or np.abs(Binv).max(initial=0.0) > 1e12:
            raise NumericalError("numerically singular simplex basis")
        self.Binv = Binv
        nonbasic = self.state != _BASIC
        rhs = -self.M[:, nonbasic] @ self.val[nonbasic]
        self.val[self.basis] = Binv @ rhs

    def run(self, c) -> Status:
        """Iterate until optimal/unbounded/limit for cost vector ``c``."""
        cfg = self.cfg
        dtol = 1e-9 * (1.0 + float(np.abs(c).max(initial=0.0)))
        streak = 0
        since_refactor = 0
        bland = cfg.pivot_rule == "bland"
        while True:
            if self.iterations >= cfg.max_iter:
                return Status.LIMIT
            y = c[self.basis] @ self.Binv
            d = c - y @ self.M
            st = self.state
            free_move = self.hi > self.lo
            up = ((st == _LOWER) & (d < -dtol) & free_move) | ((st == _FREE) & (d < -dtol))
            down = ((st == _UPPER) & (d > dtol)) | ((st == _FREE) & (d > dtol))
            eligible = np.flatnonzero(up | down)
            if eligible.size == 0:
                self.y = y
                self.d = d
                return Status.OPTIMAL
            if bland or streak > _DEGENERATE_STREAK:
                q = int(eligible[0])
            else:
                scores = np.abs(d[eligible])
                q = int(eligible[np.argmax(scores)])
            direction = 1.0 if up[q] else -1.0

            w = self.Binv @ self.M[:, q]
            delta = -direction * w
            xb = self.val[self.basis]
            lob = self.lo[self.basis]
            hib = self.hi[self.basis]
            theta = np.full(self.m, np.inf)
            dec = delta < -_PIV_TOL
            inc = delta > _PIV_TOL
            with np.errstate(invalid="ignore", divide="ignore"):
                t_dec = np.where(np.isfinite(lob), (xb - lob) / -delta, np.inf)
                t_inc = np.where(np.isfinite(hib), (hib - xb) / delta, np.inf)
            theta[dec] = t_dec[dec]
            theta[inc] = t_inc[inc]
            theta = np.maximum(theta, 0.0)
            best = float(theta.min()) if self.m else np.inf
            flip = self.hi[q] - self.lo[q]
            if flip <= best and np.isfinite(flip):
                step = flip
                leave_row = -1
            elif np.isfinite(best):
                step = best
                ties = np.flatnonzero(theta <= best + 1e-12 * (1.0 + best))
                if bland or streak > _DEGENERATE_STREAK:
                    leave_row = int(ties[np.argmin(self.basis[ties])])
                else:
                    mags = np.abs(w[ties])
                    top = ties[mags >= mags.max() * (1 - 1e-9)]
                    leave_row = int(top[np.argmin(self.basis[top])])
            else:
                return Status.UNBOUNDED

            self.iterations += 1
            streak = streak + 1 if step <= 1e-12 else 0
            self.val[q] += direction * step
            self.val[self.basis] = xb + delta * step
            if leave_row < 0:
                self.state[q] = _UPPER if direction > 0 else _LOWER
                self.pivots.append((q, -1))
                continue

            r = int(self.basis[leave_row])
            if delta[leave_row] < 0:
                self.val[r] = self.lo[r]
                self.state[r] = _LOWER
            else:
                self.val[r] = self.hi[r]
                self.state[r] = _UPPER
            self.state[q] = _BASIC
            self.basis[leave_row] = q
            self.pivots.append((q, r))

            piv = w[leave_row]
            if abs(piv) < 1e-11:
                raise NumericalError("pivot element too small")
            row = self.Binv[leave_row] / piv
            self.Binv -= np.outer(w, row)
            self.Binv[leave_row] = row
            since_refactor += 1
            if since_refactor >= _REFACTOR_EVERY:
                self.refactor()
                since_refactor = 0


def solve(model: LpModel, config: SolverConfig) -> LpSolution:
    """Solve the continuous model with the in-house simplex."""
    n, m = model.n_vars, model.n_rows
    A = model.A.toarray()
    sign = -1.0 if model.sense is Sense.MAXIMIZE else 1.0
    c_x = sign * np.asarray(model.obj, dtype=float)

    M = np.zeros((m, n + 2 * m))
    M[:, :n] = A
    M[:, n:n + m] = -np.eye(m)
    lo = np.concatenate([model.lb, model.row_lb, np.zeros(m)])
    hi = np.concatenate([model.ub, model.row_ub, np.zeros(m)])
    eng = _Engine(M, lo, hi, config)

    # nonbasic structural variables start at a finite bound (or zero if free)
    for j in range(n):
        if np.isfinite(lo[j]):
            eng.val[j], eng.state[j] = lo[j], _LOWER
        elif np.isfinite(hi[j]):
            eng.val[j], eng.state[j] = hi[j], _UPPER
        else:
            eng.val[j], eng.state[j] = 0.0, _FREE
    act = A @ eng.val[:n]
    tol = config.feas_tol
    artificial = []
    for i in range(m):
        s, a = n + i, n + m + i
        if model.row_lb[i] - tol <= act[i] <= model.row_ub[i] + tol:
            eng.basis[i] = s
            eng.state[s] = _BASIC
            eng.val[s] = act[i]
            eng.state[a] = _LOWER
        else:
            target = model.row_lb[i] if act[i] < model.row_lb[i] else model.row_ub[i]
            eng.val[s] = target
            eng.state[s] = _LOWER if target == model.row_lb[i] else _UPPER
            gap = target - act[i]
            M[i, a] = 1.0 if gap > 0 else -1.0
            hi[a] = np.inf
            eng.basis[i] = a
            eng.state[a] = _BASIC
            eng.val[a] = abs(gap)
            artificial.append(a)
    eng.refactor()

    if artificial:
        c1 = np.zeros(n + 2 * m)
        c1[artificial] = 1.0
        status = eng.run(c1)
        if status is Status.LIMIT:
            return _result(model, eng, Status.LIMIT, sign)
        infeas = float(eng.val[artificial].sum())
        scale = 1.0 + float(np.abs(act).max(initial=0.0))
        if infeas > tol * scale:
            return LpSolution(Status.INFEASIBLE, None, np.nan, iterations=eng.iterations,
                              message=f"phase 1 residual {infeas:.3g}", pivots=eng.pivots)
    hi[n + m:] = 0.0
    eng.val[n + m:] = np.clip(eng.val[n + m:], 0.0, 0.0)
    for a in range(n + m, n + 2 * m):
        if eng.state[a] != _BASIC:
            eng.state[a] = _LOWER
    eng.refactor()

    c2 = np.zeros(n + 2 * m)
    c2[:n] = c_x
    status = eng.run(c2)
    if status is Status.UNBOUNDED:
        return LpSolution(Status.UNBOUNDED, None, np.nan, iterations=eng.iterations,
                          message="primal ray found in phase 2", pivots=eng.pivots)
    return _result(model, eng, status, sign)


def _result(model: LpModel, eng: _Engine, status: Status, sign: float) -> LpSolution:
    n, m = model.n_vars, model.n_rows
    x = eng.val[:n].copy()
    duals = reduced = None
    if status is Status.OPTIMAL:
        duals = sign * eng.y
        reduced = sign * eng.d[:n]
        # complementary slackness: reduced costs of basic columns are zero by construction
        reduced[eng.state[:n] == _BASIC] = 0.0
        duals[eng.state[n:n + m] == _BASIC] = 0.0
    return LpSolution(status, x, model.objective_value(x), duals=duals, reduced_costs=reduced,
                      iterations=eng.iterations, pivots=list(eng.pivots))
