"""DC optimal power flow welfare maximisation with unit commitment.

Each node balance row is written in terms of voltage angles, so that the
duals of the relaxed (or commitment-fixed) model are directly comparable to
the explicit pricing LPs: balance duals are nodal prices ``p``, flow-definition
duals are congestion prices ``gamma`` and the reference-angle duals are ``r``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .linprog import (
    INF,
    LpBuilder,
    LpModel,
    LpSolution,
    SolverConfig,
    Status,
    fix_binaries,
    solve_lp,
    solve_milp,
)
from .market import MarketInstance, require_valid


class DispatchInfeasible(RuntimeError):
    """The clearing problem has no feasible allocation."""

    def __init__(self, message: str, periods: list[int]):
        super().__init__(message)
        self.periods = periods


class SolverFailure(RuntimeError):
    """The solver stopped on an iteration or node limit."""


@dataclass(frozen=True)
class DcopfModel:
    """The built model plus index maps from market entities to columns/rows.

    Index arrays hold -1 where a column does not exist (no commitment for
    convex sellers, no start-up indicator in the first period).
    """

    model: LpModel
    x: np.ndarray
    x_steps: tuple
    y: np.ndarray
    y_steps: tuple
    u: np.ndarray
    phi: np.ndarray
    f: np.ndarray
    alpha: np.ndarray
    balance_rows: np.ndarray
    flow_rows: np.ndarray
    pin_rows: np.ndarray

    def commitment_values(self, u: np.ndarray) -> dict[str, int]:
        out = {}
        for s, t in zip(*np.nonzero(self.u >= 0)):
            out[self.model.var_names[self.u[s, t]]] = int(round(u[s, t]))
        return out


def build_dcopf(instance: MarketInstance) -> DcopfModel:
    """Welfare maximisation: bid values minus offer and no-load costs."""
    require_valid(instance)
    T = instance.periods
    nodes = instance.nodes
    nidx = {v: i for i, v in enumerate(nodes)}
    B, S, L, V = len(instance.buyers), len(instance.sellers), len(instance.lines), len(nodes)
    m = LpBuilder("max")

    x = np.full((B, T), -1, dtype=np.int64)
    x_steps = []
    for i, b in enumerate(instance.buyers):
        per = []
        for t in range(T):
            steps = [m.add_var(f"x[{b.id},{t + 1},{k + 1}]", 0.0, stp.quantity, stp.price)
                     for k, stp in enumerate(b.bids[t])]
            x[i, t] = m.add_var(f"x[{b.id},{t + 1}]", -INF, b.pmax[t])
            m.add_row(f"demand[{b.id},{t + 1}]", [(x[i, t], 1.0)] + [(j, -1.0) for j in steps],
                      b.pmin[t], b.pmin[t])
            per.append(tuple(steps))
        x_steps.append(tuple(per))

    y = np.full((S, T), -1, dtype=np.int64)
    u = np.full((S, T), -1, dtype=np.int64)
    phi = np.full((S, T), -1, dtype=np.int64)
    y_steps = []
    for i, s in enumerate(instance.sellers):
        per = []
        convex = s.convex
        for t in range(T):
            if not convex:
                u[i, t] = m.add_var(f"u[{s.id},{t + 1}]", 0.0, 1.0, -s.no_load, binary=True)
            steps = []
            for k, stp in enumerate(s.offers[t]):
                j = m.add_var(f"y[{s.id},{t + 1},{k + 1}]", 0.0, stp.quantity if convex else INF, -stp.price)
                if not convex:
                    m.add_row(f"step_cap[{s.id},{t + 1},{k + 1}]", {j: 1.0, u[i, t]: -stp.quantity}, ub=0.0)
                steps.append(j)
            y[i, t] = m.add_var(f"y[{s.id},{t + 1}]", 0.0, s.pmax[t] if convex else INF)
            m.add_row(f"supply[{s.id},{t + 1}]", [(y[i, t], 1.0)] + [(j, -1.0) for j in steps], 0.0, 0.0)
            if not convex:
                m.add_row(f"min_out[{s.id},{t + 1}]", {y[i, t]: 1.0, u[i, t]: -s.pmin[t]}, lb=0.0)
                m.add_row(f"max_out[{s.id},{t + 1}]", {y[i, t]: 1.0, u[i, t]: -s.pmax[t]}, ub=0.0)
            per.append(tuple(steps))
        y_steps.append(tuple(per))
        if convex:
            continue
        for t in range(1, T):
            phi[i, t] = m.add_var(f"phi[{s.id},{t + 1}]", 0.0, INF)
            m.add_row(f"startup[{s.id},{t + 1}]", {phi[i, t]: 1.0, u[i, t]: -1.0, u[i, t - 1]: 1.0}, lb=0.0)
        for t in range(1, T):
            window = range(max(1, t - s.min_uptime + 1), t + 1)
            coefs = {phi[i, k]: 1.0 for k in window}
            coefs[u[i, t]] = coefs.get(u[i, t], 0.0) - 1.0
            m.add_row(f"uptime[{s.id},{t + 1}]", coefs, ub=0.0)

    alpha = np.array([[m.add_var(f"alpha[{v},{t + 1}]", -INF, INF) for t in range(T)] for v in nodes],
                     dtype=np.int64).reshape(V, T)
    f = np.full((L, T), -1, dtype=np.int64)
    flow_rows = np.full((L, T), -1, dtype=np.int64)
    for k, ln in enumerate(instance.lines):
        a, c = nidx[ln.from_node], nidx[ln.to_node]
        for t in range(T):
            f[k, t] = m.add_var(f"f[{ln.id},{t + 1}]", ln.fmin, ln.fmax)
            flow_rows[k, t] = m.add_row(
                f"flow[{ln.id},{t + 1}]",
                {alpha[a, t]: ln.susceptance, alpha[c, t]: -ln.susceptance, f[k, t]: -1.0}, 0.0, 0.0)

    balance_rows = np.full((V, T), -1, dtype=np.int64)
    for vi, v in enumerate(nodes):
        for t in range(T):
            coefs: dict[int, float] = {}

            def add(j, val):
                coefs[j] = coefs.get(j, 0.0) + val

            for i, b in enumerate(instance.buyers):
                if b.node == v:
                    add(x[i, t], 1.0)
            for i, s in enumerate(instance.sellers):
                if s.node == v:
                    add(y[i, t], -1.0)
            for ln in instance.lines:
                a, c = nidx[ln.from_node], nidx[ln.to_node]
                if vi in (a, c):
                    sgn = 1.0 if vi == a else -1.0
                    add(alpha[a, t], sgn * ln.susceptance)
                    add(alpha[c, t], -sgn * ln.susceptance)
            balance_rows[vi, t] = m.add_row(f"balance[{v},{t + 1}]", coefs, 0.0, 0.0)

    ref = nidx[instance.network.reference]
    pin_rows = np.array([m.add_row(f"pin[{t + 1}]", {alpha[ref, t]: 1.0}, 0.0, 0.0) for t in range(T)],
                        dtype=np.int64)
    return DcopfModel(m.build(), x, tuple(x_steps), y, tuple(y_steps), u, phi, f, alpha,
                      balance_rows, flow_rows, pin_rows)


@dataclass(frozen=True)
class Dispatch:
    """An optimal allocation. Arrays are indexed (entity, period)."""

    buyer_ids: tuple[str, ...]
    seller_ids: tuple[str, ...]
    line_ids: tuple[str, ...]
    nodes: tuple[str, ...]
    x: np.ndarray
    x_steps: tuple
    y: np.ndarray
    y_steps: tuple
    u: np.ndarray
    phi: np.ndarray
    f: np.ndarray
    alpha: np.ndarray
    welfare: float
    status: str = "optimal"
    gap: float | None = None

    @property
    def periods(self) -> int:
        return self.x.shape[1] if self.x.size else self.alpha.shape[1]

    def to_dict(self) -> dict:
        return {
            "welfare": self.welfare,
            "status": self.status,
            "periods": self.periods,
            "buyers": [
                {"id": bid, "x": self.x[i].tolist(), "steps": [list(s) for s in self.x_steps[i]]}
                for i, bid in enumerate(self.buyer_ids)
            ],
            "sellers": [
                {"id": sid, "y": self.y[i].tolist(), "u": self.u[i].astype(int).tolist(),
                 "phi": self.phi[i].tolist(), "steps": [list(s) for s in self.y_steps[i]]}
                for i, sid in enumerate(self.seller_ids)
            ],
            "lines": [{"id": lid, "f": self.f[k].tolist()} for k, lid in enumerate(self.line_ids)],
            "angles": [{"node": v, "alpha": self.alpha[i].tolist()} for i, v in enumerate(self.nodes)],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def check(self, instance: MarketInstance, tol: float = 1e-6) -> list[str]:
        """Return human-readable violations of the dispatch invariants."""
        problems = []
        T = instance.periods
        nidx = {v: i for i, v in enumerate(instance.nodes)}
        net = np.zeros((len(instance.nodes), T))
        for i, b in enumerate(instance.buyers):
            net[nidx[b.node]] -= self.x[i]
            for t in range(T):
                xs = np.asarray(self.x_steps[i][t])
                qs = np.array([stp.quantity for stp in b.bids[t]])
                if xs.size and (np.any(xs < -tol) or np.any(xs > qs + tol)):
                    problems.append(f"buyer {b.id} period {t + 1}: step outside [0, q]")
                if abs(self.x[i, t] - b.pmin[t] - xs.sum()) > tol or self.x[i, t] > b.pmax[t] + tol:
                    problems.append(f"buyer {b.id} period {t + 1}: demand outside its range")
        for i, s in enumerate(instance.sellers):
            net[nidx[s.node]] += self.y[i]
            for t in range(T):
                ut = self.u[i, t]
                if ut not in (0.0, 1.0):
                    problems.append(f"seller {s.id} period {t + 1}: commitment not binary")
                if not s.pmin[t] * ut - tol <= self.y[i, t] <= s.pmax[t] * ut + tol:
                    problems.append(f"seller {s.id} period {t + 1}: output outside committed range")
                ys = np.asarray(self.y_steps[i][t])
                qs = np.array([stp.quantity for stp in s.offers[t]])
                if ys.size and (np.any(ys < -tol) or np.any(ys > qs * ut + tol)):
                    problems.append(f"seller {s.id} period {t + 1}: step outside [0, q u]")
                if abs(self.y[i, t] - ys.sum()) > tol:
                    problems.append(f"seller {s.id} period {t + 1}: steps do not add up")
            for t in range(1, T):
                if self.phi[i, t] < self.u[i, t] - self.u[i, t - 1] - tol:
                    problems.append(f"seller {s.id} period {t + 1}: start-up not recorded")
                window = range(max(1, t - s.min_uptime + 1), t + 1)
                if sum(self.phi[i, k] for k in window) > self.u[i, t] + tol:
                    problems.append(f"seller {s.id} period {t + 1}: minimum uptime violated")
        for k, ln in enumerate(instance.lines):
            a, c = nidx[ln.from_node], nidx[ln.to_node]
            net[a] -= self.f[k]
            net[c] += self.f[k]
            for t in range(T):
                if not ln.fmin - tol <= self.f[k, t] <= ln.fmax + tol:
                    problems.append(f"line {ln.id} period {t + 1}: flow outside limits")
                if abs(self.f[k, t] - ln.susceptance * (self.alpha[a, t] - self.alpha[c, t])) > tol:
                    problems.append(f"line {ln.id} period {t + 1}: flow does not match angles")
        ref = nidx[instance.network.reference]
        if np.any(np.abs(self.alpha[ref]) > tol):
            problems.append("reference angle is not zero")
        scale = 1.0 + float(np.abs(self.y).max(initial=0.0))
        for v, t in zip(*np.nonzero(np.abs(net) > tol * scale)):
            problems.append(f"node {instance.nodes[v]} period {t + 1}: balance off by {net[v, t]:.3g}")
        return problems


def extract_dispatch(instance: MarketInstance, dm: DcopfModel, sol: LpSolution) -> Dispatch:
    z = sol.x

    def take(idx):
        return np.where(idx >= 0, z[np.maximum(idx, 0)], 0.0)

    u = np.where(dm.u >= 0, np.round(z[np.maximum(dm.u, 0)]), 1.0)
    return Dispatch(
        buyer_ids=tuple(b.id for b in instance.buyers),
        seller_ids=tuple(s.id for s in instance.sellers),
        line_ids=tuple(ln.id for ln in instance.lines),
        nodes=instance.nodes,
        x=take(dm.x).reshape(dm.x.shape),
        x_steps=tuple(tuple(tuple(float(z[j]) for j in per) for per in b) for b in dm.x_steps),
        y=take(dm.y).reshape(dm.y.shape),
        y_steps=tuple(tuple(tuple(float(z[j]) for j in per) for per in s) for s in dm.y_steps),
        u=u.reshape(dm.u.shape),
        phi=take(dm.phi).reshape(dm.phi.shape),
        f=take(dm.f).reshape(dm.f.shape),
        alpha=take(dm.alpha).reshape(dm.alpha.shape),
        welfare=float(sol.objective),
        status=sol.status.value,
        gap=sol.gap,
    )


def solve_dispatch(instance: MarketInstance, config: SolverConfig | None = None) -> Dispatch:
    """Solve the clearing MILP to optimality."""
    config = config or SolverConfig()
    dm = build_dcopf(instance)
    sol = solve_milp(dm.model, config)
    if sol.status is Status.INFEASIBLE:
        periods = infeasible_periods(instance, config)
        if periods:
            where = ", ".join(str(t + 1) for t in periods)
            msg = f"no feasible dispatch: period(s) {where} cannot be balanced within limits"
        else:
            msg = "no feasible dispatch: every period is feasible alone, so commitment coupling is binding"
        raise DispatchInfeasible(msg, periods)
    if sol.status is Status.LIMIT:
        raise SolverFailure(f"dispatch solve stopped on a limit: {sol.message or 'node limit'}")
    if sol.status is Status.UNBOUNDED:
        raise SolverFailure("dispatch model is unbounded")
    return extract_dispatch(instance, dm, sol)


def single_period(instance: MarketInstance, t: int) -> MarketInstance:
    """Restrict an instance to period ``t`` (uptime becomes vacuous)."""
    buyers = tuple(replace(b, pmin=(b.pmin[t],), pmax=(b.pmax[t],), bids=(b.bids[t],)) for b in instance.buyers)
    sellers = tuple(replace(s, pmin=(s.pmin[t],), pmax=(s.pmax[t],), offers=(s.offers[t],), min_uptime=1)
                    for s in instance.sellers)
    return replace(instance, periods=1, buyers=buyers, sellers=sellers)


def infeasible_periods(instance: MarketInstance, config: SolverConfig | None = None) -> list[int]:
    config = config or SolverConfig()
    bad = []
    for t in range(instance.periods):
        dm = build_dcopf(single_period(instance, t))
        if solve_milp(dm.model, config).status is Status.INFEASIBLE:
            bad.append(t)
    return bad


def relaxed_model(dm: DcopfModel) -> LpModel:
    """Continuous relaxation: every commitment on [0, 1]."""
    return dm.model.relaxed()


def committed_model(dm: DcopfModel, dispatch: Dispatch) -> LpModel:
    """The LP obtained by pinning every commitment to its dispatch value."""
    return fix_binaries(dm.model, dm.commitment_values(dispatch.u))
