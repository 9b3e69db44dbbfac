"""Dual pricing rules built as explicit LPs over prices.

Every participant contributes a variable ``lambda`` to a minimised sum. For
the LOC-based rules the participant's best response at the prices is written
through LP duality: with the participant's own feasible set
``{z : lo <= G z <= hi, zl <= z <= zu}`` and price-linear objective
``(c0 + P pi) . z``, the bound

    lambda >= (dual objective) - utility(z* | pi)

together with the dual-feasibility rows ``G' mu + nu - P pi = c0`` makes the
optimal ``lambda`` the participant's lost opportunity cost. The sellers'
feasible set is relaxed (commitment on [0, 1]) for CH and has commitment
fixed at the dispatch for IP. Make-whole rows are simply
``lambda >= -utility(z* | pi)`` with ``lambda >= 0``.

All rules share the angle dual-feasibility rows that tie nodal prices,
congestion prices and the reference dual together.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dcopf import Dispatch, build_dcopf, committed_model, relaxed_model
from .linprog import INF, LpBuilder, LpModel, SolverConfig, Status, solve_lp
from .market import MarketInstance, require_valid
from .metrics import Participant, compute_locs, participants
from .prices import PriceSystem, angle_rows

__all__ = [
    "PriceSystem", "PricingRule", "PricingResult", "PricingError", "PricingLp",
    "build_pricing_lp", "price", "price_via_primal_duals", "pareto_sweep", "ParetoPoint",
    "simplex_grid", "RULES",
]

RULES = ("CH", "IP", "MinMWP", "Join", "Scalarized")
_COMPONENTS = ("CH", "IP", "MinMWP")


class PricingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PricingRule:
    """A pricing rule. Scalarized weights are (CH, IP, MinMWP) and are
    normalised to sum to one."""

    variant: str
    weights: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.variant not in RULES:
            raise ValueError(f"unknown pricing rule {self.variant!r}")
        if self.variant == "Scalarized":
            if self.weights is None or len(self.weights) != 3:
                raise ValueError("scalarized rule needs three weights (CH, IP, MinMWP)")
            w = np.array(self.weights, dtype=float)
            if not np.all(np.isfinite(w)) or np.any(w < 0) or w.sum() <= 0:
                raise ValueError("scalarization weights must be nonnegative with a positive sum")
            object.__setattr__(self, "weights", tuple(float(v) for v in w / w.sum()))
        elif self.weights is not None:
            raise ValueError("weights are only meaningful for the scalarized rule")

    @classmethod
    def scalarized(cls, w_ch: float, w_ip: float, w_mwp: float) -> "PricingRule":
        return cls("Scalarized", (w_ch, w_ip, w_mwp))

    @classmethod
    def parse(cls, name: str, weights=None) -> "PricingRule":
        key = name.strip().lower().replace("-", "").replace("_", "")
        table = {"ch": "CH", "elmp": "CH", "ip": "IP", "minmwp": "MinMWP", "mwp": "MinMWP",
                 "join": "Join", "scalarize": "Scalarized", "scalarized": "Scalarized"}
        if key not in table:
            raise ValueError(f"unknown pricing rule {name!r}")
        variant = table[key]
        if variant == "Scalarized":
            return cls(variant, None if weights is None else tuple(weights))
        if weights is not None:
            raise ValueError("weights are only meaningful for the scalarized rule")
        return cls(variant)

    @property
    def label(self) -> str:
        if self.variant == "Scalarized":
            return "Scalarized(" + ",".join(f"{w:g}" for w in self.weights) + ")"
        return self.variant

    def component_weights(self) -> dict[str, float]:
        if self.variant == "Scalarized":
            return {c: w for c, w in zip(_COMPONENTS, self.weights) if w > 0}
        return {self.variant: 1.0}


# ---------------------------------------------------------------- local problems

@dataclass
class _Local:
    """A participant's own problem: maximise (c0 + P pi).z + const."""

    lb: list = field(default_factory=list)
    ub: list = field(default_factory=list)
    c0: list = field(default_factory=list)
    prices: list = field(default_factory=list)  # per variable: list of (price column, coef)
    zstar: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # (coefs dict, lo, hi)
    const: float = 0.0

    def var(self, lb, ub, c0=0.0, prices=(), zstar=0.0) -> int:
        self.lb.append(lb)
        self.ub.append(ub)
        self.c0.append(c0)
        self.prices.append(list(prices))
        self.zstar.append(zstar)
        return len(self.lb) - 1

    def row(self, coefs: dict, lo=-INF, hi=INF) -> None:
        self.rows.append((coefs, lo, hi))


class PricingLp:
    """Builder-side view of a pricing LP and its variable maps."""

    def __init__(self, instance: MarketInstance, dispatch: Dispatch, rule: PricingRule,
                 tie_break: bool = False):
        require_valid(instance)
        self.instance = instance
        self.dispatch = dispatch
        self.rule = rule
        self.participants = participants(instance)
        T = instance.periods
        self.m = LpBuilder("min")
        m = self.m
        self.p = np.array([[m.add_var(f"p[{v},{t + 1}]", -INF, INF) for t in range(T)]
                           for v in instance.nodes], dtype=np.int64).reshape(len(instance.nodes), T)
        self.gamma = np.array([[m.add_var(f"gamma[{ln.id},{t + 1}]", -INF, INF) for t in range(T)]
                               for ln in instance.lines], dtype=np.int64).reshape(len(instance.lines), T)
        self.r = np.array([m.add_var(f"r[{t + 1}]", -INF, INF) for t in range(T)], dtype=np.int64)
        self.lambdas: dict[str, dict[str, int]] = {}
        self.mwp_rows: dict[str, int] = {}
        self.weights = rule.component_weights()
        self._angle_rows()
        if rule.variant == "Join":
            self.lambdas["Join"] = self._join_component("")
        else:
            for comp, w in self.weights.items():
                prefix = f"{comp}:" if rule.variant == "Scalarized" else ""
                self.lambdas[comp] = self._component(comp, prefix, w)
        self.tie_lambdas: dict[str, int] = {}
        self.tie_row = -1
        if tie_break and rule.variant == "MinMWP":
            # GLOC of the same prices, carried at zero weight until the second stage
            self.tie_lambdas = self._component("CH", "tie:", 0.0)
            self.tie_row = m.add_row("mwp_total", {j: 1.0 for j in self.lambdas["MinMWP"].values()})
        self.model: LpModel = m.build()

    def tighten_mwp(self, x: np.ndarray) -> np.ndarray:
        """Lower every make-whole lambda to the least value its row allows."""
        x = np.array(x, dtype=float)
        A = self.model.A.tocsr()
        for key, j in self.lambdas["MinMWP"].items():
            i = self.mwp_rows[key]
            rest = float((A[i] @ x)[0]) - A[i, j] * x[j]
            x[j] = max(0.0, (self.model.row_lb[i] - rest) / A[i, j])
        return x

    def tie_break_model(self, optimum: float, slack: float) -> LpModel:
        """Least total GLOC among prices whose total MWP is within ``slack``
        of ``optimum``."""
        obj = np.zeros(self.model.n_vars)
        obj[list(self.tie_lambdas.values())] = 1.0
        ub = np.array(self.model.row_ub)
        ub[self.tie_row] = optimum + slack
        return self.model.with_objective(obj).with_row_bounds(self.model.row_lb, ub)

    # -- shared rows
    def _angle_rows(self):
        inst = self.instance
        A, _ = angle_rows(inst)
        for v_i, v in enumerate(inst.nodes):
            for t in range(inst.periods):
                coefs = {}
                for w_i in np.flatnonzero(A["p"][v_i]):
                    coefs[self.p[w_i, t]] = A["p"][v_i, w_i]
                for k in np.flatnonzero(A["gamma"][v_i]):
                    coefs[self.gamma[k, t]] = A["gamma"][v_i, k]
                if A["r"][v_i]:
                    coefs[self.r[t]] = 1.0
                self.m.add_row(f"angle[{v},{t + 1}]", coefs, 0.0, 0.0)

    # -- participant problems
    def _local(self, part: Participant, fixed_commitment: bool) -> _Local:
        inst, d = self.instance, self.dispatch
        T = inst.periods
        loc = _Local()
        if part.kind == "buyer":
            b = inst.buyers[part.index]
            v = inst.nodes.index(b.node)
            for t in range(T):
                steps = [loc.var(0.0, stp.quantity, stp.price, zstar=d.x_steps[part.index][t][k])
                         for k, stp in enumerate(b.bids[t])]
                x = loc.var(-INF, b.pmax[t], 0.0, [(self.p[v, t], -1.0)], zstar=d.x[part.index, t])
                loc.row({x: 1.0, **{j: -1.0 for j in steps}}, b.pmin[t], b.pmin[t])
            return loc
        if part.kind == "line":
            ln = inst.lines[part.index]
            k, t = part.index, part.period
            loc.var(ln.fmin, ln.fmax, 0.0, [(self.gamma[k, t], 1.0)], zstar=d.f[k, t])
            return loc
        s = inst.sellers[part.index]
        i = part.index
        v = inst.nodes.index(s.node)
        if s.convex:
            for t in range(T):
                steps = [loc.var(0.0, stp.quantity, -stp.price, zstar=d.y_steps[i][t][k])
                         for k, stp in enumerate(s.offers[t])]
                y = loc.var(0.0, s.pmax[t], 0.0, [(self.p[v, t], 1.0)], zstar=d.y[i, t])
                loc.row({y: 1.0, **{j: -1.0 for j in steps}}, 0.0, 0.0)
            return loc
        if fixed_commitment:
            for t in range(T):
                ut = float(d.u[i, t])
                steps = []
                for k, stp in enumerate(s.offers[t]):
                    j = loc.var(0.0, INF, -stp.price, zstar=d.y_steps[i][t][k])
                    loc.row({j: 1.0}, hi=stp.quantity * ut)
                    steps.append(j)
                y = loc.var(0.0, INF, 0.0, [(self.p[v, t], 1.0)], zstar=d.y[i, t])
                loc.row({y: 1.0, **{j: -1.0 for j in steps}}, 0.0, 0.0)
                loc.row({y: 1.0}, lo=s.pmin[t] * ut)
                loc.row({y: 1.0}, hi=s.pmax[t] * ut)
                loc.const -= s.no_load * ut
            return loc
        u = []
        for t in range(T):
            ut = loc.var(0.0, 1.0, -s.no_load, zstar=d.u[i, t])
            u.append(ut)
            steps = []
            for k, stp in enumerate(s.offers[t]):
                j = loc.var(0.0, INF, -stp.price, zstar=d.y_steps[i][t][k])
                loc.row({j: 1.0, ut: -stp.quantity}, hi=0.0)
                steps.append(j)
            y = loc.var(0.0, INF, 0.0, [(self.p[v, t], 1.0)], zstar=d.y[i, t])
            loc.row({y: 1.0, **{j: -1.0 for j in steps}}, 0.0, 0.0)
            loc.row({y: 1.0, ut: -s.pmin[t]}, lo=0.0)
            loc.row({y: 1.0, ut: -s.pmax[t]}, hi=0.0)
        phi = {t: loc.var(0.0, INF, zstar=d.phi[i, t]) for t in range(1, T)}
        for t in range(1, T):
            loc.row({phi[t]: 1.0, u[t]: -1.0, u[t - 1]: 1.0}, lo=0.0)
            coefs = {phi[k]: 1.0 for k in range(max(1, t - s.min_uptime + 1), t + 1)}
            coefs[u[t]] = coefs.get(u[t], 0.0) - 1.0
            loc.row(coefs, hi=0.0)
        return loc

    def _lambda(self, name: str, obj: float, lb: float = -INF) -> int:
        return self.m.add_var(name, lb, INF, obj)

    def _loc_rows(self, lam: int, loc: _Local, name: str) -> None:
        """lambda >= min dual objective - utility(z*), via the local dual."""
        m = self.m
        n = len(loc.lb)
        bound_terms: dict[int, float] = {}
        columns: list[dict[int, float]] = [dict() for _ in range(n)]
        for i, (coefs, lo, hi) in enumerate(loc.rows):
            if lo == hi:
                mu = m.add_var(f"{name}.mu{i}", -INF, INF)
                bound_terms[mu] = lo
                for j, a in coefs.items():
                    columns[j][mu] = columns[j].get(mu, 0.0) + a
                continue
            if np.isfinite(hi):
                mu = m.add_var(f"{name}.mu{i}+", 0.0, INF)
                bound_terms[mu] = hi
                for j, a in coefs.items():
                    columns[j][mu] = columns[j].get(mu, 0.0) + a
            if np.isfinite(lo):
                mu = m.add_var(f"{name}.mu{i}-", 0.0, INF)
                bound_terms[mu] = -lo
                for j, a in coefs.items():
                    columns[j][mu] = columns[j].get(mu, 0.0) - a
        for j in range(n):
            lo, hi = loc.lb[j], loc.ub[j]
            if lo == hi:
                nu = m.add_var(f"{name}.nu{j}", -INF, INF)
                bound_terms[nu] = lo
                columns[j][nu] = 1.0
            else:
                if np.isfinite(hi):
                    nu = m.add_var(f"{name}.nu{j}+", 0.0, INF)
                    bound_terms[nu] = hi
                    columns[j][nu] = 1.0
                if np.isfinite(lo):
                    nu = m.add_var(f"{name}.nu{j}-", 0.0, INF)
                    bound_terms[nu] = -lo
                    columns[j][nu] = -1.0
            col = dict(columns[j])
            for pc, a in loc.prices[j]:
                col[pc] = col.get(pc, 0.0) - a
            m.add_row(f"{name}.df{j}", col, loc.c0[j], loc.c0[j])
        # lambda - dualobj + utility(z*|pi) >= 0, constants moved to the bound
        coefs = {lam: 1.0}
        for mu, b in bound_terms.items():
            if b != 0.0:
                coefs[mu] = coefs.get(mu, 0.0) - b
        for j in range(n):
            for pc, a in loc.prices[j]:
                if loc.zstar[j] != 0.0:
                    coefs[pc] = coefs.get(pc, 0.0) + a * loc.zstar[j]
        # the problem's constant enters both the best response and utility(z*)
        const = float(np.dot(loc.c0, loc.zstar))
        m.add_row(f"{name}.loc", coefs, lb=-const)

    def _mwp_row(self, lam: int, part: Participant, name: str) -> None:
        """lambda >= -(make-whole utility of the dispatch at pi)."""
        inst, d = self.instance, self.dispatch
        coefs = {lam: 1.0}
        if part.kind == "buyer":
            b = inst.buyers[part.index]
            v = inst.nodes.index(b.node)
            const = 0.0
            for t in range(inst.periods):
                const += sum(stp.price * q for stp, q in zip(b.bids[t], d.x_steps[part.index][t]))
                elastic = d.x[part.index, t] - b.pmin[t]
                if elastic != 0.0:
                    coefs[self.p[v, t]] = coefs.get(self.p[v, t], 0.0) - elastic
        elif part.kind == "seller":
            s = inst.sellers[part.index]
            v = inst.nodes.index(s.node)
            i = part.index
            const = 0.0
            for t in range(inst.periods):
                const -= sum(stp.price * q for stp, q in zip(s.offers[t], d.y_steps[i][t]))
                const -= s.no_load * d.u[i, t]
                if d.y[i, t] != 0.0:
                    coefs[self.p[v, t]] = coefs.get(self.p[v, t], 0.0) + d.y[i, t]
        else:
            k, t = part.index, part.period
            const = 0.0
            if d.f[k, t] != 0.0:
                coefs[self.gamma[k, t]] = d.f[k, t]
        self.mwp_rows[name] = self.m.add_row(f"{name}.mwp", coefs, lb=-const)

    def _component(self, comp: str, prefix: str, weight: float) -> dict[str, int]:
        out = {}
        for part in self.participants:
            name = f"{prefix}{part.key}"
            if comp == "MinMWP":
                lam = self._lambda(f"lambda[{name}]", weight, lb=0.0)
                self._mwp_row(lam, part, name)
            else:
                lam = self._lambda(f"lambda[{name}]", weight)
                self._loc_rows(lam, self._local(part, fixed_commitment=(comp == "IP")), name)
            out[part.key] = lam
        return out

    def _join_component(self, prefix: str) -> dict[str, int]:
        out = {}
        for part in self.participants:
            name = f"{prefix}{part.key}"
            lam = self._lambda(f"lambda[{name}]", 1.0)
            self._loc_rows(lam, self._local(part, fixed_commitment=True), name)
            if part.kind != "line":
                self._mwp_row(lam, part, name)
            else:
                ln = self.instance.lines[part.index]
                # with zero flow allowed, the line LLOC already dominates its loss
                if not ln.fmin <= 0.0 <= ln.fmax:
                    self._mwp_row(lam, part, name)
            out[part.key] = lam
        return out

    def prices_from(self, x: np.ndarray) -> PriceSystem:
        return PriceSystem(x[self.p], x[self.gamma], x[self.r])


def build_pricing_lp(instance: MarketInstance, dispatch: Dispatch, rule: PricingRule) -> LpModel:
    """The pricing LP of ``rule`` as a plain model (minimisation)."""
    return PricingLp(instance, dispatch, rule).model


@dataclass(frozen=True)
class PricingResult:
    rule: PricingRule
    prices: PriceSystem
    objective: float
    lambdas: dict[str, float]
    components: dict[str, dict[str, float]] = field(default_factory=dict)
    status: str = "optimal"
    iterations: int = 0
    method: str = "pricing-lp"

    def to_dict(self, instance: MarketInstance) -> dict:
        return {
            "rule": self.rule.label,
            "weights": list(self.rule.weights) if self.rule.weights else None,
            "objective": self.objective,
            "prices": self.prices.to_dict(instance),
            "lambdas": self.lambdas,
            "components": self.components,
            "status": self.status,
            "iterations": self.iterations,
            "method": self.method,
        }

    def to_json(self, instance: MarketInstance, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(instance), indent=indent)


def _check(sol, rule: PricingRule, plp: PricingLp, stage: str = "") -> None:
    if sol.status is Status.UNBOUNDED:
        raise PricingError(f"{rule.label} pricing LP{stage} is unbounded (model construction bug)")
    if sol.status is Status.INFEASIBLE:
        raise PricingError(f"{rule.label} pricing LP{stage} is infeasible ({plp.model.n_rows} rows); "
                           f"is the dispatch feasible for this instance? {sol.message}")
    if sol.status is not Status.OPTIMAL:
        raise PricingError(f"{rule.label} pricing LP{stage} stopped on a limit")


def price(instance: MarketInstance, dispatch: Dispatch, rule: PricingRule,
          config: SolverConfig | None = None, tie_break: bool = True) -> PricingResult:
    """Solve the pricing LP of ``rule`` for the given optimal dispatch.

    Min-MWP usually has many optimal price vectors. With ``tie_break`` a
    second LP picks, among them, one with least total GLOC; the reported
    objective stays the total MWP. Other rules ignore the flag.
    """
    config = config or SolverConfig()
    plp = PricingLp(instance, dispatch, rule, tie_break=tie_break)
    sol = solve_lp(plp.model, config)
    _check(sol, rule, plp)
    iterations = sol.iterations
    if plp.tie_row >= 0:
        opt = float(sol.objective)
        second = solve_lp(plp.tie_break_model(opt, 1e-9 * (1.0 + abs(opt))), config)
        _check(second, rule, plp, " (tie-break stage)")
        sol = second
        iterations += second.iterations
        sol.x = plp.tighten_mwp(sol.x)
    objective = float(plp.model.objective_value(sol.x)) if plp.tie_row >= 0 else float(sol.objective)
    comps = {c: {k: float(sol.x[j]) for k, j in lam.items()} for c, lam in plp.lambdas.items()}
    weights = {"Join": 1.0} if rule.variant == "Join" else plp.weights
    lambdas: dict[str, float] = {}
    for c, vals in comps.items():
        for k, v in vals.items():
            lambdas[k] = lambdas.get(k, 0.0) + weights[c] * v
    return PricingResult(rule, plp.prices_from(sol.x), objective, lambdas, comps,
                         sol.status.value, iterations)


def price_via_primal_duals(instance: MarketInstance, dispatch: Dispatch, variant: str,
                           config: SolverConfig | None = None) -> PricingResult:
    """CH from the relaxed clearing LP or IP from the commitment-fixed LP.

    Prices are the balance, flow and reference-angle duals. The objective and
    per-participant values are total GLOC (CH) or LLOC (IP) evaluated by the
    metrics oracle at those prices.
    """
    config = config or SolverConfig()
    rule = PricingRule.parse(variant)
    if rule.variant not in ("CH", "IP"):
        raise ValueError("primal duals give CH or IP prices only")
    dm = build_dcopf(instance)
    model = relaxed_model(dm) if rule.variant == "CH" else committed_model(dm, dispatch)
    sol = solve_lp(model, config)
    if sol.status is not Status.OPTIMAL:
        raise PricingError(f"{rule.label} primal LP: {sol.status.value}")
    prices = PriceSystem(sol.duals[dm.balance_rows], sol.duals[dm.flow_rows], sol.duals[dm.pin_rows])
    report = compute_locs(instance, dispatch, prices, config)
    attr = "gloc" if rule.variant == "CH" else "lloc"
    lambdas = {e.id: getattr(e, attr) for e in report.entries}
    return PricingResult(rule, prices, float(sum(lambdas.values())), lambdas,
                         {rule.variant: dict(lambdas)}, sol.status.value, sol.iterations, "primal-duals")


# ---------------------------------------------------------------- Pareto sweep

def simplex_grid(n: int) -> list[tuple[float, float, float]]:
    """All weights (i, j, k) / n with i + j + k = n, sorted lexicographically."""
    if n < 1:
        raise ValueError("grid resolution must be a positive integer")
    pts = [(i / n, j / n, (n - i - j) / n) for i in range(n + 1) for j in range(n + 1 - i)]
    return sorted(pts)


@dataclass(frozen=True)
class ParetoPoint:
    weights: tuple[float, float, float]
    prices: PriceSystem | None
    gloc: float
    lloc: float
    mwp: float
    objective: float = float("nan")
    error: str | None = None


def pareto_sweep(instance: MarketInstance, dispatch: Dispatch, grid_resolution: int,
                 config: SolverConfig | None = None) -> list[ParetoPoint]:
    """Scalarized prices over the weight simplex, audited by the metrics oracle."""
    out = []
    for w in simplex_grid(grid_resolution):
        try:
            res = price(instance, dispatch, PricingRule.scalarized(*w), config)
            rep = compute_locs(instance, dispatch, res.prices, config)
            out.append(ParetoPoint(w, res.prices, rep.gloc, rep.lloc, rep.mwp, res.objective))
        except Exception as exc:  # record and keep sweeping
            nan = float("nan")
            out.append(ParetoPoint(w, None, nan, nan, nan, error=f"{type(exc).__name__}: {exc}"))
    return out
