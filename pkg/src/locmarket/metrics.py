"""Utilities and lost-opportunity costs of every participant at given prices.

This module is the independent check on the pricing LPs: each participant's
best response is solved as its own small primal problem (or in closed form
for lines), never through the dual formulations in :mod:`locmarket.pricing`.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dcopf import Dispatch
from .linprog import INF, LpBuilder, SolverConfig, Status, solve_lp, solve_milp
from .market import BuyerSpec, MarketInstance, SellerSpec
from .prices import PriceSystem

DEFAULT_TOL = 1e-6


class MetricsError(RuntimeError):
    pass


@dataclass(frozen=True)
class Participant:
    """A buyer, a seller, or one line in one period."""

    kind: str  # "buyer" | "seller" | "line"
    id: str
    index: int
    period: int | None = None

    @property
    def key(self) -> str:
        return self.id if self.period is None else f"{self.id}[{self.period + 1}]"


def participants(instance: MarketInstance) -> list[Participant]:
    out = [Participant("buyer", b.id, i) for i, b in enumerate(instance.buyers)]
    out += [Participant("seller", s.id, i) for i, s in enumerate(instance.sellers)]
    out += [Participant("line", ln.id, k, t)
            for k, ln in enumerate(instance.lines) for t in range(instance.periods)]
    return out


def find_participant(instance: MarketInstance, key: str) -> Participant:
    for p in participants(instance):
        if p.key == key or (p.period is None and p.id == key):
            return p
    raise KeyError(f"unknown participant {key!r}")


# ---------------------------------------------------------------- ladders

def valuation(ladder, quantity: float) -> float:
    """Value of ``quantity`` elastic units, filling the best-valued steps first."""
    value, left = 0.0, max(quantity, 0.0)
    for price, q in sorted(ladder, key=lambda s: -s.price):
        take = min(q, left)
        value += price * take
        left -= take
        if left <= 1e-12:
            break
    return value


def offer_cost(ladder, quantity: float) -> float:
    """Variable cost of ``quantity`` units, filling the cheapest steps first."""
    cost, left = 0.0, max(quantity, 0.0)
    for price, q in sorted(ladder, key=lambda s: s.price):
        take = min(q, left)
        cost += price * take
        left -= take
        if left <= 1e-12:
            break
    if left > 1e-7:
        raise MetricsError(f"output {quantity} exceeds the offered quantity")
    return cost


def _node(instance: MarketInstance, node: str) -> int:
    return instance.nodes.index(node)


# ---------------------------------------------------------------- utilities

def realized_utility(instance: MarketInstance, participant: Participant, prices: PriceSystem,
                     dispatch: Dispatch) -> float:
    """Quasilinear utility of the assigned allocation at ``prices``.

    The inelastic demand block carries no value, so a buyer's utility is the
    value of elastic consumption minus the payment for all consumption.
    """
    T = instance.periods
    if participant.kind == "buyer":
        b = instance.buyers[participant.index]
        v = _node(instance, b.node)
        return float(sum(valuation(b.bids[t], dispatch.x[participant.index, t] - b.pmin[t])
                         - prices.p[v, t] * dispatch.x[participant.index, t] for t in range(T)))
    if participant.kind == "seller":
        s = instance.sellers[participant.index]
        v = _node(instance, s.node)
        i = participant.index
        return float(sum(prices.p[v, t] * dispatch.y[i, t] - offer_cost(s.offers[t], dispatch.y[i, t])
                         - s.no_load * dispatch.u[i, t] for t in range(T)))
    if participant.kind == "line":
        k, t = participant.index, participant.period
        return float(prices.gamma[k, t] * dispatch.f[k, t])
    raise KeyError(f"unknown participant kind {participant.kind!r}")


def make_whole_utility(instance: MarketInstance, participant: Participant, prices: PriceSystem,
                       dispatch: Dispatch) -> float:
    """Utility used for make-whole accounting.

    Payments for inelastic demand are a fixed obligation and are not made
    whole, so a buyer's make-whole utility counts only the elastic part of
    its consumption. Pure inelastic buyers therefore never need a make-whole
    payment. For sellers and lines this is the realized utility.
    """
    u = realized_utility(instance, participant, prices, dispatch)
    if participant.kind == "buyer":
        b = instance.buyers[participant.index]
        v = _node(instance, b.node)
        u += float(sum(prices.p[v, t] * b.pmin[t] for t in range(instance.periods)))
    return u


def _buyer_best(b: BuyerSpec, prices: PriceSystem, v: int, T: int, config: SolverConfig) -> float:
    m = LpBuilder("max")
    for t in range(T):
        steps = [m.add_var(f"e[{t},{k}]", 0.0, stp.quantity, stp.price - prices.p[v, t])
                 for k, stp in enumerate(b.bids[t])]
        if steps:
            m.add_row(f"cap[{t}]", {j: 1.0 for j in steps}, ub=b.pmax[t] - b.pmin[t])
        m.offset -= prices.p[v, t] * b.pmin[t]
    sol = solve_lp(m.build(), config)
    if sol.status is not Status.OPTIMAL:
        raise MetricsError(f"buyer {b.id} best response: {sol.status.value}")
    return sol.objective


def _seller_best(s: SellerSpec, prices: PriceSystem, v: int, T: int, config: SolverConfig,
                 commitment: np.ndarray | None) -> float:
    """Best profit over the seller's own feasible set.

    With ``commitment`` given, on/off status is fixed to it; otherwise the
    commitment is a free binary decision subject to minimum uptime.
    """
    m = LpBuilder("max")
    u = []
    for t in range(T):
        if s.convex:
            ut = None
        elif commitment is not None:
            val = float(commitment[t])
            ut = m.add_var(f"u[{t}]", val, val, -s.no_load)
        else:
            ut = m.add_var(f"u[{t}]", 0.0, 1.0, -s.no_load, binary=True)
        u.append(ut)
        steps = []
        for k, stp in enumerate(s.offers[t]):
            j = m.add_var(f"y[{t},{k}]", 0.0, stp.quantity, prices.p[v, t] - stp.price)
            if ut is not None:
                m.add_row(f"on[{t},{k}]", {j: 1.0, ut: -stp.quantity}, ub=0.0)
            steps.append(j)
        total = {j: 1.0 for j in steps}
        if ut is None:
            m.add_row(f"range[{t}]", total, 0.0, s.pmax[t])
        else:
            m.add_row(f"lo[{t}]", {**total, ut: -s.pmin[t]}, lb=0.0)
            m.add_row(f"hi[{t}]", {**total, ut: -s.pmax[t]}, ub=0.0)
    if not s.convex:
        starts = {t: m.add_var(f"start[{t}]", 0.0, 1.0) for t in range(1, T)}
        for t in range(1, T):
            m.add_row(f"start[{t}]", {starts[t]: 1.0, u[t]: -1.0, u[t - 1]: 1.0}, lb=0.0)
            coefs = {starts[k]: 1.0 for k in range(max(1, t - s.min_uptime + 1), t + 1)}
            coefs[u[t]] = coefs.get(u[t], 0.0) - 1.0
            m.add_row(f"uptime[{t}]", coefs, ub=0.0)
    model = m.build()
    sol = solve_milp(model, config) if model.has_binaries else solve_lp(model, config)
    if sol.status is not Status.OPTIMAL:
        raise MetricsError(f"seller {s.id} best response: {sol.status.value}")
    return sol.objective


def line_best(gamma: float, fmin: float, fmax: float) -> float:
    """Best congestion rent over the flow limits."""
    return max(gamma * fmin, gamma * fmax)


def indirect_utility(instance: MarketInstance, participant: Participant, prices: PriceSystem,
                     scope: str = "global", dispatch: Dispatch | None = None,
                     config: SolverConfig | None = None) -> float:
    """Best attainable utility at ``prices``.

    ``scope="local"`` keeps the seller's commitment at the dispatch value;
    it coincides with the global scope for buyers and lines.
    """
    config = config or SolverConfig()
    T = instance.periods
    if scope not in ("global", "local"):
        raise ValueError(f"unknown scope {scope!r}")
    if participant.kind == "buyer":
        b = instance.buyers[participant.index]
        return _buyer_best(b, prices, _node(instance, b.node), T, config)
    if participant.kind == "seller":
        s = instance.sellers[participant.index]
        commitment = None
        if scope == "local":
            if dispatch is None:
                raise ValueError("local scope needs the dispatch for commitment context")
            commitment = dispatch.u[participant.index]
        return _seller_best(s, prices, _node(instance, s.node), T, config, commitment)
    if participant.kind == "line":
        ln = instance.lines[participant.index]
        return line_best(prices.gamma[participant.index, participant.period], ln.fmin, ln.fmax)
    raise KeyError(f"unknown participant kind {participant.kind!r}")


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class ParticipantLoc:
    id: str
    kind: str
    gloc: float
    lloc: float
    mwp: float
    utility: float
    indirect_global: float
    indirect_local: float


@dataclass(frozen=True)
class CongestionDiagnostic:
    line: str
    period: int
    flow: float
    fmin: float
    fmax: float
    gamma: float
    lloc: float
    flag: str | None


FALSE_CONGESTION = "false congestion signal"
MISSING_CONGESTION = "missing congestion signal"


@dataclass(frozen=True)
class LocReport:
    entries: tuple[ParticipantLoc, ...]
    congestion: tuple[CongestionDiagnostic, ...] = field(default=())

    @property
    def gloc(self) -> float:
        return float(sum(e.gloc for e in self.entries))

    @property
    def lloc(self) -> float:
        return float(sum(e.lloc for e in self.entries))

    @property
    def mwp(self) -> float:
        return float(sum(e.mwp for e in self.entries))

    @property
    def totals(self) -> dict[str, float]:
        return {"gloc": self.gloc, "lloc": self.lloc, "mwp": self.mwp}

    def subtotal(self, kinds=("buyer", "seller")) -> dict[str, float]:
        sel = [e for e in self.entries if e.kind in kinds]
        return {k: float(sum(getattr(e, k) for e in sel)) for k in ("gloc", "lloc", "mwp")}

    def entry(self, key: str) -> ParticipantLoc:
        for e in self.entries:
            if e.id == key:
                return e
        raise KeyError(key)

    @property
    def flags(self) -> list[CongestionDiagnostic]:
        return [c for c in self.congestion if c.flag]

    def to_dict(self) -> dict:
        return {
            "participants": [asdict(e) for e in self.entries],
            "totals": self.totals,
            "congestion": [asdict(c) for c in self.congestion],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "kind", "gloc", "lloc", "mwp", "utility"])
        for e in self.entries:
            w.writerow([e.id, e.kind, f"{e.gloc:.2f}", f"{e.lloc:.2f}", f"{e.mwp:.2f}", f"{e.utility:.2f}"])
        return buf.getvalue()


def _clean(v: float, scale: float) -> float:
    # solver round-off around zero
    return 0.0 if abs(v) <= 1e-9 * (1.0 + scale) else float(v)


def participant_loc(instance: MarketInstance, participant: Participant, prices: PriceSystem,
                    dispatch: Dispatch, config: SolverConfig | None = None) -> ParticipantLoc:
    u = realized_utility(instance, participant, prices, dispatch)
    g = indirect_utility(instance, participant, prices, "global", dispatch, config)
    loc = indirect_utility(instance, participant, prices, "local", dispatch, config)
    scale = max(abs(u), abs(g), abs(loc))
    mwp = max(-make_whole_utility(instance, participant, prices, dispatch), 0.0)
    return ParticipantLoc(participant.key, participant.kind, _clean(g - u, scale), _clean(loc - u, scale),
                          _clean(mwp, scale), u, g, loc)


def congestion_diagnostics(instance: MarketInstance, dispatch: Dispatch, prices: PriceSystem,
                           tol: float = DEFAULT_TOL) -> list[CongestionDiagnostic]:
    """Compare congestion prices with where the flows actually sit.

    A line strictly inside its limits with a nonzero congestion price sends a
    false congestion signal. A line at a limit whose congestion price does not
    reward the direction it is pushed in (zero, or the wrong sign, which leaves
    the line operator with a local lost opportunity) has a missing signal.
    """
    out = []
    for k, ln in enumerate(instance.lines):
        for t in range(instance.periods):
            f, g = float(dispatch.f[k, t]), float(prices.gamma[k, t])
            lloc = line_best(g, ln.fmin, ln.fmax) - g * f
            at_hi = f >= ln.fmax - tol
            at_lo = f <= ln.fmin + tol
            flag = None
            if not at_hi and not at_lo:
                if abs(g) > tol:
                    flag = FALSE_CONGESTION
            elif at_hi and not at_lo:
                if g <= tol:
                    flag = MISSING_CONGESTION
            elif at_lo and not at_hi:
                if -g <= tol:
                    flag = MISSING_CONGESTION
            out.append(CongestionDiagnostic(ln.id, t + 1, f, ln.fmin, ln.fmax, g, _clean(lloc, abs(g * f)), flag))
    return out


def compute_locs(instance: MarketInstance, dispatch: Dispatch, prices: PriceSystem,
                 config: SolverConfig | None = None, tol: float = DEFAULT_TOL) -> LocReport:
    """GLOC, LLOC and make-whole payment for every participant."""
    prices.check_shape(instance)
    entries = tuple(participant_loc(instance, p, prices, dispatch, config) for p in participants(instance))
    return LocReport(entries, tuple(congestion_diagnostics(instance, dispatch, prices, tol)))
