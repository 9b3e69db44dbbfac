"""Market instances: network, buyers, sellers, validation and JSON I/O.

Quantities are MWh, prices $/MWh and no-load costs $ per committed period.
Periods are indexed from 0 internally; JSON lists are per period in order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping, NamedTuple

import jsonschema
import numpy as np


class Step(NamedTuple):
    """One ladder step: a price (bid value or offer cost) and its quantity."""

    price: float
    quantity: float


@dataclass(frozen=True)
class Line:
    id: str
    from_node: str
    to_node: str
    susceptance: float
    fmin: float
    fmax: float


@dataclass(frozen=True)
class Network:
    nodes: tuple[str, ...]
    reference: str
    lines: tuple[Line, ...] = ()

    def node_index(self, node: str) -> int:
        return self.nodes.index(node)


@dataclass(frozen=True)
class BuyerSpec:
    """Per period: inelastic demand ``pmin``, cap ``pmax`` and a bid ladder."""

    id: str
    node: str
    pmin: tuple[float, ...]
    pmax: tuple[float, ...]
    bids: tuple[tuple[Step, ...], ...]

    @property
    def inelastic_only(self) -> bool:
        return all(not ladder for ladder in self.bids) or all(
            hi <= lo for lo, hi in zip(self.pmin, self.pmax))


@dataclass(frozen=True)
class SellerSpec:
    """Per period offer ladder and output range, plus no-load cost and
    minimum uptime (in periods)."""

    id: str
    node: str
    pmin: tuple[float, ...]
    pmax: tuple[float, ...]
    offers: tuple[tuple[Step, ...], ...]
    no_load: float = 0.0
    min_uptime: int = 1

    @property
    def convex(self) -> bool:
        """No commitment decision is needed: zero minimum output and no-load cost."""
        return self.no_load == 0.0 and all(p == 0.0 for p in self.pmin)


@dataclass(frozen=True)
class MarketInstance:
    network: Network
    periods: int
    buyers: tuple[BuyerSpec, ...]
    sellers: tuple[SellerSpec, ...]
    name: str = ""
    currency: str = "$"
    unit: str = "MWh"

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.network.nodes

    @property
    def lines(self) -> tuple[Line, ...]:
        return self.network.lines

    def buyer(self, bid: str) -> BuyerSpec:
        for b in self.buyers:
            if b.id == bid:
                return b
        raise KeyError(f"unknown buyer {bid!r}")

    def seller(self, sid: str) -> SellerSpec:
        for s in self.sellers:
            if s.id == sid:
                return s
        raise KeyError(f"unknown seller {sid!r}")

    def line(self, lid: str) -> Line:
        for ln in self.network.lines:
            if ln.id == lid:
                return ln
        raise KeyError(f"unknown line {lid!r}")


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" | "warning"
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.path}: {self.message}"


class InstanceParseError(ValueError):
    """The JSON document does not match the instance schema."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class InvalidInstanceError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = [d for d in diagnostics if d.level == "error"]
        super().__init__("; ".join(str(d) for d in self.diagnostics))


# ---------------------------------------------------------------- validation

def validate(instance: MarketInstance) -> list[Diagnostic]:
    """Check all structural invariants. Errors make the instance unusable;
    warnings flag data the pricing theory does not cover well."""
    out: list[Diagnostic] = []

    def err(path, msg):
        out.append(Diagnostic("error", path, msg))

    def warn(path, msg):
        out.append(Diagnostic("warning", path, msg))

    net = instance.network
    T = instance.periods
    if T < 1:
        err("periods", "at least one period is required")
    if not net.nodes:
        err("network.nodes", "no nodes")
    if len(set(net.nodes)) != len(net.nodes):
        err("network.nodes", "duplicate node identifiers")
    if net.reference not in net.nodes:
        err("network.reference", f"reference node {net.reference!r} is not a node")

    pairs: set[frozenset] = set()
    line_ids: set[str] = set()
    for i, ln in enumerate(net.lines):
        p = f"network.lines[{i}]"
        if ln.id in line_ids:
            err(p, f"duplicate line id {ln.id!r}")
        line_ids.add(ln.id)
        for end in (ln.from_node, ln.to_node):
            if end not in net.nodes:
                err(p, f"unknown node {end!r}")
        if ln.from_node == ln.to_node:
            err(p, "line connects a node to itself")
        pair = frozenset((ln.from_node, ln.to_node))
        if pair in pairs:
            err(p, "multiple lines between the same pair of nodes")
        pairs.add(pair)
        if not ln.susceptance > 0:
            err(p, "nonpositive susceptance")
        if ln.fmin > ln.fmax:
            err(p, "empty flow range")

    def check_series(p, name, values):
        if len(values) != T:
            err(p, f"{name} has {len(values)} entries, expected {T}")
            return False
        if not all(np.isfinite(values)):
            err(p, f"{name} has non-finite entries")
            return False
        return True

    ids: set[str] = set()
    for i, b in enumerate(instance.buyers):
        p = f"buyers[{i}]"
        if b.id in ids:
            err(p, f"duplicate participant id {b.id!r}")
        ids.add(b.id)
        if b.node not in net.nodes:
            err(p, f"unknown node {b.node!r}")
        ok = check_series(p, "pmin", b.pmin) & check_series(p, "pmax", b.pmax)
        if len(b.bids) != T:
            err(p, f"bids has {len(b.bids)} ladders, expected {T}")
            ok = False
        if not ok:
            continue
        for t in range(T):
            if b.pmin[t] < 0:
                err(f"{p}.pmin[{t}]", "negative inelastic demand")
            if b.pmin[t] > b.pmax[t]:
                err(f"{p}.pmax[{t}]", "empty demand range")
            ladder = b.bids[t]
            for k, stp in enumerate(ladder):
                if stp.quantity < 0:
                    err(f"{p}.bids[{t}][{k}]", "negative quantity")
            values = [stp.price for stp in ladder]
            if any(a < c for a, c in zip(values, values[1:])):
                warn(f"{p}.bids[{t}]", "bid values increase along the ladder (non-concave valuation)")

    for i, s in enumerate(instance.sellers):
        p = f"sellers[{i}]"
        if s.id in ids:
            err(p, f"duplicate participant id {s.id!r}")
        ids.add(s.id)
        if s.node not in net.nodes:
            err(p, f"unknown node {s.node!r}")
        ok = check_series(p, "pmin", s.pmin) & check_series(p, "pmax", s.pmax)
        if len(s.offers) != T:
            err(p, f"offers has {len(s.offers)} ladders, expected {T}")
            ok = False
        if not 1 <= s.min_uptime <= max(T, 1):
            err(f"{p}.min_uptime", f"minimum uptime must lie in [1, {T}]")
        if s.no_load < 0:
            warn(f"{p}.no_load", "negative no-load cost")
        if not ok:
            continue
        for t in range(T):
            ladder = s.offers[t]
            if s.pmin[t] < 0:
                err(f"{p}.pmin[{t}]", "negative minimum output")
            if s.pmin[t] > s.pmax[t]:
                err(f"{p}.pmax[{t}]", "empty operating range")
            for k, stp in enumerate(ladder):
                if stp.quantity < 0:
                    err(f"{p}.offers[{t}][{k}]", "negative quantity")
                if stp.price < 0:
                    warn(f"{p}.offers[{t}][{k}]", "negative offer cost")
            offered = sum(stp.quantity for stp in ladder)
            if s.pmax[t] > offered + 1e-9:
                err(f"{p}.pmax[{t}]", f"maximum output {s.pmax[t]} exceeds offered quantity {offered}")
            costs = [stp.price for stp in ladder]
            if any(a > c for a, c in zip(costs, costs[1:])):
                warn(f"{p}.offers[{t}]", "offer costs decrease along the ladder (non-convex cost)")
    return out


def errors(instance: MarketInstance) -> list[Diagnostic]:
    return [d for d in validate(instance) if d.level == "error"]


def require_valid(instance: MarketInstance) -> None:
    errs = errors(instance)
    if errs:
        raise InvalidInstanceError(errs)


# ---------------------------------------------------------------- JSON

def load_schema(name: str) -> dict:
    text = resources.files("locmarket").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def check_schema(document: Mapping[str, Any], name: str) -> None:
    """Raise :class:`InstanceParseError` naming the first offending path."""
    schema = load_schema(name)
    validator = jsonschema.Draft202012Validator(schema)
    problems = sorted(validator.iter_errors(document), key=lambda e: list(map(str, e.absolute_path)))
    if problems:
        e = problems[0]
        path = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in e.absolute_path)
        raise InstanceParseError(path, e.message)


def _ladder(items) -> tuple[Step, ...]:
    return tuple(Step(float(d["price"]), float(d["quantity"])) for d in items)


def load_instance(document: str | bytes | Mapping[str, Any]) -> MarketInstance:
    """Parse a JSON document (text or already-decoded mapping)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise InstanceParseError("$", f"malformed JSON: {exc.msg} at line {exc.lineno}") from exc
    if not isinstance(document, Mapping):
        raise InstanceParseError("$", "top level must be an object")
    check_schema(document, "instance")
    net = document["network"]
    lines = tuple(
        Line(
            id=d.get("id", f"{d['from']}-{d['to']}"),
            from_node=d["from"], to_node=d["to"], susceptance=float(d["susceptance"]),
            fmin=float(d["fmin"]), fmax=float(d["fmax"]),
        )
        for d in net["lines"]
    )
    buyers = tuple(
        BuyerSpec(
            id=d["id"], node=d["node"],
            pmin=tuple(map(float, d["pmin"])), pmax=tuple(map(float, d["pmax"])),
            bids=tuple(_ladder(lad) for lad in d["bids"]),
        )
        for d in document["buyers"]
    )
    sellers = tuple(
        SellerSpec(
            id=d["id"], node=d["node"],
            pmin=tuple(map(float, d["pmin"])), pmax=tuple(map(float, d["pmax"])),
            offers=tuple(_ladder(lad) for lad in d["offers"]),
            no_load=float(d["no_load"]), min_uptime=int(d["min_uptime"]),
        )
        for d in document["sellers"]
    )
    return MarketInstance(
        network=Network(tuple(net["nodes"]), net["reference"], lines),
        periods=int(document["periods"]), buyers=buyers, sellers=sellers,
        name=document.get("name", ""), currency=document.get("currency", "$"),
        unit=document.get("unit", "MWh"),
    )


def _ladder_doc(ladder) -> list[dict]:
    return [{"price": stp.price, "quantity": stp.quantity} for stp in ladder]


def dump_instance(instance: MarketInstance) -> dict:
    net = instance.network
    return {
        "name": instance.name,
        "currency": instance.currency,
        "unit": instance.unit,
        "periods": instance.periods,
        "network": {
            "nodes": list(net.nodes),
            "reference": net.reference,
            "lines": [
                {"id": ln.id, "from": ln.from_node, "to": ln.to_node,
                 "susceptance": ln.susceptance, "fmin": ln.fmin, "fmax": ln.fmax}
                for ln in net.lines
            ],
        },
        "buyers": [
            {"id": b.id, "node": b.node, "pmin": list(b.pmin), "pmax": list(b.pmax),
             "bids": [_ladder_doc(lad) for lad in b.bids]}
            for b in instance.buyers
        ],
        "sellers": [
            {"id": s.id, "node": s.node, "pmin": list(s.pmin), "pmax": list(s.pmax),
             "offers": [_ladder_doc(lad) for lad in s.offers],
             "no_load": s.no_load, "min_uptime": s.min_uptime}
            for s in instance.sellers
        ],
    }


def dumps_instance(instance: MarketInstance, indent: int | None = 2) -> str:
    return json.dumps(dump_instance(instance), indent=indent)


# ---------------------------------------------------------------- builders

def inelastic_buyer(bid: str, node: str, demand: list[float] | float, periods: int = 1) -> BuyerSpec:
    d = [float(demand)] * periods if np.isscalar(demand) else [float(v) for v in demand]
    return BuyerSpec(bid, node, tuple(d), tuple(d), tuple(() for _ in d))


def simple_seller(sid: str, node: str, pmin: float, pmax: float, cost: float, no_load: float,
                  periods: int = 1, min_uptime: int = 1) -> SellerSpec:
    """Single-step offer at constant marginal cost over the whole range."""
    return SellerSpec(
        sid, node, (float(pmin),) * periods, (float(pmax),) * periods,
        tuple((Step(float(cost), float(pmax)),) for _ in range(periods)),
        float(no_load), int(min_uptime),
    )


def two_node(name: str, sellers: list[SellerSpec], buyers: list[BuyerSpec], capacity: float) -> MarketInstance:
    net = Network(("n1", "n2"), "n1", (Line("n1-n2", "n1", "n2", 1.0, -capacity, capacity),))
    return MarketInstance(net, 1, tuple(buyers), tuple(sellers), name=name)


# ---------------------------------------------------------------- fixtures

def _example1() -> MarketInstance:
    return two_node(
        "example1",
        [simple_seller("s1", "n1", 2, 15, 10, 1000), simple_seller("s2", "n2", 8, 15, 1, 10)],
        [inelastic_buyer("b1", "n1", 3), inelastic_buyer("b2", "n2", 1)],
        capacity=2,
    )


def _example2() -> MarketInstance:
    return two_node(
        "example2",
        [simple_seller("s1", "n1", 2, 8, 1, 100), simple_seller("s2", "n2", 8, 15, 10, 100)],
        [inelastic_buyer("b1", "n1", 6), inelastic_buyer("b2", "n2", 1)],
        capacity=4,
    )


def _example3() -> MarketInstance:
    elastic = BuyerSpec("b2", "n2", (0.0,), (3.0,), ((Step(50.0, 3.0),),))
    return two_node(
        "example3",
        [simple_seller("s1", "n1", 2, 50, 10, 1000), simple_seller("s2", "n2", 8, 15, 10, 10)],
        [inelastic_buyer("b1", "n1", 4), elastic],
        capacity=2,
    )


def _convex_demo() -> MarketInstance:
    T = 2
    net = Network(
        ("n1", "n2", "n3"), "n1",
        (
            Line("n1-n2", "n1", "n2", 10.0, -40.0, 40.0),
            Line("n2-n3", "n2", "n3", 10.0, -40.0, 40.0),
            Line("n1-n3", "n1", "n3", 10.0, -15.0, 15.0),
        ),
    )

    def seller(sid, node, steps):
        pmax = sum(q for _, q in steps)
        ladder = tuple(Step(c, q) for c, q in steps)
        return SellerSpec(sid, node, (0.0,) * T, (pmax,) * T, (ladder,) * T, 0.0, 1)

    sellers = (
        seller("g1", "n1", [(12.0, 40.0), (18.0, 30.0)]),
        seller("g2", "n2", [(25.0, 30.0), (40.0, 20.0)]),
        seller("g3", "n3", [(60.0, 50.0)]),
    )
    buyers = (
        BuyerSpec("d1", "n3", (20.0, 35.0), (60.0, 75.0),
                  ((Step(90.0, 25.0), Step(45.0, 15.0)), (Step(95.0, 25.0), Step(50.0, 15.0)))),
        BuyerSpec("d2", "n2", (10.0, 10.0), (30.0, 30.0),
                  ((Step(70.0, 20.0),), (Step(30.0, 20.0),))),
    )
    return MarketInstance(net, T, buyers, sellers, name="convex-demo")


def _rts_mini(seed: int = 24) -> MarketInstance:
    """Synthetic 24-node, 24-period unit-commitment stress case."""
    rng = np.random.default_rng(seed)
    V, T = 24, 24
    nodes = tuple(f"n{i + 1}" for i in range(V))
    lines = []
    edges = [(i, (i + 1) % V) for i in range(V)]
    edges += [(i, (i + 7) % V) for i in range(0, V, 3)]
    seen = set()
    for a, b in edges:
        key = frozenset((a, b))
        if key in seen:
            continue
        seen.add(key)
        cap = float(rng.choice([175.0, 250.0, 500.0]))
        lines.append(Line(f"{nodes[a]}-{nodes[b]}", nodes[a], nodes[b],
                          round(float(rng.uniform(5.0, 20.0)), 2), -cap, cap))

    hours = np.arange(T)
    shape = 0.62 + 0.38 * np.exp(-((hours - 18) / 4.5) ** 2) + 0.18 * np.exp(-((hours - 10) / 3.0) ** 2)
    load_nodes = sorted(rng.choice(V, size=17, replace=False).tolist())
    buyers = []
    for k, v in enumerate(load_nodes):
        base = float(rng.uniform(60.0, 160.0))
        pmin = tuple(round(base * s, 2) for s in shape)
        flex = tuple(round(0.12 * base * s, 2) for s in shape)
        top, low = float(rng.uniform(150.0, 250.0)), float(rng.uniform(40.0, 90.0))
        bids = tuple((Step(round(top, 2), round(f / 2, 2)), Step(round(low, 2), round(f / 2, 2))) for f in flex)
        pmax = tuple(round(lo + 2 * round(f / 2, 2), 2) for lo, f in zip(pmin, flex))
        buyers.append(BuyerSpec(f"d{k + 1}", nodes[v], pmin, pmax, bids))

    kinds = (["base"] * 6) + (["mid"] * 10) + (["peak"] * 11) + (["wind"] * 3)
    sellers = []
    for k, kind in enumerate(kinds):
        v = int(rng.integers(V))
        if kind == "base":
            pmax, frac, c0, h, R = rng.uniform(250, 350), 0.4, rng.uniform(8, 14), rng.uniform(400, 800), 8
        elif kind == "mid":
            pmax, frac, c0, h, R = rng.uniform(100, 180), 0.3, rng.uniform(20, 32), rng.uniform(120, 300), 3
        elif kind == "peak":
            pmax, frac, c0, h, R = rng.uniform(40, 90), 0.25, rng.uniform(55, 95), rng.uniform(20, 80), 1
        else:
            pmax, frac, c0, h, R = rng.uniform(60, 120), 0.0, rng.uniform(0, 2), 0.0, 1
        pmax = round(float(pmax), 1)
        q = [round(pmax * 0.5, 2), round(pmax * 0.3, 2)]
        q.append(round(pmax - sum(q), 2))
        costs = [round(float(c0), 2), round(float(c0) * 1.15, 2), round(float(c0) * 1.3, 2)]
        ladder = tuple(Step(c, qq) for c, qq in zip(costs, q))
        avail = np.ones(T)
        if kind == "wind":
            avail = np.clip(0.45 + 0.35 * np.sin(hours / 3.7 + k), 0.05, 1.0)
        pmaxs = tuple(round(float(pmax * a), 2) for a in avail)
        offers = tuple(tuple(Step(c, round(qq * a, 2)) for c, qq in zip(costs, q)) for a in avail)
        pmaxs = tuple(min(pm, round(sum(stp.quantity for stp in lad), 2)) for pm, lad in zip(pmaxs, offers))
        pmin = tuple(round(frac * pmax, 1) for _ in range(T))
        sellers.append(SellerSpec(f"g{k + 1}", nodes[v], pmin, pmaxs, offers if kind == "wind" else (ladder,) * T,
                                  round(float(h), 1), R))
    return MarketInstance(Network(nodes, nodes[0], tuple(lines)), T, tuple(buyers), tuple(sellers),
                          name="rts-mini")


_FIXTURES = {
    "example1": _example1,
    "example2": _example2,
    "example3": _example3,
    "convex-demo": _convex_demo,
    "rts-mini": _rts_mini,
}

FIXTURE_NAMES = tuple(_FIXTURES)


def fixture(name: str) -> MarketInstance:
    try:
        return _FIXTURES[name]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(_FIXTURES)}") from None
