"""Seeded random market instances for property tests."""

from __future__ import annotations

import numpy as np

from locmarket.dcopf import DispatchInfeasible, solve_dispatch
from locmarket.market import BuyerSpec, Line, MarketInstance, Network, SellerSpec, Step


def random_instance(rng: np.random.Generator, *, max_nodes=4, max_sellers=4, max_periods=3,
                    max_buyers=3, convex=False, inelastic_only=False) -> MarketInstance:
    V = int(rng.integers(1, max_nodes + 1))
    T = int(rng.integers(1, max_periods + 1))
    nodes = tuple(f"n{i + 1}" for i in range(V))
    edges = [(int(rng.integers(i)), i) for i in range(1, V)]
    if V >= 3 and rng.random() < 0.5:
        a, b = sorted(rng.choice(V, 2, replace=False).tolist())
        if (a, b) not in edges and (b, a) not in edges:
            edges.append((a, b))
    lines = []
    for a, b in edges:
        cap = round(float(rng.uniform(2, 30)), 2)
        lo = -cap if rng.random() < 0.8 else -round(cap * float(rng.uniform(0, 1)), 2)
        lines.append(Line(f"{nodes[a]}-{nodes[b]}", nodes[a], nodes[b], round(float(rng.uniform(1, 10)), 2), lo, cap))

    sellers = []
    for k in range(int(rng.integers(1, max_sellers + 1))):
        pmax = round(float(rng.uniform(5, 40)), 2)
        nsteps = int(rng.integers(1, 4))
        cuts = np.sort(rng.uniform(0, pmax, nsteps - 1))
        qs = np.diff(np.concatenate([[0.0], cuts, [pmax]]))
        costs = np.sort(rng.uniform(1, 60, nsteps))
        ladder = tuple(Step(round(float(c), 2), float(q)) for c, q in zip(costs, qs))
        pmax = float(sum(s.quantity for s in ladder))
        if convex:
            pmin, h, R = 0.0, 0.0, 1
        else:
            pmin = round(pmax * float(rng.uniform(0.1, 0.6)), 2) if rng.random() < 0.8 else 0.0
            h = round(float(rng.uniform(0, 200)), 2)
            R = int(rng.integers(1, T + 1))
        sellers.append(SellerSpec(f"s{k + 1}", nodes[int(rng.integers(V))], (pmin,) * T, (pmax,) * T,
                                  (ladder,) * T, h, R))

    buyers = []
    for k in range(int(rng.integers(1, max_buyers + 1))):
        pmin = tuple(round(float(rng.uniform(0, 12)), 2) for _ in range(T))
        if inelastic_only:
            bids = tuple(() for _ in range(T))
            pmax = pmin
        else:
            bids = []
            for _ in range(T):
                n = int(rng.integers(0, 3))
                vals = np.sort(rng.uniform(20, 150, n))[::-1]
                bids.append(tuple(Step(round(float(v), 2), round(float(rng.uniform(1, 10)), 2)) for v in vals))
            bids = tuple(bids)
            pmax = tuple(lo + sum(s.quantity for s in lad) for lo, lad in zip(pmin, bids))
        buyers.append(BuyerSpec(f"b{k + 1}", nodes[int(rng.integers(V))], pmin, pmax, bids))
    return MarketInstance(Network(nodes, nodes[0], tuple(lines)), T, tuple(buyers), tuple(sellers))


def feasible_instances(seed: int, count: int, **kw):
    """Yield ``count`` (instance, dispatch) pairs that clear."""
    rng = np.random.default_rng(seed)
    made = 0
    while made < count:
        inst = random_instance(rng, **kw)
        try:
            d = solve_dispatch(inst)
        except DispatchInfeasible:
            continue
        made += 1
        yield inst, d
