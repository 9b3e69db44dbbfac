import functools
import json

import jsonschema
import numpy as np
import pytest

from locmarket.linprog import solve_lp
from locmarket.market import load_schema
from locmarket.metrics import compute_locs
from locmarket.pricing import (
    PricingRule, build_pricing_lp, pareto_sweep, price, price_via_primal_duals, simplex_grid,
)
from locmarket.prices import PriceSystem
from conftest import solved
from randgen import feasible_instances

PURE = ("CH", "IP", "MinMWP", "Join")
EXAMPLES = ("example1", "example2", "example3")


@functools.lru_cache(maxsize=None)
def priced(name, variant):
    inst, d = solved(name)
    return price(inst, d, PricingRule(variant))


@functools.lru_cache(maxsize=None)
def random_markets():
    return tuple(feasible_instances(seed=500, count=25))


# ---------------------------------------------------------------- rules

def test_rule_validation():
    assert PricingRule.scalarized(2, 1, 1).weights == (0.5, 0.25, 0.25)
    assert PricingRule.parse("MinMWP").variant == "MinMWP"
    assert PricingRule.parse("scalarize", (1, 0, 0)).label == "Scalarized(1,0,0)"
    for bad in [lambda: PricingRule("LMP"), lambda: PricingRule.scalarized(-1, 1, 1),
                lambda: PricingRule.scalarized(0, 0, 0), lambda: PricingRule("Scalarized"),
                lambda: PricingRule("CH", (1, 0, 0)), lambda: PricingRule.parse("ip", (1, 1, 1))]:
        with pytest.raises(ValueError):
            bad()


def test_ip_lp_has_no_binaries(example1):
    inst, d = example1
    m = build_pricing_lp(inst, d, PricingRule("IP"))
    assert not m.has_binaries
    assert m.sense.value == "min"


def test_join_adds_one_row_per_buyer_and_seller(example1):
    inst, d = example1
    ip = build_pricing_lp(inst, d, PricingRule("IP"))
    join = build_pricing_lp(inst, d, PricingRule("Join"))
    assert join.var_names == ip.var_names
    assert join.n_rows - ip.n_rows == len(inst.buyers) + len(inst.sellers) == 4
    assert set(join.row_names) - set(ip.row_names) == {"b1.mwp", "b2.mwp", "s1.mwp", "s2.mwp"}


@pytest.mark.parametrize("name", EXAMPLES + ("convex-demo",))
def test_unit_weights_reproduce_pure_rules(name):
    inst, d = solved(name)
    for w, variant in [((1, 0, 0), "CH"), ((0, 1, 0), "IP"), ((0, 0, 1), "MinMWP")]:
        pure = solve_lp(build_pricing_lp(inst, d, PricingRule(variant))).objective
        scal = solve_lp(build_pricing_lp(inst, d, PricingRule.scalarized(*w))).objective
        assert scal == pytest.approx(pure, abs=1e-9)
        assert price(inst, d, PricingRule.scalarized(*w)).objective == pytest.approx(
            priced(name, variant).objective, abs=1e-6)


# ---------------------------------------------------------------- example values

@pytest.mark.parametrize("name, variant, prices, objective", [
    ("example1", "CH", (76.67, 1.67), 958.33),
    ("example1", "IP", (10, 10), 0),
    ("example1", "MinMWP", None, 0),
    ("example1", "Join", (76.67, 76.67), 733.33),
    ("example2", "CH", (13.5, 13.5), 12.5),
    ("example2", "IP", (1, 1), 0),
    ("example2", "MinMWP", None, 0),
    ("example3", "CH", (30, 10.67), 996.67),
    ("example3", "IP", (10, 50), 0),
    ("example3", "MinMWP", None, 253.33),
    ("example3", "Join", (30, 50), 880),
])
def test_example_prices(name, variant, prices, objective):
    res = priced(name, variant)
    assert res.objective == pytest.approx(objective, abs=0.01)
    if prices is not None:
        assert res.prices.p.ravel() == pytest.approx(prices, abs=0.01)


def test_example1_ch_market_subtotal(example1):
    inst, d = example1
    lam = priced("example1", "CH").lambdas
    assert lam["b1"] + lam["b2"] + lam["s1"] + lam["s2"] == pytest.approx(733.33, abs=0.01)
    assert lam["n1-n2[1]"] == pytest.approx(225, abs=1e-6)


def test_convex_demo_rules_agree(convex_demo):
    ref = priced("convex-demo", "CH").prices
    for variant in PURE:
        res = priced("convex-demo", variant)
        assert abs(res.objective) <= 1e-6
        assert res.prices.p == pytest.approx(ref.p, abs=1e-6)


def test_result_serialization(example3):
    inst, _ = example3
    res = priced("example3", "Join")
    doc = json.loads(res.to_json(inst))
    jsonschema.validate(doc, load_schema("pricing"))
    assert PriceSystem.from_dict(inst, doc["prices"]).p == pytest.approx(res.prices.p)
    assert res.objective == pytest.approx(sum(res.lambdas.values()), abs=1e-6)


# ---------------------------------------------------------------- primal duals

@pytest.mark.parametrize("name", EXAMPLES + ("convex-demo",))
@pytest.mark.parametrize("variant", ["CH", "IP"])
def test_primal_duals_match_pricing_lp(name, variant):
    inst, d = solved(name)
    direct = price_via_primal_duals(inst, d, variant)
    assert direct.objective == pytest.approx(priced(name, variant).objective, abs=1e-6)


def test_primal_dual_examples(example1, example2):
    inst, d = example1
    assert price_via_primal_duals(inst, d, "IP").prices.p.ravel() == pytest.approx([10, 10])
    ch = price_via_primal_duals(inst, d, "CH")
    rep = compute_locs(inst, d, ch.prices)
    assert rep.subtotal(("buyer", "seller"))["gloc"] == pytest.approx(733.33, abs=0.01)
    inst2, d2 = example2
    assert price_via_primal_duals(inst2, d2, "IP").prices.p.ravel() == pytest.approx([1, 1])
    with pytest.raises(ValueError):
        price_via_primal_duals(inst, d, "Join")


# ---------------------------------------------------------------- properties

def cases():
    return [solved(n) for n in EXAMPLES] + list(random_markets())


def test_ip_prices_leave_no_local_loss():
    for inst, d in cases():
        rep = compute_locs(inst, d, price(inst, d, PricingRule("IP")).prices)
        assert max(abs(e.lloc) for e in rep.entries) <= 1e-6


def test_join_lambda_is_max_of_lloc_and_mwp():
    for inst, d in cases():
        res = price(inst, d, PricingRule("Join"))
        for e in compute_locs(inst, d, res.prices).entries:
            assert res.lambdas[e.id] == pytest.approx(max(e.lloc, e.mwp), abs=1e-6)


def test_join_dominates_ip_on_mwp():
    for inst, d in cases():
        join = compute_locs(inst, d, price(inst, d, PricingRule("Join")).prices)
        ip = compute_locs(inst, d, price(inst, d, PricingRule("IP")).prices)
        assert join.mwp <= ip.mwp + 1e-6


def test_join_lloc_below_zero_mwp_prices():
    checked = 0
    for inst, d in feasible_instances(seed=600, count=15, inelastic_only=True):
        mwp = price(inst, d, PricingRule("MinMWP"))
        if abs(mwp.objective) > 1e-6:
            continue
        join = price(inst, d, PricingRule("Join"))
        assert compute_locs(inst, d, join.prices).lloc <= compute_locs(inst, d, mwp.prices).lloc + 1e-6
        checked += 1
    assert checked >= 10


@pytest.mark.parametrize("name", EXAMPLES)
def test_ch_beats_every_grid_point(name):
    inst, d = solved(name)
    best = priced(name, "CH").objective
    grid = np.arange(0, 301, 25.0)
    for p1 in grid:
        for p2 in grid:
            ps = PriceSystem.from_nodal(inst, [[p1], [p2]])
            assert compute_locs(inst, d, ps).gloc >= best - 1e-6


@pytest.mark.parametrize("name", EXAMPLES)
def test_join_has_no_improving_single_price_move(name):
    inst, d = solved(name)
    base = priced(name, "Join").prices
    ref = [(e.lloc, e.mwp) for e in compute_locs(inst, d, base).entries]
    for i in range(len(inst.nodes)):
        for step in (0.01, 0.1, 1.0):
            for sign in (1, -1):
                p = np.array(base.p)
                p[i, 0] += sign * step
                now = [(e.lloc, e.mwp) for e in compute_locs(inst, d, PriceSystem.from_nodal(inst, p)).entries]
                weak = all(a <= ra + 1e-9 and m <= rm + 1e-9 for (a, m), (ra, rm) in zip(now, ref))
                strict = any(a < ra - 1e-9 or m < rm - 1e-9 for (a, m), (ra, rm) in zip(now, ref))
                assert not (weak and strict), (i, sign * step)


# ---------------------------------------------------------------- pareto

def test_simplex_grid():
    assert simplex_grid(1) == [(0.0, 0.0, 1.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0)]
    g = simplex_grid(4)
    assert len(g) == 15 and g == sorted(g)
    assert all(abs(sum(w) - 1) < 1e-12 for w in g)
    with pytest.raises(ValueError):
        simplex_grid(0)


def test_pareto_corners_are_pure_rules(example1):
    inst, d = example1
    points = pareto_sweep(inst, d, 1)
    assert [pt.weights for pt in points] == simplex_grid(1)
    gloc = {pt.weights: pt.gloc for pt in points}
    lloc = {pt.weights: pt.lloc for pt in points}
    mwp = {pt.weights: pt.mwp for pt in points}
    assert gloc[(1.0, 0.0, 0.0)] == pytest.approx(priced("example1", "CH").objective, abs=1e-6)
    assert lloc[(0.0, 1.0, 0.0)] == pytest.approx(0, abs=1e-6)
    assert mwp[(0.0, 0.0, 1.0)] == pytest.approx(0, abs=1e-6)
    assert all(pt.error is None for pt in points)


def test_pareto_grid_size(example2):
    inst, d = example2
    points = pareto_sweep(inst, d, 4)
    assert len(points) == 15
    assert [pt.weights for pt in points] == sorted(pt.weights for pt in points)


def test_half_ch_half_ip_is_sandwiched(example1):
    inst, d = example1
    res = price(inst, d, PricingRule.scalarized(0.5, 0.5, 0))
    rep = compute_locs(inst, d, res.prices)
    mixed = 0.5 * rep.gloc + 0.5 * rep.lloc
    assert mixed == pytest.approx(res.objective, abs=1e-6)
    at_ch = compute_locs(inst, d, priced("example1", "CH").prices)
    at_ip = compute_locs(inst, d, priced("example1", "IP").prices)
    assert mixed <= min(0.5 * at_ch.gloc + 0.5 * at_ch.lloc, 0.5 * at_ip.gloc + 0.5 * at_ip.lloc) + 1e-6
    assert mixed >= 0.5 * priced("example1", "CH").objective + 0.5 * priced("example1", "IP").objective - 1e-6


def test_scalarized_lambdas_match_weighted_metrics():
    w = (0.2, 0.5, 0.3)
    for inst, d in cases()[:10]:
        res = price(inst, d, PricingRule.scalarized(*w))
        for e in compute_locs(inst, d, res.prices).entries:
            want = w[0] * e.gloc + w[1] * e.lloc + w[2] * e.mwp
            assert res.lambdas[e.id] == pytest.approx(want, abs=1e-6)
