"""Market clearing and dual pricing for non-convex network markets."""

from .dcopf import Dispatch, build_dcopf, solve_dispatch
from .linprog import SolverConfig
from .market import MarketInstance, fixture, load_instance, validate
from .metrics import LocReport, compute_locs, congestion_diagnostics
from .prices import PriceSystem
from .pricing import PricingResult, PricingRule, pareto_sweep, price, price_via_primal_duals

__all__ = [
    "Dispatch", "build_dcopf", "solve_dispatch", "SolverConfig", "MarketInstance", "fixture",
    "load_instance", "validate", "LocReport", "compute_locs", "congestion_diagnostics",
    "PriceSystem", "PricingResult", "PricingRule", "pareto_sweep", "price", "price_via_primal_duals",
]
