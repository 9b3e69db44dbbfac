"""Price vectors shared by the pricing rules and the metrics oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import MarketInstance


@dataclass(frozen=True, eq=False)
class PriceSystem:
    """Nodal prices ``p[v, t]``, congestion prices ``gamma[l, t]`` and
    reference-angle duals ``r[t]``, in instance order."""

    p: np.ndarray
    gamma: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        for name in ("p", "gamma", "r"):
            a = np.array(getattr(self, name), dtype=float)
            a = a + 0.0  # normalise -0.0
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.gamma)) and np.all(np.isfinite(self.r))):
            raise ValueError("price entries must be finite")

    def check_shape(self, instance: MarketInstance) -> None:
        T = instance.periods
        want = {"p": (len(instance.nodes), T), "gamma": (len(instance.lines), T), "r": (T,)}
        for name, shape in want.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @classmethod
    def uniform(cls, instance: MarketInstance, price: float) -> "PriceSystem":
        T = instance.periods
        return cls(np.full((len(instance.nodes), T), float(price)), np.zeros((len(instance.lines), T)),
                   np.zeros(T))

    @classmethod
    def from_nodal(cls, instance: MarketInstance, p) -> "PriceSystem":
        """Complete nodal prices with the congestion prices and reference
        duals implied by the angle dual-feasibility conditions.

        On a tree network this is unique: for every line the congestion
        price is the downstream minus the upstream price. On meshed networks
        a least-squares completion is used and may leave a residual.
        """
        T = instance.periods
        p = np.asarray(p, dtype=float).reshape(len(instance.nodes), T)
        A, col = angle_rows(instance)
        L = len(instance.lines)
        gamma = np.zeros((L, T))
        r = np.zeros(T)
        for t in range(T):
            # rows: per node; unknowns gamma[:, t] and r[t]
            Bg, Br, const = A["gamma"], A["r"], A["p"] @ p[:, t]
            M = np.hstack([Bg, Br[:, None]])
            sol, *_ = np.linalg.lstsq(M, -const, rcond=None)
            gamma[:, t], r[t] = sol[:L], sol[L]
        return cls(p, gamma, r)

    def residual(self, instance: MarketInstance) -> float:
        """Largest violation of the angle dual-feasibility rows."""
        A, _ = angle_rows(instance)
        res = A["p"] @ self.p + A["gamma"] @ self.gamma + A["r"][:, None] * self.r[None, :]
        return float(np.abs(res).max(initial=0.0))

    def to_dict(self, instance: MarketInstance) -> dict:
        return {
            "nodal": {v: self.p[i].tolist() for i, v in enumerate(instance.nodes)},
            "congestion": {ln.id: self.gamma[k].tolist() for k, ln in enumerate(instance.lines)},
            "reference": self.r.tolist(),
        }

    @classmethod
    def from_dict(cls, instance: MarketInstance, doc: dict) -> "PriceSystem":
        p = np.array([doc["nodal"][v] for v in instance.nodes], dtype=float)
        gamma = np.array([doc["congestion"][ln.id] for ln in instance.lines], dtype=float).reshape(
            len(instance.lines), instance.periods)
        return cls(p, gamma, np.array(doc["reference"], dtype=float))


def angle_rows(instance: MarketInstance):
    """Coefficients of the angle dual-feasibility rows, one row per node.

    For a line ``l`` from ``a`` to ``c`` with susceptance ``B`` the term
    ``B (p_a - p_c + gamma_l)`` enters node ``a`` with a plus sign and node
    ``c`` with a minus sign; the reference node also carries ``r``.
    """
    V, L = len(instance.nodes), len(instance.lines)
    nidx = {v: i for i, v in enumerate(instance.nodes)}
    Ap = np.zeros((V, V))
    Ag = np.zeros((V, L))
    for k, ln in enumerate(instance.lines):
        a, c, B = nidx[ln.from_node], nidx[ln.to_node], ln.susceptance
        for node, sgn in ((a, 1.0), (c, -1.0)):
            Ap[node, a] += sgn * B
            Ap[node, c] -= sgn * B
            Ag[node, k] += sgn * B
    Ar = np.zeros(V)
    Ar[nidx[instance.network.reference]] = 1.0
    return {"p": Ap, "gamma": Ag, "r": Ar}, nidx
