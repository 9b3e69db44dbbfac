"""Sparse LP/MILP model containers and the solver configuration."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

INF = math.inf


class Sense(str, enum.Enum):
    MINIMIZE = "min"
    MAXIMIZE = "max"


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    LIMIT = "limit"


class NumericalError(RuntimeError):
    """Raised when the simplex basis becomes numerically singular."""


class ModelError(ValueError):
    """Malformed model or invalid solver request."""


@dataclass(frozen=True)
class SolverConfig:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-6
    int_tol: float = 1e-6
    max_iter: int = 200_000
    node_limit: int = 100_000
    pivot_rule: str = "dantzig-bland"
    # "simplex" is the in-house engine; "highs" routes through scipy's HiGHS;
    # "auto" picks simplex for small models.
    backend: str = "auto"
    auto_size: int = 150

    def __post_init__(self):
        for name in ("feas_tol", "opt_tol", "int_tol"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be strictly positive")
        if self.max_iter < 1 or self.node_limit < 1:
            raise ModelError("iteration and node limits must be positive")
        if self.backend not in ("auto", "simplex", "highs"):
            raise ModelError(f"unknown backend {self.backend!r}")
        if self.pivot_rule not in ("dantzig-bland", "bland"):
            raise ModelError(f"unknown pivot rule {self.pivot_rule!r}")

    def with_backend(self, backend: str) -> "SolverConfig":
        return replace(self, backend=backend)


@dataclass(frozen=True, eq=False)
class LpModel:
    """An immutable LP/MILP: ``row_lb <= A x <= row_ub``, ``lb <= x <= ub``.

    Rows with equal bounds are equalities. ``offset`` is a constant added to
    the objective value.
    """

    sense: Sense
    var_names: tuple[str, ...]
    lb: np.ndarray
    ub: np.ndarray
    obj: np.ndarray
    binary: np.ndarray
    A: sp.csr_matrix
    row_names: tuple[str, ...]
    row_lb: np.ndarray
    row_ub: np.ndarray
    offset: float = 0.0
    var_index: Mapping[str, int] = field(default_factory=dict, repr=False)
    row_index: Mapping[str, int] = field(default_factory=dict, repr=False)

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_rows(self) -> int:
        return len(self.row_names)

    @property
    def binaries(self) -> np.ndarray:
        return np.flatnonzero(self.binary)

    @property
    def has_binaries(self) -> bool:
        return bool(self.binary.any())

    def var(self, name: str) -> int:
        return self.var_index[name]

    def row(self, name: str) -> int:
        return self.row_index[name]

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "LpModel":
        return _rebuild(self, lb=_frozen(lb), ub=_frozen(ub))

    def with_objective(self, obj: np.ndarray, sense: Sense | str | None = None) -> "LpModel":
        return _rebuild(self, obj=_frozen(np.asarray(obj, dtype=float)),
                        sense=self.sense if sense is None else Sense(sense))

    def with_row_bounds(self, row_lb: np.ndarray, row_ub: np.ndarray) -> "LpModel":
        return _rebuild(self, row_lb=_frozen(row_lb), row_ub=_frozen(row_ub))

    def relaxed(self) -> "LpModel":
        """Copy with every binary treated as continuous on [0, 1]."""
        return _rebuild(self, binary=_frozen(np.zeros(self.n_vars, dtype=bool)))

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.obj @ x) + self.offset


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _rebuild(model: LpModel, **changes) -> LpModel:
    return replace(model, **changes)


class LpBuilder:
    """Incremental assembly of an :class:`LpModel`."""

    def __init__(self, sense: Sense | str = Sense.MINIMIZE):
        self.sense = Sense(sense)
        self._names: list[str] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._obj: list[float] = []
        self._bin: list[bool] = []
        self._index: dict[str, int] = {}
        self._rows: list[str] = []
        self._row_index: dict[str, int] = {}
        self._rlb: list[float] = []
        self._rub: list[float] = []
        self._ri: list[int] = []
        self._rj: list[int] = []
        self._rv: list[float] = []
        self.offset = 0.0

    def add_var(self, name: str, lb: float = 0.0, ub: float = INF,
                obj: float = 0.0, binary: bool = False) -> int:
        if name in self._index:
            raise ModelError(f"duplicate variable {name!r}")
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if not lb <= ub:
            raise ModelError(f"variable {name!r} has lb > ub")
        j = len(self._names)
        self._names.append(name)
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._obj.append(float(obj))
        self._bin.append(bool(binary))
        self._index[name] = j
        return j

    def set_obj(self, j: int, coef: float) -> None:
        self._obj[j] = float(coef)

    def add_row(self, name: str, coefs: Mapping[int, float] | Iterable[tuple[int, float]],
                lb: float = -INF, ub: float = INF) -> int:
        if name in self._row_index:
            raise ModelError(f"duplicate row {name!r}")
        if not lb <= ub:
            raise ModelError(f"row {name!r} has lb > ub")
        items = coefs.items() if isinstance(coefs, Mapping) else coefs
        i = len(self._rows)
        n = len(self._names)
        for j, v in items:
            if not 0 <= j < n:
                raise ModelError(f"row {name!r} references undeclared variable {j}")
            if v != 0.0:
                self._ri.append(i)
                self._rj.append(j)
                self._rv.append(float(v))
        self._rows.append(name)
        self._row_index[name] = i
        self._rlb.append(float(lb))
        self._rub.append(float(ub))
        return i

    def var(self, name: str) -> int:
        return self._index[name]

    @property
    def n_vars(self) -> int:
        return len(self._names)

    def build(self) -> LpModel:
        n, m = len(self._names), len(self._rows)
        A = sp.csr_matrix((self._rv, (self._ri, self._rj)), shape=(m, n))
        A.sum_duplicates()
        return LpModel(
            sense=self.sense,
            var_names=tuple(self._names),
            lb=_frozen(np.array(self._lb, dtype=float)),
            ub=_frozen(np.array(self._ub, dtype=float)),
            obj=_frozen(np.array(self._obj, dtype=float)),
            binary=_frozen(np.array(self._bin, dtype=bool)),
            A=A,
            row_names=tuple(self._rows),
            row_lb=_frozen(np.array(self._rlb, dtype=float)),
            row_ub=_frozen(np.array(self._rub, dtype=float)),
            offset=float(self.offset),
            var_index=dict(self._index),
            row_index=dict(self._row_index),
        )


@dataclass
class LpSolution:
    status: Status
    x: np.ndarray | None
    objective: float
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    bound: float | None = None
    iterations: int = 0
    nodes: int = 0
    message: str = ""
    pivots: list[tuple[int, int]] | None = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    @property
    def gap(self) -> float | None:
        if self.bound is None or self.x is None:
            return None
        return abs(self.bound - self.objective)
