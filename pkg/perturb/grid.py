"""
Quadrature discretisation of a box domain and functions sampled on it.

A Grid realises the integral over the domain as a weighted sum over its nodes;
a GridFunction is an element of the discretised C(domain) with the sup-norm.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple
import logging
import uuid

import numpy as np

from perturb.errors import (
    EmptyFunction,
    GridMismatch,
    InvalidDomain,
    InvalidProblem,
    NonFiniteValues,
    UnsupportedDimension,
)
from perturb.expr import Expr, evaluate_array, free_variables

logger = logging.getLogger(__name__)

RULES = ("trapezoid", "gauss-legendre")
DEFAULT_RULE = "trapezoid"
DEFAULT_NODES_PER_DIM = {1: 201, 2: 41}


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned box: one [a, b] interval per dimension (1 or 2 dimensions)."""
    intervals: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        intervals = tuple((float(a), float(b)) for a, b in self.intervals)
        if not intervals:
            raise InvalidDomain("Domain needs at least one interval")
        if len(intervals) > 2:
            raise UnsupportedDimension(f"Only 1-D and 2-D domains are supported, got {len(intervals)}-D")
        for a, b in intervals:
            if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
                raise InvalidDomain(f"Interval [{a}, {b}] must satisfy a < b")
        object.__setattr__(self, "intervals", intervals)

    @property
    def dimension(self) -> int:
        return len(self.intervals)

    @property
    def measure(self) -> float:
        return float(np.prod([b - a for a, b in self.intervals]))


@dataclass(frozen=True, eq=False)
class Grid:
    domain: DomainSpec
    nodes: np.ndarray      # shape (n, d), row-major tensor product for d = 2
    weights: np.ndarray    # shape (n,), all positive
    measure: float
    rule: str
    nodes_per_dim: int
    tag: str = field(default_factory=lambda: uuid.uuid4().hex)

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    def point_bindings(self) -> Dict[str, np.ndarray]:
        """Bindings of x1 (and x2) to the node coordinates, shape (n,)."""
        return {f"x{k + 1}": self.nodes[:, k] for k in range(self.dimension)}

    def pair_bindings(self) -> Dict[str, np.ndarray]:
        """
        Bindings for kernels k(x_i, y_j): x coordinates as a column (n, 1),
        y coordinates as a row (1, n), so evaluation broadcasts to (n, n).
        """
        bindings = {}
        for k in range(self.dimension):
            coords = self.nodes[:, k]
            bindings[f"x{k + 1}"] = coords[:, None]
            bindings[f"y{k + 1}"] = coords[None, :]
        return bindings


@dataclass(frozen=True, eq=False)
class GridFunction:
    values: np.ndarray
    grid_tag: str

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise NonFiniteValues("Grid function values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def _check(self, other: "GridFunction") -> None:
        if not isinstance(other, GridFunction) or other.grid_tag != self.grid_tag:
            raise GridMismatch("Grid functions live on different grids")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.values + other.values, self.grid_tag)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.values - other.values, self.grid_tag)

    def __mul__(self, scalar: float) -> "GridFunction":
        return GridFunction(float(scalar) * self.values, self.grid_tag)

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction(-self.values, self.grid_tag)

    def to_list(self):
        return [float(v) for v in self.values]


# ---------------------------------------------------------------------------
# Grid construction
# ---------------------------------------------------------------------------

def _rule_1d(a: float, b: float, rule: str, m: int) -> Tuple[np.ndarray, np.ndarray]:
    if rule == "trapezoid":
        nodes = np.linspace(a, b, m)
        h = (b - a) / (m - 1)
        weights = np.full(m, h)
        weights[0] = weights[-1] = 0.5 * h
        return nodes, weights
    if rule == "gauss-legendre":
        t, w = np.polynomial.legendre.leggauss(m)
        half = 0.5 * (b - a)
        return 0.5 * (a + b) + half * t, half * w
    raise ValueError(f"Unknown quadrature rule '{rule}'. Expected one of {RULES}")


def build_grid(domain: DomainSpec, rule: str = DEFAULT_RULE,
               nodes_per_dim: Optional[int] = None) -> Grid:
    """
    Discretise `domain` with a 1-D rule, taking tensor products in 2-D.

    Args:
        domain (DomainSpec): The box.
        rule (str): "trapezoid" or "gauss-legendre".
        nodes_per_dim (int): Nodes per axis, at least 2. Defaults to 201 in 1-D
            and 41 in 2-D.

    Returns:
        Grid: Nodes, positive weights summing to the measure, and a fresh tag.

    Raises:
        InvalidDomain: An interval with a >= b.
        UnsupportedDimension: More than two intervals.
        ValueError: Unknown rule or fewer than 2 nodes per dimension.
    """
    if not isinstance(domain, DomainSpec):
        domain = DomainSpec(tuple(tuple(iv) for iv in domain))
    if nodes_per_dim is None:
        nodes_per_dim = DEFAULT_NODES_PER_DIM[domain.dimension]
    if int(nodes_per_dim) != nodes_per_dim or nodes_per_dim < 2:
        raise ValueError(f"nodes_per_dim must be an integer >= 2, got {nodes_per_dim!r}")
    nodes_per_dim = int(nodes_per_dim)
    if rule not in RULES:
        raise ValueError(f"Unknown quadrature rule '{rule}'. Expected one of {RULES}")

    rules = [_rule_1d(a, b, rule, nodes_per_dim) for a, b in domain.intervals]
    if domain.dimension == 1:
        nodes = rules[0][0][:, None]
        weights = rules[0][1]
    else:
        (x1, w1), (x2, w2) = rules
        g1, g2 = np.meshgrid(x1, x2, indexing="ij")
        nodes = np.column_stack([g1.reshape(-1), g2.reshape(-1)])
        weights = np.outer(w1, w2).reshape(-1)

    grid = Grid(
        domain=domain,
        nodes=_frozen(nodes),
        weights=_frozen(weights),
        measure=domain.measure,
        rule=rule,
        nodes_per_dim=nodes_per_dim,
    )
    logger.info("Built %s grid: %d-D, %d nodes, measure %.6g",
                rule, domain.dimension, grid.size, grid.measure)
    return grid


# ---------------------------------------------------------------------------
# Grid functions
# ---------------------------------------------------------------------------

def check_aligned(grid: Grid, f: GridFunction) -> None:
    if f.grid_tag != grid.tag or len(f) != grid.size:
        raise GridMismatch("Grid function is not aligned with this grid")


def function(grid: Grid, values: Sequence[float]) -> GridFunction:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.size,):
        raise GridMismatch(f"Expected {grid.size} values, got shape {values.shape}")
    return GridFunction(values, grid.tag)


def constant(grid: Grid, value: float) -> GridFunction:
    return GridFunction(np.full(grid.size, float(value)), grid.tag)


def sample(grid: Grid, expr: Expr) -> GridFunction:
    """Sample an expression in the spatial variables x1 (x2) at the grid nodes."""
    extra = free_variables(expr) - {f"x{k + 1}" for k in range(grid.dimension)}
    if extra:
        raise InvalidProblem(
            f"Right-hand side may only use x1..x{grid.dimension}, found {sorted(extra)}"
        )
    values = evaluate_array(expr, grid.point_bindings())
    return GridFunction(np.broadcast_to(values, (grid.size,)).copy(), grid.tag)


def integrate(grid: Grid, f: GridFunction) -> float:
    """Quadrature sum: sum_j w_j f_j."""
    check_aligned(grid, f)
    return float(np.dot(grid.weights, f.values))


def sup_norm(f: GridFunction) -> float:
    """max_j |f_j|."""
    if len(f) == 0:
        raise EmptyFunction("Sup-norm of an empty grid function")
    return float(np.max(np.abs(f.values)))


def sup_distance(f: GridFunction, g: GridFunction) -> float:
    return sup_norm(f - g)
