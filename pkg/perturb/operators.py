"""
Discrete operators on a Grid.

    K u (x_i)  = sum_j w_j k(x_i, y_j) u_j            (Nystrom matrix of a linear kernel)
    C u (x_i)  = sum_j w_j h(x_i, y_j, u_j)           (Hammerstein operator)
    C'(u) m    = sum_j w_j h_u(x_i, y_j, u_j) m_j     (its Frechet derivative)
    f(u)       = c u + sum_k K_k u + C u              (c = identity coefficient)
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import logging
import warnings

import numpy as np
import scipy.linalg

from perturb.errors import (
    DerivativeMismatch,
    GridMismatch,
    InvalidProblem,
    KernelUsesU,
    SingularMatrix,
)
from perturb.expr import Expr, contains_u, differentiate_u, evaluate_array, free_variables, parse
from perturb.grid import DomainSpec, Grid, GridFunction, build_grid, check_aligned, sup_norm

logger = logging.getLogger(__name__)

PIVOT_RELATIVE_THRESHOLD = 1e-14
DERIVATIVE_CROSS_CHECK_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class NystromMatrix:
    entries: np.ndarray
    grid_tag: str

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"Nystrom matrix must be square, got shape {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def size(self) -> int:
        return int(self.entries.shape[0])

    def __add__(self, other: "NystromMatrix") -> "NystromMatrix":
        if other.grid_tag != self.grid_tag:
            raise GridMismatch("Matrices were assembled on different grids")
        return NystromMatrix(self.entries + other.entries, self.grid_tag)


def _allowed_variables(grid: Grid, with_u: bool) -> set:
    names = {f"{axis}{k + 1}" for axis in ("x", "y") for k in range(grid.dimension)}
    if with_u:
        names.add("u")
    return names


def _check_kernel_variables(grid: Grid, kernel: Expr, with_u: bool, label: str) -> None:
    extra = free_variables(kernel) - _allowed_variables(grid, with_u)
    if extra:
        raise InvalidProblem(
            f"{label} uses {sorted(extra)}, not available on a {grid.dimension}-D domain"
        )


def _pair_values(grid: Grid, kernel: Expr, u: Optional[GridFunction] = None) -> np.ndarray:
    bindings = grid.pair_bindings()
    if u is not None:
        bindings["u"] = u.values[None, :]
    values = evaluate_array(kernel, bindings)
    return np.broadcast_to(values, (grid.size, grid.size))


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def assemble_linear(grid: Grid, kernel: Expr) -> NystromMatrix:
    """
    Nystrom matrix of the linear integral operator with kernel k(x, y):
    entries[i][j] = w_j * k(x_i, x_j).

    Raises:
        KernelUsesU: The kernel depends on u.
        InvalidProblem: The kernel uses a coordinate the grid does not have.
    """
    if contains_u(kernel):
        raise KernelUsesU(f"Linear kernel '{kernel}' must not depend on u")
    _check_kernel_variables(grid, kernel, with_u=False, label=f"Kernel '{kernel}'")
    entries = _pair_values(grid, kernel) * grid.weights[None, :]
    logger.debug("Assembled %dx%d Nystrom matrix for '%s'", grid.size, grid.size, kernel)
    return NystromMatrix(entries, grid.tag)


def _row_reduce(entries: np.ndarray, values: np.ndarray) -> np.ndarray:
    # same reduction as np.sum(entries, axis=1), so K 1 equals the row sums bit for bit
    return np.sum(entries * values[None, :], axis=1)


def apply_matrix(matrix: NystromMatrix, u: GridFunction) -> GridFunction:
    if matrix.grid_tag != u.grid_tag or matrix.size != len(u):
        raise GridMismatch("Matrix and grid function live on different grids")
    return GridFunction(_row_reduce(matrix.entries, u.values), u.grid_tag)


def apply_hammerstein(grid: Grid, h: Expr, u: GridFunction) -> GridFunction:
    """(C u)_i = sum_j w_j h(x_i, y_j, u_j)."""
    check_aligned(grid, u)
    values = _pair_values(grid, h, u)
    return GridFunction(values @ grid.weights, grid.tag)


def hammerstein_jacobian(grid: Grid, h: Expr, u: GridFunction,
                         h_u: Optional[Expr] = None) -> NystromMatrix:
    """
    Matrix of C'(u): entries[i][j] = w_j * h_u(x_i, y_j, u_j).

    h_u is the symbolic derivative of h unless an explicit override is given,
    in which case the two are cross-checked on the grid.

    Raises:
        GridMismatch: u is not aligned with the grid.
        DerivativeMismatch: The override disagrees with the symbolic derivative
            by more than 1e-8 somewhere on the grid.
    """
    check_aligned(grid, u)
    symbolic = _pair_values(grid, differentiate_u(h), u)
    if h_u is not None:
        override = _pair_values(grid, h_u, u)
        gap = float(np.max(np.abs(override - symbolic)))
        if gap > DERIVATIVE_CROSS_CHECK_TOL:
            raise DerivativeMismatch(
                f"Supplied derivative '{h_u}' differs from d/du of '{h}' by {gap:.3e} on the grid"
            )
        symbolic = override
    return NystromMatrix(symbolic * grid.weights[None, :], grid.tag)


# ---------------------------------------------------------------------------
# Problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Problem:
    """f = c I + K_1 + ... + K_m + C on a grid."""
    domain: DomainSpec
    grid: Grid
    linear_kernels: Tuple[Expr, ...] = ()
    hammerstein_kernel: Optional[Expr] = None
    hammerstein_derivative: Optional[Expr] = None
    identity_coefficient: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "linear_kernels", tuple(self.linear_kernels))
        object.__setattr__(self, "identity_coefficient", float(self.identity_coefficient))
        if self.grid.domain != self.domain:
            raise InvalidProblem("Grid was built on a different domain")
        if self.identity_coefficient == 0.0 or not np.isfinite(self.identity_coefficient):
            raise InvalidProblem("identity_coefficient must be finite and non-zero")
        for index, kernel in enumerate(self.linear_kernels):
            if contains_u(kernel):
                raise KernelUsesU(f"linear_kernels[{index}] '{kernel}' must not depend on u")
            _check_kernel_variables(self.grid, kernel, False, f"linear_kernels[{index}]")
        if self.hammerstein_kernel is not None:
            _check_kernel_variables(self.grid, self.hammerstein_kernel, True, "hammerstein_kernel")
        if self.hammerstein_derivative is not None:
            if self.hammerstein_kernel is None:
                raise InvalidProblem("hammerstein_derivative given without hammerstein_kernel")
            _check_kernel_variables(self.grid, self.hammerstein_derivative, True,
                                    "hammerstein_derivative")

    @property
    def has_hammerstein(self) -> bool:
        return self.hammerstein_kernel is not None

    @cached_property
    def linear_matrices(self) -> Tuple[NystromMatrix, ...]:
        return tuple(assemble_linear(self.grid, k) for k in self.linear_kernels)

    @cached_property
    def linear_part(self) -> NystromMatrix:
        """K_h: sum of the assembled linear kernels (zero matrix when there are none)."""
        total = np.zeros((self.grid.size, self.grid.size))
        for matrix in self.linear_matrices:
            total = total + matrix.entries
        return NystromMatrix(total, self.grid.tag)

    @cached_property
    def derivative_expr(self) -> Optional[Expr]:
        if self.hammerstein_kernel is None:
            return None
        return self.hammerstein_derivative or differentiate_u(self.hammerstein_kernel)


def make_problem(domain: Union[DomainSpec, Sequence[Sequence[float]]],
                 linear_kernels: Sequence[Union[str, Expr]] = (),
                 hammerstein_kernel: Optional[Union[str, Expr]] = None,
                 hammerstein_derivative: Optional[Union[str, Expr]] = None,
                 identity_coefficient: float = 1.0,
                 rule: str = "trapezoid",
                 nodes_per_dim: Optional[int] = None) -> Problem:
    """Build the grid and a Problem from kernel strings (or already parsed trees)."""
    def _expr(source):
        return parse(source) if isinstance(source, str) else source

    if not isinstance(domain, DomainSpec):
        domain = DomainSpec(tuple(tuple(iv) for iv in domain))
    grid = build_grid(domain, rule, nodes_per_dim)
    return Problem(
        domain=domain,
        grid=grid,
        linear_kernels=tuple(_expr(k) for k in linear_kernels),
        hammerstein_kernel=_expr(hammerstein_kernel) if hammerstein_kernel is not None else None,
        hammerstein_derivative=(_expr(hammerstein_derivative)
                                if hammerstein_derivative is not None else None),
        identity_coefficient=identity_coefficient,
    )


def apply_c(problem: Problem, u: GridFunction) -> GridFunction:
    if problem.hammerstein_kernel is None:
        check_aligned(problem.grid, u)
        return GridFunction(np.zeros(problem.grid.size), problem.grid.tag)
    return apply_hammerstein(problem.grid, problem.hammerstein_kernel, u)


def c_jacobian(problem: Problem, u: GridFunction) -> NystromMatrix:
    """C'(u); the zero matrix when the problem has no Hammerstein part."""
    if problem.hammerstein_kernel is None:
        check_aligned(problem.grid, u)
        return NystromMatrix(np.zeros((problem.grid.size, problem.grid.size)), problem.grid.tag)
    return hammerstein_jacobian(problem.grid, problem.hammerstein_kernel, u,
                                problem.hammerstein_derivative)


def apply_f(problem: Problem, u: GridFunction) -> GridFunction:
    """f(u) = c u + K_h u + C_h(u)."""
    check_aligned(problem.grid, u)
    values = problem.identity_coefficient * u.values + _row_reduce(problem.linear_part.entries, u.values)
    if problem.hammerstein_kernel is not None:
        values = values + apply_c(problem, u).values
    return GridFunction(values, problem.grid.tag)


def jacobian(problem: Problem, u: GridFunction) -> NystromMatrix:
    """f'(u) = c I + K_h + C'_h(u)."""
    entries = problem.identity_coefficient * np.eye(problem.grid.size) + problem.linear_part.entries
    if problem.hammerstein_kernel is not None:
        entries = entries + c_jacobian(problem, u).entries
    return NystromMatrix(entries, problem.grid.tag)


def check_jacobian_vector_product(problem: Problem, u: GridFunction, m: GridFunction,
                                  step: float = 1e-6) -> Dict[str, float]:
    """
    Compare C'(u) m with the central difference (C(u + t m) - C(u - t m)) / 2t.

    Returns:
        dict: "error" (sup-norm of the difference) and "scale" (sup-norm of C'(u) m).
    """
    analytic = apply_matrix(c_jacobian(problem, u), m)
    forward = apply_c(problem, u + step * m)
    backward = apply_c(problem, u - step * m)
    numeric = (1.0 / (2.0 * step)) * (forward - backward)
    return {"error": sup_norm(analytic - numeric), "scale": sup_norm(analytic)}


# ---------------------------------------------------------------------------
# Norms and dense solves
# ---------------------------------------------------------------------------

MatrixLike = Union[NystromMatrix, np.ndarray]


def matrix_entries(matrix: MatrixLike) -> np.ndarray:
    return matrix.entries if isinstance(matrix, NystromMatrix) else np.asarray(matrix, dtype=float)


def operator_sup_norm(matrix: MatrixLike) -> float:
    """Induced max-norm: the largest absolute row sum."""
    entries = matrix_entries(matrix)
    if entries.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(entries), axis=1)))


def _lu_factor(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {a.shape}")
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0:
        raise SingularMatrix("Matrix is identically zero")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    pivots = np.abs(np.diag(lu))
    smallest = int(np.argmin(pivots))
    if pivots[smallest] < PIVOT_RELATIVE_THRESHOLD * scale:
        raise SingularMatrix(
            f"Pivot {pivots[smallest]:.3e} at step {smallest} is below "
            f"{PIVOT_RELATIVE_THRESHOLD:g} x max|A| = {PIVOT_RELATIVE_THRESHOLD * scale:.3e}"
        )
    return lu, piv


def is_nonsingular(matrix: MatrixLike) -> bool:
    """Pivot test of linear_solve without a right-hand side."""
    try:
        _lu_factor(matrix_entries(matrix))
    except SingularMatrix:
        return False
    return True


def linear_solve(matrix: MatrixLike, rhs: Union[GridFunction, np.ndarray, Sequence[float]]) -> np.ndarray:
    """
    Solve A x = b by LU factorisation with row partial pivoting.

    Raises:
        SingularMatrix: A pivot below 1e-14 * max|A_ij|, or a backward residual
            above 1e-10 * (1 + ||b||_inf).
    """
    a = matrix_entries(matrix)
    b = rhs.values if isinstance(rhs, GridFunction) else np.asarray(rhs, dtype=float)
    if a.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"Incompatible shapes for solve: A {a.shape}, b {b.shape}")

    lu, piv = _lu_factor(a)
    x = scipy.linalg.lu_solve((lu, piv), b)
    residual = float(np.max(np.abs(a @ x - b)))
    bound = 1e-10 * (1.0 + float(np.max(np.abs(b))))
    if not np.isfinite(residual) or residual > bound:
        raise SingularMatrix(f"Backward residual {residual:.3e} exceeds {bound:.3e}")
    return x


def kernel_samples(problem: Problem, u_range: float = 10.0, u_samples: int = 101) -> Dict[str, Any]:
    """
    Sampled kernel magnitudes over the grid node pairs.

    Args:
        problem (Problem): The problem whose kernels are sampled.
        u_range (float): |h| and |h_u| are sampled for u in [-u_range, u_range].
        u_samples (int): Number of uniformly spaced u values.

    Returns:
        dict: "kernel_sups" (max |k| per linear kernel), "summed_kernel_sup"
        (max |sum of kernels|, the M of the contraction constant), and, when
        there is a Hammerstein kernel, "h_sup" and "hu_sup".
    """
    grid = problem.grid
    bindings = grid.pair_bindings()
    kernel_sups = []
    summed = np.zeros((grid.size, grid.size))
    for kernel in problem.linear_kernels:
        values = np.broadcast_to(evaluate_array(kernel, bindings), summed.shape)
        kernel_sups.append(float(np.max(np.abs(values))))
        summed = summed + values
    samples = {
        "kernel_sups": kernel_sups,
        "summed_kernel_sup": float(np.max(np.abs(summed))) if kernel_sups else 0.0,
        "h_sup": None,
        "hu_sup": None,
        "u_range": float(u_range),
    }
    if problem.hammerstein_kernel is None:
        return samples

    h_sup = 0.0
    hu_sup = 0.0
    # One u value at a time keeps memory at a single n x n block.
    for value in np.linspace(-u_range, u_range, u_samples):
        bindings["u"] = np.asarray(value)
        h_values = evaluate_array(problem.hammerstein_kernel, bindings)
        hu_values = evaluate_array(problem.derivative_expr, bindings)
        h_sup = max(h_sup, float(np.max(np.abs(h_values))))
        hu_sup = max(hu_sup, float(np.max(np.abs(hu_values))))
    samples["h_sup"] = h_sup
    samples["hu_sup"] = hu_sup
    return samples


def estimate_kappa(problem: Problem, u_range: float = 10.0) -> Tuple[float, Dict[str, Any]]:
    """kappa = (M + sup|h_u|) * meas / |c|, with both sups sampled."""
    samples = kernel_samples(problem, u_range)
    hu_sup = samples["hu_sup"] or 0.0
    kappa = (samples["summed_kernel_sup"] + hu_sup) * problem.grid.measure
    return kappa / abs(problem.identity_coefficient), samples


# ---------------------------------------------------------------------------
# Solve reports
# ---------------------------------------------------------------------------

@dataclass
class SolveReport:
    solution: GridFunction
    method: str
    iterations: int
    residual_sup: float
    step_sizes: List[float] = field(default_factory=list)
    contraction_ratio_observed: Optional[float] = None
    a_priori_bound: Optional[float] = None
    converged: bool = False
    kappa_estimate: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "residual_sup": self.residual_sup,
            "step_sizes": list(self.step_sizes),
            "contraction_ratio_observed": self.contraction_ratio_observed,
            "a_priori_bound": self.a_priori_bound,
            "kappa_estimate": self.kappa_estimate,
            "converged": self.converged,
            "solution": self.solution.to_list(),
        }
