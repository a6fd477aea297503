"""
JSON problem files: schema, loading, overrides and compilation to a Problem.

Validation is complete before anything numerical runs: the document is
checked against the schema (unknown keys rejected), then every expression is
parsed and its variables checked against the domain dimension.
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Optional, Tuple
import hashlib
import json
import logging
import os

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from perturb.errors import ExprError, InputError, NumericalError, ProblemFileError
from perturb.expr import Expr, free_variables, parse
from perturb.grid import DomainSpec, Grid, GridFunction, build_grid, sample
from perturb.operators import Problem

logger = logging.getLogger(__name__)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainModel(_Strict):
    intervals: List[Tuple[float, float]] = Field(min_length=1, max_length=2)

    @field_validator("intervals")
    @classmethod
    def _ordered(cls, intervals):
        for a, b in intervals:
            if not a < b:
                raise ValueError(f"interval [{a}, {b}] must satisfy a < b")
        return intervals


class QuadratureModel(_Strict):
    rule: Optional[Literal["trapezoid", "gauss-legendre"]] = None
    nodes_per_dim: Optional[int] = Field(default=None, ge=2)


class SolverModel(_Strict):
    method: Literal["picard", "newton", "continuation"] = "picard"
    tol: Optional[float] = Field(default=None, gt=0)
    max_iter: Optional[int] = Field(default=None, ge=1)
    seed: Optional[int] = None


class ContinuationModel(_Strict):
    rhs_start: str = "0"
    steps: int = Field(default=4, ge=1)


class ProblemFile(_Strict):
    domain: DomainModel
    quadrature: QuadratureModel = Field(default_factory=QuadratureModel)
    linear_kernels: List[str] = Field(default_factory=list)
    hammerstein_kernel: Optional[str] = None
    hammerstein_derivative: Optional[str] = None
    identity_coefficient: float = 1.0
    rhs: str
    solver: SolverModel = Field(default_factory=SolverModel)
    continuation: Optional[ContinuationModel] = None

    @field_validator("identity_coefficient")
    @classmethod
    def _non_zero(cls, value):
        if value == 0:
            raise ValueError("identity_coefficient must be non-zero")
        return value


def _validation_error(err: ValidationError) -> ProblemFileError:
    first = err.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or None
    return ProblemFileError(first["msg"], field=location)


def validate_problem(document: Dict[str, Any]) -> ProblemFile:
    """Validate a decoded JSON document against the ProblemFile schema."""
    try:
        return ProblemFile.model_validate(document)
    except ValidationError as err:
        raise _validation_error(err) from err


def load_problem_file(path: str) -> ProblemFile:
    """
    Read and validate a problem file.

    Raises:
        ProblemFileError: Missing file, invalid JSON or a schema violation.
    """
    if not os.path.exists(path):
        logger.error(f"Problem file not found: {path}")
        raise ProblemFileError(f"file not found: {path}")
    try:
        with open(path, "r") as file:
            document = json.load(file)
    except json.JSONDecodeError as err:
        logger.error(f"Invalid JSON in {path}: {err}")
        raise ProblemFileError(f"invalid JSON in {path}: {err.msg} at line {err.lineno}") from err
    problem_file = validate_problem(document)
    logger.info(f"Loaded problem file {path}")
    return problem_file


def apply_overrides(problem_file: ProblemFile, tol: Optional[float] = None, nodes: Optional[int] = None,
                    seed: Optional[int] = None, method: Optional[str] = None) -> ProblemFile:
    """Return a copy with command-line overrides applied, revalidated."""
    document = problem_file.model_dump()
    if tol is not None:
        document["solver"]["tol"] = tol
    if seed is not None:
        document["solver"]["seed"] = seed
    if method is not None:
        document["solver"]["method"] = method
    if nodes is not None:
        document["quadrature"]["nodes_per_dim"] = nodes
    return validate_problem(document)


def problem_digest(problem_file: ProblemFile) -> str:
    """sha256 of the canonical JSON (sorted keys, compact) of the effective problem."""
    canonical = json.dumps(problem_file.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CompiledProblem:
    problem: Problem
    rhs: GridFunction
    rhs_start: Optional[GridFunction] = None
    continuation_steps: Optional[int] = None


def _parse_field(source: str, field: str, allowed: frozenset) -> Expr:
    try:
        expr = parse(source)
    except ExprError as err:
        raise ProblemFileError(str(err), field=field) from err
    extra = free_variables(expr) - allowed
    if extra:
        raise ProblemFileError(f"'{source}' uses {sorted(extra)}, not allowed here", field=field)
    return expr


def _sample_field(grid: Grid, expr: Expr, field: str) -> GridFunction:
    try:
        return sample(grid, expr)
    except NumericalError as err:
        raise ProblemFileError(str(err), field=field) from err


def compile_problem(problem_file: ProblemFile, nodes_per_dim: Optional[int] = None,
                    rule: str = "trapezoid") -> CompiledProblem:
    """
    Parse every expression, build the grid and sample the right-hand sides.

    Args:
        problem_file (ProblemFile): A validated problem file.
        nodes_per_dim (int): Used when the file does not set quadrature.nodes_per_dim.
        rule (str): Used when the file does not set quadrature.rule.

    Raises:
        ProblemFileError: An expression fails to parse or uses a variable that
            the domain or the field does not allow, or a right-hand side
            cannot be evaluated on the grid (division by zero, overflow).
    """
    dimension = len(problem_file.domain.intervals)
    spatial = frozenset(f"x{k + 1}" for k in range(dimension))
    pairs = spatial | frozenset(f"y{k + 1}" for k in range(dimension))

    linear = [_parse_field(source, f"linear_kernels[{i}]", pairs)
              for i, source in enumerate(problem_file.linear_kernels)]
    h = h_u = None
    if problem_file.hammerstein_kernel is not None:
        h = _parse_field(problem_file.hammerstein_kernel, "hammerstein_kernel", pairs | {"u"})
    if problem_file.hammerstein_derivative is not None:
        if h is None:
            raise ProblemFileError("given without hammerstein_kernel", field="hammerstein_derivative")
        h_u = _parse_field(problem_file.hammerstein_derivative, "hammerstein_derivative", pairs | {"u"})
    rhs = _parse_field(problem_file.rhs, "rhs", spatial)
    rhs_start = None
    if problem_file.continuation is not None:
        rhs_start = _parse_field(problem_file.continuation.rhs_start, "continuation.rhs_start", spatial)

    domain = DomainSpec(tuple(tuple(iv) for iv in problem_file.domain.intervals))
    nodes = problem_file.quadrature.nodes_per_dim or nodes_per_dim
    grid = build_grid(domain, problem_file.quadrature.rule or rule, nodes)
    try:
        problem = Problem(
            domain=domain,
            grid=grid,
            linear_kernels=tuple(linear),
            hammerstein_kernel=h,
            hammerstein_derivative=h_u,
            identity_coefficient=problem_file.identity_coefficient,
        )
    except InputError as err:
        raise ProblemFileError(str(err)) from err
    return CompiledProblem(
        problem=problem,
        rhs=_sample_field(grid, rhs, "rhs"),
        rhs_start=_sample_field(grid, rhs_start, "continuation.rhs_start") if rhs_start is not None else None,
        continuation_steps=problem_file.continuation.steps if problem_file.continuation else None,
    )
