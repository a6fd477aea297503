"""
Solvers for f(u) = v on a grid: Picard successive approximation, Newton,
warm-started parameter continuation and a multistart uniqueness probe.
"""
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional
import logging
import warnings

import numpy as np

from perturb.errors import (
    ContinuationError,
    DerivativeMismatch,
    DivergenceError,
    InvalidProblem,
    MaxIterExceeded,
    NonFiniteValues,
    NotContractiveWarning,
    NumericalError,
    SingularJacobian,
    SingularMatrix,
)
from perturb.grid import GridFunction, check_aligned, constant, sup_distance, sup_norm
from perturb.operators import (
    Problem,
    SolveReport,
    apply_c,
    apply_f,
    check_jacobian_vector_product,
    estimate_kappa,
    is_nonsingular,
    jacobian,
    linear_solve,
)

logger = logging.getLogger(__name__)

METHODS = ("picard", "newton")
ROUNDING_FLOOR = 1e-7
FD_STEP = 1e-6
FD_TOLERANCE = 1e-5


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 500
    fd_validation: bool = True
    seed: int = 0
    divergence_window: int = 3
    cluster_radius: float = 1e-6
    max_workers: int = 4

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidProblem(f"tol must be > 0, got {self.tol!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise InvalidProblem(f"max_iter must be an integer >= 1, got {self.max_iter!r}")
        if self.divergence_window < 1:
            raise InvalidProblem("divergence_window must be >= 1")
        if not self.cluster_radius > 0:
            raise InvalidProblem("cluster_radius must be > 0")
        self.max_iter = int(self.max_iter)


def _residual(problem: Problem, u: GridFunction, v: GridFunction) -> float:
    return sup_norm(apply_f(problem, u) - v)


def _tolerance_reachable(opts: SolverOptions, v: GridFunction) -> bool:
    """
    A tolerance below eps * (1 + ||v||) is under the rounding level of the
    residual. Such a run never reports convergence and ends in MaxIterExceeded,
    even when the residual happens to come out exactly zero.
    """
    floor = float(np.finfo(float).eps) * (1.0 + sup_norm(v))
    if opts.tol < floor:
        logger.warning("tol %g is below the rounding floor %.3e; convergence cannot be reported", opts.tol, floor)
        return False
    return True


# ---------------------------------------------------------------------------
# Picard
# ---------------------------------------------------------------------------

def solve_picard(problem: Problem, v: GridFunction, opts: Optional[SolverOptions] = None,
                 initial: Optional[GridFunction] = None) -> SolveReport:
    """
    Successive approximation u <- (v - K_h u - C_h(u)) / c, starting from u_0 = v.

    The iteration stops when a step is at most `tol` and the residual is at most
    10 * tol. A vanishing step with a larger residual is stagnation and the
    iteration carries on until max_iter.

    Args:
        problem (Problem): The discretised equation.
        v (GridFunction): Right-hand side, aligned with problem.grid.
        opts (SolverOptions): Tolerances and limits.
        initial (GridFunction): Warm start; defaults to v.

    Returns:
        SolveReport: converged report, with the observed contraction ratio and,
        when the sampled kappa is below 1, the a-priori error bound.

    Raises:
        DivergenceError: The step grew `divergence_window` times in a row.
        MaxIterExceeded: No convergence within max_iter, always the case when
            tol is below the rounding floor eps * (1 + ||v||).
    """
    opts = opts or SolverOptions()
    check_aligned(problem.grid, v)
    u = initial if initial is not None else v
    check_aligned(problem.grid, u)
    c = problem.identity_coefficient
    linear = problem.linear_part.entries

    kappa, _ = estimate_kappa(problem, u_range=1.0 + 2.0 * sup_norm(v))
    if kappa >= 1.0:
        message = f"Estimated kappa = {kappa:.6g} >= 1; Picard iteration is not guaranteed to converge"
        logger.warning(message)
        warnings.warn(message, NotContractiveWarning, stacklevel=2)

    steps: List[float] = []
    ratios: List[float] = []
    growing = 0
    converged = False
    reachable = _tolerance_reachable(opts, v)

    def _report(solution: GridFunction, done: bool) -> SolveReport:
        bound = None
        if kappa < 1.0 and steps:
            bound = kappa ** len(steps) / (1.0 - kappa) * steps[0]
        return SolveReport(
            solution=solution,
            method="picard",
            iterations=len(steps),
            residual_sup=_residual(problem, solution, v),
            step_sizes=list(steps),
            contraction_ratio_observed=max(ratios) if ratios else None,
            a_priori_bound=bound,
            converged=done,
            kappa_estimate=kappa,
        )

    for n in range(1, opts.max_iter + 1):
        try:
            image = v.values - linear @ u.values - apply_c(problem, u).values
            u_next = GridFunction(image / c, u.grid_tag)
        except NonFiniteValues:
            raise DivergenceError(
                f"Picard iterate became non-finite at iteration {n}", report=_report(u, False)
            )
        step = sup_distance(u_next, u)
        floor = ROUNDING_FLOOR * (1.0 + sup_norm(u_next))
        if steps and steps[-1] > floor:
            ratios.append(step / steps[-1])
        if steps and step > steps[-1] and step > floor:
            growing += 1
        else:
            growing = 0
        steps.append(step)
        u = u_next
        logger.debug("picard iteration %d: step %.3e", n, step)

        if growing >= opts.divergence_window:
            raise DivergenceError(
                f"Picard step grew {growing} consecutive times (last step {step:.3e})",
                report=_report(u, False),
            )
        if reachable and step <= opts.tol and _residual(problem, u, v) <= 10.0 * opts.tol:
            converged = True
            break

    report = _report(u, converged)
    if not converged:
        raise MaxIterExceeded(
            f"Picard did not converge in {opts.max_iter} iterations "
            f"(residual {report.residual_sup:.3e}, tol {opts.tol:g})",
            report=report,
        )
    logger.info("Picard converged in %d iterations, residual %.3e", report.iterations, report.residual_sup)
    return report


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------

def _validate_derivative(problem: Problem, u: GridFunction, opts: SolverOptions) -> None:
    rng = np.random.default_rng(opts.seed)
    m = GridFunction(rng.uniform(-1.0, 1.0, size=problem.grid.size), u.grid_tag)
    check = check_jacobian_vector_product(problem, u, m, step=FD_STEP)
    if check["error"] > FD_TOLERANCE * (1.0 + check["scale"]):
        raise DerivativeMismatch(
            f"Jacobian-vector product differs from its central difference by {check['error']:.3e}"
        )
    logger.debug("Jacobian-vector product validated (error %.3e)", check["error"])


def solve_newton(problem: Problem, v: GridFunction, opts: Optional[SolverOptions] = None,
                 initial: Optional[GridFunction] = None) -> SolveReport:
    """
    Newton iteration (c I + K_h + C'_h(u_n)) delta = v - f(u_n), u_0 = v.

    Converges when the residual is at most tol, or when the step is at most tol
    and the residual at most 10 * tol.

    Raises:
        SingularJacobian: f'(u_n) fails the pivot test.
        DerivativeMismatch: fd_validation is on and C'(u_0) disagrees with finite differences.
        MaxIterExceeded: No convergence within max_iter, always the case when
            tol is below the rounding floor eps * (1 + ||v||).
    """
    opts = opts or SolverOptions()
    check_aligned(problem.grid, v)
    u = initial if initial is not None else v
    check_aligned(problem.grid, u)
    if opts.fd_validation and problem.has_hammerstein:
        _validate_derivative(problem, u, opts)

    steps: List[float] = []
    residual = _residual(problem, u, v)
    converged = False
    reachable = _tolerance_reachable(opts, v)

    def _report(done: bool) -> SolveReport:
        return SolveReport(
            solution=u,
            method="newton",
            iterations=len(steps),
            residual_sup=residual,
            step_sizes=list(steps),
            converged=done,
        )

    for n in range(1, opts.max_iter + 1):
        rhs = v - apply_f(problem, u)
        try:
            delta = linear_solve(jacobian(problem, u), rhs)
        except SingularMatrix as err:
            raise SingularJacobian(f"f'(u) is singular at Newton iteration {n}: {err}") from err
        try:
            u = u + GridFunction(delta, u.grid_tag)
        except NonFiniteValues:
            raise DivergenceError(f"Newton iterate became non-finite at iteration {n}", report=_report(False))
        step = float(np.max(np.abs(delta)))
        steps.append(step)
        residual = _residual(problem, u, v)
        logger.debug("newton iteration %d: step %.3e residual %.3e", n, step, residual)
        if reachable and (residual <= opts.tol or (step <= opts.tol and residual <= 10.0 * opts.tol)):
            converged = True
            break

    report = _report(converged)
    if not converged:
        raise MaxIterExceeded(
            f"Newton did not converge in {opts.max_iter} iterations "
            f"(residual {residual:.3e}, tol {opts.tol:g})",
            report=report,
        )
    logger.info("Newton converged in %d iterations, residual %.3e", report.iterations, report.residual_sup)
    return report


def solve(problem: Problem, v: GridFunction, method: str = "picard",
          opts: Optional[SolverOptions] = None, initial: Optional[GridFunction] = None) -> SolveReport:
    if method == "picard":
        return solve_picard(problem, v, opts, initial)
    if method == "newton":
        return solve_newton(problem, v, opts, initial)
    raise InvalidProblem(f"Unknown method '{method}'. Expected one of {METHODS}")


def fixed_point(problem: Problem, opts: Optional[SolverOptions] = None, method: str = "newton") -> SolveReport:
    """
    Solve f(u) = 0. With K_1 = -K_h and C_1 = -C_h (c = 1) the solution is the
    unique fixed point of K_1 + C_1.
    """
    zero = constant(problem.grid, 0.0)
    return solve(problem, zero, method, opts)


# ---------------------------------------------------------------------------
# Continuation
# ---------------------------------------------------------------------------

@dataclass
class ContinuationReport:
    steps: int
    solutions: List[GridFunction]
    max_consecutive_jump: float
    endpoint_matches_direct: bool
    parameters: List[float] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)
    methods: List[str] = field(default_factory=list)
    endpoint_distance: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "steps": self.steps,
            "parameters": list(self.parameters),
            "iterations": list(self.iterations),
            "methods": list(self.methods),
            "max_consecutive_jump": self.max_consecutive_jump,
            "endpoint_matches_direct": self.endpoint_matches_direct,
            "endpoint_distance": self.endpoint_distance,
            "solutions": [s.to_list() for s in self.solutions],
        }


def _newton_with_fallback(problem: Problem, v: GridFunction, opts: SolverOptions,
                          initial: Optional[GridFunction]) -> SolveReport:
    try:
        return solve_newton(problem, v, opts, initial)
    except SingularMatrix as err:
        logger.warning("Newton failed (%s); falling back to Picard", err)
        return solve_picard(problem, v, opts, initial)


def solve_continuation(problem: Problem, v0: GridFunction, v1: GridFunction, steps: int,
                       opts: Optional[SolverOptions] = None) -> ContinuationReport:
    """
    Follow the solution of f(u) = (1 - t) v0 + t v1 for t = 0, 1/steps, ..., 1,
    warm-starting each solve from the previous solution.

    Raises:
        InvalidProblem: steps < 1.
        ContinuationError: A solve failed; `parameter` is the failing t and
            `report` holds the solutions found so far.
    """
    opts = opts or SolverOptions()
    if int(steps) != steps or steps < 1:
        raise InvalidProblem(f"steps must be an integer >= 1, got {steps!r}")
    steps = int(steps)
    check_aligned(problem.grid, v0)
    check_aligned(problem.grid, v1)

    report = ContinuationReport(steps=steps, solutions=[], max_consecutive_jump=0.0,
                                endpoint_matches_direct=False)
    previous = None
    for j in range(steps + 1):
        t = j / steps
        v_t = (1.0 - t) * v0 + t * v1
        try:
            solved = _newton_with_fallback(problem, v_t, opts, previous)
        except NumericalError as err:
            raise ContinuationError(str(err), parameter=t, report=report) from err
        if previous is not None:
            report.max_consecutive_jump = max(report.max_consecutive_jump,
                                              sup_distance(solved.solution, previous))
        report.solutions.append(solved.solution)
        report.parameters.append(t)
        report.iterations.append(solved.iterations)
        report.methods.append(solved.method)
        previous = solved.solution

    try:
        direct = _newton_with_fallback(problem, v1, opts, None)
    except NumericalError as err:
        raise ContinuationError(f"Cold endpoint solve failed: {err}", parameter=1.0, report=report) from err
    report.endpoint_distance = sup_distance(direct.solution, previous)
    report.endpoint_matches_direct = report.endpoint_distance <= 10.0 * opts.tol
    logger.info("Continuation over %d steps: max jump %.3e, endpoint distance %.3e",
                steps, report.max_consecutive_jump, report.endpoint_distance)
    return report


# ---------------------------------------------------------------------------
# Uniqueness probe
# ---------------------------------------------------------------------------

@dataclass
class UniquenessReport:
    starts: int
    distinct_solutions: List[GridFunction]
    cluster_radius: float
    all_converged: bool
    jacobian_nonsingular_at_each: bool
    converged_starts: int = 0
    start_radius: float = 0.0
    iterations: List[Optional[int]] = field(default_factory=list)
    failures: Dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "starts": self.starts,
            "start_radius": self.start_radius,
            "converged_starts": self.converged_starts,
            "all_converged": self.all_converged,
            "cluster_radius": self.cluster_radius,
            "distinct_count": len(self.distinct_solutions),
            "jacobian_nonsingular_at_each": self.jacobian_nonsingular_at_each,
            "iterations": list(self.iterations),
            "failures": {str(k): v for k, v in sorted(self.failures.items())},
            "distinct_solutions": [s.to_list() for s in self.distinct_solutions],
        }


def _probe_start(problem: Problem, v: GridFunction, start: GridFunction, opts: SolverOptions) -> SolveReport:
    return solve_newton(problem, v, opts, initial=start)


def uniqueness_probe(problem: Problem, v: GridFunction, starts: int = 16,
                     opts: Optional[SolverOptions] = None) -> UniquenessReport:
    """
    Run Newton from `starts` seeded random initial functions with values
    uniform in [-R, R], R = 1 + 2 ||v||, and cluster the converged solutions.

    Non-convergent starts are counted, not raised. Starts run concurrently on a
    thread pool and are aggregated in start order.
    """
    opts = opts or SolverOptions()
    if int(starts) != starts or starts < 1:
        raise InvalidProblem(f"starts must be an integer >= 1, got {starts!r}")
    check_aligned(problem.grid, v)
    radius = 1.0 + 2.0 * sup_norm(v)
    rng = np.random.default_rng(opts.seed)
    initials = [GridFunction(rng.uniform(-radius, radius, size=problem.grid.size), v.grid_tag)
                for _ in range(int(starts))]
    _ = problem.linear_part  # assembled once, before the workers share it

    results: Dict[int, Optional[SolveReport]] = {}
    failures: Dict[int, str] = {}
    with ThreadPoolExecutor(max_workers=opts.max_workers) as executor:
        futures = {
            executor.submit(_probe_start, problem, v, start, opts): index
            for index, start in enumerate(initials)
        }
        for future in as_completed(futures):
            index = futures[future]
            try:
                results[index] = future.result()
            except NumericalError as err:
                logger.info("Start %d did not converge: %s", index, err)
                results[index] = None
                failures[index] = f"{type(err).__name__}: {err}"

    representatives: List[GridFunction] = []
    iterations: List[Optional[int]] = []
    for index in range(len(initials)):
        result = results[index]
        iterations.append(result.iterations if result is not None else None)
        if result is None:
            continue
        if all(sup_distance(result.solution, rep) > opts.cluster_radius for rep in representatives):
            representatives.append(result.solution)

    nonsingular = all(is_nonsingular(jacobian(problem, rep)) for rep in representatives)
    converged_starts = sum(1 for r in results.values() if r is not None)
    report = UniquenessReport(
        starts=len(initials),
        distinct_solutions=representatives,
        cluster_radius=opts.cluster_radius,
        all_converged=converged_starts == len(initials),
        jacobian_nonsingular_at_each=nonsingular and bool(representatives),
        converged_starts=converged_starts,
        start_radius=radius,
        iterations=iterations,
        failures=failures,
    )
    logger.info("Uniqueness probe: %d/%d starts converged, %d distinct solution(s)",
                converged_starts, len(initials), len(representatives))
    return report
