"""
Pipelines behind the command line: solve, check and reproduce.

Each run returns a RunResult holding the exit code, the report dictionary
(top-level keys problem_digest, solve, checks, timings_ms, version) and a
one-line summary. Input errors are raised to the caller; numerical failures
are caught here so that a partial report can still be written.
"""
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional
import copy
import logging
import os
import time

import numpy as np
import scipy.optimize

from perturb import __version__
from perturb.canonical import CROSS_METHOD, PIPELINE_EXTRAS, SCALAR_ORACLES, load_example
from perturb.diagnostics import (
    check_contraction,
    check_derivative_norm_separation,
    check_frechet,
    check_jacobian_coercivity,
    check_lax_milgram,
    check_norm_separation,
    check_weak_coercivity,
    fredholm_index,
)
from perturb.errors import InputError, NumericalError, SolverError
from perturb.grid import constant, sup_distance, sup_norm
from perturb.operators import apply_f, jacobian
from perturb.problem_file import (
    CompiledProblem,
    ProblemFile,
    apply_overrides,
    compile_problem,
    problem_digest,
)
from perturb.solvers import (
    SolverOptions,
    fixed_point,
    solve,
    solve_continuation,
    uniqueness_probe,
)
from utils import deep_merge, load_config

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = os.path.join("configs", "solver_config.yaml")

DEFAULT_SETTINGS: Dict[str, Any] = {
    "solver": {"tol": 1e-10, "max_iter": 500, "fd_validation": True, "seed": 0, "divergence_window": 3},
    "grid": {"rule": "trapezoid", "nodes_per_dim_1d": 201, "nodes_per_dim_2d": 41},
    "uniqueness": {"starts": 16, "cluster_radius": 1e-6, "max_workers": 4},
    "continuation": {"steps": 4},
    "checks": {
        "coercivity_directions": 4,
        "coercivity_scales": [1.0, 10.0, 100.0, 1000.0],
        "frechet_t_values": [1e-2, 1e-3, 1e-4],
        "lax_milgram_trials": 200,
        "lax_milgram_c": 1e-6,
        "jacobian_samples": 4,
    },
    "report": {"output": "report.json", "timings": False},
}

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NUMERICAL_ERROR = 2


def load_settings(config_path: Optional[str] = DEFAULT_CONFIG_PATH) -> Dict[str, Any]:
    """
    YAML settings merged over DEFAULT_SETTINGS. A missing default config file
    falls back to the built-in defaults; a missing explicit path is an error.
    """
    settings = copy.deepcopy(DEFAULT_SETTINGS)
    if config_path is None:
        return settings
    if not os.path.exists(config_path) and config_path == DEFAULT_CONFIG_PATH:
        logger.warning(f"No configuration file at {config_path}; using built-in defaults")
        return settings
    try:
        loaded = load_config(config_path)
    except (FileNotFoundError, ValueError) as err:
        raise InputError(str(err)) from err
    return deep_merge(settings, loaded or {})


def solver_options(problem_file: ProblemFile, settings: Dict[str, Any]) -> SolverOptions:
    """Problem-file values win over the YAML defaults (CLI flags are already folded into the file)."""
    defaults = settings["solver"]
    chosen = problem_file.solver
    return SolverOptions(
        tol=chosen.tol if chosen.tol is not None else defaults["tol"],
        max_iter=chosen.max_iter if chosen.max_iter is not None else defaults["max_iter"],
        fd_validation=defaults["fd_validation"],
        seed=chosen.seed if chosen.seed is not None else defaults["seed"],
        divergence_window=defaults["divergence_window"],
        cluster_radius=settings["uniqueness"]["cluster_radius"],
        max_workers=settings["uniqueness"]["max_workers"],
    )


def compile_with_settings(problem_file: ProblemFile, settings: Dict[str, Any]) -> CompiledProblem:
    grid_settings = settings["grid"]
    dimension = len(problem_file.domain.intervals)
    nodes = grid_settings["nodes_per_dim_1d"] if dimension == 1 else grid_settings["nodes_per_dim_2d"]
    return compile_problem(problem_file, nodes_per_dim=nodes, rule=grid_settings["rule"])


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    exit_code: int
    report: Dict[str, Any]
    summary: str


@dataclass
class _Run:
    digest: str
    record_timings: bool
    solve: Optional[Dict[str, Any]] = None
    checks: List[Dict[str, Any]] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    errored: bool = False

    @contextmanager
    def timed(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            if self.record_timings:
                self.timings[name] = (time.perf_counter() - start) * 1000.0

    def add_check(self, name: str, status: str, details: Dict[str, Any]) -> None:
        self.checks.append({"name": name, "status": status, "details": details})
        logger.info(f"Check '{name}': {status}")

    def run_check(self, name: str, body: Callable[[], Dict[str, Any]]) -> None:
        """Run one check; `body` returns {"status": ..., "details": ...}."""
        with self.timed(name):
            try:
                outcome = body()
            except (NumericalError, InputError) as err:
                logger.error(f"Check '{name}' raised {type(err).__name__}: {err}")
                self.errored = True
                self.add_check(name, "error", {"type": type(err).__name__, "message": str(err)})
                return
        self.add_check(name, outcome["status"], outcome["details"])

    def report(self) -> Dict[str, Any]:
        return {
            "problem_digest": self.digest,
            "solve": self.solve,
            "checks": self.checks,
            "timings_ms": self.timings if self.record_timings else {},
            "version": __version__,
        }


def _error_details(err: Exception) -> Dict[str, Any]:
    return {"type": type(err).__name__, "message": str(err)}


def _status(passed: bool, certified: bool = True) -> str:
    if not passed:
        return "fail"
    return "pass" if certified else "estimate"


# ---------------------------------------------------------------------------
# Check suite
# ---------------------------------------------------------------------------

def _run_check_suite(run: _Run, compiled: CompiledProblem, settings: Dict[str, Any], seed: int) -> None:
    problem = compiled.problem
    v = compiled.rhs
    checks = settings["checks"]
    u_range = 1.0 + 2.0 * sup_norm(v)

    def contraction():
        report = check_contraction(problem, u_range)
        return {"status": _status(report.is_contractive, not problem.has_hammerstein),
                "details": report.to_dict()}

    def norm_separation():
        report = check_norm_separation(problem)
        return {"status": _status(report.passes), "details": report.to_dict()}

    def weak_coercivity():
        report = check_weak_coercivity(problem, checks["coercivity_directions"],
                                       checks["coercivity_scales"], seed)
        if report.lower_bound_certified is not None:
            status = "pass"
        else:
            status = _status(report.monotone_growth_observed, certified=False)
        return {"status": status, "details": report.to_dict()}

    def frechet():
        if not problem.has_hammerstein:
            return {"status": "skipped", "details": {"reason": "no Hammerstein kernel"}}
        report = check_frechet(problem, v, constant(problem.grid, 1.0), checks["frechet_t_values"])
        return {"status": _status(report.passes), "details": report.to_dict()}

    def lax_milgram():
        size = problem.grid.size
        matrix = problem.identity_coefficient * np.eye(size) + problem.linear_part.entries
        report = check_lax_milgram(matrix, checks["lax_milgram_trials"], seed)
        threshold = checks["lax_milgram_c"]
        details = report.to_dict()
        details["c"] = threshold
        details["pass_for_c"] = report.passes(threshold)
        return {"status": _status(report.passes(threshold), certified=False), "details": details}

    def jacobian_coercivity():
        report = check_jacobian_coercivity(problem, checks["jacobian_samples"], seed, u_range, anchor=v)
        passed = report.all_injective and report.all_index_zero
        return {"status": _status(passed, certified=False), "details": report.to_dict()}

    def derivative_norm_separation():
        if not problem.has_hammerstein:
            return {"status": "skipped", "details": {"reason": "no Hammerstein kernel"}}
        report = check_derivative_norm_separation(problem, checks["jacobian_samples"], seed, u_range, anchor=v)
        return {"status": _status(report.passes, certified=False), "details": report.to_dict()}

    def index_at_rhs():
        report = fredholm_index(jacobian(problem, v))
        details = report.to_dict()
        details.pop("singular_values")
        return {"status": _status(report.index == 0 and report.dim_kernel == 0), "details": details}

    run.run_check("contraction", contraction)
    run.run_check("norm_separation", norm_separation)
    run.run_check("weak_coercivity", weak_coercivity)
    run.run_check("frechet", frechet)
    run.run_check("lax_milgram", lax_milgram)
    run.run_check("jacobian_coercivity", jacobian_coercivity)
    run.run_check("derivative_norm_separation", derivative_norm_separation)
    run.run_check("fredholm_index_at_rhs", index_at_rhs)


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------

def _solve_continuation(compiled: CompiledProblem, opts: SolverOptions, settings: Dict[str, Any]) -> Dict[str, Any]:
    problem = compiled.problem
    start = compiled.rhs_start if compiled.rhs_start is not None else constant(problem.grid, 0.0)
    steps = compiled.continuation_steps or settings["continuation"]["steps"]
    report = solve_continuation(problem, start, compiled.rhs, steps, opts)
    solution = report.solutions[-1]
    return {
        "method": "continuation",
        "converged": report.endpoint_matches_direct,
        "iterations": int(sum(report.iterations)),
        "residual_sup": sup_norm(apply_f(problem, solution) - compiled.rhs),
        "solution": solution.to_list(),
        "continuation": report.to_dict(),
    }


def _primary_solve(run: _Run, compiled: CompiledProblem, method: str, opts: SolverOptions,
                   settings: Dict[str, Any]):
    """Runs the main solve into run.solve. Returns the SolveReport, or None on failure."""
    with run.timed("solve"):
        try:
            if method == "continuation":
                run.solve = _solve_continuation(compiled, opts, settings)
                if not run.solve["converged"]:
                    logger.error("continuation endpoint disagrees with the cold solve at the target")
                    run.errored = True
                return None
            result = solve(compiled.problem, compiled.rhs, method, opts)
        except SolverError as err:
            logger.error(f"{method} solve failed: {err}")
            partial = err.report.to_dict() if hasattr(err.report, "to_dict") else {}
            partial["error"] = _error_details(err)
            run.solve = partial
            run.errored = True
            return None
        except NumericalError as err:
            logger.error(f"{method} solve failed: {err}")
            run.solve = {"method": method, "converged": False, "error": _error_details(err)}
            run.errored = True
            return None
    run.solve = result.to_dict()
    return result


def _summary(run: _Run) -> str:
    solve_report = run.solve or {}
    if "error" in solve_report:
        return f"FAILED: {solve_report['error']['type']}: {solve_report['error']['message']}"
    if solve_report:
        return (f"converged={solve_report.get('converged')} iterations={solve_report.get('iterations')} "
                f"residual={solve_report.get('residual_sup'):.3e}")
    return " ".join(f"{check['name']}={check['status']}" for check in run.checks)


def _result(run: _Run) -> RunResult:
    code = EXIT_NUMERICAL_ERROR if run.errored else EXIT_OK
    return RunResult(exit_code=code, report=run.report(), summary=_summary(run))


def run_solve(problem_file: ProblemFile, settings: Optional[Dict[str, Any]] = None,
              timings: bool = False) -> RunResult:
    """
    Solve the problem with the method the file names.

    Raises:
        InputError: The problem cannot be compiled.
    """
    settings = settings or load_settings(None)
    compiled = compile_with_settings(problem_file, settings)
    opts = solver_options(problem_file, settings)
    run = _Run(digest=problem_digest(problem_file), record_timings=timings)
    _primary_solve(run, compiled, problem_file.solver.method, opts, settings)
    return _result(run)


def run_check(problem_file: ProblemFile, settings: Optional[Dict[str, Any]] = None,
              timings: bool = False) -> RunResult:
    """Run the hypothesis-check suite; failed hypotheses are reported, errors give exit code 2."""
    settings = settings or load_settings(None)
    compiled = compile_with_settings(problem_file, settings)
    opts = solver_options(problem_file, settings)
    run = _Run(digest=problem_digest(problem_file), record_timings=timings)
    _run_check_suite(run, compiled, settings, opts.seed)
    return _result(run)


# ---------------------------------------------------------------------------
# Reproduce
# ---------------------------------------------------------------------------

def _cross_solve(run: _Run, compiled: CompiledProblem, primary, method: str, opts: SolverOptions) -> None:
    def body():
        other = solve(compiled.problem, compiled.rhs, method, opts)
        distance = sup_distance(other.solution, primary.solution)
        threshold = 10.0 * opts.tol
        return {
            "status": _status(distance <= threshold),
            "details": {"method": method, "iterations": other.iterations, "residual_sup": other.residual_sup,
                        "sup_distance": distance, "threshold": threshold, "agree": distance <= threshold},
        }
    run.run_check("cross_solve", body)


def _uniqueness(run: _Run, compiled: CompiledProblem, opts: SolverOptions, starts: int) -> None:
    def body():
        report = uniqueness_probe(compiled.problem, compiled.rhs, starts, opts)
        details = report.to_dict()
        details.pop("distinct_solutions")
        passed = len(report.distinct_solutions) == 1 and report.all_converged \
            and report.jacobian_nonsingular_at_each
        return {"status": _status(passed, certified=False), "details": details}
    run.run_check("uniqueness_probe", body)


def _scalar_oracle(run: _Run, primary, oracle) -> None:
    equation, bracket = oracle

    def body():
        c = scipy.optimize.bisect(equation, bracket[0], bracket[1], xtol=1e-12)
        values = np.asarray(primary.solution.values)
        error = float(np.max(np.abs(values - c)))
        spread = float(np.max(values) - np.min(values))
        return {
            "status": _status(error <= 1e-10 and spread <= 1e-10),
            "details": {"c_bisect": float(c), "max_error": error, "spread": spread},
        }
    run.run_check("scalar_oracle", body)


def _fixed_point(run: _Run, compiled: CompiledProblem, method: str, opts: SolverOptions) -> None:
    def body():
        report = fixed_point(compiled.problem, opts, method)
        return {
            "status": _status(report.converged),
            "details": {"method": report.method, "iterations": report.iterations,
                        "residual_sup": report.residual_sup, "solution_sup": sup_norm(report.solution)},
        }
    run.run_check("fixed_point", body)


def _continuation(run: _Run, compiled: CompiledProblem, opts: SolverOptions, settings: Dict[str, Any]) -> None:
    def body():
        start = compiled.rhs_start if compiled.rhs_start is not None else constant(compiled.problem.grid, 0.0)
        steps = compiled.continuation_steps or settings["continuation"]["steps"]
        report = solve_continuation(compiled.problem, start, compiled.rhs, steps, opts)
        details = report.to_dict()
        details.pop("solutions")
        return {"status": _status(report.endpoint_matches_direct), "details": details}
    run.run_check("continuation", body)


def run_reproduce(example_id: str, settings: Optional[Dict[str, Any]] = None, timings: bool = False,
                  tol: Optional[float] = None, nodes: Optional[int] = None, seed: Optional[int] = None,
                  method: Optional[str] = None) -> RunResult:
    """
    Full pipeline on an embedded example: check suite, primary solve,
    cross-solve with the other method, uniqueness probe and the example's
    extra steps (scalar oracle, fixed point, continuation).

    Raises:
        UnknownExample: example_id is not an embedded example.
    """
    settings = settings or load_settings(None)
    problem_file = apply_overrides(load_example(example_id), tol=tol, nodes=nodes, seed=seed, method=method)
    compiled = compile_with_settings(problem_file, settings)
    opts = solver_options(problem_file, settings)
    run = _Run(digest=problem_digest(problem_file), record_timings=timings)
    logger.info(f"Reproducing {example_id}")

    _run_check_suite(run, compiled, settings, opts.seed)
    primary_method = problem_file.solver.method
    primary = _primary_solve(run, compiled, primary_method, opts, settings)
    if primary is not None:
        _cross_solve(run, compiled, primary, CROSS_METHOD[primary_method], opts)
        if example_id in SCALAR_ORACLES:
            _scalar_oracle(run, primary, SCALAR_ORACLES[example_id])
    _uniqueness(run, compiled, opts, settings["uniqueness"]["starts"])
    extras = PIPELINE_EXTRAS.get(example_id, ())
    if "fixed_point" in extras:
        _fixed_point(run, compiled, "newton", opts)
    if "continuation" in extras:
        _continuation(run, compiled, opts, settings)
    return _result(run)
