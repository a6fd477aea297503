import json
import logging
import time
from typing import Any, Callable, Dict, List

import numpy as np
import pandas as pd

from evals.golden_data import GoldenCase
from perturb.diagnostics import check_frechet, check_lax_milgram, check_norm_separation, index_stability_trial
from perturb.grid import constant, sup_distance, sup_norm
from perturb.operators import make_problem
from perturb.solvers import SolverOptions, solve_continuation, solve_newton, solve_picard, uniqueness_probe
from perturb.workflows import run_reproduce
from tests.utils_test import bisect_root
from utils import dumps_report

logger = logging.getLogger(__name__)

# ============================
# Evaluation Functions
# ============================


def _build(case: GoldenCase):
    problem = make_problem(**case.problem)
    return problem, constant(problem.grid, case.rhs)


def evaluate_closed_form(case: GoldenCase) -> Dict[str, Any]:
    """Picard on the constant-kernel instance against u = v / (1 + 0.5 meas)."""
    problem, v = _build(case)
    expected = case.expected
    start = time.perf_counter()
    report = solve_picard(problem, v, SolverOptions(tol=expected["tol"]))
    runtime = (time.perf_counter() - start) * 1000.0
    error = sup_norm(report.solution - constant(problem.grid, expected["solution"]))
    return {
        "passed": error <= expected["max_error"] and report.iterations <= expected["max_iterations"]
        and runtime <= expected["max_runtime_ms"],
        "measured": {"max_error": error, "iterations": report.iterations, "solve_ms": runtime},
    }


def evaluate_contraction_ratio(case: GoldenCase) -> Dict[str, Any]:
    problem, v = _build(case)
    report = solve_picard(problem, v)
    bound = case.expected["k"] + case.expected["slack"]
    return {
        "passed": report.contraction_ratio_observed <= bound,
        "measured": {"max_ratio": report.contraction_ratio_observed, "kappa": report.kappa_estimate},
    }


def evaluate_scalar_oracle(case: GoldenCase) -> Dict[str, Any]:
    """Picard and Newton both land on the root of c + 0.25 sin(c) = 1."""
    problem, v = _build(case)
    a, b = case.expected["bracket"]
    root = bisect_root(lambda c: c + 0.25 * np.sin(c) - case.rhs, a, b)
    newton = solve_newton(problem, v)
    picard = solve_picard(problem, v)
    root_fn = constant(problem.grid, root)
    errors = {"newton": sup_distance(newton.solution, root_fn), "picard": sup_distance(picard.solution, root_fn)}
    return {
        "passed": max(errors.values()) <= case.expected["max_error"]
        and newton.iterations <= case.expected["newton_max_iterations"],
        "measured": {"c_bisect": root, "newton_error": errors["newton"], "picard_error": errors["picard"],
                     "newton_iterations": newton.iterations},
    }


def evaluate_frechet(case: GoldenCase) -> Dict[str, Any]:
    problem, u = _build(case)
    report = check_frechet(problem, u, constant(problem.grid, 1.0))
    order = report.estimated_order
    return {
        "passed": order is not None and case.expected["order_min"] <= order <= case.expected["order_max"],
        "measured": {"estimated_order": order, "remainders": report.remainders},
    }


def evaluate_frechet_affine(case: GoldenCase) -> Dict[str, Any]:
    problem, u = _build(case)
    report = check_frechet(problem, u, constant(problem.grid, 1.0))
    return {
        "passed": max(report.remainders) <= case.expected["max_remainder"],
        "measured": {"max_remainder": max(report.remainders), "affine": report.affine},
    }


def evaluate_index(case: GoldenCase) -> Dict[str, Any]:
    """index(S + P) = index(S) = n - m for every shape, kind and trial."""
    expected = case.expected
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    failures = []
    for rows, cols in expected["shapes"]:
        s = rng.standard_normal((rows, cols))
        for kind in ("finite_rank", "small_norm"):
            report = index_stability_trial(s, kind, expected["magnitude"], expected["trials"], seed=rows * 10 + cols)
            if not report.all_indices_equal or report.index != cols - rows:
                failures.append(f"{rows}x{cols}/{kind}")
    runtime = (time.perf_counter() - start) * 1000.0
    return {
        "passed": not failures and runtime <= expected["max_runtime_ms"],
        "measured": {"failures": failures, "runtime_ms": runtime},
    }


def evaluate_uniqueness(case: GoldenCase) -> Dict[str, Any]:
    problem, v = _build(case)
    report = uniqueness_probe(problem, v, case.expected["starts"])
    return {
        "passed": len(report.distinct_solutions) == case.expected["clusters"] and report.all_converged
        and report.jacobian_nonsingular_at_each,
        "measured": {"clusters": len(report.distinct_solutions), "converged_starts": report.converged_starts},
    }


def evaluate_continuation(case: GoldenCase) -> Dict[str, Any]:
    """Solutions are slope * t along the path and the largest jump halves when the steps double."""
    problem, v1 = _build(case)
    v0 = constant(problem.grid, 0.0)
    expected = case.expected
    jumps = []
    worst = 0.0
    for steps in expected["steps"]:
        report = solve_continuation(problem, v0, v1, steps)
        jumps.append(report.max_consecutive_jump)
        for t, solution in zip(report.parameters, report.solutions):
            worst = max(worst, sup_distance(solution, constant(problem.grid, expected["slope"] * t)))
    ratio = jumps[1] / jumps[0]
    return {
        "passed": worst <= expected["max_error"]
        and expected["jump_ratio_min"] <= ratio <= expected["jump_ratio_max"],
        "measured": {"max_error": worst, "jumps": jumps, "jump_ratio": ratio},
    }


def evaluate_norm_separation(case: GoldenCase) -> Dict[str, Any]:
    problem = make_problem(**case.problem)
    report = check_norm_separation(problem)
    gap = abs(report.norm_K_plus_C - case.expected["norm"])
    return {
        "passed": gap <= case.expected["tol"] and report.passes == case.expected["passes"],
        "measured": {"norm": report.norm_K_plus_C, "passes": report.passes},
    }


def evaluate_lax_milgram(case: GoldenCase) -> Dict[str, Any]:
    expected = case.expected
    identity = check_lax_milgram(expected["identity_value"] * np.eye(expected["identity_size"]))
    rotation = check_lax_milgram(np.array([[0.0, -1.0], [1.0, 0.0]]))
    return {
        "passed": abs(identity.min_rayleigh - expected["identity_value"]) <= 1e-15
        and rotation.min_rayleigh <= expected["rotation_max"],
        "measured": {"identity_min_rayleigh": identity.min_rayleigh, "rotation_min_rayleigh": rotation.min_rayleigh},
    }


def evaluate_determinism(case: GoldenCase) -> Dict[str, Any]:
    """Two reproduce runs per example serialise to the same text."""
    identical = {}
    for example in case.expected["examples"]:
        first = dumps_report(run_reproduce(example).report)
        second = dumps_report(run_reproduce(example).report)
        identical[example] = first == second
    return {"passed": all(identical.values()), "measured": identical}


EVALUATORS: Dict[str, Callable[[GoldenCase], Dict[str, Any]]] = {
    "closed_form": evaluate_closed_form,
    "contraction_ratio": evaluate_contraction_ratio,
    "scalar_oracle": evaluate_scalar_oracle,
    "frechet": evaluate_frechet,
    "frechet_affine": evaluate_frechet_affine,
    "index": evaluate_index,
    "uniqueness": evaluate_uniqueness,
    "continuation": evaluate_continuation,
    "norm_separation": evaluate_norm_separation,
    "lax_milgram": evaluate_lax_milgram,
    "determinism": evaluate_determinism,
}


def evaluate_cases(cases: List[GoldenCase]) -> pd.DataFrame:
    """
    Runs every golden case and returns one row per case. A case that raises
    is recorded as failed with the exception in `measured`.
    """
    rows = []
    for case in cases:
        logger.info(f"Evaluating {case.case_name} (criterion {case.criterion})")
        start = time.perf_counter()
        try:
            outcome = EVALUATORS[case.kind](case)
        except Exception as e:
            logger.error(f"Case {case.case_name} raised {type(e).__name__}: {e}")
            outcome = {"passed": False, "measured": {"error": f"{type(e).__name__}: {e}"}}
        rows.append({
            "case": case.case_name,
            "criterion": case.criterion,
            "kind": case.kind,
            "passed": bool(outcome["passed"]),
            "runtime_ms": (time.perf_counter() - start) * 1000.0,
            "measured": json.dumps(outcome["measured"], sort_keys=True, default=float),
        })
    return pd.DataFrame(rows)
