"""
Embedded canonical instances used by `reproduce`.

example1: linear equation u + K u + G u = v on [0, 1] with k = 0.4 cos(x y)
    and g = 0.2 x y; max |k + g| * meas < 1, so Picard contracts.
example2: Hammerstein equation u + C u = 1 on [0, 1] with h = 0.25 sin(u);
    the solution is the constant c with c + 0.25 sin(c) = 1.
"""
import copy
from typing import Any, Dict

import numpy as np

from perturb.errors import UnknownExample
from perturb.problem_file import ProblemFile, validate_problem

EXAMPLES: Dict[str, Dict[str, Any]] = {
    "example1": {
        "domain": {"intervals": [[0.0, 1.0]]},
        "quadrature": {"rule": "trapezoid", "nodes_per_dim": 201},
        "linear_kernels": ["0.4*cos(x*y)", "0.2*x*y"],
        "rhs": "1 + x",
        "solver": {"method": "picard"},
        "continuation": {"rhs_start": "0", "steps": 4},
    },
    "example2": {
        "domain": {"intervals": [[0.0, 1.0]]},
        "quadrature": {"rule": "trapezoid", "nodes_per_dim": 201},
        "hammerstein_kernel": "0.25*sin(u)",
        "rhs": "1",
        "solver": {"method": "newton"},
    },
}

# The other method used to cross-check each primary solve.
CROSS_METHOD = {"picard": "newton", "newton": "picard"}


def load_example(example_id: str) -> ProblemFile:
    """
    Raises:
        UnknownExample: example_id is not one of EXAMPLES.
    """
    if example_id not in EXAMPLES:
        raise UnknownExample(f"Unknown example '{example_id}'. Expected one of {sorted(EXAMPLES)}")
    return validate_problem(copy.deepcopy(EXAMPLES[example_id]))


def example2_scalar_equation(c: float) -> float:
    """Residual of the scalar equation solved by example2's constant solution."""
    return c + 0.25 * float(np.sin(c)) - 1.0


# Scalar equations whose root is the exact constant solution, with a bracketing interval.
SCALAR_ORACLES = {
    "example2": (example2_scalar_equation, (0.0, 1.0)),
}

# Steps run by `reproduce` after the solves and the uniqueness probe.
PIPELINE_EXTRAS = {
    "example1": ("fixed_point", "continuation"),
    "example2": (),
}
