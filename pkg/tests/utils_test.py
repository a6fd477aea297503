import unittest
from typing import Callable, Union

import numpy as np

from perturb.expr import Binary, Constant, Expr, Unary, Variable
from perturb.grid import GridFunction


def bisect_root(func: Callable[[float], float], a: float, b: float, tol: float = 1e-12) -> float:
    """Plain interval halving; kept independent of the scipy root finder used by the package."""
    fa = func(a)
    if fa * func(b) > 0:
        raise ValueError("Interval does not bracket a root")
    while b - a > tol:
        mid = 0.5 * (a + b)
        fm = func(mid)
        if fm == 0.0:
            return mid
        if fa * fm < 0:
            b = mid
        else:
            a, fa = mid, fm
    return 0.5 * (a + b)


def central_difference(func: Callable[[float], float], x: float, step: float = 1e-6) -> float:
    return (func(x + step) - func(x - step)) / (2.0 * step)


def assert_grid_function_close(test_case: unittest.TestCase, actual: GridFunction,
                               expected: Union[float, np.ndarray], tol: float, msg: str = ""):
    test_case.assertIsInstance(actual, GridFunction, "Expected a GridFunction")
    expected = np.broadcast_to(np.asarray(expected, dtype=float), actual.values.shape)
    error = float(np.max(np.abs(actual.values - expected)))
    test_case.assertLessEqual(error, tol, f"{msg} sup-error {error:.3e} exceeds {tol:.1e}".strip())


_LEAVES = ("x1", "x2", "u")
_SMOOTH = ("sin", "cos", "tanh", "neg")


def random_expression(rng: np.random.Generator, depth: int = 3) -> Expr:
    """
    A random expression in x1, x2 and u that is smooth and bounded for inputs
    in [-2, 2], apart from the kink of abs(u) at u = 0: divisions are by
    2 + cos(...), powers are small integers of a tanh, and exp only wraps
    bounded subtrees.
    """
    if depth <= 0 or rng.random() < 0.25:
        draw = rng.random()
        if draw < 0.3:
            return Constant(float(np.round(rng.uniform(-2.0, 2.0), 3)))
        if draw < 0.4:
            return Unary("abs", Variable("u"))
        return Variable(str(rng.choice(_LEAVES)))
    choice = rng.integers(0, 7)
    if choice == 0:
        return Unary(str(rng.choice(_SMOOTH)), random_expression(rng, depth - 1))
    if choice == 1:
        return Unary("exp", Unary("sin", random_expression(rng, depth - 1)))
    if choice == 2:
        denominator = Binary("+", Constant(2.0), Unary("cos", random_expression(rng, depth - 1)))
        return Binary("/", random_expression(rng, depth - 1), denominator)
    if choice == 3:
        base = Unary("tanh", random_expression(rng, depth - 1))
        return Binary("^", base, Constant(float(rng.integers(2, 4))))
    op = ("+", "-", "*")[choice - 4]
    return Binary(op, random_expression(rng, depth - 1), random_expression(rng, depth - 1))


def random_bindings(rng: np.random.Generator, kink_radius: float = 0.0) -> dict:
    """Values in [-2, 2]; u is redrawn until |u| >= kink_radius."""
    bindings = {name: float(rng.uniform(-2.0, 2.0)) for name in _LEAVES}
    while abs(bindings["u"]) < kink_radius:
        bindings["u"] = float(rng.uniform(-2.0, 2.0))
    return bindings
