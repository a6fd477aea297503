import unittest
import logging
import math
import warnings

import numpy as np

from perturb.errors import (
    ContinuationError,
    DerivativeMismatch,
    DivergenceError,
    InvalidProblem,
    MaxIterExceeded,
    NotContractiveWarning,
    SingularJacobian,
)
from perturb.grid import constant, sup_distance, sup_norm
from perturb.operators import apply_f, make_problem
from perturb.solvers import (
    SolverOptions,
    fixed_point,
    solve,
    solve_continuation,
    solve_newton,
    solve_picard,
    uniqueness_probe,
)
from tests.utils_test import assert_grid_function_close, bisect_root

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')


def _sine_root() -> float:
    return bisect_root(lambda c: c + 0.25 * math.sin(c) - 1.0, 0.0, 1.0, tol=1e-12)


class TestPicard(unittest.TestCase):
    '''
    Successive approximation on the constant-kernel and sine-Hammerstein instances.
    '''

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.linear = make_problem([[0.0, 1.0]], linear_kernels=["0.5"])
        cls.sine = make_problem([[0.0, 1.0]], hammerstein_kernel="0.25*sin(u)")
        cls.v_linear = constant(cls.linear.grid, 1.0)
        cls.v_sine = constant(cls.sine.grid, 1.0)

    def setUp(self):
        logging.info(f"Running {self.__class__.__name__}.{self._testMethodName}")

    def test_constant_kernel_closed_form(self):
        """u = v / (1 + 0.5) = 2/3, reached in at most 60 iterations."""
        report = solve_picard(self.linear, self.v_linear, SolverOptions(tol=1e-13))
        self.assertTrue(report.converged)
        self.assertLessEqual(report.iterations, 60)
        assert_grid_function_close(self, report.solution, 2.0 / 3.0, 1e-12)

    def test_default_tolerance_meets_residual_postcondition(self):
        report = solve_picard(self.linear, self.v_linear)
        self.assertTrue(report.converged)
        self.assertLessEqual(report.residual_sup, 1e-9)
        assert_grid_function_close(self, report.solution, 2.0 / 3.0, 1e-10)

    def test_observed_ratio_matches_contraction_constant(self):
        """Every recorded step ratio is at most k = M * meas = 0.5."""
        report = solve_picard(self.linear, self.v_linear)
        self.assertAlmostEqual(report.kappa_estimate, 0.5, places=14)
        self.assertLessEqual(report.contraction_ratio_observed, 0.5 + 1e-6)

    def test_a_priori_bound_covers_the_error(self):
        report = solve_picard(self.linear, self.v_linear)
        error = sup_norm(report.solution - constant(self.linear.grid, 2.0 / 3.0))
        self.assertLessEqual(error, report.a_priori_bound + 1e-15)

    def test_hammerstein_matches_bisection(self):
        report = solve_picard(self.sine, self.v_sine)
        self.assertTrue(report.converged)
        assert_grid_function_close(self, report.solution, _sine_root(), 1e-10)

    def test_divergence_after_three_growing_steps(self):
        """With k = 1.5 the step of u <- 1 - 1.5 u grows by 1.5 each time."""
        problem = make_problem([[0.0, 1.0]], linear_kernels=["1.5"], nodes_per_dim=11)
        with self.assertWarns(NotContractiveWarning):
            with self.assertRaises(DivergenceError) as ctx:
                solve_picard(problem, constant(problem.grid, 1.0))
        partial = ctx.exception.report
        self.assertFalse(partial.converged)
        self.assertEqual(partial.iterations, 4)

    def test_iteration_limit(self):
        with self.assertRaises(MaxIterExceeded) as ctx:
            solve_picard(self.linear, self.v_linear, SolverOptions(max_iter=5))
        self.assertEqual(len(ctx.exception.report.step_sizes), 5)
        self.assertFalse(ctx.exception.report.converged)

    def test_unreachable_tolerance(self):
        """Stagnation at rounding level is not convergence."""
        with self.assertRaises(MaxIterExceeded):
            solve_picard(self.linear, self.v_linear, SolverOptions(tol=1e-99, max_iter=200))

    def test_invalid_options(self):
        with self.assertRaises(InvalidProblem):
            SolverOptions(tol=0.0)
        with self.assertRaises(InvalidProblem):
            SolverOptions(max_iter=0)


class TestNewton(unittest.TestCase):
    '''
    Newton iteration and its agreement with Picard.
    '''

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.sine = make_problem([[0.0, 1.0]], hammerstein_kernel="0.25*sin(u)")
        cls.v = constant(cls.sine.grid, 1.0)
        cls.report = solve_newton(cls.sine, cls.v)

    def setUp(self):
        logging.info(f"Running {self.__class__.__name__}.{self._testMethodName}")

    def test_hammerstein_matches_bisection(self):
        self.assertTrue(self.report.converged)
        self.assertLessEqual(self.report.iterations, 8)
        assert_grid_function_close(self, self.report.solution, _sine_root(), 1e-10)

    def test_agrees_with_picard(self):
        picard = solve_picard(self.sine, self.v)
        self.assertLessEqual(sup_distance(picard.solution, self.report.solution), 1e-9)

    def test_quadratic_step_decay(self):
        """Each step is bounded by a multiple of the previous step to the power 1.5."""
        steps = self.report.step_sizes
        for previous, current in zip(steps, steps[1:]):
            if current > 1e-12:
                self.assertLessEqual(current, 10.0 * previous ** 1.5)

    def test_linear_problem_in_one_step(self):
        problem = make_problem([[0.0, 1.0]], linear_kernels=["1"])
        report = solve_newton(problem, constant(problem.grid, 1.0))
        self.assertEqual(report.iterations, 1)
        assert_grid_function_close(self, report.solution, 0.5, 1e-12)

    def test_singular_jacobian(self):
        """k = -1 makes I + K annihilate constants."""
        problem = make_problem([[0.0, 1.0]], linear_kernels=["-1"], nodes_per_dim=3)
        with self.assertRaises(SingularJacobian):
            solve_newton(problem, constant(problem.grid, 1.0))

    def test_wrong_derivative_override(self):
        problem = make_problem([[0.0, 1.0]], hammerstein_kernel="sin(u)",
                               hammerstein_derivative="2*cos(u)", nodes_per_dim=11)
        with self.assertRaises(DerivativeMismatch):
            solve_newton(problem, constant(problem.grid, 0.5))

    def test_unreachable_tolerance(self):
        with self.assertRaises(MaxIterExceeded) as ctx:
            solve_newton(self.sine, self.v, SolverOptions(tol=1e-99, max_iter=20))
        self.assertEqual(ctx.exception.report.iterations, 20)

    def test_zero_power_kernel_at_the_origin(self):
        """h = 0.1 u^2 + u^0 has h_u = 0.2 u, defined at u = 0."""
        problem = make_problem([[0.0, 1.0]], hammerstein_kernel="0.1*u^2 + u^0", nodes_per_dim=21)
        zero = constant(problem.grid, 0.0)
        report = solve_newton(problem, constant(problem.grid, 1.0), initial=zero)
        self.assertTrue(report.converged)
        self.assertLessEqual(sup_norm(report.solution), 1e-12)

    def test_dispatch(self):
        self.assertEqual(solve(self.sine, self.v, "newton").method, "newton")
        with self.assertRaises(InvalidProblem):
            solve(self.sine, self.v, "bisection")

    def test_fixed_point(self):
        """f(u) = 0 with K_1 = -K_h and C_1 = -C_h is the fixed point of K_1 + C_1."""
        problem = make_problem([[0.0, 1.0]], linear_kernels=["-0.5"], hammerstein_kernel="-0.1*x*cos(u)")
        report = fixed_point(problem)
        self.assertTrue(report.converged)
        self.assertGreater(sup_norm(report.solution), 0.01)
        self.assertLessEqual(sup_norm(apply_f(problem, report.solution)), 1e-9)


class TestContinuation(unittest.TestCase):
    '''
    Warm-started continuation from v0 to v1.
    '''

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.problem = make_problem([[0.0, 1.0]], linear_kernels=["0.5"])
        cls.v0 = constant(cls.problem.grid, 0.0)
        cls.v1 = constant(cls.problem.grid, 1.0)
        cls.coarse = solve_continuation(cls.problem, cls.v0, cls.v1, 4)
        cls.fine = solve_continuation(cls.problem, cls.v0, cls.v1, 8)

    def setUp(self):
        logging.info(f"Running {self.__class__.__name__}.{self._testMethodName}")

    def test_solutions_follow_the_parameter(self):
        """For the linear problem u(t) = (2/3) t."""
        for report in (self.coarse, self.fine):
            self.assertEqual(len(report.solutions), report.steps + 1)
            for t, solution in zip(report.parameters, report.solutions):
                assert_grid_function_close(self, solution, 2.0 / 3.0 * t, 1e-10, f"t={t}")

    def test_jump_halves_when_steps_double(self):
        ratio = self.fine.max_consecutive_jump / self.coarse.max_consecutive_jump
        self.assertGreaterEqual(ratio, 0.4)
        self.assertLessEqual(ratio, 0.6)

    def test_endpoint_matches_direct_solve(self):
        self.assertTrue(self.coarse.endpoint_matches_direct)
        self.assertLessEqual(self.coarse.endpoint_distance, 1e-9)
        self.assertEqual(self.coarse.methods, ["newton"] * 5)

    def test_invalid_steps(self):
        with self.assertRaises(InvalidProblem):
            solve_continuation(self.problem, self.v0, self.v1, 0)

    def test_failure_reports_parameter(self):
        """Newton falls back to Picard on the singular problem, which cannot reach t = 1."""
        problem = make_problem([[0.0, 1.0]], linear_kernels=["-1"], nodes_per_dim=3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotContractiveWarning)
            with self.assertRaises(ContinuationError) as ctx:
                solve_continuation(problem, constant(problem.grid, 0.0), constant(problem.grid, 1.0), 1,
                                   SolverOptions(max_iter=50))
        self.assertEqual(ctx.exception.parameter, 1.0)
        self.assertEqual(len(ctx.exception.report.solutions), 1)
        self.assertEqual(ctx.exception.report.methods, ["picard"])


class TestUniquenessProbe(unittest.TestCase):
    '''
    Multistart Newton on instances with a unique solution.
    '''

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.linear = make_problem([[0.0, 1.0]], linear_kernels=["0.5"])
        cls.sine = make_problem([[0.0, 1.0]], hammerstein_kernel="0.25*sin(u)")

    def setUp(self):
        logging.info(f"Running {self.__class__.__name__}.{self._testMethodName}")

    def test_contractive_linear_instance(self):
        report = uniqueness_probe(self.linear, constant(self.linear.grid, 1.0), 16)
        self.assertEqual(len(report.distinct_solutions), 1)
        self.assertTrue(report.all_converged)
        self.assertTrue(report.jacobian_nonsingular_at_each)
        assert_grid_function_close(self, report.distinct_solutions[0], 2.0 / 3.0, 1e-10)

    def test_hammerstein_instance(self):
        report = uniqueness_probe(self.sine, constant(self.sine.grid, 1.0), 16)
        self.assertEqual(len(report.distinct_solutions), 1)
        self.assertEqual(report.converged_starts, 16)
        self.assertAlmostEqual(report.start_radius, 3.0)
        assert_grid_function_close(self, report.distinct_solutions[0], _sine_root(), 1e-10)

    def test_identity_converges_in_one_step(self):
        problem = make_problem([[0.0, 1.0]], nodes_per_dim=21)
        v = constant(problem.grid, 0.25)
        report = uniqueness_probe(problem, v, 8)
        self.assertEqual(report.iterations, [1] * 8)
        assert_grid_function_close(self, report.distinct_solutions[0], 0.25, 1e-15)

    def test_same_seed_same_report(self):
        v = constant(self.sine.grid, 1.0)
        first = uniqueness_probe(self.sine, v, 6, SolverOptions(seed=11)).to_dict()
        second = uniqueness_probe(self.sine, v, 6, SolverOptions(seed=11, max_workers=1)).to_dict()
        self.assertEqual(first, second)

    def test_invalid_start_count(self):
        with self.assertRaises(InvalidProblem):
            uniqueness_probe(self.linear, constant(self.linear.grid, 1.0), 0)


if __name__ == '__main__':
    unittest.main()
