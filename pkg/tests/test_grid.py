import unittest
import logging

import numpy as np

from perturb.errors import (
    EmptyFunction,
    GridMismatch,
    InvalidDomain,
    InvalidProblem,
    NonFiniteValues,
    UnsupportedDimension,
)
from perturb.expr import parse
from perturb.grid import (
    DomainSpec,
    GridFunction,
    build_grid,
    constant,
    function,
    integrate,
    sample,
    sup_distance,
    sup_norm,
)
from tests.utils_test import assert_grid_function_close

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')


class TestBuildGrid(unittest.TestCase):
    '''
    Quadrature grids on intervals and rectangles.
    '''

    def setUp(self):
        logging.info(f"Running {self.__class__.__name__}.{self._testMethodName}")

    def test_default_one_dimensional_grid(self):
        """201 trapezoid nodes on [0, 1], end weights halved."""
        grid = build_grid(DomainSpec(((0.0, 1.0),)))
        self.assertEqual(grid.size, 201)
        self.assertEqual(grid.rule, "trapezoid")
        self.assertAlmostEqual(grid.weights[0], 0.0025, places=15)
        self.assertAlmostEqual(grid.weights[1], 0.005, places=15)
        self.assertAlmostEqual(float(np.sum(grid.weights)), 1.0, places=14)

    def test_default_two_dimensional_grid(self):
        grid = build_grid(DomainSpec(((0.0, 1.0), (0.0, 2.0))))
        self.assertEqual(grid.size, 41 * 41)
        self.assertEqual(grid.nodes.shape, (41 * 41, 2))
        self.assertAlmostEqual(float(np.sum(grid.weights)), 2.0, places=12)

    def test_two_dimensional_nodes_are_row_major(self):
        """The second coordinate varies fastest."""
        grid = build_grid(DomainSpec(((0.0, 1.0), (0.0, 1.0))), nodes_per_dim=3)
        np.testing.assert_allclose(grid.nodes[:3], [[0.0, 0.0], [0.0, 0.5], [0.0, 1.0]])
        np.testing.assert_allclose(grid.nodes[3], [0.5, 0.0])

    def test_gauss_legendre_weights_sum_to_measure(self):
        grid = build_grid(DomainSpec(((-1.0, 3.0),)), "gauss-legendre", 7)
        self.assertTrue(np.all(grid.weights > 0))
        self.assertAlmostEqual(float(np.sum(grid.weights)), 4.0, places=13)

    def test_gauss_legendre_integrates_polynomials(self):
        """Five Gauss nodes are exact for x^2 on [0, 1]."""
        grid = build_grid(DomainSpec(((0.0, 1.0),)), "gauss-legendre", 5)
        self.assertAlmostEqual(integrate(grid, sample(grid, parse("x^2"))), 1.0 / 3.0, places=14)

    def test_trapezoid_is_exact_on_constants(self):
        grid = build_grid(DomainSpec(((0.0, 2.5),)), nodes_per_dim=11)
        self.assertAlmostEqual(integrate(grid, constant(grid, 2.0)), 5.0, places=14)

    def test_every_grid_gets_a_fresh_tag(self):
        domain = DomainSpec(((0.0, 1.0),))
        self.assertNotEqual(build_grid(domain).tag, build_grid(domain).tag)

    def test_invalid_interval(self):
        with self.assertRaises(InvalidDomain):
            DomainSpec(((1.0, 1.0),))

    def test_three_dimensions_unsupported(self):
        with self.assertRaises(UnsupportedDimension):
            DomainSpec(((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)))

    def test_too_few_nodes(self):
        with self.assertRaises(ValueError):
            build_grid(DomainSpec(((0.0, 1.0),)), nodes_per_dim=1)

    def test_unknown_rule(self):
        with self.assertRaises(ValueError):
            build_grid(DomainSpec(((0.0, 1.0),)), "simpson", 11)


class TestGridFunctions(unittest.TestCase):
    '''
    Sampling, arithmetic and norms of grid functions.
    '''

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.grid = build_grid(DomainSpec(((0.0, 1.0),)), nodes_per_dim=11)
        cls.other = build_grid(DomainSpec(((0.0, 1.0),)), nodes_per_dim=11)

    def setUp(self):
        logging.info(f"Running {self.__class__.__name__}.{self._testMethodName}")

    def test_sample_uses_node_coordinates(self):
        f = sample(self.grid, parse("1 + x"))
        assert_grid_function_close(self, f, 1.0 + self.grid.nodes[:, 0], 0.0)

    def test_sample_constant_expression_broadcasts(self):
        assert_grid_function_close(self, sample(self.grid, parse("3")), 3.0, 0.0)

    def test_sample_rejects_kernel_variables(self):
        with self.assertRaises(InvalidProblem):
            sample(self.grid, parse("x + y"))

    def test_arithmetic(self):
        f = constant(self.grid, 2.0)
        g = sample(self.grid, parse("x"))
        assert_grid_function_close(self, 0.5 * (f - g) + g, 1.0 + 0.5 * self.grid.nodes[:, 0], 1e-15)
        assert_grid_function_close(self, -f, -2.0, 0.0)

    def test_functions_on_different_grids_do_not_mix(self):
        with self.assertRaises(GridMismatch):
            constant(self.grid, 1.0) + constant(self.other, 1.0)

    def test_integrate_checks_alignment(self):
        with self.assertRaises(GridMismatch):
            integrate(self.grid, constant(self.other, 1.0))

    def test_function_checks_length(self):
        with self.assertRaises(GridMismatch):
            function(self.grid, [1.0, 2.0])

    def test_values_are_read_only(self):
        f = constant(self.grid, 1.0)
        with self.assertRaises(ValueError):
            f.values[0] = 2.0

    def test_non_finite_values_rejected(self):
        with self.assertRaises(NonFiniteValues):
            GridFunction(np.array([1.0, np.nan]), self.grid.tag)

    def test_sup_norm_and_distance(self):
        f = sample(self.grid, parse("x - 0.75"))
        self.assertAlmostEqual(sup_norm(f), 0.75, places=15)
        self.assertAlmostEqual(sup_distance(f, constant(self.grid, 0.0)), 0.75, places=15)

    def test_sup_norm_of_empty_function(self):
        with self.assertRaises(EmptyFunction):
            sup_norm(GridFunction(np.array([]), self.grid.tag))


class TestGridProperties(unittest.TestCase):
    '''
    Linearity of integration, norm axioms of sup_norm and trapezoid convergence,
    on seeded random grid functions.
    '''

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.rng = np.random.default_rng(31)
        cls.grids = [
            build_grid(DomainSpec(((0.0, 1.0),)), nodes_per_dim=201),
            build_grid(DomainSpec(((-1.0, 2.0),)), "gauss-legendre", 9),
            build_grid(DomainSpec(((0.0, 1.0), (0.0, 2.0))), nodes_per_dim=21),
        ]

    def setUp(self):
        logging.info(f"Running {self.__class__.__name__}.{self._testMethodName}")

    def _random_function(self, grid):
        return function(grid, self.rng.uniform(-3.0, 3.0, size=grid.size))

    def test_integrate_is_linear(self):
        for grid in self.grids:
            for _ in range(20):
                f, g = self._random_function(grid), self._random_function(grid)
                alpha, beta = (float(a) for a in self.rng.uniform(-5.0, 5.0, size=2))
                combined = integrate(grid, alpha * f + beta * g)
                separate = alpha * integrate(grid, f) + beta * integrate(grid, g)
                scale = abs(alpha) * integrate(grid, function(grid, np.abs(f.values))) \
                    + abs(beta) * integrate(grid, function(grid, np.abs(g.values)))
                self.assertLessEqual(abs(combined - separate), 1e-13 * max(scale, 1.0))

    def test_sup_norm_triangle_inequality(self):
        for grid in self.grids:
            for _ in range(20):
                f, g = self._random_function(grid), self._random_function(grid)
                self.assertLessEqual(sup_norm(f + g), sup_norm(f) + sup_norm(g) + 1e-13)

    def test_sup_norm_absolute_homogeneity(self):
        for grid in self.grids:
            for _ in range(20):
                f = self._random_function(grid)
                alpha = float(self.rng.uniform(-10.0, 10.0))
                self.assertLessEqual(abs(sup_norm(alpha * f) - abs(alpha) * sup_norm(f)),
                                     1e-13 * abs(alpha) * sup_norm(f))

    def test_sup_norm_vanishes_only_at_zero(self):
        grid = self.grids[0]
        self.assertEqual(sup_norm(constant(grid, 0.0)), 0.0)
        values = np.zeros(grid.size)
        values[17] = 1e-300
        self.assertGreater(sup_norm(function(grid, values)), 0.0)

    def test_trapezoid_converges_at_second_order(self):
        """Halving the spacing divides the error for exp on [0, 1] by four."""
        errors = []
        for nodes in (11, 21, 41, 81):
            grid = build_grid(DomainSpec(((0.0, 1.0),)), nodes_per_dim=nodes)
            errors.append(abs(integrate(grid, sample(grid, parse("exp(x)"))) - (np.e - 1.0)))
        orders = [np.log2(coarse / fine) for coarse, fine in zip(errors, errors[1:])]
        for order in orders:
            # the h^4 term of the error expansion keeps the ratio a hair under 4
            self.assertGreaterEqual(order, 1.99)


if __name__ == '__main__':
    unittest.main()
