from typing import Any, Dict, Optional

# ============================
# Golden cases with analytically known answers
# ============================

LINEAR_HALF = {"domain": [[0.0, 1.0]], "linear_kernels": ["0.5"]}
SINE_HAMMERSTEIN = {"domain": [[0.0, 1.0]], "hammerstein_kernel": "0.25*sin(u)"}
UNIT_KERNEL = {"domain": [[0.0, 1.0]], "linear_kernels": ["1"]}


class GoldenCase:
    """
    One acceptance case: the problem to build (keyword arguments of
    make_problem), the right-hand side as a constant, and the expected values.
    """

    def __init__(self, case_name: str, criterion: int, kind: str, problem: Optional[Dict[str, Any]],
                 rhs: Optional[float], expected: Dict[str, Any]):
        self.case_name = case_name
        self.criterion = criterion
        self.kind = kind
        self.problem = problem
        self.rhs = rhs
        self.expected = expected

    def __repr__(self):
        return f"GoldenCase({self.case_name!r}, criterion={self.criterion}, kind={self.kind!r})"


cases = [
    GoldenCase("constant_kernel_closed_form", 1, "closed_form", LINEAR_HALF, 1.0,
               {"solution": 2.0 / 3.0, "max_error": 1e-12, "max_iterations": 60, "tol": 1e-13,
                "max_runtime_ms": 500.0}),
    GoldenCase("constant_kernel_ratio", 2, "contraction_ratio", LINEAR_HALF, 1.0,
               {"k": 0.5, "slack": 1e-6}),
    GoldenCase("sine_hammerstein_fixed_point", 3, "scalar_oracle", SINE_HAMMERSTEIN, 1.0,
               {"bracket": (0.0, 1.0), "max_error": 1e-10, "newton_max_iterations": 8}),
    GoldenCase("sine_frechet_order", 4, "frechet", SINE_HAMMERSTEIN, 0.7,
               {"order_min": 1.8, "order_max": 2.4}),
    GoldenCase("affine_frechet_remainder", 4, "frechet_affine",
               {"domain": [[0.0, 1.0]], "hammerstein_kernel": "0.1*u"}, 0.3,
               {"max_remainder": 1e-13}),
    GoldenCase("index_invariance", 5, "index", None, None,
               {"shapes": [(2, 2), (3, 2), (2, 3), (5, 5)], "trials": 100, "magnitude": 1e-3,
                "max_runtime_ms": 2000.0}),
    GoldenCase("uniqueness_constant_kernel", 6, "uniqueness", LINEAR_HALF, 1.0,
               {"starts": 16, "clusters": 1}),
    GoldenCase("uniqueness_sine_hammerstein", 6, "uniqueness", SINE_HAMMERSTEIN, 1.0,
               {"starts": 16, "clusters": 1}),
    GoldenCase("continuation_constant_kernel", 7, "continuation", LINEAR_HALF, 1.0,
               {"steps": (4, 8), "slope": 2.0 / 3.0, "max_error": 1e-10, "jump_ratio_min": 0.4,
                "jump_ratio_max": 0.6}),
    GoldenCase("unit_kernel_norm", 8, "norm_separation", UNIT_KERNEL, None,
               {"norm": 1.0, "tol": 1e-12, "passes": False}),
    GoldenCase("lax_milgram_matrices", 9, "lax_milgram", None, None,
               {"identity_size": 50, "identity_value": 2.0, "rotation_max": 1e-12}),
    GoldenCase("reproduce_determinism", 10, "determinism", None, None,
               {"examples": ("example1", "example2")}),
]
