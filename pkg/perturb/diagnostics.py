"""
Sampled checks of the hypotheses behind unique solvability of f(u) = v:
contraction, weak coercivity, norm separation, Frechet-derivative accuracy,
Lax-Milgram coercivity of a matrix and Fredholm index invariance.

Everything here is evidence gathered on the grid. Only the contraction
constant of a purely linear problem and the coercivity slope of the
contractive linear case are certified bounds.
"""
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from perturb.errors import InvalidProblem, MissingHammerstein
from perturb.grid import GridFunction, constant, sup_norm
from perturb.operators import (
    MatrixLike,
    Problem,
    apply_c,
    apply_f,
    apply_matrix,
    c_jacobian,
    jacobian,
    kernel_samples,
    matrix_entries,
    operator_sup_norm,
)

logger = logging.getLogger(__name__)

SV_THRESHOLD = 1e-10
NORM_SEPARATION_BAND = 1e-8
AFFINE_REMAINDER = 1e-13
FRECHET_MIN_ORDER = 1.5
DEFAULT_T_VALUES = (1e-2, 1e-3, 1e-4)
DEFAULT_SCALES = (1.0, 10.0, 100.0, 1000.0)

COERCIVITY_NOTE = (
    "A linear lower bound ||f(u)|| >= (|c| - ||K||) ||u|| is certified only for problems "
    "without a Hammerstein part and ||K|| < |c|. The general bound ||f(u)|| >= | ||K+C|| - 1 | ||u|| "
    "does not hold pointwise when ||K+C|| > 1; otherwise ray growth is sampled evidence only."
)


class _Report:
    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ---------------------------------------------------------------------------
# Contraction
# ---------------------------------------------------------------------------

@dataclass
class ContractionReport(_Report):
    kernel_sup_M: float
    measure: float
    contraction_constant_k: float
    hammerstein_hu_sup: Optional[float]
    combined_estimate_kappa: float
    is_contractive: bool
    kernel_sups: List[float] = field(default_factory=list)
    hammerstein_h_sup: Optional[float] = None
    u_range: Optional[float] = None
    identity_coefficient: float = 1.0


def check_contraction(problem: Problem, u_range: Optional[float] = None) -> ContractionReport:
    """
    Estimate the contraction constant of u -> (v - K_h u - C_h(u)) / c.

    M is the largest |sum of linear kernels| over all grid node pairs, so
    k = M * meas(domain) exactly. sup |h_u| is sampled on the grid pairs for
    101 values of u in [-u_range, u_range] (default 10), which makes kappa an
    estimate whenever a Hammerstein kernel is present.

    Args:
        problem (Problem): Problem to inspect.
        u_range (float): Half-width of the sampled u interval.

    Returns:
        ContractionReport: kappa = (k + sup|h_u| * meas) / |c|.
    """
    u_range = 10.0 if u_range is None else float(u_range)
    if not u_range > 0:
        raise InvalidProblem(f"u_range must be > 0, got {u_range!r}")
    samples = kernel_samples(problem, u_range)
    measure = problem.grid.measure
    m_sup = samples["summed_kernel_sup"]
    k = m_sup * measure
    hu_sup = samples["hu_sup"]
    kappa = (k + (hu_sup or 0.0) * measure) / abs(problem.identity_coefficient)
    report = ContractionReport(
        kernel_sup_M=m_sup,
        measure=measure,
        contraction_constant_k=k,
        hammerstein_hu_sup=hu_sup,
        combined_estimate_kappa=kappa,
        is_contractive=kappa < 1.0,
        kernel_sups=samples["kernel_sups"],
        hammerstein_h_sup=samples["h_sup"],
        u_range=u_range if problem.has_hammerstein else None,
        identity_coefficient=problem.identity_coefficient,
    )
    logger.info("Contraction check: k = %.6g, kappa = %.6g, contractive = %s",
                k, kappa, report.is_contractive)
    return report


# ---------------------------------------------------------------------------
# Weak coercivity
# ---------------------------------------------------------------------------

@dataclass
class CoercivityReport(_Report):
    ray_samples: List[List[Tuple[float, float]]]
    lower_bound_certified: Optional[float]
    monotone_growth_observed: bool
    directions: int = 0
    linear_norm: float = 0.0
    note: str = COERCIVITY_NOTE


def _probe_directions(problem: Problem, directions: int, seed: int) -> List[GridFunction]:
    grid = problem.grid
    rng = np.random.default_rng(seed)
    rays = [constant(grid, 1.0)]
    for _ in range(directions - 1):
        values = rng.uniform(-1.0, 1.0, size=grid.size)
        values = values / np.max(np.abs(values))
        rays.append(GridFunction(values, grid.tag))
    return rays


def check_weak_coercivity(problem: Problem, directions: int = 4,
                          scales: Sequence[float] = DEFAULT_SCALES, seed: int = 0) -> CoercivityReport:
    """
    Tabulate ||f(lambda u)|| along rays lambda u for unit sup-norm directions u.
    The first direction is u = 1, the rest are seeded random.

    Raises:
        InvalidProblem: Fewer than 2 scales, scales not strictly increasing, or
            directions < 1.
    """
    scales = [float(s) for s in scales]
    if len(scales) < 2 or any(b <= a for a, b in zip(scales, scales[1:])):
        raise InvalidProblem("scales must be strictly increasing with at least 2 entries")
    if directions < 1:
        raise InvalidProblem("directions must be >= 1")

    ray_samples = []
    monotone = True
    for u in _probe_directions(problem, int(directions), seed):
        ray = [(scale, sup_norm(apply_f(problem, scale * u))) for scale in scales]
        values = [value for _, value in ray]
        if not values[-1] > values[0]:
            monotone = False
        if any(b < a * (1.0 - 1e-9) for a, b in zip(values, values[1:])):
            monotone = False
        ray_samples.append(ray)

    linear_norm = operator_sup_norm(problem.linear_part)
    certified = None
    c = abs(problem.identity_coefficient)
    # inside the norm-separation band the slope is rounding noise
    if not problem.has_hammerstein and c - linear_norm > NORM_SEPARATION_BAND:
        certified = c - linear_norm
    logger.info("Weak coercivity probe: %d rays, monotone = %s, certified slope = %s",
                len(ray_samples), monotone, certified)
    return CoercivityReport(
        ray_samples=ray_samples,
        lower_bound_certified=certified,
        monotone_growth_observed=monotone,
        directions=len(ray_samples),
        linear_norm=linear_norm,
    )


# ---------------------------------------------------------------------------
# Norm separation
# ---------------------------------------------------------------------------

@dataclass
class NormSeparationReport(_Report):
    norm_K_plus_C: float
    distance_from_1: float
    split_norm_gap: Optional[float]
    passes: bool
    norm_F: Optional[float] = None
    norm_C: Optional[float] = None


def check_norm_separation(problem: Problem) -> NormSeparationReport:
    """
    ||K + C|| for the summed linear kernels against |c| (= 1 for f = I + K + C).

    With two or more kernels the first is read as the linear part of
    F = c I + K_1 and the rest as C, and | ||F|| - ||C|| | is reported too.
    """
    norm = operator_sup_norm(problem.linear_part)
    distance = abs(norm - abs(problem.identity_coefficient))
    gap = norm_f = norm_c = None
    matrices = problem.linear_matrices
    if len(matrices) >= 2:
        size = problem.grid.size
        f_part = problem.identity_coefficient * np.eye(size) + matrices[0].entries
        c_part = sum((m.entries for m in matrices[1:]), np.zeros((size, size)))
        norm_f = operator_sup_norm(f_part)
        norm_c = operator_sup_norm(c_part)
        gap = abs(norm_f - norm_c)
    report = NormSeparationReport(
        norm_K_plus_C=norm,
        distance_from_1=distance,
        split_norm_gap=gap,
        passes=distance > NORM_SEPARATION_BAND,
        norm_F=norm_f,
        norm_C=norm_c,
    )
    logger.info("Norm separation: ||K+C|| = %.17g, pass = %s", norm, report.passes)
    return report


# ---------------------------------------------------------------------------
# Frechet derivative
# ---------------------------------------------------------------------------

@dataclass
class FrechetReport(_Report):
    remainders: List[float]
    estimated_order: Optional[float]
    passes: bool
    t_values: List[float] = field(default_factory=list)
    affine: bool = False


def check_frechet(problem: Problem, u: GridFunction, m: GridFunction,
                  t_values: Sequence[float] = DEFAULT_T_VALUES) -> FrechetReport:
    """
    remainder(t) = ||C(u + t m) - C(u) - t C'(u) m|| for decreasing t.

    The order is the least-squares slope of log remainder against log t.
    When every remainder is below 1e-13, C is affine along m: no order is
    fitted and the check passes.

    Raises:
        MissingHammerstein: The problem has no Hammerstein kernel.
        InvalidProblem: t_values not strictly decreasing, positive, with at
            least 3 entries.
    """
    if not problem.has_hammerstein:
        raise MissingHammerstein("check_frechet needs a Hammerstein kernel")
    t_values = [float(t) for t in t_values]
    if len(t_values) < 3 or any(t <= 0 for t in t_values) \
            or any(b >= a for a, b in zip(t_values, t_values[1:])):
        raise InvalidProblem("t_values must be positive, strictly decreasing, with at least 3 entries")

    base = apply_c(problem, u)
    direction = apply_matrix(c_jacobian(problem, u), m)
    remainders = [sup_norm(apply_c(problem, u + t * m) - base - t * direction) for t in t_values]

    if all(r <= AFFINE_REMAINDER for r in remainders):
        logger.info("Frechet check: remainders all below %g, C is affine along m", AFFINE_REMAINDER)
        return FrechetReport(remainders, None, True, t_values, affine=True)

    logs = np.log(np.maximum(remainders, np.finfo(float).tiny))
    slope = float(np.polyfit(np.log(t_values), logs, 1)[0])
    report = FrechetReport(remainders, slope, slope >= FRECHET_MIN_ORDER, t_values)
    logger.info("Frechet check: estimated order %.4f, pass = %s", slope, report.passes)
    return report


# ---------------------------------------------------------------------------
# Lax-Milgram
# ---------------------------------------------------------------------------

@dataclass
class LaxMilgramReport(_Report):
    min_rayleigh: float
    trials: int
    seed: int

    def passes(self, c: float) -> bool:
        return self.min_rayleigh >= c


def check_lax_milgram(matrix: MatrixLike, trials: int = 200, seed: int = 0) -> LaxMilgramReport:
    """
    Smallest sampled |u^T A u| / (u^T u) over seeded Gaussian vectors u.
    A sampled falsification test of |(Au|u)| >= c ||u||^2, not a certificate.
    """
    a = matrix_entries(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidProblem(f"Lax-Milgram check needs a square matrix, got shape {a.shape}")
    if trials < 1:
        raise InvalidProblem("trials must be >= 1")
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((int(trials), a.shape[0]))
    quadratic = np.einsum("ij,ij->i", vectors, vectors @ a.T)
    squares = np.einsum("ij,ij->i", vectors, vectors)
    min_rayleigh = float(np.min(np.abs(quadratic) / squares))
    logger.info("Lax-Milgram check: min Rayleigh quotient %.6g over %d trials", min_rayleigh, trials)
    return LaxMilgramReport(min_rayleigh=min_rayleigh, trials=int(trials), seed=seed)


# ---------------------------------------------------------------------------
# Fredholm index
# ---------------------------------------------------------------------------

@dataclass
class IndexReport(_Report):
    rows: int
    cols: int
    rank: int
    dim_kernel: int
    codim_range: int
    index: int
    sv_threshold_used: float
    singular_values: List[float] = field(default_factory=list)


def fredholm_index(matrix: MatrixLike, tau: float = SV_THRESHOLD) -> IndexReport:
    """
    Numerical rank and index of an m x n matrix.

    rank counts singular values above tau * sigma_max (0 for the zero matrix);
    the index dim ker - codim range equals n - m whatever the rank.
    """
    a = matrix_entries(matrix)
    if a.ndim != 2 or a.size == 0:
        raise InvalidProblem(f"fredholm_index needs a non-empty 2-D matrix, got shape {a.shape}")
    rows, cols = a.shape
    singular_values = np.linalg.svd(a, compute_uv=False)
    sigma_max = float(singular_values[0]) if singular_values.size else 0.0
    threshold = tau * sigma_max
    rank = int(np.sum(singular_values > threshold)) if sigma_max > 0 else 0
    dim_kernel = cols - rank
    codim_range = rows - rank
    return IndexReport(
        rows=rows,
        cols=cols,
        rank=rank,
        dim_kernel=dim_kernel,
        codim_range=codim_range,
        index=dim_kernel - codim_range,
        sv_threshold_used=threshold,
        singular_values=[float(s) for s in singular_values],
    )


PERTURBATION_KINDS = ("finite_rank", "small_norm")


@dataclass
class IndexStabilityReport(_Report):
    all_indices_equal: bool
    index: int
    kind: str
    magnitude: float
    trials: int
    base_rank: int
    ranks_observed: List[int] = field(default_factory=list)
    rank_changed: bool = False
    rank_unstable: bool = False


def _perturbation(rng: np.random.Generator, shape: Tuple[int, int], kind: str, magnitude: float) -> np.ndarray:
    if kind == "small_norm":
        p = rng.standard_normal(shape)
    else:
        p = np.outer(rng.standard_normal(shape[0]), rng.standard_normal(shape[1]))
    norm = np.linalg.norm(p, 2)
    return p * (magnitude / norm) if norm > 0 else p


def index_stability_trial(s: MatrixLike, perturbation_kind: str = "small_norm", magnitude: float = 1e-3,
                          trials: int = 100, seed: int = 0, tau: float = SV_THRESHOLD) -> IndexStabilityReport:
    """
    Compare fredholm_index(S + P).index with fredholm_index(S).index over seeded
    random perturbations P of 2-norm `magnitude`.

    finite_rank draws rank-1 outer products, small_norm dense Gaussian matrices.
    rank_unstable is set when some perturbed rank differs from the unperturbed
    one, or when magnitude is within a factor 10 of tau * sigma_max, where the
    numerical rank cannot be trusted.

    Raises:
        InvalidProblem: Unknown kind, magnitude <= 0 or trials < 1.
    """
    if perturbation_kind not in PERTURBATION_KINDS:
        raise InvalidProblem(f"Unknown perturbation kind '{perturbation_kind}'. Expected one of {PERTURBATION_KINDS}")
    if not magnitude > 0:
        raise InvalidProblem("magnitude must be > 0")
    if trials < 1:
        raise InvalidProblem("trials must be >= 1")
    a = matrix_entries(s)
    base = fredholm_index(a, tau)
    rng = np.random.default_rng(seed)

    ranks = []
    all_equal = True
    for _ in range(int(trials)):
        perturbed = fredholm_index(a + _perturbation(rng, a.shape, perturbation_kind, magnitude), tau)
        ranks.append(perturbed.rank)
        all_equal = all_equal and perturbed.index == base.index

    rank_changed = any(r != base.rank for r in ranks)
    threshold = base.sv_threshold_used
    near_threshold = threshold > 0 and 0.1 <= magnitude / threshold <= 10.0
    report = IndexStabilityReport(
        all_indices_equal=all_equal,
        index=base.index,
        kind=perturbation_kind,
        magnitude=float(magnitude),
        trials=int(trials),
        base_rank=base.rank,
        ranks_observed=sorted(set(ranks)),
        rank_changed=rank_changed,
        rank_unstable=rank_changed or near_threshold,
    )
    logger.info("Index stability (%s, %.3g, %d trials): index %d, all equal = %s, rank unstable = %s",
                perturbation_kind, magnitude, trials, base.index, all_equal, report.rank_unstable)
    return report


# ---------------------------------------------------------------------------
# Derivative checks at sampled points
# ---------------------------------------------------------------------------

def _sample_points(problem: Problem, samples: int, seed: int, u_range: float,
                   anchor: Optional[GridFunction]) -> List[GridFunction]:
    grid = problem.grid
    rng = np.random.default_rng(seed)
    points = [anchor if anchor is not None else constant(grid, 0.0)]
    for _ in range(max(int(samples) - 1, 0)):
        points.append(GridFunction(rng.uniform(-u_range, u_range, size=grid.size), grid.tag))
    return points


@dataclass
class JacobianCoercivityReport(_Report):
    samples: int
    min_singular_values: List[float]
    indices: List[int]
    all_injective: bool
    all_index_zero: bool


def check_jacobian_coercivity(problem: Problem, samples: int = 4, seed: int = 0, u_range: float = 10.0,
                              anchor: Optional[GridFunction] = None) -> JacobianCoercivityReport:
    """
    On the grid f'(x) is weakly coercive exactly when it is injective. Checks
    the smallest singular value and the index of f'(x) at the anchor (default
    u = 0) and at seeded random points with values in [-u_range, u_range].
    """
    smallest = []
    indices = []
    injective = True
    for point in _sample_points(problem, samples, seed, u_range, anchor):
        report = fredholm_index(jacobian(problem, point))
        smallest.append(report.singular_values[-1])
        indices.append(report.index)
        injective = injective and report.dim_kernel == 0
    logger.info("Jacobian coercivity: min singular value %.6g over %d points", min(smallest), len(smallest))
    return JacobianCoercivityReport(
        samples=len(smallest),
        min_singular_values=smallest,
        indices=indices,
        all_injective=injective,
        all_index_zero=all(i == 0 for i in indices),
    )


@dataclass
class DerivativeNormSeparationReport(_Report):
    norm_F: float
    derivative_norms: List[float]
    min_distance: float
    passes: bool


def check_derivative_norm_separation(problem: Problem, samples: int = 4, seed: int = 0, u_range: float = 10.0,
                                     anchor: Optional[GridFunction] = None) -> DerivativeNormSeparationReport:
    """||F|| = ||c I + K_h|| against ||C'(x)|| at sampled x; fails within 1e-8 of equality."""
    if not problem.has_hammerstein:
        raise MissingHammerstein("check_derivative_norm_separation needs a Hammerstein kernel")
    size = problem.grid.size
    norm_f = operator_sup_norm(problem.identity_coefficient * np.eye(size) + problem.linear_part.entries)
    norms = [operator_sup_norm(c_jacobian(problem, point))
             for point in _sample_points(problem, samples, seed, u_range, anchor)]
    distance = min(abs(norm_f - n) for n in norms)
    return DerivativeNormSeparationReport(
        norm_F=norm_f,
        derivative_norms=norms,
        min_distance=distance,
        passes=distance > NORM_SEPARATION_BAND,
    )
