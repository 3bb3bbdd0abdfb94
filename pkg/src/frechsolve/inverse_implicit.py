"""Local inversion with explicit constants, parametric inverses and implicit
functions.

A chart certifies that a map is an affine perturbation of an invertible
reference operator A: the remainder f(z) - f(y) - A(z - y) must be Lipschitz
with constant sigma below 1 / |A^{-1}|.  The chart then carries the two-sided
rates a = |A^{-1}|^{-1} - sigma and b = |A| + sigma, and points are inverted
by the damped iteration v <- v - A^{-1}(f(v) - c), whose contraction factor
is sigma |A^{-1}|.

Declared analytic sigma bounds take precedence; sampling only ever falsifies
them (a sup over a continuum cannot be certified by samples).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .contraction_engine import (
    Ball,
    ContractViolationError,
    ParametricFamily,
    _max_iterations,
    fixed_point_directional_derivative,
)
from .metric_core import GradedSpace, distance, gauge_norm, scale_to_gauge_norm
from .operator_space import LinearOperator, identity, operator_gauge_norm

__all__ = [
    "OperatorWithInverse",
    "invertible_identity",
    "InverseChart",
    "ChartInvalidError",
    "InversionResult",
    "build_chart",
    "chart_invert",
    "ball_image_bounds",
    "BallImageReport",
    "probe_inflated_inner",
    "precondition_transform",
    "PreconditionedMap",
    "implicit_solve",
    "ImplicitSolution",
    "implicit_derivative",
    "parametric_inverse",
    "ParametricInverseTable",
]


class ChartInvalidError(ValueError):
    """The remainder constant is too large for the reference operator."""

    def __init__(self, sigma: float, inv_norm: float):
        self.sigma = sigma
        self.inv_norm = inv_norm
        super().__init__(
            f"chart invalid: sigma={sigma} must be < 1/|A^-1| = {1.0 / inv_norm}"
        )


@dataclass(frozen=True)
class OperatorWithInverse:
    """A reference operator bundled with its inverse and norm certificates.

    Both norms are upper certificates, which keeps the derived rates a and b
    conservative.
    """

    op: LinearOperator
    inv: LinearOperator
    norm_upper: float
    inv_norm_upper: float

    def __post_init__(self):
        if self.norm_upper <= 0 or self.inv_norm_upper <= 0:
            raise ValueError("norm certificates must be positive")


def invertible_identity(space: GradedSpace) -> OperatorWithInverse:
    one = identity(space)
    return OperatorWithInverse(op=one, inv=one, norm_upper=1.0, inv_norm_upper=1.0)


def invertible_from_certs(op: LinearOperator, inv: LinearOperator) -> OperatorWithInverse:
    """Bundle an operator whose norms admit closed forms or chain uppers."""
    return OperatorWithInverse(
        op=op, inv=inv,
        norm_upper=operator_gauge_norm(op, strategy="closed-form").value,
        inv_norm_upper=operator_gauge_norm(inv, strategy="closed-form").value,
    )


@dataclass(frozen=True)
class InverseChart:
    space: GradedSpace
    f: Callable[[np.ndarray], np.ndarray]
    A: OperatorWithInverse
    x0: np.ndarray
    r: float
    sigma: float
    sigma_provenance: str = "declared"

    def __post_init__(self):
        if self.sigma * self.A.inv_norm_upper >= 1.0:
            raise ChartInvalidError(self.sigma, self.A.inv_norm_upper)

    @property
    def a(self) -> float:
        """Lower expansion rate: images separate at least this fast."""
        return 1.0 / self.A.inv_norm_upper - self.sigma

    @property
    def b(self) -> float:
        """Upper expansion rate: images separate at most this fast."""
        return self.A.norm_upper + self.sigma

    @property
    def inverse_lipschitz(self) -> float:
        return 1.0 / self.a

    @property
    def contraction_factor(self) -> float:
        return self.sigma * self.A.inv_norm_upper


def build_chart(
    space: GradedSpace,
    f: Callable[[np.ndarray], np.ndarray],
    A: OperatorWithInverse,
    x0,
    r: float,
    declared_sigma: float | None = None,
    rng: np.random.Generator | None = None,
    sample_pairs: int = 200,
) -> InverseChart:
    """Build a local inverse chart on the ball of radius r around x0.

    sigma is the stronger of the declared analytic bound and the sampled
    maximum of remainder ratios over random pairs in the ball; a sampled
    value exceeding the declared bound marks the declaration as falsified.
    """
    x0 = space.check_point(x0)
    sampled = 0.0
    if sample_pairs > 0:
        rng = rng or np.random.default_rng(0)
        for _ in range(sample_pairs):
            y = _random_ball_point(space, x0, r, rng)
            z = _random_ball_point(space, x0, r, rng)
            denom = distance(space, z, y)
            if denom == 0.0:
                continue
            num = gauge_norm(space, f(z) - f(y) - A.op.apply(z - y))
            sampled = max(sampled, num / denom)
    if declared_sigma is None:
        sigma, provenance = sampled, f"sampled over {sample_pairs} pairs"
    elif sampled > declared_sigma + 1e-9:
        sigma, provenance = sampled, (
            f"declared {declared_sigma} FALSIFIED by sampling ({sampled})"
        )
    else:
        sigma, provenance = declared_sigma, "declared analytic bound"
    return InverseChart(space=space, f=f, A=A, x0=x0, r=r,
                        sigma=sigma, sigma_provenance=provenance)


def _random_ball_point(space, center, radius, rng) -> np.ndarray:
    """A random point of the ball, spread across coordinate magnitudes.

    Balls of radius >= the first weight are the whole space, so magnitudes
    are swept rather than scaling rays to the radius.
    """
    for _ in range(64):
        u = rng.standard_normal(space.dim) * 10.0 ** rng.uniform(-2.0, 2.0)
        if gauge_norm(space, u) <= 0.98 * radius:
            return center + u
    cap = 0.95 * min(radius, gauge_norm(space, 1e9 * u))
    return center + scale_to_gauge_norm(space, u, cap * rng.uniform(0.0, 1.0))


@dataclass
class InversionResult:
    point: np.ndarray
    residual: float
    iterations: int
    step_gaps: list = field(repr=False, default_factory=list)


def chart_invert(
    chart: InverseChart,
    c,
    seed=None,
    tol: float = 1e-10,
) -> InversionResult:
    """Solve f(v) = c inside the chart ball by the damped iteration.

    Image membership is not decided exactly: the solver runs optimistically
    and reports a contract violation if an iterate leaves the chart ball.
    """
    space = chart.space
    c = space.check_point(c)
    v = space.check_point(seed) if seed is not None else chart.x0
    kappa = chart.contraction_factor
    step = chart.A.inv.apply(chart.f(v) - c)
    gap0 = max(gauge_norm(space, step), 1e-300)
    limit = _max_iterations(kappa, gap0, tol / max(chart.A.norm_upper, 1.0)) + 8
    gaps: list = []
    for n in range(1, limit + 1):
        v = v - step
        if distance(space, v, chart.x0) > chart.r + 1e-12:
            raise ContractViolationError(
                n, distance(space, v, chart.x0) - chart.r)
        residual_vec = chart.f(v) - c
        residual = gauge_norm(space, residual_vec)
        step = chart.A.inv.apply(residual_vec)
        gaps.append(gauge_norm(space, step))
        if residual <= tol:
            return InversionResult(point=v, residual=residual,
                                   iterations=n, step_gaps=gaps)
    raise ContractViolationError(limit, gaps[-1] if gaps else float("nan"))


# ---------------------------------------------------------------------------
# Ball image bounds
# ---------------------------------------------------------------------------


@dataclass
class BallImageReport:
    inner_passes: int
    outer_passes: int
    inner_failures: list
    outer_failures: list
    pair_margin_lower: float   # min over pairs of |f(v)-f(v')| - a |v-v'|
    pair_margin_upper: float   # min over pairs of b |v-v'| - |f(v)-f(v')|

    @property
    def ok(self) -> bool:
        return (not self.inner_failures and not self.outer_failures
                and self.pair_margin_lower >= -1e-12
                and self.pair_margin_upper >= -1e-12)


def ball_image_bounds(
    chart: InverseChart,
    y,
    s: float,
    n_probes: int = 200,
    rng: np.random.Generator | None = None,
    tol: float = 1e-11,
) -> BallImageReport:
    """Probe both inclusions: targets within a*s of f(y) invert into the
    s-ball around y, and images of the s-ball stay within b*s of f(y).

    The two-sided pair bound a |v-v'| <= |f(v)-f(v')| <= b |v-v'| is checked
    on all probe pairs using achieved images.
    """
    space = chart.space
    y = space.check_point(y)
    if s > chart.r - distance(space, y, chart.x0) + 1e-12:
        raise ValueError("probe ball must sit inside the chart ball")
    rng = rng or np.random.default_rng(0)
    fy = chart.f(y)
    a, b = chart.a, chart.b

    inner_failures: list = []
    points = [y]
    for k in range(n_probes):
        u = rng.standard_normal(space.dim)
        target = fy + scale_to_gauge_norm(space, u, a * s * rng.uniform(0.05, 0.95))
        try:
            res = chart_invert(chart, target, seed=y, tol=tol)
        except ContractViolationError as err:
            inner_failures.append((k, f"escape: {err}"))
            continue
        if distance(space, res.point, y) > s + 1e-12:
            inner_failures.append((k, "preimage outside the s-ball"))
        else:
            points.append(res.point)

    outer_failures: list = []
    for k in range(n_probes):
        u = rng.standard_normal(space.dim)
        v = y + scale_to_gauge_norm(space, u, s * rng.uniform(0.0, 0.999))
        if gauge_norm(space, chart.f(v) - fy) > b * s + 1e-12:
            outer_failures.append((k, "image outside the b*s-ball"))
        else:
            points.append(v)

    margin_lower = np.inf
    margin_upper = np.inf
    images = [chart.f(p) for p in points]
    idx = rng.integers(0, len(points), size=(200, 2))
    for i, j in idx:
        if i == j:
            continue
        dv = distance(space, points[i], points[j])
        dc = gauge_norm(space, images[i] - images[j])
        margin_lower = min(margin_lower, dc - a * dv)
        margin_upper = min(margin_upper, b * dv - dc)

    return BallImageReport(
        inner_passes=n_probes - len(inner_failures),
        outer_passes=n_probes - len(outer_failures),
        inner_failures=inner_failures,
        outer_failures=outer_failures,
        pair_margin_lower=float(margin_lower),
        pair_margin_upper=float(margin_upper),
    )


def probe_inflated_inner(
    chart: InverseChart,
    y,
    s: float,
    inflation: float = 1.05,
    n_probes: int = 50,
    rng: np.random.Generator | None = None,
) -> int:
    """Sanity inversion: targets strictly beyond b*s of f(y) cannot be hit
    from inside the s-ball.  Returns how many probes were refuted (all of
    them, if the chart constants are honest)."""
    space = chart.space
    y = space.check_point(y)
    rng = rng or np.random.default_rng(0)
    fy = chart.f(y)
    refuted = 0
    for _ in range(n_probes):
        u = rng.standard_normal(space.dim)
        rho = chart.b * s * rng.uniform(1.001, inflation)
        target = fy + scale_to_gauge_norm(space, u, rho)
        try:
            res = chart_invert(chart, target, seed=y, tol=1e-11)
        except ContractViolationError:
            refuted += 1
            continue
        if distance(space, res.point, y) > s + 1e-12:
            refuted += 1
    return refuted


# ---------------------------------------------------------------------------
# Preconditioning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreconditionedMap:
    """h = T^{-1} A^{-1} f T with the back-maps to original coordinates.

    Solving f(x) = c is equivalent to solving h(x_h) = transform_target(c)
    with x = to_original(x_h).  The scaling operator S does not enter h
    itself; it belongs to the hypothesis sup |S (A - f') T| < 1/|(SAT)^{-1}|
    that downstream solvers rely on.
    """

    h: Callable
    to_original: Callable[[np.ndarray], np.ndarray]
    from_original: Callable[[np.ndarray], np.ndarray]
    transform_target: Callable[[np.ndarray], np.ndarray]
    sat: OperatorWithInverse


def precondition_transform(
    f: Callable,
    S: OperatorWithInverse,
    A: OperatorWithInverse,
    T: OperatorWithInverse,
    parametric: bool = False,
) -> PreconditionedMap:
    """Conjugate a map into the near-identity normal form used by solvers."""
    sat_op = S.op @ A.op @ T.op
    sat_inv = T.inv @ A.inv @ S.inv
    if np.array_equal(sat_op.matrix, np.eye(sat_op.domain.dim)):
        # the chained certificate cannot see cancellation; the identity can
        norm_upper = inv_norm_upper = 1.0
    else:
        norm_upper = S.norm_upper * A.norm_upper * T.norm_upper
        inv_norm_upper = T.inv_norm_upper * A.inv_norm_upper * S.inv_norm_upper
    sat = OperatorWithInverse(
        op=sat_op, inv=sat_inv,
        norm_upper=norm_upper, inv_norm_upper=inv_norm_upper,
    )
    if parametric:
        def h(p, x):
            return T.inv.apply(A.inv.apply(f(p, T.op.apply(x))))
    else:
        def h(x):
            return T.inv.apply(A.inv.apply(f(T.op.apply(x))))
    return PreconditionedMap(
        h=h,
        to_original=T.op.apply,
        from_original=T.inv.apply,
        transform_target=lambda c: T.inv.apply(A.inv.apply(c)),
        sat=sat,
    )


# ---------------------------------------------------------------------------
# Implicit functions and parametric inverses
# ---------------------------------------------------------------------------


@dataclass
class ImplicitSolution:
    params: list
    values: list
    residuals: list
    excluded: list
    z0: np.ndarray


def implicit_solve(
    space: GradedSpace,
    f: Callable,
    p0,
    y0,
    z0,
    params: Sequence,
    sigma: float,
    A: OperatorWithInverse | None = None,
    r: float = 1.0,
    tol: float = 1e-10,
) -> ImplicitSolution:
    """Track the solution branch of f(p, y) = z0 through (p0, y0).

    A single reference operator and a uniform remainder constant are used
    across the whole grid.  Grid points whose inversion iterate escapes the
    chart ball are excluded and flagged rather than aborting the sweep.
    """
    y0 = space.check_point(y0)
    z0 = space.check_point(z0)
    A = A or invertible_identity(space)
    base_residual = gauge_norm(space, f(p0, y0) - z0)
    if base_residual > max(tol, 1e-8):
        raise ValueError(f"f(p0, y0) misses z0 by {base_residual}")

    solution = ImplicitSolution([], [], [], [], z0)
    solved_params: list = []
    for idx, p in enumerate(params):
        if solved_params:
            dists = [np.linalg.norm(np.atleast_1d(p) - np.atleast_1d(sp))
                     for sp in solved_params]
            seed = solution.values[int(np.argmin(dists))]
        else:
            seed = y0
        chart = InverseChart(
            space=space, f=lambda y, _p=p: f(_p, y), A=A, x0=y0, r=r,
            sigma=sigma, sigma_provenance="uniform grid certificate",
        )
        try:
            res = chart_invert(chart, z0, seed=seed, tol=tol)
        except ContractViolationError as err:
            solution.excluded.append((idx, str(err)))
            continue
        solution.params.append(p)
        solution.values.append(res.point)
        solution.residuals.append(res.residual)
        solved_params.append(p)
    return solution


def implicit_derivative(
    space: GradedSpace,
    f: Callable,
    p,
    z0,
    lam_p: np.ndarray,
    direction,
    theta: float,
    d_param: Callable | None = None,
    d_state: Callable | None = None,
    A: OperatorWithInverse | None = None,
    method: str = "linear-fixed-point",
) -> np.ndarray:
    """Directional derivative of the implicit branch at p.

    The branch is the fixed point of g(p, v) = v - A^{-1}(f(p, v) - z0),
    a uniform family of special contractions with constant theta, so the
    fixed point derivative machinery applies directly.
    """
    A = A or invertible_identity(space)
    z0 = space.check_point(z0)

    def g(q, v):
        return v - A.inv.apply(f(q, v) - z0)

    fam = ParametricFamily(
        space=space,
        f=g,
        theta=theta,
        ball=Ball(center=lam_p, radius=1.0),
        d_param=(None if d_param is None
                 else lambda q, v, dq: -A.inv.apply(d_param(q, v, dq))),
        d_state=(None if d_state is None
                 else lambda q, v, dv: dv - A.inv.apply(d_state(q, v, dv))),
    )
    return fixed_point_directional_derivative(fam, p, direction, x_p=lam_p, method=method)


@dataclass
class ParametricInverseTable:
    params: list
    values: list
    residuals: list
    excluded: list
    lipschitz_margin: float    # min over z-pairs of (1/a) |z - z'| - |psi - psi'|


def parametric_inverse(
    space: GradedSpace,
    f: Callable,
    params: Sequence,
    z,
    x0,
    r: float = 1.0,
    sigma: float = 0.0,
    A: OperatorWithInverse | None = None,
    tol: float = 1e-10,
    rng: np.random.Generator | None = None,
    n_z_pairs: int = 100,
    z_pair_radius: float = 0.05,
) -> ParametricInverseTable:
    """Invert each member of the family at z; verify the Lipschitz-in-z rate.

    Uses one uniform sigma certificate for the whole parameter range.  For
    the Lipschitz check, nearby targets z' are inverted as well and
    |psi(p,z) - psi(p,z')| <= (1/a) |z - z'| is verified on sampled pairs.
    """
    A = A or invertible_identity(space)
    x0 = space.check_point(x0)
    z = space.check_point(z)
    rng = rng or np.random.default_rng(0)
    table = ParametricInverseTable([], [], [], [], np.inf)
    margin = np.inf
    for idx, p in enumerate(params):
        chart = InverseChart(
            space=space, f=lambda y, _p=p: f(_p, y), A=A, x0=x0, r=r,
            sigma=sigma, sigma_provenance="uniform family certificate",
        )
        seed = table.values[-1] if table.values else x0
        try:
            res = chart_invert(chart, z, seed=seed, tol=tol)
        except ContractViolationError as err:
            table.excluded.append((idx, str(err)))
            continue
        table.params.append(p)
        table.values.append(res.point)
        table.residuals.append(res.residual)
        if n_z_pairs and idx % max(1, len(params) // 10) == 0:
            for _ in range(max(1, n_z_pairs // 10)):
                u = rng.standard_normal(space.dim)
                z_alt = z + scale_to_gauge_norm(space, u, z_pair_radius * rng.uniform(0.1, 1.0))
                try:
                    res_alt = chart_invert(chart, z_alt, seed=res.point, tol=tol)
                except ContractViolationError:
                    continue
                dz = gauge_norm(space, chart.f(res.point) - chart.f(res_alt.point))
                dpsi = distance(space, res.point, res_alt.point)
                margin = min(margin, dz / chart.a - dpsi)
    table.lipschitz_margin = float(margin)
    return table
