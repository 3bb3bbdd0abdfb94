"""Banach-type fixed point solvers with a-priori bounds, plus parameter
dependence of fixed points up to first derivatives.

The contraction factor ``theta`` is always an input certificate: sampling can
only produce lower evidence, so solvers trust the declared value and verify
a-posteriori.  Scale-uniform (special) contractivity is what makes the
derivative machinery valid, and is certified by sweeping pair ratios across
scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .metric_core import GradedSpace, distance, gauge_norm

__all__ = [
    "Ball",
    "ContractionSpec",
    "ParametricFamily",
    "FixedPointReport",
    "EntryConditionError",
    "ContractViolationError",
    "fixed_point",
    "certify_special_contraction",
    "CertificationReport",
    "parametric_fixed_points",
    "ParametricTable",
    "fixed_point_directional_derivative",
    "h_series_terms",
]

_OPEN_BALL_MARGIN = 1e-12
_FD_STEP = 1e-5
_EXACT_QUOTIENT_MIN = 1e-7


class EntryConditionError(ValueError):
    """The seed does not satisfy the ball entry condition; carries both sides."""

    def __init__(self, gap: float, budget: float):
        self.gap = gap
        self.budget = budget
        super().__init__(f"entry condition fails: d(f(x0),x0)={gap} vs (1-theta)r={budget}")


class ContractViolationError(RuntimeError):
    """An iterate left the certified ball; names the offending step."""

    def __init__(self, step: int, excess: float):
        self.step = step
        super().__init__(f"iterate {step} escaped the domain ball by {excess}")


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float
    closed: bool = True

    def contains(self, space: GradedSpace, x, slack: float = 1e-12) -> bool:
        d = distance(space, x, self.center)
        if self.closed:
            return d <= self.radius + slack
        return d < self.radius


@dataclass(frozen=True)
class ContractionSpec:
    """A certified self-map candidate on a ball domain."""

    space: GradedSpace
    map: Callable[[np.ndarray], np.ndarray]
    theta: float
    ball: Ball
    theta_provenance: str = "declared"

    def __post_init__(self):
        if not 0.0 <= self.theta < 1.0:
            raise ValueError(f"theta must lie in [0,1), got {self.theta}")


@dataclass
class FixedPointReport:
    fixed_point: np.ndarray
    iterations: int
    theta: float
    initial_gap: float          # d(f(x0), x0)
    entry_budget: float         # (1 - theta) * radius
    aposteriori: float          # d(x_k, f(x_k)) at the accepted iterate
    iterates: list = field(repr=False, default_factory=list)
    gaps: list = field(repr=False, default_factory=list)

    def apriori_bound(self, n: int) -> float:
        return self.theta ** n / (1.0 - self.theta) * self.initial_gap


def _max_iterations(theta: float, gap: float, tol: float) -> int:
    if gap <= tol or theta == 0.0:
        return 2
    return max(2, math.ceil(math.log(tol * (1.0 - theta) / gap) / math.log(theta)) + 10)


def fixed_point(spec: ContractionSpec, x0, tol: float = 1e-10) -> FixedPointReport:
    """Iterate the map from x0 until the a-posteriori gap drops below tol.

    The entry condition d(f(x0), x0) <= (1 - theta) r (strict, with a fixed
    margin, for open balls) guarantees every iterate stays in the ball; an
    escape is reported as a contract violation naming the step.
    """
    space = spec.space
    x = space.check_point(x0)
    fx = spec.map(x)
    gap = distance(space, fx, x)
    budget = (1.0 - spec.theta) * spec.ball.radius
    if spec.ball.closed:
        if gap > budget:
            raise EntryConditionError(gap, budget)
    elif gap >= budget - _OPEN_BALL_MARGIN:
        raise EntryConditionError(gap, budget)

    iterates = [x]
    gaps = [gap]
    limit = _max_iterations(spec.theta, gap, tol)
    for n in range(1, limit + 1):
        x, fx = fx, None
        if not spec.ball.contains(space, x):
            raise ContractViolationError(n, distance(space, x, spec.ball.center) - spec.ball.radius)
        fx = spec.map(x)
        g = distance(space, fx, x)
        iterates.append(x)
        gaps.append(g)
        if g <= tol:
            return FixedPointReport(
                fixed_point=x, iterations=n, theta=spec.theta,
                initial_gap=gap, entry_budget=budget, aposteriori=g,
                iterates=iterates, gaps=gaps,
            )
    # The a-priori bound guarantees convergence within the limit, so the
    # declared theta certificate must have been wrong.
    raise ContractViolationError(
        limit, gaps[-1] - spec.theta ** limit / (1.0 - spec.theta) * gap
    )


# ---------------------------------------------------------------------------
# Special contraction certification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CertificationReport:
    theta_hat: float          # max observed ratio; lower evidence only
    declared: float
    slack: float
    passed: bool
    n_pairs: int
    scales: tuple


def certify_special_contraction(
    space: GradedSpace,
    f: Callable[[np.ndarray], np.ndarray],
    ball: Ball,
    declared_theta: float,
    rng: np.random.Generator,
    scales: Sequence[float] = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3),
    n_pairs: int = 200,
    slack: float = 1e-9,
    df: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> CertificationReport:
    """Estimate the scale-uniform contraction factor from sampled pairs.

    The testable form of scale uniformity: for every scalar s the ratio
    |s (f(x) - f(y))| / |s (x - y)| stays below theta.  When ``df`` is given,
    derivative rays are sampled as well (their norms bound the factor on
    convex domains).  Estimation only: failure means the observed ratio
    exceeded declared + slack.
    """
    theta_hat = 0.0
    for _ in range(n_pairs):
        u = rng.standard_normal(space.dim)
        v = rng.standard_normal(space.dim)
        x = ball.center + u * (ball.radius * rng.uniform(0, 0.9) / max(gauge_norm(space, u), 1e-12))
        y = ball.center + v * (ball.radius * rng.uniform(0, 0.9) / max(gauge_norm(space, v), 1e-12))
        dfx = f(x) - f(y)
        dxy = x - y
        for s in scales:
            denom = gauge_norm(space, s * dxy)
            if denom > 0.0:
                theta_hat = max(theta_hat, gauge_norm(space, s * dfx) / denom)
        if df is not None:
            w = rng.standard_normal(space.dim)
            jw = df(x, w)
            for s in scales:
                denom = gauge_norm(space, s * w)
                if denom > 0.0:
                    theta_hat = max(theta_hat, gauge_norm(space, s * jw) / denom)
    return CertificationReport(
        theta_hat=theta_hat,
        declared=declared_theta,
        slack=slack,
        passed=theta_hat <= declared_theta + slack,
        n_pairs=n_pairs,
        scales=tuple(scales),
    )


# ---------------------------------------------------------------------------
# Parameter-dependent fixed points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParametricFamily:
    """A family f(p, .) of self-map candidates sharing one theta certificate.

    ``d_param`` and ``d_state`` are directional differentials; when omitted
    they fall back to central differences with step 1e-5.
    """

    space: GradedSpace
    f: Callable
    theta: float
    ball: Ball
    d_param: Callable | None = None
    d_state: Callable | None = None

    def spec_at(self, p) -> ContractionSpec:
        return ContractionSpec(
            space=self.space, map=lambda x: self.f(p, x),
            theta=self.theta, ball=self.ball,
            theta_provenance="uniform family certificate",
        )

    def diff_param(self, p, x, q):
        if self.d_param is not None:
            return self.d_param(p, x, q)
        h = _FD_STEP
        return (self.f(_pstep(p, q, h), x) - self.f(_pstep(p, q, -h), x)) / (2.0 * h)

    def diff_state(self, p, x, v):
        if self.d_state is not None:
            return self.d_state(p, x, v)
        h = _FD_STEP
        return (self.f(p, x + h * v) - self.f(p, x - h * v)) / (2.0 * h)


def _pstep(p, q, t: float):
    """p + t q for scalar or vector parameters."""
    if np.isscalar(p) or np.ndim(p) == 0:
        return p + t * q
    return np.asarray(p) + t * np.asarray(q)


@dataclass
class ParametricTable:
    params: list
    points: list
    residual_gaps: list
    excluded: list            # (index, reason) pairs flagged open-set-exit
    neighbor_checks: list     # (observed step, continuity bound) per solved pair


def parametric_fixed_points(
    family: ParametricFamily,
    params: Sequence,
    x0,
    tol: float = 1e-10,
) -> ParametricTable:
    """Solve the fixed point at each parameter, warm-starting from the
    nearest previously completed parameter.

    Entry failures do not abort the sweep: the parameter is excluded and
    flagged, mirroring the freedom to shrink the parameter neighborhood.
    For each solved parameter the observed deviation from its seed point is
    checked against the a-priori continuity bound
    (1/(1-theta)) d(x_seed, f(p, x_seed)).
    """
    points: list = []
    solved_params: list = []
    table = ParametricTable([], [], [], [], [])
    for idx, p in enumerate(params):
        if solved_params:
            dists = [np.linalg.norm(np.atleast_1d(p) - np.atleast_1d(sp)) for sp in solved_params]
            seed = points[int(np.argmin(dists))]
        else:
            seed = family.space.check_point(x0)
        spec = family.spec_at(p)
        try:
            report = fixed_point(spec, seed, tol=tol)
        except EntryConditionError as err:
            table.excluded.append((idx, f"entry condition: {err}"))
            continue
        observed = distance(family.space, report.fixed_point, seed)
        bound = report.initial_gap / (1.0 - family.theta)
        table.params.append(p)
        table.points.append(report.fixed_point)
        table.residual_gaps.append(report.aposteriori)
        table.neighbor_checks.append((observed, bound))
        solved_params.append(p)
        points.append(report.fixed_point)
    return table


# ---------------------------------------------------------------------------
# Directional derivatives of fixed points
# ---------------------------------------------------------------------------


def _difference_quotient(family: ParametricFamily, p, x, q, v, t: float) -> np.ndarray:
    """Continuous extension of the directional difference quotient of f.

    Exact quotient for |t| above the crossover; differential evaluation at
    and below it.
    """
    if abs(t) > _EXACT_QUOTIENT_MIN:
        return (family.f(_pstep(p, q, t), x + t * v) - family.f(p, x)) / t
    return family.diff_param(p, x, q) + family.diff_state(p, x, v)


def h_series_terms(
    family: ParametricFamily,
    p,
    q,
    x_p: np.ndarray,
    t: float,
    n_terms: int,
) -> list[np.ndarray]:
    """Terms of the derivative series at displacement scalar t.

    Term zero is the quotient of f between parameters p and p + t q at the
    fixed point; term k feeds term k-1 back through the state slot along the
    orbit of x_p under the displaced map.  Term norms decay like theta**k.
    """
    zero_q = _zero_like(q)
    zero_v = np.zeros(family.space.dim)
    terms = [_difference_quotient(family, p, x_p, q, zero_v, t)]
    orbit_point = x_p
    p_disp = _pstep(p, q, t)
    for _ in range(1, n_terms):
        terms.append(_difference_quotient(family, p_disp, orbit_point, zero_q, terms[-1], t))
        orbit_point = family.f(p_disp, orbit_point)
    return terms


def fixed_point_directional_derivative(
    family: ParametricFamily,
    p,
    q,
    x_p: np.ndarray | None = None,
    method: str = "linear-fixed-point",
    tol: float = 1e-13,
    fd_step: float = 1e-4,
    series_tail_tol: float = 1e-13,
    max_terms: int = 400,
) -> np.ndarray:
    """Directional derivative of the fixed point p -> x_p along q.

    linear-fixed-point solves y = d_param f . q + d_state f . y by
    contraction iteration; h-series sums the derivative series at t = 0;
    finite-difference re-solves at displaced parameters.  All three agree
    within the derivative tolerance on certified families.
    """
    space = family.space
    if x_p is None:
        x_p = fixed_point(family.spec_at(p), family.ball.center, tol=1e-13).fixed_point

    if method == "linear-fixed-point":
        rhs = family.diff_param(p, x_p, q)
        y = np.zeros(space.dim)
        for _ in range(_max_iterations(family.theta, max(gauge_norm(space, rhs), 1e-16), tol)):
            y_next = rhs + family.diff_state(p, x_p, y)
            if distance(space, y_next, y) <= tol:
                return y_next
            y = y_next
        return y

    if method == "h-series":
        theta = family.theta
        zero_q = _zero_like(q)
        term = _difference_quotient(family, p, x_p, q, np.zeros(space.dim), 0.0)
        c0 = gauge_norm(space, term)
        total = np.zeros(space.dim)
        orbit_point = x_p
        for k in range(max_terms):
            total = total + term
            if theta == 0.0 or c0 * theta ** (k + 1) / (1.0 - theta) <= series_tail_tol:
                break
            term = _difference_quotient(family, p, orbit_point, zero_q, term, 0.0)
            orbit_point = family.f(p, orbit_point)
        return total

    if method == "finite-difference":
        plus = fixed_point(family.spec_at(_pstep(p, q, fd_step)), x_p, tol=1e-13).fixed_point
        minus = fixed_point(family.spec_at(_pstep(p, q, -fd_step)), x_p, tol=1e-13).fixed_point
        return (plus - minus) / (2.0 * fd_step)

    raise ValueError(f"unknown derivative method {method!r}")


def _zero_like(q):
    if np.isscalar(q) or np.ndim(q) == 0:
        return 0.0
    return np.zeros_like(np.asarray(q, dtype=float))
