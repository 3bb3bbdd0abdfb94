"""Truncated graded sequence spaces and their translation-invariant metrics.

A space is the first ``dim`` coordinates of a sequence space, graded by a
strictly decreasing weight sequence ``w_1 > w_2 > ... > w_dim > 0``.  The
gauge norm of a point is

    sup-form:  max_n  w_n * p_n(x) / (1 + p_n(x))
    sum-form:  sum_n  w_n * p_n(x) / (1 + p_n(x))

with seminorms p_n either ``|x_n|`` (coordinate-abs) or ``max_{k<=n} |x_k|``
(cumulative-max).  The sup-form metric has absolutely convex balls; the
sum-form metric exists only to reproduce the known convexity failure and is
rejected by every solver.

All reported sup-form values carry absolute truncation error at most
``tail_bound`` (the proxy for the first dropped weight).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GradedSpace",
    "SpaceError",
    "BisectionError",
    "gauge_norm",
    "distance",
    "scale_to_gauge_norm",
    "scaling_bound_check",
    "riemann_integral",
    "IntegralReport",
    "minkowski_standardize",
    "StandardizedMetric",
    "QuasiIsometryReport",
    "mean_value_check",
    "MeanValueReport",
    "dyadic_sum_norm_exact",
    "geometric_weights",
    "dyadic_weights",
]

SUP = "sup"
SUM = "sum"
COORD_ABS = "coordinate-abs"
CUMULATIVE_MAX = "cumulative-max"

# Bisection bracket and budget for Minkowski functionals.  Declared failure
# outside; the bracket covers every desk-scale ray.
_BISECT_LO = 1e-12
_BISECT_HI = 1e12
_BISECT_STEPS = 200


class SpaceError(ValueError):
    """Structural error: dimension mismatch or invalid space definition."""


class BisectionError(ArithmeticError):
    """Minkowski bisection failed to bracket or converge; carries the ray."""


def geometric_weights(ratio: float, dim: int) -> tuple[float, ...]:
    """Weights ratio**1, ..., ratio**dim for 0 < ratio < 1."""
    if not 0.0 < ratio < 1.0:
        raise SpaceError(f"geometric ratio must be in (0,1), got {ratio}")
    return tuple(ratio ** n for n in range(1, dim + 1))


def dyadic_weights(dim: int) -> tuple[float, ...]:
    return geometric_weights(0.5, dim)


@dataclass(frozen=True)
class GradedSpace:
    """Truncated model of a graded sequence space with a gauge metric.

    ``tail_bound`` is the user's proxy for the first dropped weight; it must
    not exceed the last kept weight.  When omitted it is extrapolated
    geometrically from the last two weights.
    """

    dim: int
    weights: tuple[float, ...]
    seminorm_mode: str = COORD_ABS
    metric_mode: str = SUP
    tail_bound: float = field(default=-1.0)

    def __post_init__(self):
        if self.dim < 1:
            raise SpaceError(f"dim must be positive, got {self.dim}")
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if len(w) != self.dim:
            raise SpaceError(f"need {self.dim} weights, got {len(w)}")
        if w[-1] <= 0 or any(b >= a for a, b in zip(w, w[1:])):
            raise SpaceError("weights must be strictly positive and strictly decreasing")
        if self.seminorm_mode not in (COORD_ABS, CUMULATIVE_MAX):
            raise SpaceError(f"unknown seminorm_mode {self.seminorm_mode!r}")
        if self.metric_mode not in (SUP, SUM):
            raise SpaceError(f"unknown metric_mode {self.metric_mode!r}")
        if self.tail_bound < 0.0:
            tail = w[-1] ** 2 / w[-2] if self.dim >= 2 else w[-1]
            object.__setattr__(self, "tail_bound", tail)
        elif self.tail_bound > w[-1]:
            raise SpaceError(f"tail_bound {self.tail_bound} exceeds last weight {w[-1]}")

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights)

    def check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise SpaceError(f"point shape {x.shape} does not match dim {self.dim}")
        if not np.all(np.isfinite(x)):
            raise SpaceError("point has non-finite entries")
        return x

    def seminorms(self, x: np.ndarray) -> np.ndarray:
        """All dim seminorm values of x, as a vector."""
        a = np.abs(x)
        if self.seminorm_mode == CUMULATIVE_MAX:
            a = np.maximum.accumulate(a)
        return a

    def norm(self, x) -> float:
        return gauge_norm(self, x)

    def dist(self, x, y) -> float:
        return distance(self, x, y)


def gauge_norm(space: GradedSpace, x) -> float:
    """Gauge norm of a point: the metric distance to the origin."""
    x = space.check_point(x)
    p = space.seminorms(x)
    terms = space.weight_array * (p / (1.0 + p))
    return float(np.max(terms)) if space.metric_mode == SUP else float(np.sum(terms))


def distance(space: GradedSpace, x, y) -> float:
    """Translation-invariant metric: gauge norm of the difference."""
    return gauge_norm(space, space.check_point(x) - space.check_point(y))


def dyadic_sum_norm_exact(coords: Sequence[Fraction | int]) -> Fraction:
    """Sum-form norm with dyadic weights, in exact rational arithmetic.

    Coordinate-abs seminorms only.  Used for the exact reproduction of the
    convexity counterexample.
    """
    total = Fraction(0)
    for n, c in enumerate(coords, start=1):
        p = abs(Fraction(c))
        total += Fraction(1, 2 ** n) * p / (1 + p)
    return total


def scale_to_gauge_norm(space: GradedSpace, direction, target: float) -> np.ndarray:
    """Scale a ray so that the result has the requested gauge norm.

    Monotone bisection along s -> |s u|; requires 0 <= target strictly below
    the limit norm of the ray (for sup-form spaces the limit is the largest
    weight whose seminorm sees the direction).
    """
    u = space.check_point(direction)
    if target < 0.0:
        raise ValueError("target norm must be nonnegative")
    if target == 0.0:
        return np.zeros(space.dim)
    if not np.any(u):
        raise ValueError("cannot scale the zero direction to a positive norm")

    def norm_at(s: float) -> float:
        return gauge_norm(space, s * u)

    if norm_at(_BISECT_HI) <= target:
        raise BisectionError(f"target {target} is not reachable along the ray")
    lo, hi = _BISECT_LO, _BISECT_HI
    for _ in range(_BISECT_STEPS):
        mid = np.sqrt(lo * hi)
        if norm_at(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return hi * u


@dataclass(frozen=True)
class ScalingReport:
    t: float
    lhs: float          # |t x|
    rhs: float          # max(1, 2|t|) * |x|
    ok: bool


def scaling_bound_check(space: GradedSpace, t: float, x) -> ScalingReport:
    """Check |t x| <= max(1, 2|t|) |x|, and |t x| <= |x| when |t| <= 1."""
    if space.metric_mode != SUP:
        raise SpaceError("scaling bound check requires the sup-form metric")
    x = space.check_point(x)
    lhs = gauge_norm(space, t * x)
    nx = gauge_norm(space, x)
    rhs = max(1.0, 2.0 * abs(t)) * nx
    ok = lhs <= rhs + 1e-15
    if abs(t) <= 1.0:
        ok = ok and lhs <= nx + 1e-15
    return ScalingReport(t=t, lhs=lhs, rhs=rhs, ok=ok)


@dataclass(frozen=True)
class IntegralReport:
    """Trapezoidal weak integral of a uniformly sampled curve on [0,1].

    ``norm_bound`` is the max gauge norm over the samples; the emitted value
    always satisfies ``|value| <= norm_bound`` because the trapezoid rule is
    a convex combination of the samples and sup-form balls are convex.
    ``quad_slack = curvature_scale / (n-1)**2`` bounds the distance to the
    integral of the piecewise-smooth limit curve.
    """

    value: np.ndarray
    norm_bound: float
    curvature_scale: float
    quad_slack: float


def riemann_integral(space: GradedSpace, samples: Sequence) -> IntegralReport:
    """Composite trapezoid integral over a uniform grid on [0,1]."""
    pts = [space.check_point(s) for s in samples]
    if len(pts) < 2:
        raise SpaceError("need at least 2 samples on [0,1]")
    arr = np.stack(pts)
    m = len(pts)
    h = 1.0 / (m - 1)
    coeff = np.full(m, h)
    coeff[0] = coeff[-1] = h / 2.0
    value = coeff @ arr
    norm_bound = max(gauge_norm(space, p) for p in pts)
    # Second-difference estimate of max |gamma''|; trapezoid error is
    # bounded by max|gamma''| / 12 * h**2 on [0,1].
    if m >= 3:
        second = (arr[2:] - 2.0 * arr[1:-1] + arr[:-2]) / h ** 2
        curv = max((gauge_norm(space, row) for row in second), default=0.0) / 12.0
    else:
        curv = 0.0
    return IntegralReport(
        value=value,
        norm_bound=norm_bound,
        curvature_scale=curv,
        quad_slack=curv / (m - 1) ** 2,
    )


# ---------------------------------------------------------------------------
# Metric standardization via Minkowski functionals
# ---------------------------------------------------------------------------


def _minkowski_functional(space: GradedSpace, x: np.ndarray, radius: float) -> float:
    """inf { lam > 0 : |x / lam| <= radius }, by monotone bisection.

    Valid because s -> |s x| is nondecreasing for convex balls, so
    lam -> |x / lam| is nonincreasing.  Returns 0 when the whole ray stays
    inside the ball.
    """
    if not np.any(x):
        return 0.0

    def inside(lam: float) -> bool:
        return gauge_norm(space, x / lam) <= radius

    if inside(_BISECT_LO):
        return 0.0
    if not inside(_BISECT_HI):
        raise BisectionError(
            f"ray through {x!r} not absorbed at scale {_BISECT_HI} for radius {radius}"
        )
    lo, hi = _BISECT_LO, _BISECT_HI
    for _ in range(_BISECT_STEPS):
        mid = np.sqrt(lo * hi)  # logarithmic bisection suits the huge bracket
        if inside(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * hi:
            break
    return hi


@dataclass(frozen=True)
class StandardizedMetric:
    """Dyadic-weight gauge metric built from Minkowski functionals of balls.

    Level n uses the functional of the base-metric ball of radius 2**-n and
    weight 2**-n.  Levels are truncated at ``levels``; the truncation only
    omits terms bounded by 2**-(levels+1).
    """

    base: GradedSpace
    levels: int

    def seminorm(self, n: int, x) -> float:
        x = self.base.check_point(x)
        return _minkowski_functional(self.base, x, 2.0 ** (-n))

    def norm(self, x) -> float:
        x = self.base.check_point(x)
        best = 0.0
        for n in range(1, self.levels + 1):
            if 2.0 ** (-n) <= best:
                break  # remaining terms are < 2**-n, cannot raise the sup
            p = _minkowski_functional(self.base, x, 2.0 ** (-n))
            best = max(best, 2.0 ** (-n) * p / (1.0 + p))
        return best


@dataclass(frozen=True)
class QuasiIsometryReport:
    metric_bound: float        # M with d <= M everywhere
    lower_ok: bool             # |x|_D / 2 <= |x|_d on every sample
    upper_ok: bool             # |x|_d <= max(4, 4 M) |x|_D on every sample
    n_samples: int
    worst_lower_margin: float  # min over samples of |x|_d - |x|_D / 2
    worst_upper_margin: float  # min over samples of max(4,4M)|x|_D - |x|_d


def minkowski_standardize(
    space: GradedSpace,
    levels: int = 32,
    samples: Sequence | None = None,
    rng: np.random.Generator | None = None,
    n_samples: int = 200,
) -> tuple[StandardizedMetric, QuasiIsometryReport]:
    """Standardize a bounded sup-form metric to dyadic weights.

    Verifies the two-sided comparison ``|x|_D / 2 <= |x|_d <= max(4,4M) |x|_D``
    on the given samples (or on random points scaled across magnitudes).
    """
    if space.metric_mode != SUP:
        raise SpaceError("standardization requires a bounded sup-form metric")
    metric_bound = space.weights[0]  # sup-form values never exceed w_1
    std = StandardizedMetric(base=space, levels=levels)

    if samples is None:
        rng = rng or np.random.default_rng(0)
        raw = rng.standard_normal((n_samples, space.dim))
        scales = 10.0 ** rng.uniform(-3, 3, size=n_samples)
        samples = raw * scales[:, None]

    factor = max(4.0, 4.0 * metric_bound)
    worst_lower = np.inf
    worst_upper = np.inf
    for x in samples:
        x = space.check_point(x)
        nd = gauge_norm(space, x)
        nD = std.norm(x)
        worst_lower = min(worst_lower, nd - 0.5 * nD)
        worst_upper = min(worst_upper, factor * nD - nd)
    report = QuasiIsometryReport(
        metric_bound=metric_bound,
        lower_ok=worst_lower >= 0.0,
        upper_ok=worst_upper >= 0.0,
        n_samples=len(samples),
        worst_lower_margin=float(worst_lower),
        worst_upper_margin=float(worst_upper),
    )
    return std, report


# ---------------------------------------------------------------------------
# Mean value estimate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanValueReport:
    lhs: float            # |f(y) - f(x)|
    rhs: float            # |y - x| * sampled sup of derivative norms
    slack: float
    ok: bool


def mean_value_check(
    space: GradedSpace,
    f: Callable[[np.ndarray], np.ndarray],
    x,
    y,
    rng: np.random.Generator,
    df: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    t_samples: int = 17,
    ray_samples: int = 32,
    rel_slack: float = 0.02,
) -> MeanValueReport:
    """Check |f(y)-f(x)| <= |y-x| * sup_t |f'(x + t(y-x))| on samples.

    The derivative norm sup is estimated from sampled rays and scales, so it
    is a lower estimate; ``rel_slack`` declares the resolution of the check.
    Sum-form metrics are rejected: the estimate is only asserted for metrics
    with absolutely convex balls.
    """
    if space.metric_mode != SUP:
        raise SpaceError("mean value check requires the sup-form metric")
    x = space.check_point(x)
    y = space.check_point(y)
    lhs = gauge_norm(space, f(y) - f(x))
    step = 1e-6

    def dnorm_lower(z: np.ndarray) -> float:
        best = 0.0
        for _ in range(ray_samples):
            u = rng.standard_normal(space.dim)
            s = 10.0 ** rng.uniform(-3, 3)
            v = s * u
            nv = gauge_norm(space, v)
            if nv == 0.0:
                continue
            if df is not None:
                img = df(z, v)
            else:
                img = (f(z + step * v) - f(z - step * v)) / (2.0 * step)
            best = max(best, gauge_norm(space, img) / nv)
        return best

    sup_deriv = max(
        dnorm_lower(x + t * (y - x)) for t in np.linspace(0.0, 1.0, t_samples)
    )
    rhs = gauge_norm(space, y - x) * sup_deriv
    slack = rel_slack * rhs + 1e-9
    return MeanValueReport(lhs=lhs, rhs=rhs, slack=slack, ok=lhs <= rhs + slack)
