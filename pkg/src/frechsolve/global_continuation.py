"""Global inversion of self-maps by lifting curves through local charts.

A target curve gamma in the image space is followed by chaining local
inversions: from a known preimage of gamma(t), the next point gamma(t') is
inverted inside a chart centered at the current preimage.  Charts along the
lift use the identity as reference operator with a scenario-supplied
remainder constant; the theorems' global hypothesis (a uniform bound M on
the inverse differentials) cannot be verified at desk scale and must be
supplied analytically.  A stalled lift is the honest failure mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .contraction_engine import ContractViolationError
from .curves import GridCurve
from .inverse_implicit import InverseChart, chart_invert, invertible_identity
from .metric_core import GradedSpace, distance, gauge_norm

__all__ = [
    "LiftStallError",
    "StepControl",
    "LiftResult",
    "lift_curve",
    "global_invert",
    "homotopy_injectivity_probe",
    "InjectivityReport",
]


class LiftStallError(RuntimeError):
    """Step size hit the floor; carries the last good state of the lift."""

    def __init__(self, t: float, preimage: np.ndarray):
        self.t = t
        self.preimage = preimage
        super().__init__(f"lift stalled at t={t}: step floor reached")


@dataclass(frozen=True)
class StepControl:
    initial: float = 1.0 / 16.0
    floor: float = 1.0 / 2.0 ** 10
    grow_after: int = 3         # double the step after this many successes


@dataclass
class LiftResult:
    curve: GridCurve                   # preimages at the target grid nodes
    trace: list = field(repr=False, default_factory=list)
    # trace rows: (t, step, residual, preimage_norm)
    max_quotient_excess: float = -np.inf
    # worst over steps of |s dx| - M |s dgamma| at s in {1, 1/step}
    lipschitz_constant: float = 0.0
    # sampled metric Lipschitz constant of the target curve


def lift_curve(
    space: GradedSpace,
    f: Callable[[np.ndarray], np.ndarray],
    gamma: GridCurve,
    x0,
    inverse_bound: float,
    sigma: float,
    local_radius: float | None = None,
    step: StepControl = StepControl(),
    tol: float = 1e-10,
) -> LiftResult:
    """Lift gamma through f starting from a preimage of gamma(0).

    ``inverse_bound`` is the certified sup of the inverse differential norms
    (the global hypothesis); ``sigma`` the uniform remainder constant of the
    local charts (reference operator id).  Step halves on chart failure,
    doubles after consecutive successes, and stalls below the floor.

    Every accepted step is checked against the scaled increment bound
    |s dx| <= inverse_bound |s dgamma| at s = 1 and s = 1/step (the sampled
    form of the derivative estimate behind the global theorem).
    """
    x = space.check_point(x0)
    start_res = gauge_norm(space, f(x) - gamma.values[0])
    if start_res > tol:
        raise ValueError(f"seed is not a preimage of gamma(0): residual {start_res}")
    r_loc = local_radius if local_radius is not None else 0.45 * space.weights[0]
    kappa_slack = (1.0 + inverse_bound) * tol + 1e-12

    out_values = [x]
    result = LiftResult(curve=None, trace=[(0.0, 0.0, start_res, gauge_norm(space, x))])
    h = step.initial
    successes = 0
    t = 0.0
    node = 1
    lip = 0.0
    excess = -np.inf
    while node < gamma.n_nodes:
        t_node = gamma.grid[node]
        t_next = min(t + h, t_node)
        target = gamma.at(t_next)
        chart = InverseChart(
            space=space, f=f, A=invertible_identity(space), x0=x, r=r_loc,
            sigma=sigma, sigma_provenance="lift certificate",
        )
        entry_gap = gauge_norm(space, f(x) - target)
        accepted = False
        if entry_gap <= (1.0 - sigma) * r_loc:
            try:
                res = chart_invert(chart, target, seed=x, tol=tol)
                accepted = True
            except ContractViolationError:
                accepted = False
        if not accepted:
            h /= 2.0
            successes = 0
            if h < step.floor:
                result.curve = GridCurve(space, np.stack(
                    out_values + [x] * (gamma.n_nodes - len(out_values))))
                raise LiftStallError(t, x)
            continue

        dt = t_next - t
        dgamma = target - gamma.at(t)
        dx = res.point - x
        lip = max(lip, gauge_norm(space, dgamma) / dt)
        for s in (1.0, 1.0 / dt):
            got = gauge_norm(space, s * dx)
            allowed = inverse_bound * gauge_norm(space, s * dgamma) + s * kappa_slack
            excess = max(excess, got - allowed)
        x = res.point
        t = t_next
        result.trace.append((t, dt, res.residual, gauge_norm(space, x)))
        successes += 1
        if successes >= step.grow_after:
            h *= 2.0
            successes = 0
        if t >= t_node - 1e-15:
            out_values.append(x)
            node += 1

    result.curve = GridCurve(space, np.stack(out_values))
    result.max_quotient_excess = float(excess)
    result.lipschitz_constant = float(lip)
    return result


def global_invert(
    space: GradedSpace,
    f: Callable[[np.ndarray], np.ndarray],
    z0,
    x_seed,
    inverse_bound: float,
    sigma: float,
    n_nodes: int = 33,
    tol: float = 1e-10,
    **lift_kwargs,
) -> tuple[np.ndarray, LiftResult]:
    """Invert f at z0 by lifting the straight segment from f(x_seed) to z0."""
    x_seed = space.check_point(x_seed)
    z0 = space.check_point(z0)
    gamma = GridCurve.segment(space, f(x_seed), z0, n_nodes)
    result = lift_curve(space, f, gamma, x_seed, inverse_bound, sigma,
                        tol=tol, **lift_kwargs)
    endpoint = result.curve.values[-1]
    return endpoint, result


@dataclass
class InjectivityReport:
    s_values: np.ndarray
    endpoints: list
    max_deviation: float      # max over s of the distance from the base point
    conclusive: bool          # False when any lift stalled


def homotopy_injectivity_probe(
    space: GradedSpace,
    f: Callable[[np.ndarray], np.ndarray],
    x0,
    y0,
    inverse_bound: float,
    sigma: float,
    n_s: int = 9,
    n_nodes: int = 33,
    tol: float = 1e-10,
) -> InjectivityReport:
    """Numerical witness of injectivity for points with (nearly) equal images.

    The closed loop traced by f along the segment from x0 to y0 is shrunk
    affinely onto its basepoint; each intermediate curve is lifted from x0.
    If f is injective all endpoint lifts return to x0.
    """
    x0 = space.check_point(x0)
    y0 = space.check_point(y0)
    z0 = f(x0)
    image_gap = gauge_norm(space, f(y0) - z0)
    if image_gap > 10.0 * tol:
        raise ValueError(f"images differ by {image_gap}; probe needs equal images")

    segment = GridCurve.segment(space, x0, y0, n_nodes)
    gamma = segment.map_nodes(lambda t, v: f(v))
    s_values = np.linspace(0.0, 1.0, n_s)
    endpoints = []
    conclusive = True
    for s in s_values:
        shrunk = GridCurve(space, z0 + s * (gamma.values - z0))
        try:
            res = lift_curve(space, f, shrunk, x0, inverse_bound, sigma, tol=tol)
        except LiftStallError:
            conclusive = False
            endpoints.append(None)
            continue
        endpoints.append(res.curve.values[-1])
    deviations = [distance(space, ep, x0) for ep in endpoints if ep is not None]
    return InjectivityReport(
        s_values=s_values,
        endpoints=endpoints,
        max_deviation=max(deviations) if deviations else np.inf,
        conclusive=conclusive,
    )
