"""Uniform-grid curves into a truncated space, with maximum-metric semantics.

A GridCurve stores node values on the uniform grid 0 = tau_0 < ... < tau_G = 1
and interpolates piecewise linearly in between.  The curve-space metric is
the maximum over nodes of the pointwise gauge metric; with that metric the
standard curve operators (cumulative integration, node-parameter scaling,
grid pullbacks) are 1-Lipschitz.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .metric_core import GradedSpace, SpaceError, gauge_norm

__all__ = [
    "GridCurve",
    "curve_distance",
    "cumulative_integral",
    "scale_by_node_parameter",
    "integral_value",
    "pullback_grid_values",
]


@dataclass(frozen=True)
class GridCurve:
    space: GradedSpace
    values: np.ndarray          # shape (nodes, dim)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] != self.space.dim:
            raise SpaceError(f"curve values of shape {v.shape} are invalid")
        if not np.all(np.isfinite(v)):
            raise SpaceError("curve has non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def sample(cls, space: GradedSpace, fn: Callable[[float], np.ndarray],
               n_nodes: int) -> "GridCurve":
        grid = np.linspace(0.0, 1.0, n_nodes)
        return cls(space, np.stack([np.asarray(fn(t), dtype=float) for t in grid]))

    @classmethod
    def constant(cls, space: GradedSpace, point, n_nodes: int) -> "GridCurve":
        point = space.check_point(point)
        return cls(space, np.tile(point, (n_nodes, 1)))

    @classmethod
    def segment(cls, space: GradedSpace, start, end, n_nodes: int) -> "GridCurve":
        start = space.check_point(start)
        end = space.check_point(end)
        grid = np.linspace(0.0, 1.0, n_nodes)[:, None]
        return cls(space, (1.0 - grid) * start + grid * end)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_nodes)

    @property
    def mesh(self) -> float:
        return 1.0 / (self.n_nodes - 1)

    def at(self, t: float) -> np.ndarray:
        """Piecewise-linear value at a parameter in [0, 1]."""
        if not 0.0 <= t <= 1.0 + 1e-12:
            raise ValueError(f"parameter {t} outside [0,1]")
        pos = min(t, 1.0) * (self.n_nodes - 1)
        k = min(int(pos), self.n_nodes - 2)
        frac = pos - k
        return (1.0 - frac) * self.values[k] + frac * self.values[k + 1]

    def norm_max(self) -> float:
        return max(gauge_norm(self.space, v) for v in self.values)

    def refine(self) -> "GridCurve":
        """Double the grid, inserting piecewise-linear midpoints."""
        mids = 0.5 * (self.values[:-1] + self.values[1:])
        out = np.empty((2 * self.n_nodes - 1, self.space.dim))
        out[0::2] = self.values
        out[1::2] = mids
        return GridCurve(self.space, out)

    def map_nodes(self, fn: Callable[[float, np.ndarray], np.ndarray]) -> "GridCurve":
        grid = self.grid
        return GridCurve(self.space, np.stack(
            [np.asarray(fn(t, v), dtype=float) for t, v in zip(grid, self.values)]))


def curve_distance(a: GridCurve, b: GridCurve) -> float:
    """Maximum metric between two curves on the same grid."""
    if a.space != b.space or a.n_nodes != b.n_nodes:
        raise SpaceError("curves live on different grids or spaces")
    return max(gauge_norm(a.space, x - y) for x, y in zip(a.values, b.values))


def integral_value(curve: GridCurve) -> np.ndarray:
    """Trapezoidal integral over [0,1]; a convex combination of the nodes."""
    h = curve.mesh
    coeff = np.full(curve.n_nodes, h)
    coeff[0] = coeff[-1] = h / 2.0
    return coeff @ curve.values


def cumulative_integral(curve: GridCurve) -> GridCurve:
    """tau -> integral of the curve from 0 to tau, by cumulative trapezoid."""
    h = curve.mesh
    v = curve.values
    increments = 0.5 * h * (v[:-1] + v[1:])
    out = np.zeros_like(v)
    np.cumsum(increments, axis=0, out=out[1:])
    return GridCurve(curve.space, out)


def scale_by_node_parameter(curve: GridCurve) -> GridCurve:
    """tau -> tau * value(tau); 1-Lipschitz for the maximum metric."""
    return GridCurve(curve.space, curve.grid[:, None] * curve.values)


def pullback_grid_values(curve: GridCurve, t: float) -> GridCurve:
    """sigma -> value(sigma * t): composition with the squashing reparameterization.

    Node norms of the result are node norms of the original at squashed
    parameters, so the pullback is 1-Lipschitz (an isometry at t = 1).
    """
    return GridCurve(curve.space, np.stack(
        [curve.at(sigma * t) for sigma in curve.grid]))
