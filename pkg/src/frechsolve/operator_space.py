"""Linear operators on truncated graded spaces, with certified gauge norms.

The operator norm here is a Lipschitz constant, not a homogeneous norm: the
defining sup ranges over all magnitudes, and is often attained only as the
scale grows.  Exact values exist for a whitelist of structures (identity,
zero, weighted shifts and diagonals on suitable spaces); everything else is
certificate-based.  Sampling can only produce lower certificates; sums and
compositions carry inequality-chain upper certificates.

Operators are stored as structure trees and materialized to dense form
lazily (intended for dim <= 512).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .metric_core import COORD_ABS, SUP, GradedSpace, SpaceError, gauge_norm

__all__ = [
    "LinearOperator",
    "NormCertificate",
    "NormError",
    "identity",
    "zero",
    "shift",
    "diagonal",
    "dense",
    "banded",
    "compose",
    "add",
    "scale",
    "operator_gauge_norm",
    "sampled_lower_norm",
    "neumann_inverse",
    "filtration_shift",
    "geometric_ratio",
]

_MATERIALIZE_LIMIT = 512


class NormError(ValueError):
    """No certificate of the requested kind is available."""


@dataclass(frozen=True)
class NormCertificate:
    kind: str           # "exact" | "upper" | "lower"
    value: float
    method: str


def _node_matrix(node, dim: int) -> np.ndarray:
    tag = node[0]
    if tag == "identity":
        return np.eye(dim)
    if tag == "zero":
        return np.zeros((dim, dim))
    if tag == "shift":
        _, power, coeff = node
        return coeff * np.eye(dim, k=-power)
    if tag == "diagonal":
        return np.diag(np.asarray(node[1]))
    if tag == "dense":
        return np.asarray(node[1])
    if tag == "banded":
        m = np.zeros((dim, dim))
        for offset, values in node[1]:
            m += np.diag(np.asarray(values), k=offset)
        return m
    if tag == "sum":
        return sum(_node_matrix(child, dim) for child in node[1])
    if tag == "compose":
        m = _node_matrix(node[1][0], dim)
        for child in node[1][1:]:
            m = m @ _node_matrix(child, dim)
        return m
    raise ValueError(f"unknown structure node {tag!r}")


@dataclass(frozen=True)
class LinearOperator:
    """A linear map between truncated spaces, stored as a structure tree.

    Nodes are nested tuples: ("shift", power, coeff), ("diagonal", entries),
    ("dense", matrix), ("banded", ((offset, values), ...)), ("identity",),
    ("zero",), ("sum", children), ("compose", children).  Composition lists
    factors outermost first.
    """

    domain: GradedSpace
    codomain: GradedSpace
    structure: tuple

    def __post_init__(self):
        if self.domain.dim != self.codomain.dim:
            raise SpaceError("operators act between truncations of equal length")
        if self.domain.dim > _MATERIALIZE_LIMIT:
            raise SpaceError(f"dim {self.domain.dim} exceeds materialization limit")

    @cached_property
    def matrix(self) -> np.ndarray:
        return _node_matrix(self.structure, self.domain.dim)

    def apply(self, x) -> np.ndarray:
        return self.matrix @ self.domain.check_point(x)

    def __matmul__(self, other: "LinearOperator") -> "LinearOperator":
        return compose(self, other)

    def __add__(self, other: "LinearOperator") -> "LinearOperator":
        return add(self, other)

    def __neg__(self) -> "LinearOperator":
        return scale(self, -1.0)

    @property
    def is_same_space(self) -> bool:
        return self.domain == self.codomain


def identity(space: GradedSpace) -> LinearOperator:
    return LinearOperator(space, space, ("identity",))


def zero(space: GradedSpace) -> LinearOperator:
    return LinearOperator(space, space, ("zero",))


def shift(space: GradedSpace, power: int = 1, coeff: float = 1.0) -> LinearOperator:
    if not 1 <= power <= space.dim:
        raise SpaceError(f"shift power must be in 1..{space.dim}")
    return LinearOperator(space, space, ("shift", power, float(coeff)))


def diagonal(space: GradedSpace, entries) -> LinearOperator:
    entries = tuple(float(e) for e in entries)
    if len(entries) != space.dim:
        raise SpaceError("diagonal length must equal dim")
    return LinearOperator(space, space, ("diagonal", entries))


def dense(space: GradedSpace, matrix, codomain: GradedSpace | None = None) -> LinearOperator:
    m = np.asarray(matrix, dtype=float)
    if m.shape != (space.dim, space.dim):
        raise SpaceError(f"matrix shape {m.shape} does not match dim {space.dim}")
    return LinearOperator(space, codomain or space, ("dense", tuple(map(tuple, m))))


def banded(space: GradedSpace, bands: dict) -> LinearOperator:
    """bands maps diagonal offset (negative = below main) to its entries."""
    packed = []
    for offset, values in sorted(bands.items()):
        values = tuple(float(v) for v in values)
        if len(values) != space.dim - abs(offset):
            raise SpaceError(f"band at offset {offset} has wrong length")
        packed.append((int(offset), values))
    return LinearOperator(space, space, ("banded", tuple(packed)))


def compose(outer: LinearOperator, inner: LinearOperator) -> LinearOperator:
    if inner.codomain != outer.domain:
        raise SpaceError("composition spaces do not match")
    return LinearOperator(inner.domain, outer.codomain,
                          ("compose", (outer.structure, inner.structure)))


def add(a: LinearOperator, b: LinearOperator) -> LinearOperator:
    if a.domain != b.domain or a.codomain != b.codomain:
        raise SpaceError("sum spaces do not match")
    return LinearOperator(a.domain, a.codomain, ("sum", (a.structure, b.structure)))


def _scale_node(node: tuple, c: float, dim: int) -> tuple:
    tag = node[0]
    if tag == "zero" or c == 0.0:
        return ("zero",)
    if tag == "identity":
        return ("diagonal", (c,) * dim)
    if tag == "shift":
        return ("shift", node[1], c * node[2])
    if tag == "diagonal":
        return ("diagonal", tuple(c * e for e in node[1]))
    if tag == "dense":
        return ("dense", tuple(tuple(c * v for v in row) for row in node[1]))
    if tag == "banded":
        return ("banded", tuple((off, tuple(c * v for v in vals)) for off, vals in node[1]))
    if tag == "sum":
        return ("sum", tuple(_scale_node(child, c, dim) for child in node[1]))
    if tag == "compose":
        children = node[1]
        return ("compose", (_scale_node(children[0], c, dim),) + children[1:])
    raise ValueError(f"unknown structure node {tag!r}")


def scale(a: LinearOperator, c: float) -> LinearOperator:
    return LinearOperator(a.domain, a.codomain, _scale_node(a.structure, float(c), a.domain.dim))


# ---------------------------------------------------------------------------
# Norm certificates
# ---------------------------------------------------------------------------


def geometric_ratio(space: GradedSpace) -> float | None:
    """The common ratio of the weights, or None if they are not geometric."""
    w = space.weight_array
    if space.dim == 1:
        return float(w[0])  # single weight w = a**1 fixes the ratio
    ratios = w[1:] / w[:-1]
    if np.max(np.abs(ratios - ratios[0])) <= 1e-12:
        return float(ratios[0])
    return None


def _closed_form(node: tuple, space: GradedSpace):
    """(value, is_exact) for a structure node, or None when unavailable.

    Exact values cover the whitelist: identity, zero, weighted shifts on
    geometric weights, diagonals on coordinate-abs spaces.  Banded operators
    on geometric weights, sums and compositions propagate inequality-chain
    upper bounds.
    """
    tag = node[0]
    if tag == "identity":
        return 1.0, True
    if tag == "zero":
        return 0.0, True
    ratio = geometric_ratio(space)
    coord = space.seminorm_mode == COORD_ABS
    if tag == "shift" and ratio is not None:
        _, power, coeff = node
        if coeff == 0.0:
            return 0.0, True
        return ratio ** power * max(1.0, abs(coeff)), True
    if tag == "diagonal" and coord:
        entries = node[1]
        nonzero = [abs(e) for e in entries if e != 0.0]
        if not nonzero:
            return 0.0, True
        return max(1.0, max(nonzero)), True
    if tag == "banded" and coord and ratio is not None:
        # Each band is diagonal-after-shift; chain the two exact values.
        total = 0.0
        for offset, values in node[1]:
            largest = max((abs(v) for v in values), default=0.0)
            if largest == 0.0:
                continue
            total += ratio ** (-offset) * max(1.0, largest)
        return total, total == 0.0
    if tag == "sum":
        parts = [_closed_form(child, space) for child in node[1]]
        if any(p is None for p in parts):
            return None
        value = sum(p[0] for p in parts)
        return value, value == 0.0
    if tag == "compose":
        parts = [_closed_form(child, space) for child in node[1]]
        if any(p is None for p in parts):
            return None
        value = 1.0
        for p in parts:
            value *= p[0]
        return value, value == 0.0
    return None


def operator_gauge_norm(
    op: LinearOperator,
    strategy: str = "auto",
    rng: np.random.Generator | None = None,
    n_rays: int = 64,
    n_scales: int = 25,
) -> NormCertificate:
    """Certify the gauge operator norm of ``op``.

    ``closed-form`` returns an exact value for whitelisted structures and an
    inequality-chain upper certificate for their sums and compositions.
    ``sample`` returns a lower certificate from random rays swept across
    logarithmic scales 1e-6..1e+6.  ``auto`` tries closed-form first.
    """
    if op.domain.metric_mode != SUP or op.codomain.metric_mode != SUP:
        raise SpaceError("operator norms are only evaluated for sup-form metrics")
    if strategy in ("closed-form", "auto"):
        if op.is_same_space:
            got = _closed_form(op.structure, op.domain)
            if got is not None:
                value, is_exact = got
                kind = "exact" if is_exact else "upper"
                method = "closed form" if is_exact else "inequality chain"
                return NormCertificate(kind, float(value), method)
        if strategy == "closed-form":
            raise NormError(f"no closed form for structure {op.structure[0]!r}")
    return sampled_lower_norm(op, rng=rng, n_rays=n_rays, n_scales=n_scales)


def sampled_lower_norm(
    op: LinearOperator,
    rng: np.random.Generator | None = None,
    n_rays: int = 64,
    n_scales: int = 25,
) -> NormCertificate:
    """Lower certificate: max achieved ratio over rays x logarithmic scales.

    A fixed-sphere search would be wrong because the metric is not
    homogeneous; the sup is often approached as the scale grows, so basis
    rays and the full sweep 1e-6..1e+6 are always included.
    """
    rng = rng or np.random.default_rng(0)
    dim = op.domain.dim
    rays = [np.eye(dim)[j] for j in range(dim)]
    rays += [rng.standard_normal(dim) for _ in range(max(0, n_rays - dim))]
    scales = np.logspace(-6, 6, n_scales)
    best = 0.0
    for u in rays:
        for s in scales:
            x = s * u
            nx = gauge_norm(op.domain, x)
            if nx == 0.0:
                continue
            best = max(best, gauge_norm(op.codomain, op.apply(x)) / nx)
    return NormCertificate(
        "lower", float(best),
        f"sampling budget {len(rays)}x{n_scales}, scales 1e-6..1e+6",
    )


# ---------------------------------------------------------------------------
# Neumann inversion and filtration diagnostics
# ---------------------------------------------------------------------------


def neumann_inverse(
    op: LinearOperator,
    terms: int,
    theta: float,
    rng: np.random.Generator | None = None,
    n_check: int = 100,
) -> tuple[LinearOperator, float]:
    """Truncated geometric series for the inverse of an operator near id.

    ``theta`` is a certified bound on the norm of (id - op), required < 1.
    Returns the partial sum through power ``terms`` and the tail bound
    theta**(terms+1) / (1-theta); self-checks the relative residual
    |op(inv(x)) - x| <= tail * |x| on sampled vectors.
    """
    if not 0.0 <= theta < 1.0:
        raise ValueError(f"need certified theta < 1, got {theta}")
    if not op.is_same_space:
        raise SpaceError("series inversion needs a self-map")
    space = op.domain
    n_node = ("sum", (("identity",), _scale_node(op.structure, -1.0, space.dim)))
    powers = [("identity",)]
    for _ in range(terms):
        powers.append(("compose", (powers[-1], n_node)))
    inv = LinearOperator(space, space, ("sum", tuple(powers)))
    tail = theta ** (terms + 1) / (1.0 - theta)

    rng = rng or np.random.default_rng(0)
    for _ in range(n_check):
        x = rng.standard_normal(space.dim) * 10.0 ** rng.uniform(-2, 2)
        nx = gauge_norm(space, x)
        if nx == 0.0:
            continue
        residual = gauge_norm(space, op.apply(inv.apply(x)) - x)
        if residual > tail * nx + 1e-12:
            raise ArithmeticError(
                f"series inverse residual {residual} exceeds bound {tail * nx}"
            )
    return inv, tail


def filtration_shift(op: LinearOperator, depth: int) -> bool:
    """Exact sparsity check: does op push level k of the filtration to k+depth?

    True iff every column j of the matrix vanishes strictly above row
    j + depth (1-based), i.e. the operator maps the tail subspace spanned by
    coordinates >= k into coordinates >= k + depth, for every k.
    """
    if op.domain.seminorm_mode != COORD_ABS:
        raise SpaceError("filtration levels are defined by coordinate-abs seminorms")
    m = op.matrix
    dim = op.domain.dim
    for j in range(dim):
        top = min(j + depth, dim)
        if np.any(m[:top, j] != 0.0):
            return False
    return True
