"""Operator structure trees, norm certificates, series inversion, filtration."""

import numpy as np
import pytest

from frechsolve.metric_core import GradedSpace, SpaceError, gauge_norm, geometric_weights
from frechsolve.operator_space import (
    LinearOperator,
    NormError,
    add,
    banded,
    compose,
    dense,
    diagonal,
    filtration_shift,
    geometric_ratio,
    identity,
    neumann_inverse,
    operator_gauge_norm,
    sampled_lower_norm,
    scale,
    shift,
    zero,
)


def geo_space(a=0.5, dim=16):
    return GradedSpace(dim=dim, weights=geometric_weights(a, dim))


def real_line():
    # the one-dimensional space (R, |s-t| / (1 + |s-t|))
    return GradedSpace(dim=1, weights=(1.0,))


class TestStructure:
    def test_tree_matches_dense_materialization(self):
        rng = np.random.default_rng(0)
        space = geo_space()
        m = rng.standard_normal((space.dim, space.dim))
        ops = {
            "identity": (identity(space), np.eye(space.dim)),
            "shift": (shift(space, 2, 0.7), 0.7 * np.eye(space.dim, k=-2)),
            "diag": (diagonal(space, np.arange(space.dim)), np.diag(np.arange(space.dim, dtype=float))),
            "dense": (dense(space, m), m),
        }
        for name, (op, mat) in ops.items():
            for _ in range(20):
                x = rng.standard_normal(space.dim)
                np.testing.assert_allclose(op.apply(x), mat @ x, atol=1e-12, err_msg=name)

    def test_sum_and_compose_trees(self):
        rng = np.random.default_rng(1)
        space = geo_space()
        s = shift(space)
        both = add(s, scale(s, -1.0))
        for _ in range(20):
            x = rng.standard_normal(space.dim)
            np.testing.assert_allclose(both.apply(x), 0.0, atol=1e-12)
        ss = compose(s, s)
        np.testing.assert_allclose(ss.matrix, np.eye(space.dim, k=-2), atol=1e-15)

    def test_compose_identity_is_noop(self):
        rng = np.random.default_rng(2)
        space = geo_space()
        a = dense(space, rng.standard_normal((space.dim, space.dim)))
        left = compose(identity(space), a)
        for _ in range(10):
            x = rng.standard_normal(space.dim)
            np.testing.assert_allclose(left.apply(x), a.apply(x), atol=1e-12)

    def test_banded_layout(self):
        space = geo_space(dim=5)
        op = banded(space, {-2: [1.0, 2.0, 3.0], 0: [9.0] * 5})
        expected = np.diag([1.0, 2.0, 3.0], k=-2) + 9.0 * np.eye(5)
        np.testing.assert_allclose(op.matrix, expected, atol=0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(SpaceError):
            dense(geo_space(dim=4), np.zeros((3, 3)))


class TestClosedFormNorms:
    def test_identity_is_one(self):
        cert = operator_gauge_norm(identity(geo_space()))
        assert cert.kind == "exact" and cert.value == 1.0

    def test_zero_is_zero(self):
        cert = operator_gauge_norm(zero(geo_space()))
        assert cert.kind == "exact" and cert.value == 0.0

    @pytest.mark.parametrize("a", [0.3, 0.5])
    def test_shift_norm_equals_ratio(self, a):
        cert = operator_gauge_norm(shift(geo_space(a)))
        assert cert.kind == "exact" and cert.value == a

    def test_shift_powers_and_small_coeff(self):
        space = geo_space(0.5)
        assert operator_gauge_norm(shift(space, 3)).value == 0.5 ** 3
        assert operator_gauge_norm(shift(space, 1, 0.6)).value == 0.5
        assert operator_gauge_norm(shift(space, 1, 2.0)).value == 1.0

    def test_diagonal_norm(self):
        space = geo_space()
        entries = [0.0] * space.dim
        entries[3] = 0.25
        assert operator_gauge_norm(diagonal(space, entries)).value == 1.0
        entries[3] = 4.0
        assert operator_gauge_norm(diagonal(space, entries)).value == 4.0

    def test_geometric_ratio_detection(self):
        assert geometric_ratio(geo_space(0.3)) == pytest.approx(0.3)
        assert geometric_ratio(GradedSpace(dim=3, weights=(0.9, 0.5, 0.1))) is None


class TestChainCertificates:
    def test_composed_shift_upper(self):
        space = geo_space(0.5)
        cert = operator_gauge_norm(compose(shift(space), shift(space)))
        assert cert.kind == "upper"
        assert cert.value == pytest.approx(0.25)
        low = sampled_lower_norm(compose(shift(space), shift(space)))
        assert low.value <= cert.value + 1e-12

    def test_sum_upper(self):
        space = geo_space(0.5)
        cert = operator_gauge_norm(add(shift(space), shift(space, 2)))
        assert cert.kind == "upper"
        assert cert.value == pytest.approx(0.75)

    def test_banded_upper(self):
        space = geo_space(0.5)
        op = banded(space, {-3: [0.9] * (space.dim - 3), -4: [1.0] * (space.dim - 4)})
        cert = operator_gauge_norm(op)
        assert cert.kind == "upper"
        assert cert.value == pytest.approx(0.5 ** 3 + 0.5 ** 4)

    def test_upper_dominates_sampled_images(self):
        rng = np.random.default_rng(5)
        space = geo_space(0.5)
        op = add(compose(shift(space), shift(space)), shift(space, 3, 0.5))
        upper = operator_gauge_norm(op).value
        for _ in range(200):
            x = rng.standard_normal(space.dim) * 10.0 ** rng.uniform(-4, 4)
            nx = gauge_norm(space, x)
            if nx == 0.0:
                continue
            assert gauge_norm(space, op.apply(x)) <= upper * nx + 1e-12

    def test_dense_has_no_closed_form(self):
        space = geo_space()
        op = dense(space, np.ones((space.dim, space.dim)))
        with pytest.raises(NormError):
            operator_gauge_norm(op, strategy="closed-form")


class TestSampledNorms:
    def test_lower_never_exceeds_exact(self):
        rng = np.random.default_rng(8)
        space = geo_space(0.5)
        for op in (identity(space), shift(space), zero(space)):
            exact = operator_gauge_norm(op).value
            low = sampled_lower_norm(op, rng=rng).value
            assert low <= exact + 1e-12

    @pytest.mark.parametrize("a", [0.3, 0.5])
    def test_shift_lower_reaches_ratio(self, a):
        rng = np.random.default_rng(9)
        cert = sampled_lower_norm(shift(geo_space(a)), rng=rng, n_rays=100, n_scales=100)
        assert cert.value >= a - 1e-3

    def test_scaled_identity_pathology(self):
        # 0.1 * id on (R, r/(1+r)) still has norm 1: the sup sits at scale infinity
        cert = sampled_lower_norm(scale(identity(real_line()), 0.1))
        assert cert.kind == "lower"
        assert cert.value >= 0.999

    def test_sum_form_metric_unsupported(self):
        space = GradedSpace(dim=4, weights=geometric_weights(0.5, 4), metric_mode="sum")
        with pytest.raises(SpaceError):
            operator_gauge_norm(identity(space))


class TestNeumannInverse:
    def test_identity_inverts_trivially(self):
        space = geo_space()
        inv, tail = neumann_inverse(identity(space), terms=0, theta=0.0)
        assert tail == 0.0
        np.testing.assert_allclose(inv.matrix, np.eye(space.dim), atol=0)

    def test_nilpotent_exact_at_full_order(self):
        space = geo_space(0.5, dim=16)
        op = add(identity(space), scale(shift(space), -1.0))  # id - S
        inv, _ = neumann_inverse(op, terms=16, theta=0.5)
        rhs = np.zeros(space.dim)
        rhs[0] = 1.0
        oracle = np.linalg.solve(op.matrix, rhs)
        np.testing.assert_array_equal(inv.apply(rhs), oracle)

    def test_tail_bound_arithmetic(self):
        space = geo_space()
        op = add(identity(space), scale(shift(space), -1.0))
        _, tail = neumann_inverse(op, terms=20, theta=0.5)
        assert tail == pytest.approx(0.5 ** 21 / 0.5)
        assert tail == pytest.approx(9.5367431640625e-07)

    def test_residual_bound_sampled(self):
        rng = np.random.default_rng(10)
        space = geo_space(0.5)
        op = add(identity(space), scale(shift(space), -1.0))
        inv, tail = neumann_inverse(op, terms=10, theta=0.5, rng=rng)
        for _ in range(100):
            x = rng.standard_normal(space.dim)
            residual = gauge_norm(space, op.apply(inv.apply(x)) - x)
            assert residual <= tail * gauge_norm(space, x) + 1e-12

    def test_theta_must_be_contractive(self):
        with pytest.raises(ValueError):
            neumann_inverse(identity(geo_space()), terms=3, theta=1.0)


class TestFiltrationShift:
    def test_zero_passes_all_depths(self):
        space = geo_space()
        assert all(filtration_shift(zero(space), d) for d in range(1, space.dim + 1))

    def test_shift_depth_one_not_two(self):
        space = geo_space()
        s = shift(space)
        assert filtration_shift(s, 1)
        assert not filtration_shift(s, 2)

    def test_cubed_shift_depth_three(self):
        space = geo_space()
        s3 = compose(shift(space), compose(shift(space), shift(space)))
        assert filtration_shift(s3, 3)
        assert not filtration_shift(s3, 4)

    def test_norm_criterion_implies_sparsity(self):
        # upper certificate below a**(depth-1) forces the structural property
        rng = np.random.default_rng(12)
        space = geo_space(0.5)
        depth = 3
        op = banded(space, {
            -3: rng.uniform(-1, 1, space.dim - 3),
            -4: rng.uniform(-1, 1, space.dim - 4),
        })
        cert = operator_gauge_norm(op)
        assert cert.value < 0.5 ** (depth - 1)
        assert filtration_shift(op, depth)

    def test_cumulative_max_rejected(self):
        space = GradedSpace(dim=4, weights=geometric_weights(0.5, 4),
                            seminorm_mode="cumulative-max")
        with pytest.raises(SpaceError):
            filtration_shift(identity(space), 1)
