"""Charts, pointwise inversion, ball inclusions, implicit branches."""

import numpy as np
import pytest

from frechsolve.contraction_engine import ContractViolationError
from frechsolve.inverse_implicit import (
    ChartInvalidError,
    InverseChart,
    OperatorWithInverse,
    ball_image_bounds,
    build_chart,
    chart_invert,
    implicit_derivative,
    implicit_solve,
    invertible_from_certs,
    invertible_identity,
    parametric_inverse,
    precondition_transform,
    probe_inflated_inner,
)
from frechsolve.metric_core import GradedSpace, distance, gauge_norm, geometric_weights
from frechsolve.operator_space import diagonal, identity

DIM = 16
A_RATIO = 0.5


def space():
    return GradedSpace(dim=DIM, weights=geometric_weights(A_RATIO, DIM))


S = np.eye(DIM, k=-1)


def e1():
    v = np.zeros(DIM)
    v[0] = 1.0
    return v


def f_default(x):
    # x - S tanh(x): affine remainder has Lipschitz constant <= 1/2
    return x - S @ np.tanh(x)


def df_default(x, v):
    return v - S @ (v / np.cosh(x) ** 2)


def newton_oracle(f, df_matrix, target, x0, tol=1e-13, max_iter=100):
    """Dense damped Newton on the truncation; independent of chart iteration."""
    x = x0.copy()
    for _ in range(max_iter):
        r = f(x) - target
        if np.max(np.abs(r)) <= tol:
            return x
        step = np.linalg.solve(df_matrix(x), r)
        lam = 1.0
        while lam > 1e-6 and np.max(np.abs(f(x - lam * step) - target)) > np.max(np.abs(r)):
            lam /= 2.0
        x = x - lam * step
    raise AssertionError("newton oracle failed to converge")


def df_default_matrix(x):
    return np.eye(DIM) - S * (1.0 / np.cosh(x) ** 2)[None, :]


def default_chart(r=1.0):
    return build_chart(space(), f_default, invertible_identity(space()),
                       np.zeros(DIM), r, declared_sigma=A_RATIO, sample_pairs=50)


class TestBuildChart:
    def test_linear_map_has_zero_remainder(self):
        sp = space()
        AwI = invertible_identity(sp)
        chart = build_chart(sp, lambda x: x, AwI, np.zeros(DIM), 1.0,
                            rng=np.random.default_rng(0))
        assert chart.sigma == 0.0
        assert chart.a == 1.0 and chart.b == 1.0

    def test_tanh_chart_constants(self):
        chart = default_chart()
        assert chart.sigma == A_RATIO
        assert chart.a >= 0.5 - 1e-15
        assert chart.b <= 1.5 + 1e-15
        assert chart.sigma_provenance == "declared analytic bound"

    def test_declared_bound_falsified_by_sampling(self):
        sp = space()
        chart = build_chart(sp, f_default, invertible_identity(sp),
                            np.zeros(DIM), 1.0, declared_sigma=1e-6,
                            rng=np.random.default_rng(1))
        assert "FALSIFIED" in chart.sigma_provenance
        assert chart.sigma > 1e-6

    def test_invalid_chart_carries_both_numbers(self):
        sp = space()
        with pytest.raises(ChartInvalidError) as err:
            InverseChart(space=sp, f=lambda x: x, A=invertible_identity(sp),
                         x0=np.zeros(DIM), r=1.0, sigma=1.2)
        assert err.value.sigma == 1.2
        assert err.value.inv_norm == 1.0


class TestChartInvert:
    def test_identity_chart(self):
        sp = space()
        chart = build_chart(sp, lambda x: x, invertible_identity(sp),
                            np.zeros(DIM), 1.0, declared_sigma=0.0, sample_pairs=0)
        c = 0.2 * np.ones(DIM)
        res = chart_invert(chart, c)
        np.testing.assert_allclose(res.point, c, atol=1e-12)

    def test_matches_newton_oracle(self):
        res = chart_invert(default_chart(), 0.3 * e1(), tol=1e-12)
        assert res.residual <= 1e-12
        oracle = newton_oracle(f_default, df_default_matrix, 0.3 * e1(), np.zeros(DIM))
        assert np.max(np.abs(res.point - oracle)) <= 1e-8

    def test_contraction_ratio_bounded_by_certificate(self):
        chart = default_chart()
        res = chart_invert(chart, 0.3 * e1(), tol=1e-13)
        ratios = [b / a for a, b in zip(res.step_gaps, res.step_gaps[1:]) if a > 1e-14]
        assert max(ratios) <= chart.contraction_factor + 1e-9

    def test_roundtrip_through_chart(self):
        sp = space()
        chart = default_chart()
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.uniform(-0.5, 0.5, DIM)
            res = chart_invert(chart, f_default(x), tol=1e-12)
            assert distance(sp, res.point, x) <= 1e-12 / chart.a

    def test_two_sided_rate_on_inverted_pairs(self):
        sp = space()
        chart = default_chart()
        rng = np.random.default_rng(3)
        pts = []
        for _ in range(20):
            x = rng.uniform(-0.4, 0.4, DIM)
            pts.append(chart_invert(chart, f_default(x), tol=1e-12).point)
        for i in range(len(pts) - 1):
            dv = distance(sp, pts[i], pts[i + 1])
            dc = gauge_norm(sp, f_default(pts[i]) - f_default(pts[i + 1]))
            assert chart.a * dv <= dc + 1e-12
            assert dc <= chart.b * dv + 1e-12


class TestBallImage:
    def test_linear_chart_inclusions(self):
        sp = space()
        chart = build_chart(sp, lambda x: x, invertible_identity(sp),
                            np.zeros(DIM), 1.0, declared_sigma=0.0, sample_pairs=0)
        rep = ball_image_bounds(chart, np.zeros(DIM), 0.4, n_probes=50,
                                rng=np.random.default_rng(4))
        assert rep.ok

    def test_tanh_chart_inclusions(self):
        rep = ball_image_bounds(default_chart(), np.zeros(DIM), 0.5, n_probes=200,
                                rng=np.random.default_rng(5))
        assert rep.ok
        assert rep.inner_passes == 200 and rep.outer_passes == 200

    def test_inflated_claim_fails(self):
        # s small enough that the inflated radius 1.05 b s stays reachable
        # inside the bounded metric (values never exceed the first weight)
        refuted = probe_inflated_inner(default_chart(), np.zeros(DIM), 0.2,
                                       inflation=1.05, n_probes=50,
                                       rng=np.random.default_rng(6))
        assert refuted == 50

    def test_probe_ball_must_fit(self):
        with pytest.raises(ValueError):
            ball_image_bounds(default_chart(r=0.5), np.zeros(DIM), 0.8)


class TestPrecondition:
    def test_identity_transforms_are_noop(self):
        sp = space()
        one = invertible_identity(sp)
        pre = precondition_transform(f_default, one, one, one)
        x = 0.3 * np.ones(DIM)
        np.testing.assert_allclose(pre.h(x), f_default(x), atol=0)
        np.testing.assert_allclose(pre.to_original(x), x, atol=0)

    def test_inverse_of_reference_recovers_plain_condition(self):
        # with S = A^{-1}, T = id the conjugated map is A^{-1} f and the
        # condition threshold becomes 1: |(SAT)^{-1}| = |id| = 1
        sp = space()
        d_entries = np.full(DIM, 1.25)
        A_op = diagonal(sp, d_entries)
        A_inv = diagonal(sp, 1.0 / d_entries)
        AwI = invertible_from_certs(A_op, A_inv)
        S = OperatorWithInverse(op=A_inv, inv=A_op,
                                norm_upper=AwI.inv_norm_upper,
                                inv_norm_upper=AwI.norm_upper)
        one = invertible_identity(sp)

        def f(x):
            return A_op.apply(x) - S_mat @ np.tanh(x)

        S_mat = np.eye(DIM, k=-1)
        pre = precondition_transform(f, S, AwI, one)
        assert pre.sat.inv_norm_upper == pytest.approx(1.0)
        x = 0.2 * np.ones(DIM)
        np.testing.assert_allclose(pre.h(x), A_inv.apply(f(x)), atol=1e-15)

    def test_roundtrip_matches_direct_inversion(self):
        # invert through the conjugated near-identity map, map back, and
        # compare against the direct chart built for f itself
        sp = space()
        d_entries = np.full(DIM, 1.25)
        A_op = diagonal(sp, d_entries)
        A_inv = diagonal(sp, 1.0 / d_entries)
        AwI = invertible_from_certs(A_op, A_inv)
        one = invertible_identity(sp)

        def f(x):
            return A_op.apply(x) - S @ np.tanh(x)

        pre = precondition_transform(f, one, AwI, one)
        c = 0.25 * e1()
        # remainder of h around id: x - A^{-1} S tanh(x), Lipschitz <= |A^{-1} S|
        sigma_h = AwI.inv_norm_upper * A_RATIO
        chart_h = build_chart(sp, pre.h, invertible_identity(sp), np.zeros(DIM),
                              1.0, declared_sigma=sigma_h, sample_pairs=0)
        via_h = pre.to_original(chart_invert(chart_h, pre.transform_target(c), tol=1e-12).point)

        chart_f = build_chart(sp, f, AwI, np.zeros(DIM), 1.0,
                              declared_sigma=A_RATIO, sample_pairs=0)
        direct = chart_invert(chart_f, c, tol=1e-12).point
        assert distance(sp, via_h, direct) <= 1e-9


class TestImplicitSolve:
    def test_zero_branch(self):
        sp = space()
        sol = implicit_solve(
            sp, lambda p, y: y - p * (S @ np.tanh(y)), 0.0, np.zeros(DIM),
            np.zeros(DIM), np.linspace(0.0, 0.9, 50), sigma=0.9)
        assert not sol.excluded
        for v, res in zip(sol.values, sol.residuals):
            assert res <= 1e-10
            np.testing.assert_allclose(v, 0.0, atol=1e-10)

    def test_linear_branch_closed_form(self):
        sp = space()
        sol = implicit_solve(
            sp, lambda p, y: y - S @ y - p * e1(), 0.0, np.zeros(DIM),
            np.zeros(DIM), np.linspace(0.0, 0.3, 50), sigma=A_RATIO)
        assert not sol.excluded
        for p, v in zip(sol.params, sol.values):
            np.testing.assert_allclose(v, p * np.ones(DIM), atol=1e-9)

    def test_base_point_must_match(self):
        with pytest.raises(ValueError):
            implicit_solve(space(), lambda p, y: y, 0.0, np.zeros(DIM),
                           e1(), [0.0], sigma=0.0)

    def test_graph_property(self):
        # points near the graph invert to within eps / a of the branch
        sp = space()

        def f(p, y):
            return y - S @ np.tanh(y) - p * e1()

        sol = implicit_solve(sp, f, 0.0, np.zeros(DIM), np.zeros(DIM),
                             [0.3], sigma=A_RATIO)
        lam = sol.values[0]
        rng = np.random.default_rng(7)
        for _ in range(50):
            y = lam + rng.uniform(-1e-6, 1e-6, DIM)
            eps = gauge_norm(sp, f(0.3, y))
            assert distance(sp, y, lam) <= eps / 0.5 + 1e-12


class TestImplicitDerivative:
    def test_linear_branch_derivative_is_ones(self):
        sp = space()

        def f(p, y):
            return y - S @ y - p * e1()

        sol = implicit_solve(sp, f, 0.0, np.zeros(DIM), np.zeros(DIM),
                             [0.1], sigma=A_RATIO)
        for method in ("linear-fixed-point", "h-series", "finite-difference"):
            val = implicit_derivative(
                sp, f, 0.1, np.zeros(DIM), sol.values[0], 1.0, theta=A_RATIO,
                d_param=lambda p, y, q: -q * e1(),
                d_state=lambda p, y, v: v - S @ v,
                method=method)
            np.testing.assert_allclose(val, np.ones(DIM), atol=1e-7, err_msg=method)

    def test_three_way_agreement_on_forced_tanh(self):
        sp = space()

        def f(p, y):
            return y - S @ np.tanh(y) - p * e1()

        sol = implicit_solve(sp, f, 0.0, np.zeros(DIM), np.zeros(DIM),
                             [0.3], sigma=A_RATIO, tol=1e-13)
        lam = sol.values[0]
        vals = {}
        for method in ("linear-fixed-point", "h-series", "finite-difference"):
            vals[method] = implicit_derivative(
                sp, f, 0.3, np.zeros(DIM), lam, 1.0, theta=A_RATIO,
                d_param=lambda p, y, q: -q * e1(),
                d_state=lambda p, y, v: v - S @ (v / np.cosh(y) ** 2),
                method=method)
        base = vals["linear-fixed-point"]
        for method, val in vals.items():
            assert distance(sp, val, base) <= 1e-6, method


class TestParametricInverse:
    def test_identity_family(self):
        sp = space()
        z = 0.1 * np.ones(DIM)
        table = parametric_inverse(sp, lambda p, x: x, np.linspace(0, 1, 5), z,
                                   np.zeros(DIM), sigma=0.0, n_z_pairs=0)
        for v in table.values:
            np.testing.assert_allclose(v, z, atol=1e-11)

    def test_tanh_family_residuals_and_lipschitz(self):
        sp = space()

        def f(p, x):
            return x - p * (S @ np.tanh(x))

        table = parametric_inverse(
            sp, f, np.linspace(0.0, 0.9, 19), 0.2 * e1(), np.zeros(DIM),
            sigma=0.9, rng=np.random.default_rng(8), n_z_pairs=100)
        assert not table.excluded
        assert all(r <= 1e-10 for r in table.residuals)
        assert table.lipschitz_margin >= -1e-12
        # spot-check one member against the newton oracle
        p = table.params[10]

        def fp(x):
            return x - p * (S @ np.tanh(x))

        def dfp(x):
            return np.eye(DIM) - p * (S * (1.0 / np.cosh(x) ** 2)[None, :])

        oracle = newton_oracle(fp, dfp, 0.2 * e1(), np.zeros(DIM))
        assert distance(sp, table.values[10], oracle) <= 1e-8
