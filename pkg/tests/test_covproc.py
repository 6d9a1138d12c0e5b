"""Time-transform checks: hand-worked piecewise values, closed-form inverse
against a bisection oracle, finite-difference derivatives, reduction to the
constant transform, and the binary-switch forms."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qvaft.covproc import (
    EffectSpec,
    TimeVaryingCovariate,
    monotonicity_check,
    spline_basis,
    spline_basis_deriv,
    tv_monotonicity_check,
    tv_v_inverse,
    tv_v_value,
    v_deriv,
    v_inverse,
    v_value,
)
from qvaft.errors import DomainError

CONST = EffectSpec("constant")
PW_EXAMPLE = EffectSpec("piecewise", (0.0, 2.0))
LN2 = np.log(2.0)


def bisect_inverse(spec, beta, alpha, x, s, lo=0.0, hi=1.0):
    """Oracle: invert V by plain interval halving."""
    while v_value(spec, beta, alpha, x, hi) < s:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if v_value(spec, beta, alpha, x, mid) < s:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestConstant:
    def test_value(self):
        assert v_value(CONST, [0.5], [], [1.0], 2.0) == pytest.approx(
            2.0 * np.exp(-0.5), abs=1e-15)

    def test_deriv(self):
        for t in (0.1, 1.0, 7.3):
            assert v_deriv(CONST, [0.5], [], [1.0], t) == pytest.approx(
                np.exp(-0.5), abs=1e-15)

    def test_inverse_is_linear(self):
        assert v_inverse(CONST, [0.5], [], [1.0], 3.0) == pytest.approx(
            3.0 * np.exp(0.5), rel=1e-15)


class TestPiecewise:
    def test_hand_example_value(self):
        # beta = 0, x1 = 1, breakpoints (0, 2), alpha = -ln 2:
        # V(3) = min(3, 2) + 2 * (3 - 2) = 4
        assert v_value(PW_EXAMPLE, [0.0], [-LN2], [1.0], 3.0) == 4.0

    def test_hand_example_slope(self):
        assert v_deriv(PW_EXAMPLE, [0.0], [-LN2], [1.0], 3.0) == 2.0

    def test_hand_example_inverse(self):
        assert v_inverse(PW_EXAMPLE, [0.0], [-LN2], [1.0], 4.0) == 3.0

    def test_right_continuous_slope_at_knot(self):
        spec = EffectSpec("piecewise", (0.0, 1.0, 3.0))
        a = np.array([0.7, -0.4])
        assert v_deriv(spec, [0.0], a, [1.0], 1.0) == pytest.approx(
            np.exp(-0.7), abs=1e-15)
        assert v_deriv(spec, [0.0], a, [1.0], 3.0) == pytest.approx(
            np.exp(0.4), abs=1e-15)

    def test_closed_form_inverse_matches_bisection(self):
        rng = np.random.default_rng(20240811)
        for _ in range(200):
            J = rng.integers(1, 4)
            knots = (0.0, *np.cumsum(rng.uniform(0.3, 2.0, size=J)))
            spec = EffectSpec("piecewise", knots)
            beta = rng.normal(scale=0.5, size=2)
            alpha = rng.normal(scale=0.8, size=J)
            x = np.array([float(rng.integers(0, 2)), rng.normal()])
            s = rng.uniform(0.01, 20.0)
            got = v_inverse(spec, beta, alpha, x, s)
            want = bisect_inverse(spec, beta, alpha, x, s)
            assert got == pytest.approx(want, abs=1e-8, rel=1e-8)

    def test_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            knots = (0.0, *np.cumsum(rng.uniform(0.2, 1.5, size=2)))
            spec = EffectSpec("piecewise", knots)
            beta = rng.normal(scale=0.4, size=1)
            alpha = rng.normal(scale=0.7, size=2)
            x = np.array([1.0])
            t = rng.uniform(0.01, 15.0)
            s = v_value(spec, beta, alpha, x, t)
            assert v_inverse(spec, beta, alpha, x, s) == pytest.approx(
                t, rel=1e-9)


class TestSpline:
    SPEC = EffectSpec("spline", (-1.2, 0.0, 0.9, 1.8))

    def test_natural_tails_are_linear(self):
        # second differences vanish outside the boundary knots
        for side in (np.linspace(-8, -2, 30), np.linspace(2.5, 9, 30)):
            b = spline_basis(self.SPEC.knot_array(), side)
            assert np.abs(np.diff(b, n=2, axis=0)).max() < 1e-9

    def test_basis_derivative_finite_difference(self):
        u = np.linspace(-2.5, 2.5, 41)
        h = 1e-6
        fd = (spline_basis(self.SPEC.knot_array(), u + h)
              - spline_basis(self.SPEC.knot_array(), u - h)) / (2 * h)
        an = spline_basis_deriv(self.SPEC.knot_array(), u)
        assert np.abs(fd - an).max() < 1e-8

    def test_deriv_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        beta = np.array([0.2])
        alpha = np.array([0.15, -0.1, 0.05])
        x = np.array([1.0])
        for _ in range(20):
            t = float(rng.uniform(0.1, 6.0))
            h = 1e-6 * t
            fd = (v_value(self.SPEC, beta, alpha, x, t + h)
                  - v_value(self.SPEC, beta, alpha, x, t - h)) / (2 * h)
            an = v_deriv(self.SPEC, beta, alpha, x, t)
            assert abs(fd - an) / an < 1e-5

    def test_inverse_round_trip(self):
        beta = np.array([-0.3])
        alpha = np.array([0.2, 0.1, -0.15])
        x = np.array([1.0])
        for t in np.geomspace(0.05, 8.0, 25):
            s = v_value(self.SPEC, beta, alpha, x, t)
            assert v_inverse(self.SPEC, beta, alpha, x, s) == pytest.approx(
                t, rel=1e-9)

    def test_monotonicity_check_flags_bad_alpha(self):
        grid = np.geomspace(0.01, 10.0, 200)
        good = np.array([0.2, 0.1, -0.1])
        bad = np.array([5.0, 0.0, 0.0])  # slope of g exceeds 1 in log-time
        assert monotonicity_check(self.SPEC, [0.0], good, [[1.0]], grid)
        assert not monotonicity_check(self.SPEC, [0.0], bad, [[1.0]], grid)
        # the unexposed pattern is unaffected
        assert monotonicity_check(self.SPEC, [0.0], bad, [[0.0]], grid)


class TestReduction:
    @settings(max_examples=40, deadline=None)
    @given(t=st.floats(0.01, 30.0), b=st.floats(-1.5, 1.5),
           x1=st.sampled_from([0.0, 1.0]))
    def test_alpha_zero_reduces_to_constant(self, t, b, x1):
        x = np.array([x1, 0.5])
        base = v_value(CONST, [b, 0.2], [], x, t)
        pw = EffectSpec("piecewise", (0.0, 1.0, 2.0))
        sp = EffectSpec("spline", (-1.0, 0.5))
        assert abs(v_value(pw, [b, 0.2], [0, 0], x, t) - base) <= 1e-14 * base
        assert abs(v_value(sp, [b, 0.2], [0], x, t) - base) <= 1e-14 * base

    def test_v_at_zero_is_zero(self):
        for spec, alpha in ((CONST, []), (PW_EXAMPLE, [0.3]),
                            (EffectSpec("spline", (-1.0, 1.0)), [0.2])):
            assert v_value(spec, [0.1], alpha, [1.0], 0.0) == 0.0


class TestTimeVarying:
    TV4 = TimeVaryingCovariate(4.0)

    def test_hand_example(self):
        # b1 = -ln2, switch at 4: V(10) = 4 + 6 * 2 = 16
        assert tv_v_value(-LN2, 0.0, [], self.TV4, None, 10.0) == 16.0
        assert tv_v_inverse(-LN2, 0.0, [], self.TV4, None, 16.0) == 10.0

    def test_before_switch_is_constant_transform(self):
        assert tv_v_value(9.9, 0.3, [], self.TV4, None, 3.0) == pytest.approx(
            3.0 * np.exp(-0.3), abs=1e-15)
        assert tv_v_inverse(9.9, 0.3, [], self.TV4, None, 1.0) == \
            pytest.approx(np.exp(0.3), rel=1e-15)

    def test_never_switching(self):
        never = TimeVaryingCovariate(np.inf)
        for t in (0.5, 3.0, 40.0):
            assert tv_v_value(0.7, 0.3, [], never, None, t) == pytest.approx(
                t * np.exp(-0.3), abs=1e-14)

    def test_continuity_at_switch(self):
        eff = EffectSpec("piecewise", (0.0, 1.0, 3.0))
        al = np.array([0.4, -0.3])
        lo = tv_v_value(0.5, 0.2, al, self.TV4, eff, np.nextafter(4.0, 0.0))
        hi = tv_v_value(0.5, 0.2, al, self.TV4, eff, np.nextafter(4.0, 8.0))
        assert abs(hi - lo) < 1e-12

    def test_flexible_round_trip(self):
        rng = np.random.default_rng(12)
        for kind, knots in (("piecewise", (0.0, 1.0, 3.0)),
                            ("spline", (-1.5, 0.0, 1.0))):
            eff = EffectSpec(kind, knots)
            for _ in range(50):
                b1 = rng.normal(scale=0.5)
                b2 = rng.normal(scale=0.3)
                al = rng.normal(scale=0.25, size=2)
                if not tv_monotonicity_check(b1, al, eff,
                                             np.geomspace(1e-4, 50, 200)):
                    continue
                t = rng.uniform(0.2, 20.0)
                s = tv_v_value(b1, b2, al, self.TV4, eff, t)
                assert tv_v_inverse(b1, b2, al, self.TV4, eff, s) == \
                    pytest.approx(t, rel=1e-9)

    def test_flexible_with_zero_alpha_matches_constant(self):
        eff = EffectSpec("piecewise", (0.0, 2.0))
        for t in (1.0, 4.0, 9.0):
            assert tv_v_value(0.6, 0.1, [0.0], self.TV4, eff, t) == \
                pytest.approx(tv_v_value(0.6, 0.1, [], self.TV4, None, t),
                              rel=1e-14)


class TestValidation:
    def test_negative_time(self):
        with pytest.raises(DomainError):
            v_value(CONST, [0.0], [], [1.0], -1.0)
        with pytest.raises(DomainError):
            v_deriv(CONST, [0.0], [], [1.0], 0.0)

    def test_piecewise_knots_start_at_zero(self):
        with pytest.raises(DomainError):
            EffectSpec("piecewise", (1.0, 2.0))

    def test_knots_strictly_increasing(self):
        with pytest.raises(DomainError):
            EffectSpec("spline", (0.0, 0.0, 1.0))

    def test_alpha_length_checked(self):
        with pytest.raises(DomainError):
            v_value(PW_EXAMPLE, [0.0], [0.1, 0.2], [1.0], 1.0)

    def test_bad_change_time(self):
        with pytest.raises(DomainError):
            TimeVaryingCovariate(0.0)
