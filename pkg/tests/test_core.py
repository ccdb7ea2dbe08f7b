import math
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainsde.core import ChainState, SystemParams, diffusion_coeff, drift_flow, mvt_bound
from helpers import ulp_diff


def mp_pow(x, a):
    """Arbitrary-precision oracle exp(a * ln x)."""
    with mp.workdps(50):
        return float(mp.e ** (mp.mpf(a) * mp.log(mp.mpf(x))))


class TestDiffusionCoeff:
    def test_zero_at_origin(self):
        assert diffusion_coeff(0.0, 0.75) == 0.0

    def test_unit_base(self):
        assert diffusion_coeff(1.0, 0.9) == 1.0

    def test_against_highprec_oracle(self):
        # exp(0.75 * ln 4) = 2.8284271247461903 to double precision
        want = mp_pow(4.0, "0.75")
        assert want == 2.8284271247461903
        assert diffusion_coeff(4.0, 0.75) == pytest.approx(want, rel=1e-15)

    @pytest.mark.parametrize("x", [math.nan, math.inf, -math.inf])
    def test_nonfinite_rejected(self, x):
        with pytest.raises(ValueError):
            diffusion_coeff(x, 0.5)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
    def test_alpha_domain(self, alpha):
        with pytest.raises(ValueError):
            diffusion_coeff(1.0, alpha)

    def test_even_in_x(self):
        xs = np.linspace(-10.0, 10.0, 4001)
        for alpha in (0.55, 0.75, 0.9):
            for x in xs:
                assert diffusion_coeff(float(x), alpha) == diffusion_coeff(float(-x), alpha)

    def test_holder_modulus_on_grid(self):
        # | |x|^a - |y|^a | <= |x - y|^a on a dense grid of [-10, 10]
        rng = np.random.default_rng(7)
        xs = rng.uniform(-10.0, 10.0, size=400)
        ys = rng.uniform(-10.0, 10.0, size=400)
        for alpha in (0.6, 0.75, 0.9):
            for x, y in zip(xs, ys):
                lhs = abs(diffusion_coeff(float(x), alpha) - diffusion_coeff(float(y), alpha))
                gap = abs(float(x) - float(y))
                rhs = gap**alpha if gap > 0 else 0.0
                assert lhs <= rhs * (1.0 + 1e-12) + 1e-300


class TestMvtBound:
    def test_simple_arithmetic_case(self):
        # 0.75 * 1^(-0.25) * 3 = 2.25 and it dominates 4^0.75 - 1 = 1.8284...
        got = mvt_bound(1.0, 4.0, 0.75)
        assert got == 2.25
        diff = mp_pow(4.0, "0.75") - 1.0
        assert diff == pytest.approx(1.82842712474619, rel=1e-14)
        assert diff <= got

    def test_against_highprec_oracle(self):
        # 0.9 * 0.5^(-0.1) * 0.5 = 0.4822980581413319 to double precision
        with mp.workdps(50):
            want = float(mp.mpf("0.9") * mp.power(mp.mpf("0.5"), mp.mpf("-0.1")) * mp.mpf("0.5"))
        assert want == 0.4822980581413319
        assert mvt_bound(0.5, 1.0, 0.9) == pytest.approx(want, rel=1e-15)

    def test_degenerate_interval_limit(self):
        a = 1.7
        eps = 1e-14
        assert 0.0 <= mvt_bound(a, a + eps, 0.8) < 1e-13

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            mvt_bound(0.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            mvt_bound(-1.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            mvt_bound(2.0, 2.0, 0.5)
        with pytest.raises(ValueError):
            mvt_bound(2.0, 1.0, 0.5)

    def test_dominates_true_difference_randomized(self):
        # b^a - a^a <= alpha * a^(a-1) * (b - a) for 10^4 random triples
        rng = np.random.default_rng(2024)
        a = rng.uniform(1e-6, 50.0, size=10_000)
        gap = rng.uniform(1e-9, 50.0, size=10_000)
        alpha = rng.uniform(0.01, 0.99, size=10_000)
        b = a + gap
        for ai, bi, al in zip(a, b, alpha):
            bound = mvt_bound(float(ai), float(bi), float(al))
            diff = bi**al - ai**al
            # as b -> a the inequality becomes an equality, so allow the
            # cancellation noise of evaluating the difference itself
            assert diff <= bound * (1.0 + 1e-12) + 4.0 * math.ulp(max(ai**al, bi**al))

    @given(
        a=st.floats(1e-6, 1e3),
        gap=st.floats(1e-9, 1e3),
        alpha=st.floats(0.01, 0.99),
    )
    @settings(max_examples=200, deadline=None)
    def test_dominates_true_difference_property(self, a, gap, alpha):
        b = a + gap
        if not b > a:
            return
        slack = 4.0 * math.ulp(max(a**alpha, b**alpha))
        assert b**alpha - a**alpha <= mvt_bound(a, b, alpha) * (1.0 + 1e-12) + slack


class TestDriftFlow:
    def test_pure_velocity(self):
        out = drift_flow(ChainState(0.0, (0.0, 1.0, 0.0)), 1.0)
        assert out.coords == (1.0, 1.0, 0.0)
        assert out.t == 1.0

    def test_pure_acceleration(self):
        out = drift_flow(ChainState(0.0, (0.0, 0.0, 1.0)), 2.0)
        assert out.coords == (2.0, 2.0, 1.0)

    def test_exact_rational_oracle(self):
        # Exact rational arithmetic: x' = 1 - 1/2 + (1/2)(1/4)/2 = 9/16
        x, y, z, h = Fraction(1), Fraction(-1), Fraction(1, 2), Fraction(1, 2)
        want = (x + y * h + z * h * h / 2, y + z * h, z)
        assert want == (Fraction(9, 16), Fraction(-3, 4), Fraction(1, 2))
        out = drift_flow(ChainState(0.0, (1.0, -1.0, 0.5)), 0.5)
        assert out.coords == tuple(float(w) for w in want) == (0.5625, -0.75, 0.5)

    def test_order_two(self):
        out = drift_flow(ChainState(0.5, (2.0, -3.0)), 0.25)
        assert out.coords == (2.0 - 3.0 * 0.25, -3.0)
        assert out.t == 0.75

    @given(
        x=st.floats(-10, 10),
        y=st.floats(-10, 10),
        z=st.floats(-10, 10),
        h1=st.floats(1e-3, 1.0),
        h2=st.floats(1e-3, 1.0),
    )
    @settings(max_examples=300, deadline=None)
    def test_flow_composition(self, x, y, z, h1, h2):
        # drift_flow(drift_flow(s, h1), h2) == drift_flow(s, h1 + h2) to 4 ulps
        s = ChainState(0.0, (x, y, z))
        two = drift_flow(drift_flow(s, h1), h2)
        one = drift_flow(s, h1 + h2)
        h = h1 + h2
        scales = (
            abs(x) + abs(y) * h + 0.5 * abs(z) * h * h,
            abs(y) + abs(z) * h,
            abs(z),
        )
        for got, want, scale in zip(two.coords, one.coords, scales):
            tol = 4.0 * math.ulp(max(scale, abs(want), 1e-30))
            assert abs(got - want) <= tol

    def test_bad_h(self):
        s = ChainState(0.0, (1.0, 0.0, 0.0))
        for h in (0.0, -1.0, math.inf, math.nan):
            with pytest.raises(ValueError):
                drift_flow(s, h)


class TestTypes:
    def test_state_validation(self):
        with pytest.raises(ValueError):
            ChainState(-1.0, (0.0, 1.0))
        with pytest.raises(ValueError):
            ChainState(0.0, (1.0,))
        with pytest.raises(ValueError):
            ChainState(0.0, (1.0, 2.0, 3.0, 4.0))
        with pytest.raises(ValueError):
            ChainState(0.0, (math.nan, 1.0, 0.0))
        # the blowup flag permits non-finite coordinates
        s = ChainState(1.0, (math.inf, 1.0, 0.0), blown_up=True)
        assert s.blown_up

    def test_state_accessors(self):
        s = ChainState(0.25, (1.0, 2.0, 3.0))
        assert (s.x, s.y, s.z) == (1.0, 2.0, 3.0)
        assert s.dim == 3
        s2 = ChainState(0.0, (1.0, 2.0))
        with pytest.raises(ValueError):
            _ = s2.z

    def test_reflection(self):
        s = ChainState(0.5, (1.0, -2.0, 3.0))
        r = s.reflected()
        assert r.coords == (-1.0, 2.0, -3.0)
        assert r.t == 0.5
        assert r.reflected().coords == s.coords

    def test_params_validation(self):
        init = ChainState(0.0, (0.0, 1.0, 0.0))
        SystemParams(0.9, 3, init)
        with pytest.raises(ValueError):
            SystemParams(1.0, 3, init)
        with pytest.raises(ValueError):
            SystemParams(0.0, 3, init)
        with pytest.raises(ValueError):
            SystemParams(0.9, 4, init)
        with pytest.raises(ValueError):
            SystemParams(0.9, 2, init)  # dimension mismatch
        with pytest.raises(ValueError):
            SystemParams(0.9, 3, ChainState(0.0, (0.0, 0.0, 0.0)))
        with pytest.raises(ValueError):
            SystemParams(0.9, 3, ChainState(1.0, (0.0, 1.0, 0.0)))


def test_ulp_helper_sanity():
    assert ulp_diff(1.0, 1.0) == 0.0
    assert ulp_diff(1.0, 1.0 + math.ulp(1.0)) == 1.0
