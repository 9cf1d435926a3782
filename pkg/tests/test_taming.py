import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tamedns.taming import (
    TamingConfig,
    blend_excess,
    blend_max_slope,
    blend_min_slope,
    quartic_energy_constant,
    taming_g,
    taming_g_prime,
    taming_g_second,
)

# closed forms for the quintic 6s^3 - 8s^4 + 3s^5:
# p'' = 12 s (3 - 8 s + 5 s^2) vanishes at s = 3/5, so max p' = p'(3/5) = 189/125;
# p'(s) = 1 at s = 1/3, where s - p(s) = 16/81
MAX_SLOPE = 189 / 125
EXCESS = 16 / 81


@pytest.fixture(params=[0.5, 1.0, 10.0])
def cfg(request):
    return TamingConfig(request.param)


class TestPieces:
    def test_zero_below_threshold(self, cfg):
        N = cfg.N
        assert taming_g(N, cfg) == 0.0
        assert taming_g(N / 2, cfg) == 0.0
        assert taming_g(0.0, cfg) == 0.0

    def test_linear_above(self, cfg):
        N = cfg.N
        assert taming_g(N + 1, cfg) == pytest.approx(1.0, abs=1e-14)
        assert taming_g(N + 3.5, cfg) == pytest.approx(3.5, abs=1e-13)

    def test_derivatives_at_ends(self, cfg):
        N = cfg.N
        assert taming_g_prime(N, cfg) == 0.0
        assert taming_g_prime(N + 1, cfg) == 1.0
        assert taming_g_second(N, cfg) == 0.0
        assert taming_g_second(N + 1, cfg) == 0.0

    def test_second_derivative_support(self, cfg):
        r = np.linspace(0, cfg.N + 5, 4001)
        g2 = taming_g_second(r, cfg)
        outside = (r <= cfg.N) | (r >= cfg.N + 1)
        assert np.all(g2[outside] == 0)
        assert np.any(g2[~outside] != 0)

    def test_slope_range(self, cfg):
        r = np.linspace(0, cfg.N + 3, 200001)
        gp = taming_g_prime(r, cfg)
        assert gp.min() >= 0.0
        assert gp.max() <= 2.0
        assert gp.max() == pytest.approx(MAX_SLOPE, abs=1e-9)

    def test_nondecreasing(self, cfg):
        r = np.linspace(0, cfg.N + 3, 10001)
        assert np.all(np.diff(taming_g(r, cfg)) >= 0)

    def test_rejects_bad_threshold(self):
        with pytest.raises(ValueError):
            TamingConfig(0.0)


class TestConstants:
    def test_max_slope(self):
        assert blend_max_slope() == pytest.approx(MAX_SLOPE, abs=1e-12)

    def test_min_slope(self):
        assert blend_min_slope() == pytest.approx(0.0, abs=1e-12)

    def test_excess(self):
        assert blend_excess() == pytest.approx(EXCESS, abs=1e-12)

    def test_excess_bound_holds(self, cfg):
        r = np.linspace(0, cfg.N + 3, 100001)
        assert np.all(taming_g(r, cfg) >= r - cfg.N - EXCESS - 1e-14)

    def test_quartic_constant(self, cfg):
        assert quartic_energy_constant(cfg) == pytest.approx(1 + EXCESS / cfg.N, rel=1e-12)


class TestFiniteDifferences:
    def test_second_order_match(self, cfg):
        rng = np.random.default_rng(0)
        r = rng.uniform(0, cfg.N + 3, 100)
        errs = []
        for d in (1e-3, 5e-4):
            fd = (taming_g(r + d, cfg) - taming_g(r - d, cfg)) / (2 * d)
            errs.append(np.abs(fd - taming_g_prime(r, cfg)))
        # O(delta^2): third derivative of the quintic is bounded by 36
        assert np.all(errs[0] <= 36 / 6 * 1e-6 + 1e-12)
        assert np.max(errs[1]) <= np.max(errs[0]) / 3.5 + 1e-12

    def test_second_derivative(self, cfg):
        rng = np.random.default_rng(1)
        r = cfg.N + rng.uniform(0.01, 0.99, 100)
        d = 1e-4
        fd = (taming_g_prime(r + d, cfg) - taming_g_prime(r - d, cfg)) / (2 * d)
        assert np.allclose(fd, taming_g_second(r, cfg), atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(r=st.floats(0, 50), rp=st.floats(0, 50), N=st.floats(0.1, 20))
def test_lipschitz_property(r, rp, N):
    cfg = TamingConfig(N)
    lhs = abs(float(taming_g(r, cfg)) - float(taming_g(rp, cfg)))
    assert lhs <= MAX_SLOPE * abs(r - rp) + 1e-12
