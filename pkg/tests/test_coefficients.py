import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tamedns.coefficients import (
    PSI_HESSIAN_BOUND,
    AdditiveNoiseMap,
    AssumptionViolation,
    CoefficientModel,
    from_config_block,
    profile_gradients,
    profile_values,
    psi,
    psi_jacobian_apply,
    to_config_block,
    validate_assumptions,
)
from tamedns.spectral import build_mode_set
from tamedns.taming import TamingConfig


class TestPsi:
    def test_bounded(self):
        u = np.random.default_rng(0).standard_normal((3, 1000)) * 100
        assert np.all(np.sum(psi(u) ** 2, axis=0) < 1)

    def test_jacobian_matches_fd(self):
        rng = np.random.default_rng(1)
        u = rng.standard_normal((3, 50))
        v = rng.standard_normal((3, 50))
        d = 1e-6
        fd = (psi(u + d * v) - psi(u - d * v)) / (2 * d)
        assert np.allclose(fd, psi_jacobian_apply(u, v), atol=1e-9)

    def test_jacobian_norm_at_most_one(self):
        # eigenvalues of D psi are (1+r^2)^(-1/2) and (1+r^2)^(-3/2)
        rng = np.random.default_rng(2)
        u = rng.standard_normal((3, 2000)) * 10.0 ** rng.uniform(-3, 2, 2000)
        v = rng.standard_normal((3, 2000))
        ratio = np.linalg.norm(psi_jacobian_apply(u, v), axis=0) / np.linalg.norm(v, axis=0)
        assert ratio.max() <= 1.0 + 1e-15

    def test_hessian_bound(self):
        # independent brute-force maximum of the radial bound
        r = np.linspace(0, 10, 2_000_001)
        f = 3 * r / (1 + r * r) ** 1.5 + 3 * r**3 / (1 + r * r) ** 2.5
        assert PSI_HESSIAN_BOUND == pytest.approx(f.max(), rel=1e-9)


class TestProfiles:
    def test_unit_sup(self):
        x = np.random.default_rng(3).random((3, 5000))
        p = profile_values(np.arange(12), x)
        mag = np.sqrt(np.sum(p**2, axis=1))
        assert mag.max() <= 1 + 1e-15
        assert mag.max() > 0.999

    def test_divergence_free_and_gradient(self):
        rng = np.random.default_rng(4)
        x = rng.random((3, 20))
        g = profile_gradients(np.arange(36), x)  # (K, 3j, 3i, P)
        assert np.max(np.abs(np.einsum("kjjp->kp", g))) < 1e-13
        d = 1e-6
        for j in range(3):
            e = np.zeros((3, 1))
            e[j] = d
            fd = (profile_values(np.arange(36), x + e) - profile_values(np.arange(36), x - e)) / (2 * d)
            assert np.allclose(fd, g[:, j], atol=1e-7)


class TestModel:
    def test_zero_model(self):
        rep = validate_assumptions(CoefficientModel())
        for k in ("C_f", "C_sigma", "C_h", "H_f_L1", "H_h_L1", "sigma_sup_sq", "lp1_C", "lp1_offset"):
            assert getattr(rep, k) == 0.0
        assert all(v == 0 for v in rep.details.values())

    def test_sigma_threshold(self):
        s_ok = np.sqrt(0.2499)
        rep = validate_assumptions(CoefficientModel(s=(s_ok,)))
        assert rep.sigma_sup_sq == pytest.approx(0.2499)
        with pytest.raises(AssumptionViolation) as info:
            CoefficientModel(s=(np.sqrt(0.2501),))
        assert info.value.clause == "sigma-sup-bound"
        assert "1/4" in str(info.value)

    def test_sigma_sampled_peak(self):
        # one direction: sup_x |sigma|^2 = s^2 is reached on the grid of peaks
        s = 0.4
        x = np.random.default_rng(5).random((3, 200000))
        val = np.max(np.sum((s * profile_values(np.array([0]), x)[0]) ** 2, axis=0))
        assert val == pytest.approx(s * s, rel=1e-3)

    def test_state_noise_lipschitz_constant(self):
        b = (0.3, 0.1, 0.2)
        rep = validate_assumptions(CoefficientModel(s=(0, 0, 0), b=b, c=(0, 0, 0)))
        assert rep.h_u_lipschitz_sq == pytest.approx(sum(x * x for x in b), rel=1e-12)

    def test_full_model_passes(self):
        m = CoefficientModel(a_f=0.3, F=((0, 0.5), (13, -0.2)), s=(0.2, 0.2, 0.1),
                             b=(0.05, 0.02, 0.01), c=(0.1, 0.0, 0.3))
        rep = validate_assumptions(m)
        assert all(v == 0 for v in rep.details.values())
        assert rep.C_f == pytest.approx(max(2 * 0.09, 0.3))
        lam1 = 4 * np.pi**2
        assert rep.H_f_L1 == pytest.approx(2 * 0.29 + 0.25 * lam1 + 0.04 * 2 * lam1)

    def test_sample_detects_understated_constant(self):
        m = CoefficientModel(a_f=0.5, s=(0.2,), b=(0.3,), c=(0.1,))
        rep = validate_assumptions(m)
        from tamedns.coefficients import _sample_check
        from dataclasses import replace

        bad = replace(rep, C_h=rep.C_h * 0.1)
        details = _sample_check(m, bad, 10000, 0)
        assert details["state-noise-u-derivative"] > 0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            CoefficientModel(s=(0.1, 0.1), b=(0.1,))

    def test_negative_forcing(self):
        with pytest.raises(ValueError):
            CoefficientModel(a_f=-1)

    def test_forcing_coords(self):
        m = CoefficientModel(F=((3, 0.5), (3, 0.25)))
        c = m.forcing_coords(build_mode_set(1))
        assert c[3] == 0.75 and np.count_nonzero(c) == 1
        with pytest.raises(ValueError):
            CoefficientModel(F=((20, 1.0),)).forcing_coords(build_mode_set(1))


class TestAdditive:
    def test_energies(self):
        modes = build_mode_set(2)
        q = AdditiveNoiseMap((0.5, 1.0, 0.25) + (0.1,) * 9)
        assert q.E1() == pytest.approx(0.25 + 1 + 0.0625 + 9 * 0.01)
        assert q.E0(modes) == pytest.approx(q.E1() / modes.lambda1)
        assert q.E0(modes) <= q.E1() / modes.lambda1 * (1 + 1e-15)

    def test_E0_bound_across_shells(self):
        modes = build_mode_set(2)
        q = AdditiveNoiseMap.uniform(36, 0.3)
        assert q.E0(modes) < q.E1() / modes.lambda1

    def test_invertibility(self):
        assert AdditiveNoiseMap.uniform(12, 0.1).invertible()
        assert not AdditiveNoiseMap((0.1, 0.0)).invertible()
        with pytest.raises(ValueError):
            AdditiveNoiseMap((-0.1,))


class TestConfigBlock:
    def test_round_trip_lossless(self):
        m = CoefficientModel(a_f=0.1 + 1e-17, F=((0, 1 / 3),), s=(np.pi / 20, 0.1),
                             b=(1 / 7, 0.0), c=(2 / 3, 1e-300))
        text = to_config_block(m, TamingConfig(1 / 3), AdditiveNoiseMap((0.1, 0.2)))
        m2, t2, q2 = from_config_block(text)
        assert m2 == m
        assert t2 == TamingConfig(1 / 3)
        assert q2 == AdditiveNoiseMap((0.1, 0.2))
        assert to_config_block(m2, t2, q2) == text

    def test_keys(self):
        text = to_config_block(CoefficientModel(s=(0.1,)), TamingConfig(2.0), AdditiveNoiseMap((1.0,)))
        keys = [line.split("=")[0].strip() for line in text.splitlines()]
        assert keys == ["a_f", "F", "K_noise", "s", "b", "c", "N", "m", "q"]

    def test_K_noise_mismatch(self):
        from tamedns.config import ConfigError

        with pytest.raises(ConfigError):
            from_config_block("K_noise = 3\ns = [0.1]\n")


coef = st.floats(0, 0.5)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0, 2), s=st.lists(st.floats(0, 0.28), min_size=0, max_size=3),
       b=st.lists(coef, min_size=3, max_size=3), c=st.lists(coef, min_size=3, max_size=3),
       seed=st.integers(0, 1000))
def test_validator_constants_dominate_samples(a, s, b, c, seed):
    K = len(s)
    if sum(x * x for x in s) > 0.25:
        with pytest.raises(AssumptionViolation):
            CoefficientModel(a_f=a, s=s, b=b[:K], c=c[:K])
        return
    m = CoefficientModel(a_f=a, F=((1, 0.3),), s=s, b=b[:K], c=c[:K])
    rep = validate_assumptions(m, n_samples=2000, seed=seed)
    assert all(v == 0 for v in rep.details.values())
