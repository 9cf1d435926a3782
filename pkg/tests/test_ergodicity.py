import numpy as np
import pytest
from scipy.integrate import solve_ivp

from tamedns.coefficients import AdditiveNoiseMap
from tamedns.dynamics import Operators
from tamedns.ergodicity import (
    comparison_bound,
    comparison_eps0,
    exp_moment_probe,
    kb_average,
    moment_audit,
    noise_path,
    support_probe,
)
from tamedns.integrator import SimConfig, simulate_ensemble
from tamedns.observables import default_catalog
from tamedns.spectral import SpectralField, basis_field, random_field


def additive(K=1, m=12, q=0.5, dt=1e-2, T=1.0, **kw):
    return SimConfig(K_max=K, dt=dt, T=T, noise="additive", additive=AdditiveNoiseMap.uniform(m, q), **kw)


def catalog(cfg):
    return default_catalog(cfg.modes, Operators(cfg.modes, cfg.G, cfg.taming, cfg.model))


class TestKB:
    def test_deterministic_rest_state(self):
        cfg = SimConfig(K_max=1, dt=1e-2, noise="none")
        obs = catalog(cfg)
        rep = kb_average(cfg, SpectralField.zeros(cfg.modes), 0.5, 2.0, obs)
        zero = np.zeros((1, cfg.n))
        for o in obs:
            assert rep.means[o.name] == float(o(zero)[0])
            assert rep.stderr[o.name] == 0

    def test_reproducible(self):
        cfg = additive(seed=3)
        obs = catalog(cfg)
        a = kb_average(cfg, SpectralField.zeros(cfg.modes), 1.0, 4.0, obs)
        b = kb_average(cfg, SpectralField.zeros(cfg.modes), 1.0, 4.0, obs)
        assert a.to_csv() == b.to_csv()

    def test_error_bars_shrink(self):
        cfg = additive(seed=4)
        obs = catalog(cfg)
        u0 = SpectralField.zeros(cfg.modes)
        short = kb_average(cfg, u0, 2.0, 40.0, obs, n_batches=16)
        long = kb_average(cfg, u0, 2.0, 80.0, obs, n_batches=16)
        name = "capped_energy"
        assert 1.0 < short.stderr[name] / long.stderr[name] < 3.0

    def test_needs_batches(self):
        cfg = additive()
        with pytest.raises(ValueError):
            kb_average(cfg, SpectralField.zeros(cfg.modes), 0.0, 1.0, catalog(cfg), n_batches=4)


class TestMomentAudit:
    def test_rest_state(self):
        cfg = SimConfig(K_max=1, dt=1e-2, T=2.0, noise="none", stride=10)
        audit = moment_audit(simulate_ensemble(cfg, SpectralField.zeros(cfg.modes), 2), window=(0.5, 2.0))
        assert np.all(audit.total == 0) and audit.slope == 0 and audit.passed

    def test_linear_growth_and_monotone_in_noise(self):
        slopes = []
        for q in (0.5, 0.5 * np.sqrt(2)):
            cfg = additive(q=q, T=20.0, stride=10, seed=5)
            audit = moment_audit(simulate_ensemble(cfg, SpectralField.zeros(cfg.modes), 16))
            assert audit.passed and audit.r2 > 0.95 and audit.nondecreasing
            assert np.max(audit.energy) < 1.0
            slopes.append(audit.slope)
        assert slopes[1] > slopes[0]
        # the moment audit csv carries one row per record
        assert len(audit.to_csv().splitlines()) == len(audit.times) + 1


class TestExpMoment:
    def ensemble(self):
        cfg = additive(T=4.0, stride=10, seed=6)
        return simulate_ensemble(cfg, SpectralField.zeros(cfg.modes), 16)

    def test_eta_zero(self):
        rep = exp_moment_probe(self.ensemble(), 0.0)
        assert np.all(rep.log_estimate == 0) and np.all(rep.log_terminal == 0)

    def test_rest_state(self):
        cfg = SimConfig(K_max=1, dt=1e-2, T=1.0, noise="none", stride=10)
        rec = simulate_ensemble(cfg, SpectralField.zeros(cfg.modes), 2)
        rep = exp_moment_probe(rec, 1e-3)
        assert np.all(rep.log_estimate == 0)

    def test_small_eta_linear(self):
        rep = exp_moment_probe(self.ensemble(), 1e-4, window=(1.0, 4.0))
        assert rep.r2 > 0.9 and rep.slope > 0 and not rep.heavy_tail

    def test_heavy_tail_warns(self):
        with pytest.warns(RuntimeWarning, match="heavy tail"):
            rep = exp_moment_probe(self.ensemble(), 100.0)
        assert rep.heavy_tail


class TestSupport:
    def test_rest_state(self):
        cfg = SimConfig(K_max=2, dt=1e-3)
        rep = support_probe(cfg, SpectralField.zeros(cfg.modes), 1.0, 0.1, 0.1)
        assert np.all(rep.h1 == 0) and rep.T_found == 0.0

    def test_finds_time_zero_path(self):
        cfg = SimConfig(K_max=2, dt=1e-3)
        u0 = random_field(cfg.modes, np.random.default_rng(0))
        u0 = u0 * (1.0 / np.sqrt(np.sum(cfg.modes.lam * u0.coords() ** 2)))
        rep = support_probe(cfg, u0, 1.0, 0.1, 10.0)
        assert rep.found and rep.T_found <= 10.0 and rep.envelope_ok
        assert rep.h1[0] == pytest.approx(1.0)

    def test_sinusoid_path(self):
        cfg = SimConfig(K_max=2, dt=1e-3)
        _, h6 = noise_path(cfg, "sinusoid", 1e-3)
        assert h6 < 1e-3
        rep = support_probe(cfg, basis_field(cfg.modes, 3, "H1_homog"), 1.0, 0.1, 2.0, path="sinusoid")
        assert rep.found

    def test_radius_check(self):
        cfg = SimConfig(K_max=2, dt=1e-3)
        with pytest.raises(ValueError):
            support_probe(cfg, basis_field(cfg.modes, 0, "H1_homog") * 2.0, 1.0, 0.1, 1.0)


GRID = [
    # r0, C0, C1, C2, C3, p, eps
    (1.0, 1.0, 1.0, 1.0, 0.0, 2.0, 1e-2),
    (0.5, 2.0, 0.5, 0.1, 0.1, 1.5, 0.1),
    (2.0, 0.5, 1.0, 0.0, 0.0, 3.0, 1e-3),
    (1.0, 4.0, 2.0, 1.0, 1.0, 2.0, 0.05),
    (0.1, 1.0, 10.0, 0.5, 0.2, 1.2, 0.01),
    (3.0, 10.0, 1.0, 1.0, 0.0, 2.5, 0.2),
    (1.0, 0.2, 0.1, 2.0, 0.5, 2.0, 1e-2),
    (0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 0.1),
    (5.0, 3.0, 0.2, 0.0, 2.0, 1.5, 0.3),
    (1.0, 1.0, 0.5, 0.5, 0.5, 4.0, 1e-2),
]


def ode_solution(r0, C0, C1, C2, C3, p, eps, T):
    rhs = lambda t, y: -C0 * y + C1 * eps * np.abs(y) ** p + C2 * eps + C3
    sol = solve_ivp(rhs, (0, T[-1]), [r0], t_eval=T, rtol=1e-12, atol=1e-14, method="DOP853")
    return sol.y[0]


class TestComparisonBound:
    def test_pure_decay_limit(self):
        T = np.linspace(0, 3, 7)
        assert np.allclose(comparison_bound(2.0, 1.5, 1.0, 1.0, 0.0, 2.0, T, 0.0), 2.0 * np.exp(-1.5 * T),
                           rtol=1e-14)

    @pytest.mark.parametrize("params", GRID)
    def test_dominates_ode(self, params):
        r0, C0, C1, C2, C3, p, eps = params
        T = np.linspace(0, 2.0, 25)
        bound = comparison_bound(r0, C0, C1, C2, C3, p, T, eps)
        phi = ode_solution(r0, C0, C1, C2, C3, p, eps, T)
        finite = np.isfinite(bound)
        assert finite[0]
        assert np.all(phi[finite] <= bound[finite] * (1 + 1e-9) + 1e-9)

    def test_breakdown_reported(self):
        assert comparison_bound(10.0, 0.1, 5.0, 0.0, 0.0, 2.0, 5.0, 0.9) == np.inf

    def test_argument_checks(self):
        with pytest.raises(ValueError):
            comparison_bound(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.1)
        with pytest.raises(ValueError):
            comparison_bound(1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 0.1)

    @pytest.mark.parametrize("R,C3", [(1.0, 0.0), (2.0, 1.0), (0.5, 3.0)])
    def test_small_eps_keeps_sup_bounded(self, R, C3):
        C0, C1, C2, p, T = 1.0, 2.0, 1.0, 2.0, 3.0
        eps0 = comparison_eps0(R, C0, C1, C2, C3, p, T)
        assert 0 < eps0 <= 1
        ts = np.linspace(0, T, 50)
        phi = ode_solution(R, C0, C1, C2, C3, p, eps0, ts)
        assert np.max(phi) <= 2 * R + 2 * C3 / C0 + 1e-9
