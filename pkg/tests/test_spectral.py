import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tamedns.spectral import (
    GridField,
    ResolutionError,
    SpectralField,
    basis_field,
    build_mode_set,
    dealias_floor,
    imag_residue,
    leray_project,
    lp_norm,
    pairing,
    random_field,
    resolution_floor,
    sobolev_norm,
    to_physical,
    to_spectral,
    truncate,
)

TWO_PI = 2 * np.pi


def lattice_count(K):
    r = range(-K, K + 1)
    return sum(1 for a in r for b in r for c in r if 0 < a * a + b * b + c * c <= K * K)


def single_mode(modes, k, p=1, a=1.0):
    """Amplitude a on (k, p) and its conjugate partner."""
    amp = np.zeros(modes.n, dtype=complex)
    i = next(j for j in range(modes.n) if tuple(modes.k[j]) == tuple(k) and modes.pol[j] == p)
    amp[i] = a
    amp[modes.partner[i]] = np.conj(a)
    return SpectralField(modes, amp)


class TestModeSet:
    def test_unit_shell(self):
        m = build_mode_set(1)
        assert m.n == 12
        assert len(m.wavevectors) == 6
        assert np.allclose(m.lam, 4 * np.pi**2)

    def test_lambda1(self):
        m = build_mode_set(1)
        assert m.lambda1 == pytest.approx(39.47841760435743, rel=1e-15)
        # -Laplacian of sin(2 pi x1) on a fine 1D grid
        x = np.linspace(0, 1, 2001)
        h = x[1] - x[0]
        f = np.sin(TWO_PI * x)
        lap = -(f[2:] - 2 * f[1:-1] + f[:-2]) / h**2
        ratio = lap[500] / f[501]
        assert ratio == pytest.approx(m.lambda1, rel=1e-5)

    @pytest.mark.parametrize("K", [1, 2, 3])
    def test_counts_match_lattice(self, K):
        m = build_mode_set(K)
        assert len(m.wavevectors) == lattice_count(K)
        assert m.n == 2 * lattice_count(K)

    def test_k2_counts(self):
        m = build_mode_set(2)
        assert len(m.wavevectors) == 32 and m.n == 64

    def test_ordering(self):
        m = build_mode_set(3)
        keys = [(int(l), tuple(k), int(p)) for l, k, p in zip((m.k**2).sum(1), m.k, m.pol)]
        assert keys == sorted(keys)
        assert np.all(np.diff(m.lam) >= 0)

    def test_conjugate_closure(self):
        m = build_mode_set(2)
        assert np.array_equal(m.k[m.partner], -m.k)
        assert np.array_equal(m.pol[m.partner], m.pol)
        assert np.array_equal(m.partner[m.partner], np.arange(m.n))

    def test_polarizations(self):
        m = build_mode_set(3)
        for i in range(m.n):
            assert abs(m.k[i] @ m.eps[i]) < 1e-14
            assert np.linalg.norm(m.eps[i]) == pytest.approx(1.0, abs=1e-15)
            assert np.array_equal(m.eps[i], m.eps[m.partner[i]])
        for i in range(0, m.n, 2):
            assert abs(m.eps[i] @ m.eps[i + 1]) < 1e-14

    def test_closed_prefixes(self):
        m = build_mode_set(2)
        assert m.closed_prefixes == (0, 12, 36, 52, 64)
        with pytest.raises(ValueError):
            m.check_prefix(13)

    def test_bad_cutoff(self):
        with pytest.raises(ValueError):
            build_mode_set(0)

    def test_floors(self):
        m = build_mode_set(2)
        assert resolution_floor(m) == 5
        assert dealias_floor(m) == 7


class TestLeray:
    def raw(self, modes, rng):
        W = modes.wavevectors
        lookup = {tuple(w): i for i, w in enumerate(W)}
        v = rng.standard_normal((len(W), 3)) + 1j * rng.standard_normal((len(W), 3))
        for i, w in enumerate(W):
            j = lookup[tuple(-w)]
            if j < i:
                v[i] = np.conj(v[j])
        return v

    def gradient(self, modes, rng):
        # i k phi(k) with phi real and even in k is a real gradient field
        W = modes.wavevectors
        lookup = {tuple(w): i for i, w in enumerate(W)}
        raw = rng.standard_normal(len(W))
        phi = np.array([raw[min(i, lookup[tuple(-w)])] for i, w in enumerate(W)])
        return 1j * W * phi[:, None]

    def test_gradient_fields_vanish(self):
        m = build_mode_set(2)
        u = leray_project(m, self.gradient(m, np.random.default_rng(0)))
        assert np.max(np.abs(u.amp)) < 1e-14

    def test_parallel_to_k(self):
        m = build_mode_set(3)
        u = leray_project(m, 2.5 * self.gradient(m, np.random.default_rng(1)))
        assert np.max(np.abs(u.amp)) < 1e-14

    def test_idempotent_on_divergence_free(self):
        m = build_mode_set(2)
        u = random_field(m, np.random.default_rng(1))
        vec = np.zeros((len(m.wavevectors), 3), dtype=complex)
        np.add.at(vec, m.wavevector_index, u.vectors())
        u2 = leray_project(m, vec)
        assert np.max(np.abs(u2.amp - u.amp)) < 1e-14

    def test_random_is_divergence_free(self):
        m = build_mode_set(3)
        u = leray_project(m, self.raw(m, np.random.default_rng(2)))
        assert u.divergence_residual() < 1e-13
        assert u.reality_residual() < 1e-14

    def test_commutes_with_laplacian(self):
        m = build_mode_set(2)
        v = self.raw(m, np.random.default_rng(3))
        lamw = 4 * np.pi**2 * np.sum(m.wavevectors**2, axis=1)
        a = leray_project(m, lamw[:, None] * v)
        b = leray_project(m, v)
        assert np.allclose(a.amp, m.lam * b.amp, rtol=0, atol=1e-10)

    def test_mean_rejected(self):
        m = build_mode_set(1)
        with pytest.raises(ValueError, match="mean-zero"):
            leray_project(m, np.zeros((6, 3)), mean=np.array([1.0, 0, 0]))

    def test_reality_rejected(self):
        m = build_mode_set(1)
        v = np.zeros((6, 3), dtype=complex)
        v[0, 1] = 1.0
        with pytest.raises(ValueError, match="reality"):
            leray_project(m, v)


class TestTransforms:
    def test_zero_round_trip(self):
        m = build_mode_set(2)
        g = to_physical(SpectralField.zeros(m), 6)
        assert np.all(g.values == 0)
        assert np.all(to_spectral(g, m).amp == 0)

    def test_single_mode_peak(self):
        m = build_mode_set(1)
        u = single_mode(m, (1, 0, 0), 1, 1.0)
        g = to_physical(u, 8)
        mag = np.sqrt(np.sum(g.values**2, axis=0))
        assert mag.max() == pytest.approx(2.0, abs=1e-14)
        # u(x) = 2 eps cos(2 pi x1), independent of x2 and x3
        i = np.flatnonzero((m.k == (1, 0, 0)).all(1) & (m.pol == 1))[0]
        x = np.arange(8) / 8
        expected = 2 * m.eps[i][:, None] * np.cos(TWO_PI * x)[None, :]
        assert np.allclose(g.values[:, :, 3, 5], expected, atol=1e-14)

    @pytest.mark.parametrize("K", [1, 2, 3])
    def test_round_trip_3K(self, K):
        m = build_mode_set(K)
        u = random_field(m, np.random.default_rng(K))
        back = to_spectral(to_physical(u, 3 * K), m)
        assert sobolev_norm(back - u, 0) / sobolev_norm(u, 0) < 1e-12

    def test_fft_matches_dense(self):
        m = build_mode_set(2)
        u = random_field(m, np.random.default_rng(5))
        a = to_physical(u, 8)
        b = to_physical(u, 8, method="fft")
        assert np.max(np.abs(a.values - b.values)) < 1e-12
        assert np.max(np.abs(to_spectral(a, m, "fft").amp - to_spectral(a, m).amp)) < 1e-12

    def test_resolution_error(self):
        m = build_mode_set(2)
        u = random_field(m, np.random.default_rng(0))
        with pytest.raises(ResolutionError):
            to_physical(u, 4)
        with pytest.raises(ResolutionError):
            to_spectral(GridField(np.zeros((3, 4, 4, 4))), m)

    def test_imaginary_residue(self):
        m = build_mode_set(2)
        u = random_field(m, np.random.default_rng(6))
        assert imag_residue(u, 8) < 1e-13

    def test_projection_of_grid_data(self):
        m = build_mode_set(2)
        rng = np.random.default_rng(7)
        g = GridField(rng.standard_normal((3, 7, 7, 7)))
        u = to_spectral(g, m)
        assert u.divergence_residual() < 1e-13 * max(1.0, sobolev_norm(u, 0))


class TestNorms:
    def test_zero(self):
        m = build_mode_set(2)
        z = SpectralField.zeros(m)
        for order in range(4):
            assert sobolev_norm(z, order) == 0.0
            assert sobolev_norm(z, order, "homogeneous") == 0.0
        g = to_physical(z, 8)
        for p in (2, 3, 4, 6, np.inf):
            assert lp_norm(g, p) == 0.0

    def test_single_mode_h1(self):
        m = build_mode_set(1)
        a = 0.3 - 0.4j
        u = single_mode(m, (0, 1, 0), 2, a)
        assert sobolev_norm(u, 1, "homogeneous") ** 2 == pytest.approx(2 * 4 * np.pi**2 * abs(a) ** 2, rel=1e-14)
        assert sobolev_norm(u, 1, "full") ** 2 == pytest.approx(2 * (1 + 4 * np.pi**2) * abs(a) ** 2, rel=1e-14)

    def test_poincare(self):
        m = build_mode_set(3)
        rng = np.random.default_rng(8)
        viol = 0
        for _ in range(1000):
            u = random_field(m, rng, decay=rng.uniform(-1, 3))
            if sobolev_norm(u, 0) ** 2 > sobolev_norm(u, 1, "homogeneous") ** 2 / m.lambda1 * (1 + 1e-14):
                viol += 1
        assert viol == 0

    @pytest.mark.parametrize("p,exact", [
        (2, np.sqrt(2.0)),
        (3, (4 * 8 / (3 * np.pi)) ** (1 / 3)),
        (4, (16 * 3 / 8) ** 0.25),
        (6, (64 * 5 / 16) ** (1 / 6)),
        (np.inf, 2.0),
    ])
    def test_single_mode_lp(self, p, exact):
        # |u| = 2|cos(2 pi x)|: mean of |cos|^p is 1/2, 4/(3 pi), 3/8, 5/16
        m = build_mode_set(1)
        u = single_mode(m, (1, 0, 0), 1, 1.0)
        g = to_physical(u, 32)
        tol = 1e-10 if p != 3 else 2e-3
        assert lp_norm(g, p) == pytest.approx(exact, rel=tol)

    def test_parseval(self):
        m = build_mode_set(2)
        u = random_field(m, np.random.default_rng(9))
        g = to_physical(u, 5)
        assert abs(lp_norm(g, 2) ** 2 - sobolev_norm(u, 0) ** 2) / sobolev_norm(u, 0) ** 2 < 1e-10

    def test_bad_exponent(self):
        m = build_mode_set(1)
        with pytest.raises(ValueError):
            lp_norm(to_physical(SpectralField.zeros(m), 4), 5)


class TestTruncatePairing:
    def test_truncate_identity_and_zero(self):
        m = build_mode_set(2)
        u = random_field(m, np.random.default_rng(10))
        assert np.array_equal(truncate(u, m.n).amp, u.amp)
        assert np.all(truncate(u, 0).amp == 0)

    def test_truncate_orthogonality(self):
        m = build_mode_set(2)
        rng = np.random.default_rng(11)
        u = random_field(m, rng)
        w = random_field(m, rng, n=36)
        for s in ("H0", "H1_full", "H1_homog"):
            assert pairing(truncate(u, 36), w, s) == pytest.approx(pairing(u, w, s), rel=1e-13)

    def test_truncate_idempotent(self):
        m = build_mode_set(2)
        u = random_field(m, np.random.default_rng(12))
        t = truncate(u, 36)
        assert np.array_equal(truncate(t, 36).amp, t.amp)

    def test_truncate_rejects_split_pair(self):
        m = build_mode_set(2)
        with pytest.raises(ValueError):
            truncate(SpectralField.zeros(m), 13)

    def test_pairing_zero(self):
        m = build_mode_set(2)
        u = random_field(m, np.random.default_rng(13))
        assert pairing(u, SpectralField.zeros(m), "H1_full") == 0.0

    def test_basis_orthonormal_h1(self):
        m = build_mode_set(2)
        es = [basis_field(m, i, "H1_full") for i in range(m.n)]
        G = np.array([[pairing(a, b, "H1_full") for b in es] for a in es])
        assert np.allclose(G, np.eye(m.n), atol=1e-14)

    def test_multiplier_identity(self):
        m = build_mode_set(2)
        rng = np.random.default_rng(14)
        u, v = random_field(m, rng), random_field(m, rng)
        Iv = SpectralField(m, (1 + m.lam) * v.amp)
        assert pairing(u, v, "H1_full") == pytest.approx(pairing(u, Iv, "H0"), rel=1e-13)

    def test_mode_set_mismatch(self):
        with pytest.raises(ValueError):
            pairing(SpectralField.zeros(build_mode_set(1)), SpectralField.zeros(build_mode_set(2)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_idx=st.integers(0, 4), decay=st.floats(-1, 3))
def test_projection_orthogonality_property(seed, n_idx, decay):
    m = build_mode_set(2)
    n = m.closed_prefixes[n_idx]
    u = random_field(m, np.random.default_rng(seed), decay=decay)
    t = truncate(u, n)
    for s in ("H0", "H1_full", "H1_homog"):
        scale = pairing(u, u, s)
        assert abs(pairing(u - t, t, s)) <= 1e-12 * scale


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), amp=st.floats(1e-3, 1e3))
def test_structure_property(seed, amp):
    m = build_mode_set(2)
    u = random_field(m, np.random.default_rng(seed), amplitude=amp)
    scale = sobolev_norm(u, 0)
    assert u.divergence_residual() < 1e-13 * scale
    assert u.reality_residual() == 0.0
    back = to_spectral(to_physical(u, 6), m)
    assert back.divergence_residual() < 1e-13 * scale
    assert imag_residue(back, 6) < 1e-13
