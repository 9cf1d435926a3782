"""Divergence-free Fourier representation on the unit torus [0, 1)^3.

A velocity field is stored as complex amplitudes on polarized modes (k, p):

    u(x) = sum_{(k, p)} u_hat(k, p) * eps_p(k) * exp(2 pi i k.x)

with eps_1(k), eps_2(k) an orthonormal pair perpendicular to k, so every
field is divergence-free by construction. Reality means
u_hat(-k, p) = conj(u_hat(k, p)); the polarization vectors are shared
between k and -k so this holds per conjugate pair.

Internally most numerics run on *real coordinates* with respect to the
H^0-orthonormal real basis

    mode (k, p), k "positive"  ->  sqrt(2) eps_p(k) cos(2 pi k.x)
    mode (-k, p)               ->  sqrt(2) eps_p(k) sin(2 pi k.x)

so one complex conjugate pair of amplitudes maps to two real numbers and a
ModeSet of n modes spans an n-dimensional real space. Sobolev weights are
identical in both representations.
"""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi
SQRT2 = np.sqrt(2.0)


class ResolutionError(ValueError):
    """Grid too coarse for the requested mode set or operation."""


def _is_positive(k) -> bool:
    for c in k:
        if c != 0:
            return c > 0
    return False


def polarization(k) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal polarization pair for wavevector ``k``.

    Gram-Schmidt from (1, 0, 0), falling back to (0, 1, 0) when k is parallel
    to it. The pair only depends on +-k, computed from the positive
    representative.
    """
    k = np.asarray(k, dtype=float)
    if not _is_positive(k):
        k = -k
    khat = k / np.linalg.norm(k)
    ref = np.array([1.0, 0.0, 0.0])
    if abs(abs(khat @ ref) - 1.0) < 1e-12:
        ref = np.array([0.0, 1.0, 0.0])
    e1 = ref - (ref @ khat) * khat
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(khat, e1)
    e2 /= np.linalg.norm(e2)
    return e1, e2


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Ordered divergence-free Fourier modes with |k| <= K_max.

    Modes are sorted by eigenvalue lambda = 4 pi^2 |k|^2, ties broken
    lexicographically by (k1, k2, k3, p). Use :func:`build_mode_set` rather
    than constructing directly.
    """

    K_max: int
    k: np.ndarray = field(repr=False)  # (n, 3) int
    pol: np.ndarray = field(repr=False)  # (n,) in {1, 2}
    eps: np.ndarray = field(repr=False)  # (n, 3)
    lam: np.ndarray = field(repr=False)  # (n,)
    positive: np.ndarray = field(repr=False)  # (n,) bool, cos-type modes
    partner: np.ndarray = field(repr=False)  # index of (-k, p)
    closed_prefixes: tuple = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.pol)

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other):
        return isinstance(other, ModeSet) and other.K_max == self.K_max

    def __hash__(self):
        return hash(("ModeSet", self.K_max))

    @property
    def lambda1(self) -> float:
        return float(self.lam[0])

    @property
    def kpos(self) -> np.ndarray:
        """Positive representative of each mode's wavevector, shape (n, 3)."""
        return np.where(self.positive[:, None], self.k, -self.k)

    @functools.cached_property
    def wavevectors(self) -> np.ndarray:
        """Distinct wavevectors in first-appearance order, shape (W, 3)."""
        _, idx = np.unique(self.k, axis=0, return_index=True)
        return self.k[np.sort(idx)]

    @functools.cached_property
    def wavevector_index(self) -> np.ndarray:
        """For each mode, the row of :attr:`wavevectors` holding its k."""
        lookup = {tuple(w): i for i, w in enumerate(self.wavevectors)}
        return np.array([lookup[tuple(k)] for k in self.k])

    def is_closed_prefix(self, n: int) -> bool:
        return n in self.closed_prefixes

    def check_prefix(self, n: int) -> None:
        if not self.is_closed_prefix(n):
            raise ValueError(
                f"cutoff n={n} splits a conjugate pair; valid cutoffs near it: "
                f"{[c for c in self.closed_prefixes if abs(c - n) <= 24]}"
            )

    def hash_hex(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.k, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.pol, dtype="<i8").tobytes())
        return h.hexdigest()


@functools.lru_cache(maxsize=16)
def build_mode_set(K_max: int) -> ModeSet:
    """All modes with 0 < |k|^2 <= K_max^2, two polarizations each."""
    if int(K_max) != K_max or K_max < 1:
        raise ValueError(f"K_max must be an integer >= 1, got {K_max!r}")
    K = int(K_max)
    rng = range(-K, K + 1)
    ks = [
        (a, b, c)
        for a in rng
        for b in rng
        for c in rng
        if 0 < a * a + b * b + c * c <= K * K
    ]
    entries = sorted(
        ((a * a + b * b + c * c, a, b, c, p) for (a, b, c) in ks for p in (1, 2))
    )
    k = np.array([e[1:4] for e in entries], dtype=np.int64)
    pol = np.array([e[4] for e in entries], dtype=np.int64)
    k2 = np.array([e[0] for e in entries], dtype=np.int64)
    lam = (TWO_PI**2) * k2.astype(float)
    positive = np.array([_is_positive(kk) for kk in k])
    eps = np.empty((len(pol), 3))
    cache = {}
    for i, (kk, p) in enumerate(zip(k, pol)):
        key = tuple(kk) if positive[i] else tuple(-kk)
        if key not in cache:
            cache[key] = polarization(key)
        eps[i] = cache[key][p - 1]
    index = {(tuple(kk), int(p)): i for i, (kk, p) in enumerate(zip(k, pol))}
    partner = np.array([index[(tuple(-kk), int(p))] for kk, p in zip(k, pol)])

    prefixes = [0]
    open_pairs = 0
    for i in range(len(pol)):
        # a pair opens at its first member and closes at its second
        open_pairs += 1 if partner[i] > i else -1
        if open_pairs == 0:
            prefixes.append(i + 1)
    for arr in (k, pol, eps, lam, positive, partner):
        arr.setflags(write=False)
    return ModeSet(K, k, pol, eps, lam, positive, partner, tuple(prefixes))


def resolution_floor(modes: ModeSet) -> int:
    """Smallest grid that represents every retained mode without aliasing."""
    return 2 * modes.K_max + 1


def dealias_floor(modes: ModeSet) -> int:
    """Smallest grid on which quadratic products of retained modes are exact."""
    return 3 * modes.K_max + 1


# --------------------------------------------------------------------------
# coordinate conversions


def amp_to_coords(modes: ModeSet, amp: np.ndarray) -> np.ndarray:
    """Complex amplitudes (..., n) -> real H^0-orthonormal coordinates."""
    amp = np.asarray(amp)
    pos = modes.positive
    # value at a sin-type slot comes from its positive partner's amplitude
    src = np.where(pos, np.arange(modes.n), modes.partner)
    a = amp[..., src]
    return np.where(pos, SQRT2 * a.real, -SQRT2 * a.imag)


def coords_to_amp(modes: ModeSet, c: np.ndarray) -> np.ndarray:
    """Real coordinates (..., n) -> complex amplitudes satisfying reality."""
    c = np.asarray(c, dtype=float)
    pos = modes.positive
    cos_idx = np.where(pos, np.arange(modes.n), modes.partner)
    sin_idx = np.where(pos, modes.partner, np.arange(modes.n))
    a = (c[..., cos_idx] - 1j * c[..., sin_idx]) / SQRT2
    return np.where(pos, a, np.conj(a))


def derivative_coords(modes: ModeSet, c: np.ndarray, j: int) -> np.ndarray:
    """Coordinates of d/dx_j u given coordinates of u (exact, no grid)."""
    kj = TWO_PI * modes.kpos[:, j]
    sign = np.where(modes.positive, 1.0, -1.0)
    return (sign * kj) * c[..., modes.partner]


# --------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Divergence-free, mean-zero velocity field as polarized amplitudes."""

    modes: ModeSet
    amp: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amp, dtype=complex)
        if amp.shape != (self.modes.n,):
            raise ValueError(f"amplitude shape {amp.shape} != ({self.modes.n},)")
        object.__setattr__(self, "amp", amp)

    @classmethod
    def zeros(cls, modes: ModeSet) -> "SpectralField":
        return cls(modes, np.zeros(modes.n, dtype=complex))

    @classmethod
    def from_coords(cls, modes: ModeSet, c) -> "SpectralField":
        return cls(modes, coords_to_amp(modes, c))

    def coords(self) -> np.ndarray:
        return amp_to_coords(self.modes, self.amp)

    def vectors(self) -> np.ndarray:
        """Vector Fourier coefficient u_hat(k) per mode, shape (n, 3)."""
        return self.amp[:, None] * self.modes.eps

    def divergence_residual(self) -> float:
        """max over wavevectors of |k . u_hat(k)| with u_hat(k) summed over p."""
        m = self.modes
        W = len(m.wavevectors)
        vec = np.zeros((W, 3), dtype=complex)
        np.add.at(vec, m.wavevector_index, self.vectors())
        if W == 0:
            return 0.0
        return float(np.max(np.abs(np.einsum("wi,wi->w", m.wavevectors, vec))))

    def reality_residual(self) -> float:
        return float(np.max(np.abs(self.amp[self.modes.partner] - np.conj(self.amp)), initial=0.0))

    def _check_same(self, other):
        if not isinstance(other, SpectralField) or other.modes != self.modes:
            raise ValueError("fields live on different mode sets")

    def __add__(self, other):
        self._check_same(other)
        return SpectralField(self.modes, self.amp + other.amp)

    def __sub__(self, other):
        self._check_same(other)
        return SpectralField(self.modes, self.amp - other.amp)

    def __mul__(self, a):
        return SpectralField(self.modes, self.amp * a)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.modes, -self.amp)


@dataclass(frozen=True, eq=False)
class GridField:
    """Real velocity samples on a uniform G^3 grid, shape (3, G, G, G)."""

    values: np.ndarray

    @property
    def G(self) -> int:
        return self.values.shape[-1]


def basis_field(modes: ModeSet, i: int, normalization: str = "H0") -> SpectralField:
    """The i-th real basis field, normalized in H0, H1_full or H1_homog."""
    c = np.zeros(modes.n)
    lam = modes.lam[i]
    scale = {"H0": 1.0, "H1_full": 1.0 / np.sqrt(1.0 + lam), "H1_homog": 1.0 / np.sqrt(lam)}
    c[i] = scale[normalization]
    return SpectralField.from_coords(modes, c)


def random_field(modes: ModeSet, rng: np.random.Generator, amplitude: float = 1.0,
                 decay: float = 1.0, n: int | None = None) -> SpectralField:
    """Gaussian field with coordinate scale amplitude * (lambda/lambda_1)^(-decay/2)."""
    c = rng.standard_normal(modes.n) * amplitude * (modes.lam / modes.lambda1) ** (-decay / 2)
    if n is not None:
        modes.check_prefix(n)
        c[n:] = 0.0
    return SpectralField.from_coords(modes, c)


# --------------------------------------------------------------------------
# Leray projection


def project_vectors(modes: ModeSet, vhat: np.ndarray) -> np.ndarray:
    """Apply (I - k k^T / |k|^2) per wavevector; ``vhat`` is (W, 3)."""
    kw = modes.wavevectors.astype(float)
    vhat = np.asarray(vhat, dtype=complex)
    kv = np.einsum("wi,wi->w", kw, vhat) / np.einsum("wi,wi->w", kw, kw)
    return vhat - kv[:, None] * kw


def leray_project(modes: ModeSet, vhat, mean=None) -> SpectralField:
    """Leray-project raw vector coefficients onto polarized amplitudes.

    ``vhat`` has shape (W, 3), rows aligned with ``modes.wavevectors``.
    ``mean`` is the k = 0 coefficient, which must vanish if given.
    """
    vhat = np.asarray(vhat, dtype=complex)
    if vhat.shape != (len(modes.wavevectors), 3):
        raise ValueError(f"expected shape {(len(modes.wavevectors), 3)}, got {vhat.shape}")
    if mean is not None and np.any(np.abs(np.asarray(mean)) > 0):
        raise ValueError("nonzero k = 0 component: fields must be mean-zero")
    lookup = {tuple(w): i for i, w in enumerate(modes.wavevectors)}
    neg = np.array([lookup[tuple(-w)] for w in modes.wavevectors])
    scale = np.max(np.abs(vhat), initial=0.0)
    if np.max(np.abs(vhat[neg] - np.conj(vhat)), initial=0.0) > 1e-12 * max(scale, 1.0):
        raise ValueError("coefficients violate the reality constraint v(-k) = conj(v(k))")
    proj = project_vectors(modes, vhat)
    amp = np.einsum("ni,ni->n", modes.eps, proj[modes.wavevector_index])
    return SpectralField(modes, amp)


# --------------------------------------------------------------------------
# grid transforms


class GridTransform:
    """Dense real-basis synthesis/analysis between coordinates and a G^3 grid.

    ``phi`` has shape (3*G^3, n): column i samples basis field i. Synthesis is
    ``c @ phi.T`` and analysis ``f @ phi / G^3``; the latter equals DFT,
    truncation to the mode set and Leray projection in one step because the
    basis fields are divergence-free and discretely orthonormal for
    G >= 2 K_max + 1.
    """

    def __init__(self, modes: ModeSet, G: int):
        if G < resolution_floor(modes):
            raise ResolutionError(
                f"grid G={G} below resolution floor {resolution_floor(modes)} for K_max={modes.K_max}"
            )
        self.modes = modes
        self.G = int(G)
        self.P = self.G**3
        j = np.arange(self.G)
        J = np.stack(np.meshgrid(j, j, j, indexing="ij"), axis=0).reshape(3, -1)
        # phase index reduced mod G keeps +-k columns exactly consistent
        kdotj = np.mod(modes.kpos @ J, self.G)  # (n, P)
        theta = TWO_PI * kdotj / self.G
        wave = np.where(modes.positive[:, None], np.cos(theta), np.sin(theta)) * SQRT2
        phi = modes.eps.T[:, None, :] * wave.T[None, :, :]  # (3, P, n)
        self.phi = np.ascontiguousarray(phi.reshape(3 * self.P, modes.n))
        self.phiT = np.ascontiguousarray(self.phi.T)

    def synth(self, c: np.ndarray) -> np.ndarray:
        """Coordinates (..., n) -> grid values (..., 3, P)."""
        c = np.asarray(c, dtype=float)
        out = c.reshape(-1, self.modes.n) @ self.phiT
        return out.reshape(c.shape[:-1] + (3, self.P))

    def analyze(self, f: np.ndarray) -> np.ndarray:
        """Grid vector field (..., 3, P) -> projected coordinates (..., n)."""
        f = np.asarray(f, dtype=float)
        out = f.reshape(-1, 3 * self.P) @ self.phi
        return out.reshape(f.shape[:-2] + (self.modes.n,)) / self.P


@functools.lru_cache(maxsize=16)
def grid_transform(modes: ModeSet, G: int) -> GridTransform:
    return GridTransform(modes, G)


def to_physical(u: SpectralField, G: int, method: str = "dense") -> GridField:
    """Sample ``u`` on the G^3 grid of [0, 1)^3."""
    if method == "fft":
        vals, _ = _to_physical_fft(u, G)
        return GridField(vals)
    if method != "dense":
        raise ValueError(f"unknown transform method {method!r}")
    tr = grid_transform(u.modes, G)
    return GridField(tr.synth(u.coords()).reshape(3, G, G, G))


def to_spectral(g: GridField, modes: ModeSet, method: str = "dense") -> SpectralField:
    """Analyze grid samples onto ``modes`` (DFT, truncate, Leray-project)."""
    G = g.G
    if method == "fft":
        return _to_spectral_fft(g, modes)
    if method != "dense":
        raise ValueError(f"unknown transform method {method!r}")
    tr = grid_transform(modes, G)
    return SpectralField.from_coords(modes, tr.analyze(g.values.reshape(3, -1)))


def _fft_index(modes: ModeSet, G: int):
    if G < resolution_floor(modes):
        raise ResolutionError(f"grid G={G} below resolution floor {resolution_floor(modes)}")
    idx = np.mod(modes.k, G)
    return idx[:, 0], idx[:, 1], idx[:, 2]


def _to_physical_fft(u: SpectralField, G: int):
    i0, i1, i2 = _fft_index(u.modes, G)
    spec = np.zeros((3, G, G, G), dtype=complex)
    vec = u.vectors()
    for comp in range(3):
        np.add.at(spec[comp], (i0, i1, i2), vec[:, comp])
    vals = np.fft.ifftn(spec, axes=(1, 2, 3)) * G**3
    return vals.real.copy(), vals.imag


def _to_spectral_fft(g: GridField, modes: ModeSet) -> SpectralField:
    G = g.G
    i0, i1, i2 = _fft_index(modes, G)
    spec = np.fft.fftn(g.values, axes=(1, 2, 3)) / G**3
    vec = spec[:, i0, i1, i2].T  # (n, 3)
    return SpectralField(modes, np.einsum("ni,ni->n", modes.eps, vec))


def divergence_residual_coords(modes: ModeSet, c) -> np.ndarray:
    """Batched :meth:`SpectralField.divergence_residual` from coordinates (..., n)."""
    c = np.asarray(c, dtype=float)
    amp = coords_to_amp(modes, c)
    W = len(modes.wavevectors)
    onehot = np.zeros((modes.n, W))
    onehot[np.arange(modes.n), modes.wavevector_index] = 1.0
    # k . eps per mode is zero by construction; sum per wavevector, then dot with k
    vec = np.einsum("...n,ni,nw->...wi", amp, modes.eps, onehot)
    return np.max(np.abs(np.einsum("wi,...wi->...w", modes.wavevectors, vec)), axis=-1, initial=0.0)


def imag_residue_coords(modes: ModeSet, c, G: int | None = None) -> np.ndarray:
    """Batched :func:`imag_residue` from coordinates (..., n)."""
    G = resolution_floor(modes) if G is None else G
    c = np.asarray(c, dtype=float)
    amp = coords_to_amp(modes, c)
    i0, i1, i2 = _fft_index(modes, G)
    flat = np.ravel_multi_index((i0, i1, i2), (G, G, G))
    scatter = np.zeros((modes.n, G**3))
    scatter[np.arange(modes.n), flat] = 1.0
    vec = amp[..., None, :] * modes.eps.T  # (..., 3, n)
    spec = vec @ scatter  # (..., 3, G^3); polarizations of one k accumulate
    vals = np.fft.ifftn(spec.reshape(c.shape[:-1] + (3, G, G, G)), axes=(-3, -2, -1)) * G**3
    axes = tuple(range(-4, 0))
    scale = np.max(np.abs(vals.real), axis=axes, initial=0.0)
    top = np.max(np.abs(vals.imag), axis=axes, initial=0.0)
    return np.where(scale > 0, top / np.where(scale > 0, scale, 1.0), top)


def imag_residue(u: SpectralField, G: int | None = None) -> float:
    """Relative imaginary part of the complex-exponential synthesis of ``u``.

    Vanishes exactly when the amplitudes satisfy the reality constraint.
    """
    G = resolution_floor(u.modes) if G is None else G
    re, im = _to_physical_fft(u, G)
    scale = np.max(np.abs(re), initial=0.0)
    top = np.max(np.abs(im), initial=0.0)
    return float(top / scale) if scale > 0 else float(top)


# --------------------------------------------------------------------------
# norms and pairings


_SPACES = {"H0", "H1_full", "H1_homog"}


def _weights(lam, m, convention):
    if convention == "full":
        return (1.0 + lam) ** m
    if convention == "homogeneous":
        return lam**m
    raise ValueError(f"convention must be 'full' or 'homogeneous', got {convention!r}")


def sobolev_norm(u: SpectralField, m: int, convention: str = "full") -> float:
    if m < 0 or int(m) != m:
        raise ValueError("Sobolev order must be a nonnegative integer")
    w = _weights(u.modes.lam, m, convention)
    return float(np.sqrt(np.sum(w * np.abs(u.amp) ** 2)))


def sobolev_norm_coords(modes: ModeSet, c: np.ndarray, m: int, convention: str = "full") -> np.ndarray:
    """Batched Sobolev norm from real coordinates (..., n)."""
    w = _weights(modes.lam, m, convention)
    return np.sqrt(np.sum(w * np.asarray(c) ** 2, axis=-1))


def lp_norm(g: GridField, p) -> float:
    mag = np.sqrt(np.sum(g.values**2, axis=0))
    if p in (np.inf, "inf"):
        return float(mag.max())
    if p not in (2, 3, 4, 6):
        raise ValueError(f"unsupported exponent p={p!r}")
    return float(np.mean(mag**p) ** (1.0 / p))


def truncate(u: SpectralField, n: int) -> SpectralField:
    if n > u.modes.n or n < 0:
        raise ValueError(f"cutoff {n} outside [0, {u.modes.n}]")
    u.modes.check_prefix(n)
    amp = u.amp.copy()
    amp[n:] = 0.0
    return SpectralField(u.modes, amp)


def space_weights(modes: ModeSet, space: str) -> np.ndarray:
    if space == "H0":
        return np.ones(modes.n)
    if space == "H1_full":
        return 1.0 + modes.lam
    if space == "H1_homog":
        return modes.lam.copy()
    raise ValueError(f"space must be one of {sorted(_SPACES)}, got {space!r}")


def pairing(u: SpectralField, v: SpectralField, space: str = "H0") -> float:
    if u.modes != v.modes:
        raise ValueError("pairing requires fields on the same mode set")
    w = space_weights(u.modes, space)
    return float(np.sum(w * (u.amp * np.conj(v.amp)).real))
