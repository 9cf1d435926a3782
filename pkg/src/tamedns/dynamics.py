"""Tamed drift, forcing, noise operators and their linearizations.

Every kernel works on batched real coordinates ``c`` of shape (..., n) (see
:mod:`tamedns.spectral`) and evaluates products on a G^3 grid through the
dense transform. Analysis onto the mode set performs the Leray projection
and the truncation in one step.

    A(u)     = P Delta u - P((u . grad) u) - P(g_N(|u|^2) u)
    K(u, v)  = -P[(v . grad) u + (u . grad) v + g_N(|u|^2) v + 2 g_N'(|u|^2) (u . v) u]
    B(u) dW  = sum_k dW_k [P((sigma_k . grad) u) + P h_k(u)]
"""

from __future__ import annotations

import functools

import numpy as np

from .coefficients import (
    AdditiveNoiseMap,
    CoefficientModel,
    profile_values,
)
from .spectral import (
    ModeSet,
    ResolutionError,
    SpectralField,
    dealias_floor,
    derivative_coords,
    grid_transform,
    resolution_floor,
)
from .taming import TamingConfig, taming_g, taming_g_prime


class Operators:
    """Batched operator kernels for one (mode set, grid, taming, coefficients) tuple."""

    def __init__(self, modes: ModeSet, G: int, taming: TamingConfig | None = None,
                 model: CoefficientModel | None = None, advection: bool = True):
        if G < resolution_floor(modes):
            raise ResolutionError(
                f"grid G={G} below quadratic floor {resolution_floor(modes)} for K_max={modes.K_max}"
            )
        self.modes = modes
        self.G = int(G)
        self.taming = taming if taming is not None else TamingConfig()
        self.model = model if model is not None else CoefficientModel()
        self.use_advection = advection
        self.tr = grid_transform(modes, self.G)
        self.P = self.tr.P
        self._forcing = self.model.forcing_coords(modes)

    # -- grid helpers ----------------------------------------------------

    def require_dealias(self, what: str):
        if self.G < dealias_floor(self.modes):
            raise ResolutionError(
                f"{what} needs G >= {dealias_floor(self.modes)} for K_max={self.modes.K_max}, got G={self.G}"
            )

    def synth(self, c):
        return self.tr.synth(c)

    def analyze(self, f):
        return self.tr.analyze(f)

    def grad(self, c):
        """Grid values of d_j u_i, shape (..., 3 [j], 3 [i], P)."""
        c = np.asarray(c, dtype=float)
        d = np.stack([derivative_coords(self.modes, c, j) for j in range(3)], axis=-2)
        return self.tr.synth(d)

    @functools.cached_property
    def points(self) -> np.ndarray:
        """Grid coordinates, shape (3, P)."""
        j = np.arange(self.G) / self.G
        return np.stack(np.meshgrid(j, j, j, indexing="ij"), axis=0).reshape(3, -1)

    @functools.cached_property
    def profiles(self) -> np.ndarray:
        """Unit-sup noise profiles on the grid, shape (K_noise, 3, P)."""
        K = self.model.K_noise
        if K == 0:
            return np.zeros((0, 3, self.P))
        return profile_values(np.arange(K), self.points)

    # -- drift pieces ----------------------------------------------------

    def advection_grid(self, ug, gu):
        """(u . grad) u on the grid from values (..., 3, P) and gradients (..., 3, 3, P)."""
        return np.einsum("...jp,...jip->...ip", ug, gu)

    def advection(self, c):
        c = np.asarray(c, dtype=float)
        return self.analyze(self.advection_grid(self.synth(c), self.grad(c)))

    def taming_grid(self, ug):
        r = np.sum(ug * ug, axis=-2)
        if not np.any(r > self.taming.N):
            return np.zeros_like(ug)
        return taming_g(r, self.taming)[..., None, :] * ug

    def taming_term(self, c):
        self.require_dealias("taming term")
        return self.analyze(self.taming_grid(self.synth(c)))

    def nonlinear(self, c):
        """-P((u . grad) u) - P(g_N(|u|^2) u), one analysis pass."""
        self.require_dealias("tamed drift")
        c = np.asarray(c, dtype=float)
        ug = self.synth(c)
        f = self.taming_grid(ug)
        if self.use_advection:
            f = f + self.advection_grid(ug, self.grad(c))
        return -self.analyze(f)

    def drift_A(self, c):
        return -self.modes.lam * np.asarray(c, dtype=float) + self.nonlinear(c)

    def forcing(self, c):
        """P f(u) = a_f P psi(u) + F."""
        c = np.asarray(c, dtype=float)
        out = np.broadcast_to(self._forcing, c.shape).copy()
        if self.model.a_f:
            out += self.model.a_f * self.analyze(self._psi_grid(self.synth(c)))
        return out

    def _psi_grid(self, ug):
        r = np.sum(ug * ug, axis=-2, keepdims=True)
        return ug / np.sqrt(1.0 + r)

    def _dpsi_grid(self, ug, vg):
        r = np.sum(ug * ug, axis=-2, keepdims=True)
        s = 1.0 + r
        return vg / np.sqrt(s) - ug * (np.sum(ug * vg, axis=-2, keepdims=True) / s**1.5)

    def nonlinear_and_forcing(self, c):
        """Nonlinear drift plus P f(u), sharing the grid synthesis."""
        self.require_dealias("tamed drift")
        c = np.asarray(c, dtype=float)
        ug = self.synth(c)
        f = self.taming_grid(ug)
        if self.use_advection:
            f = f + self.advection_grid(ug, self.grad(c))
        if self.model.a_f:
            f = f - self.model.a_f * self._psi_grid(ug)
        return self._forcing - self.analyze(f)

    # -- linearizations --------------------------------------------------

    def K_operator(self, c, v):
        """K(u, v); ``v`` may carry extra leading batch axes over those of ``c``."""
        self.require_dealias("K operator")
        c = np.asarray(c, dtype=float)
        v = np.asarray(v, dtype=float)
        ug = self.synth(c)
        vg = self.synth(v)
        ug_b = np.broadcast_to(ug, vg.shape) if vg.ndim > ug.ndim else ug
        r = np.sum(ug * ug, axis=-2, keepdims=True)
        uv = np.sum(ug_b * vg, axis=-2, keepdims=True)
        f = taming_g(r, self.taming) * vg + 2.0 * taming_g_prime(r, self.taming) * uv * ug
        if self.use_advection:
            gu = self.grad(c)
            gv = self.grad(v)
            f = f + self.advection_grid(vg, gu) + self.advection_grid(ug, gv)
        return -self.analyze(f)

    def forcing_tangent(self, c, v):
        """D(P f)(u) v = a_f P(D psi(u) v)."""
        v = np.asarray(v, dtype=float)
        if not self.model.a_f:
            return np.zeros_like(v)
        return self.model.a_f * self.analyze(self._dpsi_grid(self.synth(c), self.synth(v)))

    # -- multiplicative noise --------------------------------------------

    def noise(self, c, dW):
        """sum_k B_k(u) dW_k; ``c`` is (..., n) and ``dW`` is (..., K_noise)."""
        m = self.model
        c = np.asarray(c, dtype=float)
        dW = np.asarray(dW, dtype=float)
        if dW.shape[-1:] != (m.K_noise,):
            raise ValueError(f"expected {m.K_noise} increments, got shape {dW.shape}")
        if m.K_noise == 0:
            return np.zeros(np.broadcast_shapes(c.shape, dW.shape[:-1] + (self.modes.n,)))
        prof = self.profiles
        f = np.einsum("...k,kip->...ip", dW * np.asarray(m.c), prof)
        beta = dW @ np.asarray(m.b)
        if np.any(beta):
            f = f + beta[..., None, None] * self._psi_grid(self.synth(c))
        ws = dW * np.asarray(m.s)
        if np.any(ws):
            sig = np.einsum("...k,kjp->...jp", ws, prof)
            f = f + np.einsum("...jp,...jip->...ip", sig, self.grad(c))
        return self.analyze(f)

    def noise_tangent(self, c, v, dW):
        """D_u[B(u) dW] v with the same batch conventions as :meth:`noise`."""
        m = self.model
        v = np.asarray(v, dtype=float)
        if m.K_noise == 0:
            return np.zeros_like(v)
        dW = np.asarray(dW, dtype=float)
        f = np.zeros(v.shape[:-1] + (3, self.P))
        beta = dW @ np.asarray(m.b)
        if np.any(beta):
            f = f + beta[..., None, None] * self._dpsi_grid(self.synth(c), self.synth(v))
        ws = dW * np.asarray(m.s)
        if np.any(ws):
            sig = np.einsum("...k,kjp->...jp", ws, self.profiles)
            f = f + np.einsum("...jp,...jip->...ip", sig, self.grad(v))
        return self.analyze(f)

    def noise_direction(self, c, k):
        e = np.zeros(self.model.K_noise)
        e[k] = 1.0
        return self.noise(c, e)

    # -- diagnostics ---------------------------------------------------------

    def energy_terms(self, c):
        """Return (<A(u),u>, |grad u|^2, int g_N(|u|^2)|u|^2) for coordinates ``c``."""
        self.require_dealias("energy terms")
        c = np.asarray(c, dtype=float)
        ug = self.synth(c)
        r = np.sum(ug * ug, axis=-2)
        tam = np.mean(taming_g(r, self.taming) * r, axis=-1)
        pair = np.sum(self.drift_A(c) * c, axis=-1)
        grad2 = np.sum(self.modes.lam * c * c, axis=-1)
        return pair, grad2, tam

    def state_diagnostics(self, c):
        """Grid scalars: L4^4, taming fraction, int |u|^2 |grad u|^2."""
        c = np.asarray(c, dtype=float)
        ug = self.synth(c)
        gu = self.grad(c)
        r = np.sum(ug * ug, axis=-2)
        l4 = np.mean(r * r, axis=-1)
        frac = np.mean(r > self.taming.N, axis=-1)
        ugrad = np.mean(r * np.sum(gu * gu, axis=(-3, -2)), axis=-1)
        return l4, frac, ugrad

    def cN(self, c):
        """N(u) = |u|_{H^2}^2 + | |u| |grad u| |_{L^2}^2 (homogeneous H^2)."""
        c = np.asarray(c, dtype=float)
        _, _, ugrad = self.state_diagnostics(c)
        return np.sum(self.modes.lam**2 * c * c, axis=-1) + ugrad

    def aliasing_residual(self, c, which: str = "taming"):
        """Relative grid energy of a product lost by projection and truncation."""
        c = np.asarray(c, dtype=float)
        ug = self.synth(c)
        if which == "taming":
            f = self.taming_grid(ug)
        elif which == "advection":
            f = self.advection_grid(ug, self.grad(c))
        else:
            raise ValueError(f"unknown product {which!r}")
        total = np.mean(np.sum(f * f, axis=-2), axis=-1)
        kept = np.sum(self.analyze(f) ** 2, axis=-1)
        return np.where(total > 0, (total - kept) / np.where(total > 0, total, 1.0), 0.0)

    def hs_norm_sq(self, c):
        """sum_k |B_k(u)|_{H^0}^2 over the retained noise directions."""
        return float(sum(np.sum(self.noise_direction(c, k) ** 2) for k in range(self.model.K_noise)))

    def hs_diff_sq(self, c, d):
        return float(sum(np.sum((self.noise_direction(c, k) - self.noise_direction(d, k)) ** 2)
                         for k in range(self.model.K_noise)))


def additive_coords(noise: AdditiveNoiseMap, modes: ModeSet) -> np.ndarray:
    """Coordinate scale of Q per Brownian direction, zero-padded to length n."""
    out = np.zeros(modes.n)
    out[: noise.m] = noise.coord_scale(modes)
    return out


# ----------------------------------------------------------------------------
# SpectralField-level API


@functools.lru_cache(maxsize=32)
def operators(modes: ModeSet, G: int, taming: TamingConfig | None = None,
              model: CoefficientModel | None = None, advection: bool = True) -> Operators:
    return Operators(modes, G, taming, model, advection)


def _wrap(u: SpectralField, c) -> SpectralField:
    return SpectralField.from_coords(u.modes, c)


def advection(u: SpectralField, G: int) -> SpectralField:
    """P((u . grad) u) truncated to the mode set of ``u``."""
    return _wrap(u, operators(u.modes, G).advection(u.coords()))


def taming_term(u: SpectralField, cfg: TamingConfig, G: int) -> SpectralField:
    """P(g_N(|u|^2) u) by grid quadrature."""
    return _wrap(u, operators(u.modes, G, cfg).taming_term(u.coords()))


def drift_A(u: SpectralField, cfg: TamingConfig, G: int) -> SpectralField:
    return _wrap(u, operators(u.modes, G, cfg).drift_A(u.coords()))


def forcing(u: SpectralField, model: CoefficientModel, G: int) -> SpectralField:
    return _wrap(u, operators(u.modes, G, None, model).forcing(u.coords()))


def noise_B(u: SpectralField, model: CoefficientModel, k: int, G: int) -> SpectralField:
    if not 0 <= k < model.K_noise:
        raise IndexError(f"noise direction {k} outside [0, {model.K_noise})")
    return _wrap(u, operators(u.modes, G, None, model).noise_direction(u.coords(), k))


def K_operator(u: SpectralField, v: SpectralField, cfg: TamingConfig, G: int) -> SpectralField:
    if u.modes != v.modes:
        raise ValueError("K_operator requires fields on the same mode set")
    return _wrap(u, operators(u.modes, G, cfg).K_operator(u.coords(), v.coords()))
