"""Parametric coefficient families and the additive low-mode noise map.

Forcing      f(x, u)   = a_f psi(u) + F(x)
Transport    sigma_k(x) = s_k Phi_k(x)
State noise  h_k(x, u) = b_k psi(u) + c_k Phi_k(x)

with psi(u) = u / sqrt(1 + |u|^2). The profile Phi_k is real basis field k of
the global mode ordering, rescaled to unit sup-norm (eps cos or eps sin of a
single wavevector), so every smoothness constant has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import config as cfgfmt
from .spectral import SQRT2, TWO_PI, ModeSet, build_mode_set
from .taming import TamingConfig

SIGMA_BOUND = 0.25


class AssumptionViolation(ValueError):
    """A coefficient model breaks one of the structural assumptions."""

    def __init__(self, clause: str, message: str):
        super().__init__(f"{clause} violated: {message}")
        self.clause = clause


def psi(u):
    """u / sqrt(1 + |u|^2) for u of shape (3, ...)."""
    r2 = np.sum(u * u, axis=0)
    return u / np.sqrt(1.0 + r2)


def psi_jacobian_apply(u, v):
    """D psi(u) v for (3, ...) arrays."""
    r2 = np.sum(u * u, axis=0)
    s = 1.0 + r2
    return v / np.sqrt(s) - u * (np.sum(u * v, axis=0) / s**1.5)


def _psi_hessian_bound() -> float:
    # |d^2 psi| <= 3 rho (1+rho^2)^(-3/2) + 3 rho^3 (1+rho^2)^(-5/2), rho = |u|
    f = lambda r: -(3 * r / (1 + r * r) ** 1.5 + 3 * r**3 / (1 + r * r) ** 2.5)
    res = minimize_scalar(f, bounds=(0.0, 10.0), method="bounded", options={"xatol": 1e-12})
    return float(-res.fun)


PSI_LIPSCHITZ = 1.0
PSI_HESSIAN_BOUND = _psi_hessian_bound()


def _profile_table(count: int):
    """Wavevector (positive rep), polarization and cos/sin flag of profiles 0..count-1."""
    K = 1
    while True:
        modes = build_mode_set(K)
        if modes.n >= count:
            break
        K += 1
    return modes.kpos[:count].astype(float), modes.eps[:count], modes.positive[:count]


def profile_values(index, x):
    """Phi_k(x) for profiles ``index`` at points x of shape (3, P) -> (len, 3, P)."""
    index = np.atleast_1d(index)
    kp, eps, pos = _profile_table(int(index.max()) + 1 if index.size else 0)
    theta = TWO_PI * (kp[index] @ x)
    wave = np.where(pos[index][:, None], np.cos(theta), np.sin(theta))
    return eps[index][:, :, None] * wave[:, None, :]


def profile_gradients(index, x):
    """d_j Phi_k(x), shape (len, 3 [j], 3 [component], P)."""
    index = np.atleast_1d(index)
    kp, eps, pos = _profile_table(int(index.max()) + 1 if index.size else 0)
    theta = TWO_PI * (kp[index] @ x)
    dwave = np.where(pos[index][:, None], -np.sin(theta), np.cos(theta))
    return (TWO_PI * kp[index])[:, :, None, None] * eps[index][:, None, :, None] * dwave[:, None, None, :]


@dataclass(frozen=True)
class CoefficientModel:
    """Coefficients f, sigma, h; construction enforces sup_x |sigma(x)|_l2^2 <= 1/4."""

    a_f: float = 0.0
    F: tuple = ()  # ((mode index, H0 coordinate), ...)
    s: tuple = ()
    b: tuple = ()
    c: tuple = ()

    def __post_init__(self):
        K = len(self.s)
        b = tuple(float(x) for x in self.b) if self.b else (0.0,) * K
        c = tuple(float(x) for x in self.c) if self.c else (0.0,) * K
        if len(b) != K or len(c) != K:
            raise ValueError(f"s, b, c must have equal length (got {K}, {len(b)}, {len(c)})")
        object.__setattr__(self, "s", tuple(float(x) for x in self.s))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "F", tuple((int(i), float(v)) for i, v in self.F))
        if self.a_f < 0:
            raise ValueError("a_f must be nonnegative")
        if self.sigma_sup_sq > SIGMA_BOUND:
            raise AssumptionViolation(
                "sigma-sup-bound",
                f"sup_x |sigma(x)|_l2^2 = {self.sigma_sup_sq!r} exceeds 1/4",
            )

    @property
    def K_noise(self) -> int:
        return len(self.s)

    @property
    def sigma_sup_sq(self) -> float:
        # profiles have unit sup-norm, so this is sup_x sum_k s_k^2 |Phi_k(x)|^2
        # whenever the profiles peak together (always true for one direction
        # or a cos/sin pair), and an upper bound otherwise
        return float(sum(x * x for x in self.s))

    def forcing_coords(self, modes: ModeSet) -> np.ndarray:
        out = np.zeros(modes.n)
        for i, v in self.F:
            if i >= modes.n:
                raise ValueError(f"forcing mode {i} outside mode set of size {modes.n}")
            out[i] += v
        return out

    def is_zero_noise(self) -> bool:
        return not any(self.s) and not any(self.b) and not any(self.c)


@dataclass(frozen=True)
class AdditiveNoiseMap:
    """Q e_i = q_i e_i on the first m modes, e_i normalized in homogeneous H^1."""

    q: tuple = ()

    def __post_init__(self):
        q = tuple(float(x) for x in self.q)
        if any(x < 0 for x in q):
            raise ValueError("noise amplitudes q_i must be nonnegative")
        object.__setattr__(self, "q", q)

    @property
    def m(self) -> int:
        return len(self.q)

    @classmethod
    def uniform(cls, m: int, q: float) -> "AdditiveNoiseMap":
        return cls((q,) * m)

    def E0(self, modes: ModeSet) -> float:
        q = np.asarray(self.q)
        return float(np.sum(q**2 / modes.lam[: self.m]))

    def E1(self) -> float:
        return float(np.sum(np.asarray(self.q) ** 2))

    def coord_scale(self, modes: ModeSet) -> np.ndarray:
        """H^0 coordinate of Q e_i per unit Brownian increment, shape (m,)."""
        if self.m > modes.n:
            raise ValueError(f"m={self.m} exceeds mode count {modes.n}")
        return np.asarray(self.q) / np.sqrt(modes.lam[: self.m])

    def invertible(self) -> bool:
        return all(x > 0 for x in self.q)


# ----------------------------------------------------------------------------
# assumption validation


@dataclass(frozen=True)
class AssumptionReport:
    C_f: float
    C_sigma: float
    C_h: float
    H_f_L1: float
    H_h_L1: float
    sigma_sup_sq: float
    h_u_lipschitz_sq: float
    lp1_C: float
    lp1_offset: float
    samples: int = 0
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def validate_assumptions(model: CoefficientModel, n_samples: int = 10_000, seed: int = 0,
                         raise_on_violation: bool = True) -> AssumptionReport:
    """Closed-form constants for the model plus a sampled check of every inequality."""
    if model.sigma_sup_sq > SIGMA_BOUND:
        raise AssumptionViolation("sigma-sup-bound", f"sup |sigma|^2 = {model.sigma_sup_sq!r} > 1/4")
    K = model.K_noise
    s = np.asarray(model.s)
    b = np.asarray(model.b)
    c = np.asarray(model.c)
    a = model.a_f
    sum_b2 = float(np.sum(b * b))
    sum_c2 = float(np.sum(c * c))

    # F is a finite sum of basis fields in H0 coordinates
    nF = max((i for i, _ in model.F), default=-1) + 1
    if nF:
        kpF, _, _ = _profile_table(nF)
        lamF = TWO_PI**2 * np.sum(kpF**2, axis=1)
    F_L2 = sum(v * v for _, v in model.F)
    F_grad = sum(v * v * lamF[i] for i, v in model.F) if nF else 0.0

    C_f = max(2.0 * a * a, a)
    H_f_L1 = 2.0 * F_L2 + F_grad
    if K:
        kp, _, _ = _profile_table(K)
        lam_prof = TWO_PI**2 * np.sum(kp**2, axis=1)
        C_sigma = float(np.sqrt(np.max(np.sum((s[:, None] * TWO_PI * kp) ** 2, axis=0))))
    else:
        lam_prof = np.zeros(0)
        C_sigma = 0.0
    C_h = max(2.0 * sum_b2, np.sqrt(sum_b2) * PSI_LIPSCHITZ, np.sqrt(sum_b2) * PSI_HESSIAN_BOUND)
    H_h_L1 = float(np.sum(c * c * (1.0 + lam_prof / 2.0)))
    report = AssumptionReport(
        C_f=float(C_f), C_sigma=C_sigma, C_h=float(C_h), H_f_L1=float(H_f_L1), H_h_L1=H_h_L1,
        sigma_sup_sq=model.sigma_sup_sq, h_u_lipschitz_sq=sum_b2 * PSI_LIPSCHITZ**2,
        lp1_C=4.0 * sum_b2, lp1_offset=2.0 * sum_c2, samples=n_samples,
    )
    if n_samples:
        details = _sample_check(model, report, n_samples, seed)
        object.__setattr__(report, "details", details)
        bad = [k for k, v in details.items() if v > 0]
        if bad and raise_on_violation:
            raise AssumptionViolation(bad[0], f"sampled excess {details[bad[0]]:.3e}")
    return report


def _forcing_field(model, x):
    out = np.zeros_like(x)
    grad = np.zeros((3,) + x.shape)
    if model.F:
        idx = np.array([i for i, _ in model.F])
        # H0 basis field = sqrt(2) * unit-sup profile
        val = SQRT2 * np.array([v for _, v in model.F])
        out = np.einsum("k,kip->ip", val, profile_values(idx, x))
        grad = np.einsum("k,kjip->jip", val, profile_gradients(idx, x))
    return out, grad


def _sample_check(model: CoefficientModel, rep: AssumptionReport, n: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    x = rng.random((3, n))
    u = rng.standard_normal((3, n)) * 10.0 ** rng.uniform(-3, 2, n)
    v = u + rng.standard_normal((3, n)) * 10.0 ** rng.uniform(-4, 1, n)
    tol = 1e-12
    out = {}
    K = model.K_noise
    s, b, c = (np.asarray(t) for t in (model.s, model.b, model.c))

    if K:
        prof = profile_values(np.arange(K), x)  # (K, 3, n)
        dprof = profile_gradients(np.arange(K), x)  # (K, 3j, 3, n)
    else:
        prof = np.zeros((0, 3, n))
        dprof = np.zeros((0, 3, 3, n))
    sig2 = np.sum((s[:, None, None] * prof) ** 2, axis=(0, 1))
    out["sigma-sup-bound"] = float(np.max(sig2 - rep.sigma_sup_sq - tol, initial=0.0))
    dsig = np.sqrt(np.sum((s[:, None, None, None] * dprof) ** 2, axis=(0, 2)))  # (3j, n)
    out["sigma-gradient"] = float(np.max(dsig - rep.C_sigma - tol, initial=0.0))

    Fx, dFx = _forcing_field(model, x)
    f = model.a_f * psi(u) + Fx
    H_f = 2.0 * np.sum(Fx**2, axis=0) + np.sum(dFx**2, axis=(0, 1))
    lhs = np.max(np.sum(dFx**2, axis=1), axis=0) + np.sum(f * f, axis=0)
    r2 = np.sum(u * u, axis=0)
    out["forcing-growth"] = float(np.max(lhs - rep.C_f * r2 - H_f - tol * (1 + lhs), initial=0.0))
    eye = np.eye(3)
    jac_cols = np.stack([psi_jacobian_apply(u, np.broadcast_to(eye[j][:, None], u.shape)) for j in range(3)])
    col_norm = np.sqrt(np.sum(jac_cols**2, axis=1))  # |d psi / d u^j|
    out["forcing-u-derivative"] = float(np.max(model.a_f * col_norm - rep.C_f - tol, initial=0.0))

    h = b[:, None, None] * psi(u)[None] + c[:, None, None] * prof  # (K, 3, n)
    dh_x = c[:, None, None, None] * dprof  # (K, 3j, 3, n)
    H_h = 2.0 * np.sum((c[:, None, None] * prof) ** 2, axis=(0, 1)) + np.sum(dh_x**2, axis=(0, 1, 2))
    lhs = np.max(np.sum(dh_x**2, axis=(0, 2)), axis=0) + np.sum(h * h, axis=(0, 1))
    out["state-noise-growth"] = float(np.max(lhs - rep.C_h * r2 - H_h - tol * (1 + lhs), initial=0.0))
    dh_u = np.sqrt(np.sum(b * b)) * col_norm
    out["state-noise-u-derivative"] = float(np.max(dh_u - rep.C_h - tol, initial=0.0))
    out["state-noise-u-derivative-sq"] = float(np.max(dh_u**2 - rep.h_u_lipschitz_sq - tol, initial=0.0))
    jac_v = np.stack([psi_jacobian_apply(v, np.broadcast_to(eye[j][:, None], v.shape)) for j in range(3)])
    diff = np.sqrt(np.sum(b * b)) * np.sqrt(np.sum((jac_cols - jac_v) ** 2, axis=1))
    dist = np.sqrt(np.sum((u - v) ** 2, axis=0))
    out["state-noise-u-lipschitz"] = float(np.max(diff - rep.C_h * dist - tol, initial=0.0))
    return out


# ----------------------------------------------------------------------------
# config block


def to_config_block(model: CoefficientModel, taming: TamingConfig | None = None,
                    additive: AdditiveNoiseMap | None = None) -> str:
    entries = {
        "a_f": float(model.a_f),
        "F": [[i, v] for i, v in model.F],
        "K_noise": model.K_noise,
        "s": list(model.s),
        "b": list(model.b),
        "c": list(model.c),
    }
    if taming is not None:
        entries["N"] = float(taming.N)
    if additive is not None:
        entries["m"] = additive.m
        entries["q"] = list(additive.q)
    return cfgfmt.dump(entries)


def model_from_config(cfg: dict):
    """Build (CoefficientModel, TamingConfig | None, AdditiveNoiseMap | None) from parsed entries."""
    s = cfgfmt.get(cfg, "s", "floats", ())
    K = cfgfmt.get(cfg, "K_noise", int, len(s))
    if K != len(s):
        raise cfgfmt.ConfigError(f"K_noise={K} but s has {len(s)} entries", key="K_noise",
                                 line=cfg.get("_lines", {}).get("K_noise"))
    model = CoefficientModel(
        a_f=cfgfmt.get(cfg, "a_f", float, 0.0),
        F=cfgfmt.get(cfg, "F", "pairs", ()),
        s=s,
        b=cfgfmt.get(cfg, "b", "floats", ()),
        c=cfgfmt.get(cfg, "c", "floats", ()),
    )
    taming = TamingConfig(cfgfmt.get(cfg, "N", float)) if "N" in cfg else None
    additive = None
    if "q" in cfg:
        q = cfgfmt.get(cfg, "q", "floats")
        m = cfgfmt.get(cfg, "m", int, len(q))
        if len(q) == 1 and m > 1:
            q = q * m
        if len(q) != m:
            raise cfgfmt.ConfigError(f"m={m} but q has {len(q)} entries", key="q",
                                     line=cfg.get("_lines", {}).get("q"))
        additive = AdditiveNoiseMap(q)
    return model, taming, additive


def from_config_block(text: str):
    return model_from_config(cfgfmt.parse(text))
