"""Taming function g_N with viscosity fixed to one.

g_N vanishes below N, equals r - N above N + 1, and on [N, N + 1] follows
the quintic p(s) = 6 s^3 - 8 s^4 + 3 s^5 (s = r - N). The quintic matches
value, slope and curvature of both pieces, so g_N is C^2, and g_N'' is
supported in (N, N + 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

# p(s) = sum c_j s^j with p(0)=p'(0)=p''(0)=0, p(1)=p'(1)=1, p''(1)=0
_BLEND = np.array([0.0, 0.0, 0.0, 6.0, -8.0, 3.0])
_BLEND_D1 = np.polynomial.polynomial.polyder(_BLEND)
_BLEND_D2 = np.polynomial.polynomial.polyder(_BLEND, 2)
_polyval = np.polynomial.polynomial.polyval


@dataclass(frozen=True)
class TamingConfig:
    N: float = 1.0

    def __post_init__(self):
        if not self.N > 0:
            raise ValueError(f"taming threshold N must be positive, got {self.N}")


def taming_g(r, cfg: TamingConfig):
    r = np.asarray(r, dtype=float)
    s = r - cfg.N
    out = np.where(s >= 1.0, s, _polyval(np.clip(s, 0.0, 1.0), _BLEND))
    return np.where(s <= 0.0, 0.0, out)


def taming_g_prime(r, cfg: TamingConfig):
    r = np.asarray(r, dtype=float)
    s = r - cfg.N
    out = np.where(s >= 1.0, 1.0, _polyval(np.clip(s, 0.0, 1.0), _BLEND_D1))
    return np.where(s <= 0.0, 0.0, out)


def taming_g_second(r, cfg: TamingConfig):
    r = np.asarray(r, dtype=float)
    s = r - cfg.N
    inside = (s > 0.0) & (s < 1.0)
    return np.where(inside, _polyval(np.clip(s, 0.0, 1.0), _BLEND_D2), 0.0)


def blend_max_slope() -> float:
    """max g_N' over [N, N + 1]; the Lipschitz constant of g_N (N-independent)."""
    res = minimize_scalar(lambda s: -_polyval(s, _BLEND_D1), bounds=(0.0, 1.0),
                          method="bounded", options={"xatol": 1e-14})
    return float(max(-res.fun, 1.0))


def blend_min_slope() -> float:
    res = minimize_scalar(lambda s: _polyval(s, _BLEND_D1), bounds=(0.0, 1.0),
                          method="bounded", options={"xatol": 1e-14})
    return float(min(res.fun, 0.0))


def blend_excess() -> float:
    """max over r of (r - N) - g_N(r), attained inside the blend window.

    With e = blend_excess(), g_N(r) >= r - N - e for all r >= 0, hence
    g_N(r) r >= r^2 - (N + e) r.
    """
    res = minimize_scalar(lambda s: _polyval(s, _BLEND) - s, bounds=(0.0, 1.0),
                          method="bounded", options={"xatol": 1e-14})
    return float(-res.fun)


def quartic_energy_constant(cfg: TamingConfig) -> float:
    """Constant C with <A(u), u> <= -|grad u|^2 - |u|_{L4}^4 + C N |u|^2."""
    return 1.0 + blend_excess() / cfg.N
