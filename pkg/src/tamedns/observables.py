"""Bounded observables with closed-form sup and gradient bounds.

Cylindrical observables depend on at most four mode coordinates taken with
respect to the homogeneous-H^1-orthonormal basis, x_i = <u, e_i>_{H^1}, so
their gradient bound is stated in the dual of homogeneous H^1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spectral import ModeSet

# bump chi(s) = (1 - s^2)^3 on |s| < 1; sup |chi'| at s = 1/sqrt(5)
BUMP_SLOPE = 96.0 / (25.0 * np.sqrt(5.0))


def bump(s):
    s = np.asarray(s, dtype=float)
    return np.where(np.abs(s) < 1.0, (1.0 - s * s) ** 3, 0.0)


def bump_prime(s):
    s = np.asarray(s, dtype=float)
    return np.where(np.abs(s) < 1.0, -6.0 * s * (1.0 - s * s) ** 2, 0.0)


def h1_coords(modes: ModeSet, c):
    """x_i = <u, e_i>_{H^1 homog} = sqrt(lambda_i) c_i."""
    return np.sqrt(modes.lam) * np.asarray(c)


@dataclass(frozen=True)
class Observable:
    """phi(c) on batched coordinates with declared sup |phi| and sup |grad phi|."""

    name: str
    func: Callable = field(repr=False)
    sup: float
    grad_sup: float | None
    grad: Callable | None = field(default=None, repr=False)
    description: str = ""

    def __call__(self, c):
        return self.func(np.asarray(c, dtype=float))


def const(value: float = 1.0) -> Observable:
    return Observable("const", lambda c: np.full(c.shape[:-1], float(value)), abs(value), 0.0,
                      lambda c: np.zeros_like(c), "constant")


def bump_mode(modes: ModeSet, i: int, rho: float = 1.0) -> Observable:
    """chi(x_i / rho)."""
    s = np.sqrt(modes.lam[i])

    def g(c):
        out = np.zeros_like(c)
        out[..., i] = bump_prime(s * c[..., i] / rho) * s / rho
        return out

    return Observable(f"bump_mode[{i}]", lambda c: bump(s * c[..., i] / rho), 1.0, BUMP_SLOPE / rho, g,
                      f"bump of the H1 coordinate of mode {i}, width {rho}")


def bump_radial(modes: ModeSet, idx, rho: float = 1.0) -> Observable:
    """chi(|(x_i)_{i in idx}| / rho) over up to four modes."""
    idx = np.asarray(idx, dtype=int)
    label = [int(i) for i in idx]
    if not 1 <= len(idx) <= 4:
        raise ValueError("cylindrical observables use between 1 and 4 modes")
    s = np.sqrt(modes.lam[idx])

    def f(c):
        return bump(np.sqrt(np.sum((s * c[..., idx]) ** 2, axis=-1)) / rho)

    def g(c):
        x = s * c[..., idx]
        r = np.sqrt(np.sum(x * x, axis=-1))
        # d/dx chi(r/rho) = chi'(r/rho) x / (r rho); bump_prime(s)/s = -6 (1-s^2)^2
        q = r / rho
        fac = np.where(q < 1.0, -6.0 * (1.0 - q * q) ** 2, 0.0) / rho**2
        out = np.zeros_like(c)
        out[..., idx] = (fac[..., None] * x) * s
        return out

    return Observable(f"bump_radial{label}", f, 1.0, BUMP_SLOPE / rho, g,
                      f"bump of the H1 norm over modes {label}, width {rho}")


def sin_mode(modes: ModeSet, i: int, rho: float = 1.0) -> Observable:
    """sin(x_i / rho)."""
    s = np.sqrt(modes.lam[i])

    def g(c):
        out = np.zeros_like(c)
        out[..., i] = np.cos(s * c[..., i] / rho) * s / rho
        return out

    return Observable(f"sin_mode[{i}]", lambda c: np.sin(s * c[..., i] / rho), 1.0, 1.0 / rho, g,
                      f"sine of the H1 coordinate of mode {i}, scale {rho}")


def capped_energy(cap: float = 1.0) -> Observable:
    """min(|u|_{H^0}^2, cap)."""
    return Observable("capped_energy", lambda c: np.minimum(np.sum(c * c, axis=-1), cap), cap, None,
                      None, f"H0 energy capped at {cap}")


def taming_fraction(ops) -> Observable:
    """Grid fraction where |u|^2 exceeds the taming threshold."""
    return Observable("taming_fraction", lambda c: ops.state_diagnostics(c)[1], 1.0, None, None,
                      "fraction of grid points with |u|^2 > N")


@dataclass(frozen=True)
class ObservableSet:
    items: tuple

    def names(self):
        return [o.name for o in self.items]

    def evaluate(self, c) -> dict:
        return {o.name: o(c) for o in self.items}

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)


def default_catalog(modes: ModeSet, ops=None, rho: float = 0.5, cap: float = 1.0) -> ObservableSet:
    """Catalog used by the invariant-measure experiments."""
    items = [
        bump_mode(modes, 0, rho),
        bump_mode(modes, 1, rho),
        bump_radial(modes, [0, 1, 2, 3], rho),
        sin_mode(modes, 2, rho),
        capped_energy(cap),
    ]
    if ops is not None:
        items.append(taming_fraction(ops))
    return ObservableSet(tuple(items))


def gradient_catalog(modes: ModeSet, rho: float = 0.5) -> dict:
    """Observables allowed in the gradient probe (all with closed-form gradient bounds)."""
    return {
        "const": const(1.0),
        "bump_mode": bump_mode(modes, 0, rho),
        "bump_radial": bump_radial(modes, [0, 1, 2, 3], rho),
        "sin_mode": sin_mode(modes, 0, rho),
    }
