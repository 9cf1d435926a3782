"""Invariant-measure experiments and the explicit comparison bound.

kb_average         time averages after burn-in with batch-means error bars
moment_audit       linear-in-t growth of E|u|^2 + int E|u|_{H^1}^2 + int E|u|_{L^4}^4
exp_moment_probe   E exp(eta int_0^T N(u) ds) with overflow capping
support_probe      deterministic shifted system v' = A(v + w) + P f(v + w)
comparison_bound   closed-form bound for phi' <= -C0 phi + C1 eps phi^p + C2 eps + C3
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .integrator import EnsembleRecord, SimConfig, Stepper, _check_finite, simulate_ensemble
from .observables import ObservableSet
from .spectral import SpectralField, basis_field

EXP_CAP = 700.0


def _linear_fit(t, y):
    """Slope, intercept and R^2 of a least-squares line."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return float(coef[0]), float(coef[1]), r2


def _cumtrapz(y, t):
    out = np.zeros_like(np.asarray(y, dtype=float))
    inc = 0.5 * (y[..., 1:] + y[..., :-1]) * np.diff(t)
    out[..., 1:] = np.cumsum(inc, axis=-1)
    return out


# ----------------------------------------------------------------------------
# Krylov-Bogoliubov averages


@dataclass(frozen=True, eq=False)
class KBReport:
    names: tuple
    means: dict
    stderr: dict
    n_batches: int
    n_samples: int
    T_burn: float
    T_avg: float
    batch_means: dict = field(repr=False, default_factory=dict)

    def agrees_with(self, other: "KBReport", k: float = 3.0) -> dict:
        """Per observable: |mean_a - mean_b| <= k * combined standard error."""
        out = {}
        for name in self.names:
            se = np.hypot(self.stderr[name], other.stderr[name])
            out[name] = bool(abs(self.means[name] - other.means[name]) <= k * se)
        return out

    def summary(self) -> dict:
        return {
            "T_burn": self.T_burn,
            "T_avg": self.T_avg,
            "n_batches": self.n_batches,
            "n_samples": self.n_samples,
            "means": {k: float(v) for k, v in self.means.items()},
            "stderr": {k: float(v) for k, v in self.stderr.items()},
        }

    def to_csv(self) -> str:
        lines = ["observable,mean,stderr"]
        for name in self.names:
            lines.append(f"{name},{float(self.means[name])!r},{float(self.stderr[name])!r}")
        return "\n".join(lines) + "\n"


def kb_average(cfg: SimConfig, u0: SpectralField, T_burn: float | None, T_avg: float,
               observables: ObservableSet, n_batches: int = 16, sample_every: int = 5,
               n_paths: int = 1, path_offset: int = 0) -> KBReport:
    """Time averages of each observable over [T_burn, T_burn + T_avg] with batch means.

    ``T_burn`` defaults to T_avg / 2. Samples are taken every ``sample_every``
    steps; with ``n_paths > 1`` each batch mean also averages over paths.
    """
    if n_batches < 8:
        raise ValueError("use at least 8 batches")
    T_burn = T_avg / 2 if T_burn is None else T_burn
    burn_steps = int(round(T_burn / cfg.dt))
    avg_steps = int(round(T_avg / cfg.dt))
    run = cfg.with_(T=(burn_steps + avg_steps) * cfg.dt, stride=sample_every, snapshots=True)
    rec = simulate_ensemble(run, u0, path_ids=range(path_offset, path_offset + n_paths))
    steps = np.round(rec.times / cfg.dt).astype(int)
    sel = steps > burn_steps
    snaps = rec.snapshots[:, sel]  # (B, S, n)
    S = snaps.shape[1]
    if S < n_batches:
        raise ValueError("too few samples for the requested number of batches")
    per = S // n_batches
    snaps = snaps[:, S - per * n_batches:]
    means, ses, bms = {}, {}, {}
    for obs in observables:
        vals = np.asarray(obs(snaps))  # (B, S')
        bm = vals.reshape(vals.shape[0], n_batches, per).mean(axis=(0, 2))
        means[obs.name] = float(np.mean(vals))
        ses[obs.name] = float(np.std(bm, ddof=1) / np.sqrt(n_batches))
        bms[obs.name] = bm
    return KBReport(tuple(observables.names()), means, ses, n_batches, per * n_batches * n_paths,
                    float(T_burn), float(T_avg), bms)


# ----------------------------------------------------------------------------
# moment audit


@dataclass(frozen=True, eq=False)
class MomentAudit:
    times: np.ndarray
    energy: np.ndarray  # E|u(t)|_{H^0}^2
    int_h1: np.ndarray  # int_0^t E|u|_{H^1}^2
    int_l4: np.ndarray  # int_0^t E|u|_{L^4}^4
    total: np.ndarray
    slope: float
    intercept: float
    r2: float
    window: tuple
    nondecreasing: bool
    passed: bool

    def summary(self) -> dict:
        return {"fitted_C": self.slope, "intercept": self.intercept, "r2": self.r2,
                "window": list(self.window), "nondecreasing": self.nondecreasing,
                "passed": self.passed, "max_energy": float(np.max(self.energy))}

    def to_csv(self) -> str:
        lines = ["t,E_h0_sq,int_E_h1_sq,int_E_l4_4,total"]
        for row in zip(self.times, self.energy, self.int_h1, self.int_l4, self.total):
            lines.append(",".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"


def moment_audit(rec: EnsembleRecord, window=(5.0, 20.0), r2_min: float = 0.95,
                 convention: str = "full") -> MomentAudit:
    """Left side of the linear-growth moment bound from ensemble averages."""
    t = rec.times
    h1 = rec.series["h1_full" if convention == "full" else "h1_homog"]
    energy = np.mean(rec.series["h0"] ** 2, axis=0)
    int_h1 = _cumtrapz(np.mean(h1**2, axis=0), t)
    int_l4 = _cumtrapz(np.mean(rec.series["l4_4"], axis=0), t)
    total = energy + int_h1 + int_l4
    sel = (t >= window[0]) & (t <= window[1])
    nondec = bool(np.all(np.diff(int_h1) >= 0) and np.all(np.diff(int_l4) >= 0))
    if np.all(total == 0):
        slope, icpt, r2 = 0.0, 0.0, 1.0
    else:
        slope, icpt, r2 = _linear_fit(t[sel], total[sel])
    passed = nondec and (np.all(total == 0) or r2 > r2_min)
    return MomentAudit(t, energy, int_h1, int_l4, total, slope, icpt, r2, tuple(window), nondec, bool(passed))


# ----------------------------------------------------------------------------
# exponential moments


@dataclass(frozen=True, eq=False)
class ExpMomentReport:
    eta: float
    times: np.ndarray
    log_estimate: np.ndarray  # log E exp(eta int_0^t N)
    log_terminal: np.ndarray  # log E exp(eta |u(t)|_{H^1}^2)
    rel_variance: np.ndarray
    saturated: np.ndarray  # count of capped exponents per time
    slope: float
    r2: float
    heavy_tail: bool

    def summary(self) -> dict:
        return {"eta": self.eta, "slope": self.slope, "r2": self.r2, "heavy_tail": self.heavy_tail,
                "saturated_total": int(np.sum(self.saturated)),
                "max_rel_variance": float(np.max(self.rel_variance))}

    def to_csv(self) -> str:
        lines = ["t,log_E_exp_int_N,log_E_exp_h1_sq,rel_variance,saturated"]
        for row in zip(self.times, self.log_estimate, self.log_terminal, self.rel_variance, self.saturated):
            lines.append(",".join(repr(float(x)) for x in row[:-1]) + f",{int(row[-1])}")
        return "\n".join(lines) + "\n"


def _log_mean_exp(x):
    """log of the mean of exp(x) along axis 0, stable, with x already capped."""
    mx = np.max(x, axis=0)
    return mx + np.log(np.mean(np.exp(x - mx), axis=0))


def exp_moment_probe(rec: EnsembleRecord, eta: float, window=None) -> ExpMomentReport:
    """Monte Carlo E exp{eta int_0^t N(u(s)) ds} and E exp{eta |u(t)|_{H^1}^2} along t."""
    t = rec.times
    integral = _cumtrapz(rec.series["cN"], t)  # (B, R)
    arg = eta * integral
    sat = np.sum(arg > EXP_CAP, axis=0)
    arg = np.minimum(arg, EXP_CAP)
    log_est = _log_mean_exp(arg)
    term = np.minimum(eta * rec.series["h1_homog"] ** 2, EXP_CAP)
    log_term = _log_mean_exp(term)
    # relative variance of the estimator's samples: Var(X) / E[X]^2
    mx = np.max(arg, axis=0)
    w = np.exp(arg - mx)
    rel_var = np.var(w, axis=0) / np.maximum(np.mean(w, axis=0) ** 2, 1e-300)
    heavy = bool(np.any(rel_var > 1.0))
    if heavy:
        warnings.warn("exponential-moment estimator relative variance exceeds 1 (heavy tail)",
                      RuntimeWarning, stacklevel=2)
    if window is None:
        sel = t > 0
    else:
        sel = (t >= window[0]) & (t <= window[1])
    if eta == 0 or np.all(log_est[sel] == log_est[sel][0]):
        slope, r2 = 0.0, 1.0
    else:
        slope, _, r2 = _linear_fit(t[sel], log_est[sel])
    return ExpMomentReport(float(eta), t, log_est, log_term, rel_var, sat, slope, r2, heavy)


# ----------------------------------------------------------------------------
# support probe


@dataclass(frozen=True, eq=False)
class SupportReport:
    times: np.ndarray
    h1: np.ndarray  # |u(t)|_{H^1} homogeneous
    h0: np.ndarray
    w_h6: float  # sup_t |w(t)|_{H^6}, full convention
    r1: float
    r2: float
    T_found: float | None
    envelope_ok: bool

    @property
    def found(self) -> bool:
        return self.T_found is not None

    def summary(self) -> dict:
        return {"r1": self.r1, "r2": self.r2, "T_found": self.T_found, "sup_w_H6": self.w_h6,
                "initial_h1": float(self.h1[0]), "final_h1": float(self.h1[-1]),
                "envelope_ok": self.envelope_ok}

    def to_csv(self) -> str:
        lines = ["t,h1_homog,h0"]
        for row in zip(self.times, self.h1, self.h0):
            lines.append(",".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"


def noise_path(cfg: SimConfig, kind: str, eps: float, period: float = 1.0):
    """Prescribed path w(t) with sup_t |w(t)|_{H^6} < eps (full weights).

    ``zero`` gives w = 0; ``sinusoid`` gives w(t) = a sin(2 pi t / period) e_0
    with a chosen so the H^6 bound is eps / 2.
    """
    modes = cfg.modes
    if kind == "zero":
        return lambda t: np.zeros(modes.n), 0.0
    if kind != "sinusoid":
        raise ValueError(f"unknown noise path {kind!r}")
    e = basis_field(modes, 0, "H0").coords()
    a = 0.5 * eps / np.sqrt((1.0 + modes.lam[0]) ** 6)
    return (lambda t: a * np.sin(2.0 * np.pi * t / period) * e), float(a * np.sqrt((1.0 + modes.lam[0]) ** 6))


def support_probe(cfg: SimConfig, u0: SpectralField, r1: float, r2: float, T_max: float,
                  eps: float = 1e-3, path: str = "zero", period: float = 1.0) -> SupportReport:
    """Integrate v' = A(v + w) + P f(v + w) for a prescribed path w and set u = v + w.

    The shifted system is integrated semi-implicitly. The search returns the
    first step time at which the homogeneous H^1 norm of u drops to r2.
    """
    modes = cfg.modes
    lam = modes.lam
    h1_0 = float(np.sqrt(np.sum(lam * u0.coords() ** 2)))
    if h1_0 > r1 * (1 + 1e-12):
        raise ValueError(f"|u0|_H1 = {h1_0} exceeds r1 = {r1}")
    run = cfg.with_(noise="none", additive=None, T=T_max)
    stepper = Stepper(run)
    ops = stepper.ops
    wfun, w_h6 = noise_path(run, path, eps, period)
    dt = run.dt
    S = run.n_steps
    v = u0.coords() - wfun(0.0)
    times = np.arange(S + 1) * dt
    h1 = np.empty(S + 1)
    h0 = np.empty(S + 1)
    found = None
    for s in range(S + 1):
        u = v + wfun(s * dt)
        h1[s] = np.sqrt(np.sum(lam * u * u))
        h0[s] = np.sqrt(np.sum(u * u))
        if found is None and h1[s] <= r2:
            found = float(times[s])
        if s == S:
            break
        w = wfun(s * dt)
        rhs = v + dt * (ops.nonlinear_and_forcing(v + w) - lam * w)
        v = stepper.mask * rhs / stepper.denom
        _check_finite(v, (s + 1) * dt, s + 1)
    # heat envelope |u(t)|_{H^0} <= |u0|_{H^0} (1 + lambda_1 dt)^{-t/dt}, the scheme's
    # counterpart of exp(-lambda_1 t); checked for the zero path
    env = h0[0] * (1.0 + modes.lambda1 * dt) ** (-np.arange(S + 1))
    envelope_ok = bool(np.all(h0 <= env * (1 + 1e-9) + 1e-15)) if path == "zero" else True
    return SupportReport(times, h1, h0, w_h6, float(r1), float(r2), found, envelope_ok)


# ----------------------------------------------------------------------------
# comparison bound


def comparison_bound(r0, C0, C1, C2, C3, p, T, eps) -> float:
    """Upper bound on phi(T) for phi' <= -C0 phi + C1 eps phi^p + C2 eps + C3, phi(0) = r0.

    With a(T) = (C2 eps + C3)(e^{C0 T} - 1)/C0,

        phi(T) <= e^{-C0 T} [ (r0 + a(T))^{1-p} + C1 (1-p) eps T ]^{1/(1-p)}.

    Returns ``inf`` when the bracket is nonpositive (the bound breaks down in
    finite time).
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    if min(C0, C1, C2, C3) < 0 or C0 == 0:
        raise ValueError("constants must be nonnegative with C0 > 0")
    T = np.asarray(T, dtype=float)
    src = C2 * eps + C3
    if src == 0:
        a = np.zeros_like(T)
    else:
        with np.errstate(over="ignore"):
            a = src * np.expm1(C0 * T) / C0
    base = r0 + a
    with np.errstate(divide="ignore"):
        bracket = np.where(base > 0, base ** (1.0 - p), np.inf) + C1 * (1.0 - p) * eps * T
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(bracket > 0, np.exp(-C0 * T) * bracket ** (1.0 / (1.0 - p)), np.inf)
    val = np.where(base > 0, val, 0.0)  # phi(0) = 0 with no source stays 0
    return float(val) if val.ndim == 0 else val


def comparison_eps0(R, C0, C1, C2, C3, p, T, n_grid: int = 200) -> float:
    """Largest eps (bisection in (0, 1)) with sup_{t <= T} bound(R, t) <= 2R + 2 C3/C0."""
    target = 2.0 * R + 2.0 * C3 / C0
    ts = np.linspace(0.0, T, n_grid)

    def ok(eps):
        return bool(np.all(comparison_bound(R, C0, C1, C2, C3, p, ts, eps) <= target))

    if not ok(1e-300):
        return 0.0
    lo, hi = 0.0, 1.0
    if ok(hi):
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def report_json(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
