"""Derivative flow, Malliavin directional derivative and the low/high-mode control.

All tangents are the exact derivatives of the discrete step map, integrated
along a stored base path (record stride 1 with snapshots) with the same dt:

    semi-implicit   w+ = Pi_n [w + dt (K(u, w) + Df(u) w) + DB(u)[w] dW + dt B(u) vdot] / (1 + lambda dt)

The derivative flow J v0 uses vdot = 0; the Malliavin derivative A vdot starts
from zero. Linearity in v0 and in vdot therefore holds for the scheme itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .coefficients import AdditiveNoiseMap
from .integrator import EnsembleRecord, SimConfig, Stepper, simulate_ensemble
from .spectral import SpectralField, basis_field

RAMP_GUARD = 1e-14


class MissingSnapshotsError(ValueError):
    """Tangent integration needs the base path at every step."""


def _base(traj):
    """(cfg, U (B, S+1, n), dW (B, S, d), single) from a record with stride-1 snapshots."""
    cfg = traj.cfg
    if traj.snapshots is None or cfg.stride != 1:
        raise MissingSnapshotsError("base path must be recorded with stride 1 and snapshots=True")
    if isinstance(traj, EnsembleRecord):
        return cfg, traj.snapshots, traj.increments, False
    return cfg, traj.snapshots[None], traj.increments[None], True


class TangentStepper:
    """Linearized step map of :class:`tamedns.integrator.Stepper` along a base state."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.base = Stepper(cfg)
        self.ops = self.base.ops
        self.lam = cfg.modes.lam

    def linear_part(self, c, w, dW):
        """dt (K(u,w) + Df(u) w) + DB(u)[w] dW, without the Stokes term."""
        cfg = self.cfg
        out = cfg.dt * (self.ops.K_operator(c, w) + self.ops.forcing_tangent(c, w))
        if cfg.noise == "multiplicative":
            out = out + self.ops.noise_tangent(c, w, dW)
        return out

    def advance(self, rhs, w):
        """Apply the Stokes part and Pi_n to ``w + rhs``."""
        if self.base.implicit:
            out = (w + rhs) / self.base.denom
        else:
            out = w + rhs - self.cfg.dt * self.lam * w
        return out * self.base.mask

    def forcing_input(self, c, vdot):
        """dt B(u) vdot (additive: dt Q vdot)."""
        return self.base.noise_term(c, self.cfg.dt * np.asarray(vdot, dtype=float))

    def __call__(self, c, w, dW, vdot=None):
        rhs = self.linear_part(c, w, dW)
        if vdot is not None:
            rhs = rhs + self.forcing_input(c, vdot)
        return self.advance(rhs, w)


@dataclass(frozen=True, eq=False)
class TangentSeries:
    times: np.ndarray
    values: np.ndarray  # (S+1, n) or (B, S+1, n)
    cfg: SimConfig

    def norms(self, convention: str = "homogeneous", m: int = 1):
        lam = self.cfg.modes.lam
        w = lam**m if convention == "homogeneous" else (1.0 + lam) ** m
        return np.sqrt(np.sum(w * self.values**2, axis=-1))

    def field(self, step: int = -1, path: int = 0) -> SpectralField:
        v = self.values if self.values.ndim == 2 else self.values[path]
        return SpectralField.from_coords(self.cfg.modes, v[step])


def _coords(v, shape):
    if isinstance(v, SpectralField):
        v = v.coords()
    return np.broadcast_to(np.asarray(v, dtype=float), shape).copy()


def derivative_flow(traj, v0) -> TangentSeries:
    """J_{0,t} v0 along the stored base path."""
    cfg, U, dW, single = _base(traj)
    ts = TangentStepper(cfg)
    B, S1, n = U.shape
    w = _coords(v0, (B, n)) * ts.base.mask
    out = np.empty((B, S1, n))
    out[:, 0] = w
    for s in range(S1 - 1):
        w = ts(U[:, s], w, dW[:, s])
        out[:, s + 1] = w
    return TangentSeries(np.arange(S1) * cfg.dt, out[0] if single else out, cfg)


def malliavin_derivative(traj, vdot_series) -> TangentSeries:
    """A_t vdot: response to the noise shift dW_s -> dW_s + vdot_s dt, A_0 = 0.

    ``vdot_series`` has shape (S, n_dir) (or (B, S, n_dir)), constant over each step.
    """
    cfg, U, dW, single = _base(traj)
    ts = TangentStepper(cfg)
    B, S1, n = U.shape
    vd = np.broadcast_to(np.asarray(vdot_series, dtype=float), (B, S1 - 1, cfg.n_dir))
    a = np.zeros((B, n))
    out = np.zeros((B, S1, n))
    for s in range(S1 - 1):
        a = ts(U[:, s], a, dW[:, s], vd[:, s])
        out[:, s + 1] = a
    return TangentSeries(np.arange(S1) * cfg.dt, out[0] if single else out, cfg)


# ----------------------------------------------------------------------------
# control construction


@dataclass(frozen=True, eq=False)
class ControlState:
    """Series of the control triple along a base path (arrays carry a path axis)."""

    cfg: SimConfig
    m: int
    times: np.ndarray  # (S+1,)
    v_low: np.ndarray  # (B, S+1, n)
    v_high: np.ndarray  # (B, S+1, n)
    vdot: np.ndarray  # (B, S, m)
    cost: np.ndarray  # (B, S+1) cumulative sum |vdot|^2 dt
    ramp_time: np.ndarray  # (B,)
    jacobian: np.ndarray | None = None  # J v0, (B, S+1, n)
    malliavin: np.ndarray | None = None  # A vdot, (B, S+1, n)

    @property
    def v(self):
        return self.v_low + self.v_high

    def h1(self, arr):
        lam = self.cfg.modes.lam
        return np.sqrt(np.sum(lam * arr**2, axis=-1))

    def residual(self):
        """|v(t) - (J v0 - A vdot)(t)|_{H^1 homog}, shape (B, S+1)."""
        if self.jacobian is None:
            raise ValueError("control was built without the tangent check")
        return self.h1(self.v - (self.jacobian - self.malliavin))


def build_control(traj, v0, m: int | None = None, check: bool = True) -> ControlState:
    """Low-mode ramp, co-integrated high modes and the control rate vdot.

    vdot = Q^{-1}[ v0_l 1{t < tau} / tau + Delta v_l + Pi_l (K(u, v) + Df(u) v) ],
    tau = 2 |v0_l|_{H^1}. With ``check`` the derivative flow and the Malliavin
    derivative of the assembled vdot are integrated in the same pass.
    """
    cfg, U, dW, _ = _base(traj)
    if cfg.noise != "additive":
        raise ValueError("the control construction needs additive low-mode noise")
    q = np.asarray(cfg.additive.q)
    m = cfg.additive.m if m is None else m
    if m != cfg.additive.m:
        raise ValueError(f"m={m} does not match the noise map (m={cfg.additive.m})")
    if not np.all(q > 0):
        raise ValueError("Q is not invertible on the low modes: some q_i = 0")
    modes = cfg.modes
    lam = modes.lam
    ts = TangentStepper(cfg)
    B, S1, n = U.shape
    dt = cfg.dt
    v0c = _coords(v0, (B, n)) * ts.base.mask
    low = np.zeros(n)
    low[:m] = 1.0
    high = ts.base.mask * (1.0 - low)
    v0l = v0c * low
    nl = np.sqrt(np.sum(lam * v0l**2, axis=-1))  # (B,)
    active = nl >= RAMP_GUARD
    tau = np.where(active, 2.0 * nl, 0.0)
    ramp_rate = np.where(active[:, None], v0l / np.where(active, tau, 1.0)[:, None], 0.0)
    qinv = np.sqrt(lam[:m]) / q  # H0 coordinates -> R^m

    times = np.arange(S1) * dt
    v_low = np.where(active[:, None, None],
                     v0l[:, None, :] * np.clip(1.0 - times[None, :, None] / np.where(active, tau, 1.0)[:, None, None], 0.0, None),
                     0.0)
    v_high = np.zeros((B, S1, n))
    vh = v0c * high
    v_high[:, 0] = vh
    vdot = np.zeros((B, S1 - 1, m))
    J = A = None
    if check:
        J = np.zeros((B, S1, n))
        A = np.zeros((B, S1, n))
        J[:, 0] = v0c
        jv = v0c.copy()
        av = np.zeros((B, n))
    for s in range(S1 - 1):
        c = U[:, s]
        v = v_low[:, s] + vh
        lin = ts.linear_part(c, v, dW[:, s])  # dt (K + Df) v
        on = (times[s] < tau)[:, None]
        bracket = np.where(on, ramp_rate, 0.0) - lam * v_low[:, s] + lin / dt
        vdot[:, s] = bracket[:, :m] * qinv
        vh = ts.advance(lin * high, vh) * high
        v_high[:, s + 1] = vh
        if check:
            jv = ts(c, jv, dW[:, s])
            av = ts(c, av, dW[:, s], vdot[:, s])
            J[:, s + 1] = jv
            A[:, s + 1] = av
    cost = np.concatenate([np.zeros((B, 1)), np.cumsum(np.sum(vdot**2, axis=-1) * dt, axis=1)], axis=1)
    return ControlState(cfg, m, times, v_low, v_high, vdot, cost, tau, J, A)


def high_projection(modes, c, m: int):
    """Zero the first m (low) coordinates."""
    out = np.array(c, dtype=float, copy=True)
    out[..., :m] = 0.0
    return out


def spectral_gap_ratio(modes, c, m: int):
    """|Delta P_h u|^2 / (lambda_{m+1} |grad P_h u|^2); at least 1 for every u with P_h u != 0."""
    lam = modes.lam
    h = high_projection(modes, c, m)
    num = np.sum((lam * h) ** 2, axis=-1)
    den = lam[m] * np.sum(lam * h * h, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, np.inf)


# ----------------------------------------------------------------------------
# experiments


def base_paths(cfg: SimConfig, u0, n_paths: int, path_offset: int = 0) -> EnsembleRecord:
    """Ensemble recorded at every step, as required by the tangent integrators."""
    cfg = cfg.with_(stride=1, snapshots=True)
    return simulate_ensemble(cfg, u0, path_ids=range(path_offset, path_offset + n_paths))


def fit_rate(times, values, t_min: float = 0.0):
    """Least-squares slope of 0.5 log(values) vs t (rate of the norm), with standard error."""
    t = np.asarray(times)
    y = 0.5 * np.log(np.asarray(values))
    sel = (t >= t_min) & np.isfinite(y)
    t, y = t[sel], y[sel]
    X = np.vstack([t, np.ones_like(t)]).T
    coef, res, *_ = np.linalg.lstsq(X, y, rcond=None)
    dof = max(len(t) - 2, 1)
    resid = y - X @ coef
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    return float(coef[0]), float(coef[1]), float(np.sqrt(cov[0, 0]))


def default_direction(modes, m: int) -> SpectralField:
    """(e_0 + e_m) / sqrt(2) with homogeneous-H^1-normalized basis fields."""
    e0 = basis_field(modes, 0, "H1_homog")
    if m >= modes.n:
        return e0
    return (e0 + basis_field(modes, m, "H1_homog")) * (1.0 / np.sqrt(2.0))


@dataclass(frozen=True, eq=False)
class DecayReport:
    m_values: tuple
    lambda_next: tuple
    rates: tuple
    rate_errors: tuple
    costs: tuple
    times: np.ndarray
    mean_vh_sq: dict  # m -> (S+1,)
    mean_v_sq: dict
    mean_cost: dict

    def to_csv(self) -> str:
        lines = ["m,t,E_vh_sq,E_v_sq,cost,fitted_rate"]
        for m, rate in zip(self.m_values, self.rates):
            for i, t in enumerate(self.times):
                lines.append(",".join([str(m), repr(float(t)), repr(float(self.mean_vh_sq[m][i])),
                                       repr(float(self.mean_v_sq[m][i])), repr(float(self.mean_cost[m][i])),
                                       repr(float(rate))]))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {
            "m": list(self.m_values),
            "lambda_next": [float(x) for x in self.lambda_next],
            "fitted_rate": [float(x) for x in self.rates],
            "rate_ci95": [[float(r - 1.96 * e), float(r + 1.96 * e)] for r, e in zip(self.rates, self.rate_errors)],
            "control_cost": [float(x) for x in self.costs],
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def highmode_decay_experiment(cfg: SimConfig, m_values, n_paths: int, T: float, u0=None,
                              v0=None, q: float | None = None, fit_from: float | None = None) -> DecayReport:
    """Fit the decay rate of E|v_h(t)|_{H^1}^2 for each low-mode count m.

    Each m uses uniform amplitudes q on its m low modes (default: the first
    amplitude of ``cfg.additive``). With ``cfg.noise == "none"`` the base path
    is noise-free and Q only enters through the control rate. The fitted rate
    is the slope of 0.5 log E|v_h|^2, the exponential rate of the norm, so pure
    heat flow on the first high mode gives -lambda_{m+1}. By default the fit
    starts once the low-mode ramp has finished (or at 0 if it outlasts 0.8 T),
    since the ramp keeps feeding the high modes through K while it runs.
    """
    modes = cfg.modes
    u0 = SpectralField.zeros(modes) if u0 is None else u0
    if q is None:
        q = cfg.additive.q[0] if cfg.additive is not None and cfg.additive.m else 1.0
    rates, errs, costs, lam_next = [], [], [], []
    vh_sq, v_sq, cost_t = {}, {}, {}
    times = None
    for m in m_values:
        sub = cfg.with_(T=T, noise="additive", additive=AdditiveNoiseMap.uniform(m, q))
        if cfg.noise == "none":
            base = _as_additive(base_paths(sub.with_(noise="none", additive=None), u0, 1), sub)
        else:
            base = base_paths(sub, u0, n_paths)
        direction = default_direction(modes, m) if v0 is None else v0
        ctl = build_control(base, direction, m, check=False)
        times = ctl.times
        vh_sq[m] = (ctl.h1(ctl.v_high) ** 2).mean(axis=0)
        v_sq[m] = (ctl.h1(ctl.v) ** 2).mean(axis=0)
        cost_t[m] = ctl.cost.mean(axis=0)
        start = fit_from
        if start is None:
            end = float(np.max(ctl.ramp_time))
            start = end if end < 0.8 * T else 0.0
        rate, _, err = fit_rate(times, vh_sq[m], start)
        rates.append(rate)
        errs.append(err)
        costs.append(float(cost_t[m][-1]))
        lam_next.append(float(modes.lam[m]))
    return DecayReport(tuple(m_values), tuple(lam_next), tuple(rates), tuple(errs), tuple(costs),
                       times, vh_sq, v_sq, cost_t)


def _as_additive(rec: EnsembleRecord, cfg: SimConfig) -> EnsembleRecord:
    """Reinterpret a noise-free path as an additive-noise path with zero increments."""
    S = rec.snapshots.shape[1] - 1
    return EnsembleRecord(cfg.with_(stride=1, snapshots=True), rec.times, rec.series, rec.path_ids,
                          rec.snapshots, np.zeros((len(rec.path_ids), S, cfg.additive.m)))


# ----------------------------------------------------------------------------
# gradient probe


@dataclass(frozen=True)
class GradientProbeResult:
    observable: str
    t: float
    fd_estimate: float
    fd_stderr: float
    bound: float
    bound_sup_term: float
    bound_grad_term: float
    mean_v_norm: float
    cost: float

    @property
    def dominated(self) -> bool:
        return abs(self.fd_estimate) <= self.bound + 3.0 * self.fd_stderr

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["dominated"] = self.dominated
        return d


def gradient_probe(phi, cfg: SimConfig, u0: SpectralField, t: float, n_paths: int,
                   v0=None, eps: float = 1e-4, path_offset: int = 0) -> GradientProbeResult:
    """Finite-difference <grad T_t phi(u0), v0> against the integration-by-parts bound.

    bound = |phi|_inf (E int |vdot|^2)^{1/2} + |grad phi|_inf E|v(t)|_{H^1}.
    """
    from .observables import Observable

    if not isinstance(phi, Observable) or phi.grad_sup is None:
        raise ValueError("gradient_probe needs a catalog observable with a declared gradient bound")
    if cfg.noise != "additive":
        raise ValueError("gradient_probe runs in additive noise mode")
    modes = cfg.modes
    v0 = default_direction(modes, cfg.additive.m) if v0 is None else v0
    sub = cfg.with_(T=t)
    base = base_paths(sub, u0, n_paths, path_offset)
    shifted = base_paths(sub, u0 + v0 * eps, n_paths, path_offset)
    d = (phi(shifted.snapshots[:, -1]) - phi(base.snapshots[:, -1])) / eps
    fd = float(np.mean(d))
    se = float(np.std(d, ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0
    ctl = build_control(base, v0, check=False)
    vnorm = float(np.mean(ctl.h1(ctl.v[:, -1])))
    cost = float(np.mean(ctl.cost[:, -1]))
    sup_term = phi.sup * np.sqrt(cost)
    grad_term = phi.grad_sup * vnorm
    return GradientProbeResult(phi.name, float(t), fd, se, float(sup_term + grad_term),
                               float(sup_term), float(grad_term), vnorm, cost)
