"""Euler-Maruyama time stepping of the Galerkin SDE with reproducible noise.

The semi-implicit scheme treats the Stokes part implicitly, mode by mode:

    c+ = Pi_n [ (c + dt (NL(c) + P f(c)) + noise) / (1 + lambda dt) ]

and the explicit scheme uses ``c + dt (A(c) + P f(c)) + noise``. Noise is
evaluated at the start of the step (Ito). Increments come from
:class:`tamedns.rng.NoiseStream` keyed by (seed, path id).
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .coefficients import AdditiveNoiseMap, CoefficientModel
from .dynamics import Operators, additive_coords
from .rng import NoiseStream
from .spectral import (
    ModeSet,
    SpectralField,
    build_mode_set,
    dealias_floor,
    divergence_residual_coords,
    imag_residue_coords,
)
from .taming import TamingConfig

BLOWUP_THRESHOLD = 1e12
SCHEMES = ("explicit_em", "semi_implicit_em")
NOISE_MODES = ("none", "multiplicative", "additive")

CSV_COLUMNS = (
    "t",
    "h0",
    "h1_full",
    "h1_homog",
    "h2_full",
    "h2_homog",
    "l4_4",
    "pair_Au",
    "taming_fraction",
    "cN",
    "div_residual",
    "imag_residue",
)


class BlowUpError(RuntimeError):
    """A state became non-finite or exceeded the blow-up threshold."""

    def __init__(self, t: float, step: int, norm: float, path_id=None):
        where = f" (path {path_id})" if path_id is not None else ""
        super().__init__(f"blow-up at t={t!r}, step {step}{where}: |u|_H0 = {norm!r}")
        self.t = t
        self.step = step
        self.norm = norm


@dataclass(frozen=True)
class SimConfig:
    K_max: int = 2
    n: int | None = None
    dt: float = 1e-3
    T: float = 1.0
    G: int | None = None
    scheme: str = "semi_implicit_em"
    noise: str = "none"
    model: CoefficientModel = field(default_factory=CoefficientModel)
    additive: AdditiveNoiseMap | None = None
    taming: TamingConfig = field(default_factory=TamingConfig)
    seed: int = 0
    stride: int = 1
    advection: bool = True
    snapshots: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.T == 0 or self.T >= self.dt):
            raise ValueError("T must be 0 or at least dt")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.noise not in NOISE_MODES:
            raise ValueError(f"noise must be one of {NOISE_MODES}, got {self.noise!r}")
        if self.stride < 1:
            raise ValueError("record stride must be >= 1")
        modes = self.modes
        if self.n is None:
            object.__setattr__(self, "n", modes.n)
        if not 0 <= self.n <= modes.n:
            raise ValueError(f"n={self.n} outside [0, {modes.n}]")
        modes.check_prefix(self.n)
        if self.G is None:
            object.__setattr__(self, "G", dealias_floor(modes))
        if self.noise == "additive":
            if self.additive is None:
                raise ValueError("additive noise mode requires an AdditiveNoiseMap")
            if self.additive.m > self.n:
                raise ValueError(f"m={self.additive.m} exceeds Galerkin dimension n={self.n}")
            modes.check_prefix(self.additive.m)

    @property
    def modes(self) -> ModeSet:
        return build_mode_set(self.K_max)

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.T / self.dt - 1e-9)) if self.T > 0 else 0

    @property
    def n_dir(self) -> int:
        if self.noise == "multiplicative":
            return self.model.K_noise
        if self.noise == "additive":
            return self.additive.m
        return 0

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


class Stepper:
    """Batched one-step map for a fixed :class:`SimConfig`."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.modes = cfg.modes
        self.ops = Operators(self.modes, cfg.G, cfg.taming, cfg.model, cfg.advection)
        self.mask = np.zeros(self.modes.n)
        self.mask[: cfg.n] = 1.0
        self.implicit = cfg.scheme == "semi_implicit_em"
        self.denom = 1.0 + self.modes.lam * cfg.dt
        self.q = additive_coords(cfg.additive, self.modes) if cfg.noise == "additive" else None

    def noise_term(self, c, dW):
        cfg = self.cfg
        if cfg.noise == "multiplicative":
            return self.ops.noise(c, dW)
        if cfg.noise == "additive":
            out = np.zeros(np.shape(c))
            out[..., : cfg.additive.m] = self.q[: cfg.additive.m] * dW
            return out
        return 0.0

    def __call__(self, c, dW):
        dt = self.cfg.dt
        ops = self.ops
        if self.implicit:
            rhs = c + dt * ops.nonlinear_and_forcing(c) + self.noise_term(c, dW)
            out = rhs / self.denom
        else:
            out = c + dt * (ops.nonlinear_and_forcing(c) - self.modes.lam * c) + self.noise_term(c, dW)
        return out * self.mask


def step(u: SpectralField, cfg: SimConfig, dW) -> SpectralField:
    """One time step from ``u`` with Brownian increments ``dW``."""
    c = u.coords()
    _check_galerkin(cfg, c)
    out = Stepper(cfg)(c, np.asarray(dW, dtype=float))
    _check_finite(out, 0.0, 0)
    return SpectralField.from_coords(u.modes, out)


def _check_galerkin(cfg: SimConfig, c):
    if np.any(np.asarray(c)[..., cfg.n:] != 0):
        raise ValueError(f"initial state has energy outside the first n={cfg.n} modes")


def _check_finite(c, t, stp, path_ids=None):
    norm = np.sqrt(np.sum(c * c, axis=-1))
    bad = ~np.isfinite(norm) | (norm > BLOWUP_THRESHOLD)
    if np.any(bad):
        i = int(np.flatnonzero(np.atleast_1d(bad))[0])
        pid = None if path_ids is None else path_ids[i]
        raise BlowUpError(t, stp, float(np.atleast_1d(norm)[i]), pid)


# ----------------------------------------------------------------------------
# records


def record_diagnostics(ops: Operators, c) -> dict:
    """Per-state scalars for the CSV columns (except t); ``c`` is (..., n)."""
    modes = ops.modes
    c = np.asarray(c, dtype=float)
    lam = modes.lam
    sq = c * c
    l4, frac, ugrad = ops.state_diagnostics(c)
    pair = np.sum(ops.drift_A(c) * c, axis=-1)
    h0 = np.sqrt(np.sum(sq, axis=-1))
    div = divergence_residual_coords(modes, c)
    div = np.where(h0 > 0, div / np.where(h0 > 0, h0, 1.0), div)
    imag = imag_residue_coords(modes, c)
    return {
        "h0": h0,
        "h1_full": np.sqrt(np.sum((1 + lam) * sq, axis=-1)),
        "h1_homog": np.sqrt(np.sum(lam * sq, axis=-1)),
        "h2_full": np.sqrt(np.sum((1 + lam) ** 2 * sq, axis=-1)),
        "h2_homog": np.sqrt(np.sum(lam**2 * sq, axis=-1)),
        "l4_4": l4,
        "pair_Au": pair,
        "taming_fraction": frac,
        "cN": np.sum(lam**2 * sq, axis=-1) + ugrad,
        "div_residual": div,
        "imag_residue": imag,
    }


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Recorded scalars of one path; ``snapshots`` are coordinates at record times."""

    cfg: SimConfig
    times: np.ndarray
    series: dict
    increments: np.ndarray
    snapshots: np.ndarray | None = None
    path_id: int = 0

    def __getitem__(self, key):
        if key == "t":
            return self.times
        return self.series[key]

    @property
    def final(self) -> SpectralField:
        if self.snapshots is None:
            raise ValueError("record has no snapshots")
        return SpectralField.from_coords(self.cfg.modes, self.snapshots[-1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        cols = [self.times] + [self.series[k] for k in CSV_COLUMNS[1:]]
        for row in zip(*cols):
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def to_bytes(self) -> bytes:
        return snapshot_bytes(self)


@dataclass(frozen=True, eq=False)
class EnsembleRecord:
    """Scalars of a batch of paths; series arrays have shape (n_paths, n_records)."""

    cfg: SimConfig
    times: np.ndarray
    series: dict
    path_ids: tuple
    snapshots: np.ndarray | None = None  # (n_paths, n_records, n)
    increments: np.ndarray | None = None  # (n_paths, n_steps, n_dir)

    def __getitem__(self, key):
        return self.times if key == "t" else self.series[key]

    def mean(self, key):
        return np.mean(self.series[key], axis=0)

    def path(self, i) -> TrajectoryRecord:
        snaps = None if self.snapshots is None else self.snapshots[i]
        return TrajectoryRecord(self.cfg, self.times, {k: v[i] for k, v in self.series.items()},
                                self.increments[i], snaps, self.path_ids[i])


def _integrate(cfg: SimConfig, C0, path_ids, increments=None, snapshots=None, callback=None):
    """Core loop over a batch; returns (times, series dict, snapshots, increments)."""
    stepper = Stepper(cfg)
    ops = stepper.ops
    C = np.array(C0, dtype=float).reshape(len(path_ids), cfg.modes.n)
    _check_galerkin(cfg, C)
    keep = cfg.snapshots if snapshots is None else snapshots
    streams = [NoiseStream(cfg.seed, pid, cfg.n_dir) for pid in path_ids]
    n_steps = cfg.n_steps
    if increments is not None:
        increments = np.asarray(increments, dtype=float).reshape(len(path_ids), n_steps, cfg.n_dir)
        used = increments
    else:
        used = np.zeros((len(path_ids), n_steps, cfg.n_dir))
        if cfg.n_dir and n_steps:
            for b, s in enumerate(streams):
                used[b] = s.increments(0, n_steps, cfg.dt)
    rec_steps = list(range(0, n_steps + 1, cfg.stride))
    if rec_steps[-1] != n_steps:
        rec_steps.append(n_steps)
    times = np.array(rec_steps, dtype=float) * cfg.dt
    rows = []
    snaps = []

    def record(C):
        rows.append(record_diagnostics(ops, C))
        if keep:
            snaps.append(C.copy())

    record(C)
    ri = 1
    for s in range(n_steps):
        dW = used[:, s, :]
        if callback is not None:
            callback(s, C, dW)
        C = stepper(C, dW)
        _check_finite(C, (s + 1) * cfg.dt, s + 1, path_ids)
        if ri < len(rec_steps) and rec_steps[ri] == s + 1:
            record(C)
            ri += 1
    series = {k: np.stack([r[k] for r in rows], axis=-1) for k in rows[0]}
    snap = np.stack(snaps, axis=1) if keep else None
    return times, series, snap, used


def simulate(cfg: SimConfig, u0: SpectralField, path_id: int = 0, increments=None) -> TrajectoryRecord:
    """Integrate one path; ``increments`` (n_steps, n_dir) replays a stored noise path."""
    times, series, snap, used = _integrate(cfg, u0.coords()[None], (path_id,), increments)
    return TrajectoryRecord(cfg, times, {k: v[0] for k, v in series.items()}, used[0],
                            None if snap is None else snap[0], path_id)


def simulate_ensemble(cfg: SimConfig, u0, n_paths: int | None = None, path_ids=None,
                      increments=None) -> EnsembleRecord:
    """Integrate a batch of paths in lockstep with independent noise streams.

    ``u0`` is a SpectralField (shared) or an array of coordinates (n_paths, n).
    ``increments`` (n_paths, n_steps, n_dir) replaces the generated streams.
    """
    if path_ids is None:
        path_ids = tuple(range(n_paths))
    path_ids = tuple(int(p) for p in path_ids)
    if isinstance(u0, SpectralField):
        C0 = np.broadcast_to(u0.coords(), (len(path_ids), cfg.modes.n))
    else:
        C0 = np.asarray(u0, dtype=float)
    times, series, snap, used = _integrate(cfg, C0, path_ids, increments)
    return EnsembleRecord(cfg, times, series, path_ids, snap, used)


@dataclass(frozen=True, eq=False)
class TwinRecord:
    first: TrajectoryRecord
    second: TrajectoryRecord
    dist_h0: np.ndarray
    dist_h1: np.ndarray


def twin_simulate(cfg: SimConfig, u0: SpectralField, u0b: SpectralField, path_id: int = 0,
                  convention: str = "full") -> TwinRecord:
    """Two paths from different initial data driven by the identical increment stream."""
    cfg = cfg.with_(snapshots=True)
    a = simulate(cfg, u0, path_id)
    b = simulate(cfg, u0b, path_id)
    d = a.snapshots - b.snapshots
    lam = cfg.modes.lam
    w = 1.0 + lam if convention == "full" else lam
    return TwinRecord(a, b, np.sqrt(np.sum(d * d, axis=-1)), np.sqrt(np.sum(w * d * d, axis=-1)))


# ----------------------------------------------------------------------------
# binary snapshot format
#
# header (little-endian):
#   8s  magic b"TDNSNAP1"
#   32s sha256 digest of the mode set
#   I   K_max, I n (Galerkin dim), I n_modes, I n_records, I n_steps, I n_dir
#   Q   seed, Q path_id (both taken mod 2^64, as in the noise key)
#   d   dt
# payload: times (n_records f64), snapshots (n_records x n_modes f64),
#          increments (n_steps x n_dir f64)

_MAGIC = b"TDNSNAP1"
_HEADER = struct.Struct("<8s32s6IQQd")


def snapshot_bytes(rec: TrajectoryRecord) -> bytes:
    cfg = rec.cfg
    modes = cfg.modes
    if rec.snapshots is None:
        raise ValueError("record has no snapshots; simulate with snapshots=True")
    head = _HEADER.pack(_MAGIC, bytes.fromhex(modes.hash_hex()), cfg.K_max, cfg.n, modes.n,
                        len(rec.times), rec.increments.shape[0], cfg.n_dir,
                        cfg.seed & 0xFFFFFFFFFFFFFFFF, rec.path_id & 0xFFFFFFFFFFFFFFFF, cfg.dt)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                    for a in (rec.times, rec.snapshots, rec.increments))
    return head + body


def read_snapshot(data: bytes) -> dict:
    magic, digest, K, n, nm, nr, ns, nd, seed, pid, dt = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise ValueError("not a snapshot file")
    modes = build_mode_set(K)
    if digest.hex() != modes.hash_hex() or nm != modes.n:
        raise ValueError("snapshot mode set does not match this build's mode ordering")
    off = _HEADER.size
    arr = np.frombuffer(data, dtype="<f8", offset=off)
    times = arr[:nr]
    snaps = arr[nr:nr + nr * nm].reshape(nr, nm)
    incs = arr[nr + nr * nm:nr + nr * nm + ns * nd].reshape(ns, nd)
    return {"K_max": K, "n": n, "seed": seed, "path_id": pid, "dt": dt,
            "times": times.copy(), "snapshots": snaps.copy(), "increments": incs.copy()}
