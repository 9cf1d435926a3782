"""Command line entry point: ``run <spec>``, ``list``, ``validate <spec>``.

Exit codes
    0  success, every assertion passed
    1  at least one assertion failed
    2  configuration error (parse error, missing or ill-typed field)
    3  assumption violation in the coefficient model
    4  resolution error (grid too coarse)
    5  blow-up during integration

Outputs go to ``<root>/<output>/`` where root is ``$TAMEDNS_OUTPUT_ROOT`` or
``./outputs`` and ``output`` defaults to the spec file stem.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgfmt
from .coefficients import AssumptionViolation, model_from_config, validate_assumptions
from .ergodicity import (
    comparison_bound,
    exp_moment_probe,
    kb_average,
    moment_audit,
    report_json,
    support_probe,
)
from .integrator import BlowUpError, SimConfig, simulate, simulate_ensemble, twin_simulate
from .observables import default_catalog, gradient_catalog
from .dynamics import Operators
from .sensitivity import derivative_flow, gradient_probe, highmode_decay_experiment
from .spectral import ResolutionError, SpectralField, basis_field, random_field, sobolev_norm

EXIT_OK = 0
EXIT_ASSERT = 1
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_RESOLUTION = 4
EXIT_BLOWUP = 5

OUTPUT_ROOT_ENV = "TAMEDNS_OUTPUT_ROOT"

# kind -> (description, anchor)
CATALOG = {
    "simulate": ("integrate one Galerkin path and record norms, pairings and structure residuals",
                 "tamed Galerkin SDE"),
    "twin": ("two paths on one noise stream; distance growth against initial separation",
             "pathwise uniqueness and Feller continuity"),
    "jacobian_check": ("finite differences of the solution map against the derivative flow",
                       "derivative flow consistency"),
    "control_decay": ("low/high-mode control: fitted high-mode decay rate and control cost",
                      "asymptotic gradient bound construction"),
    "gradient_probe": ("finite-difference semigroup gradient against the integration-by-parts bound",
                       "semigroup gradient bound"),
    "kb_invariant": ("time averages from two initial conditions with batch-means error bars",
                     "Krylov-Bogoliubov invariant measure and uniqueness"),
    "moment_audit": ("linear-in-time growth of energy plus integrated H1 and L4 moments",
                     "a-priori moment bound"),
    "exp_moment": ("exponential moment of the integrated N(u) functional",
                   "exponential moment estimate"),
    "support_probe": ("deterministic shifted system driven by a small prescribed noise path",
                      "small-noise support lemma and comparison bound"),
}


# ----------------------------------------------------------------------------
# spec handling


def load_spec(path):
    text = Path(path).read_text()
    return text, cfgfmt.parse(text)


def _lines(spec):
    return spec.get("_lines", {})


def sim_config(spec) -> SimConfig:
    g = cfgfmt.get
    model, taming, additive = model_from_config(spec)
    kw = dict(
        K_max=g(spec, "K_max", int, 2),
        dt=g(spec, "dt", float, 1e-3),
        T=g(spec, "T", float, 1.0),
        scheme=g(spec, "scheme", str, "semi_implicit_em"),
        noise=g(spec, "noise", str, "none"),
        model=model,
        additive=additive,
        seed=g(spec, "seed", int, 0),
        stride=g(spec, "stride", int, 1),
        advection=g(spec, "advection", bool, True),
        snapshots=g(spec, "snapshots", bool, False),
    )
    if taming is not None:
        kw["taming"] = taming
    if "n" in spec:
        kw["n"] = g(spec, "n", int)
    if "G" in spec:
        kw["G"] = g(spec, "G", int)
    try:
        return SimConfig(**kw)
    except ValueError as exc:
        if isinstance(exc, (ResolutionError, AssumptionViolation)):
            raise
        raise cfgfmt.ConfigError(str(exc)) from None


def initial_state(spec, cfg: SimConfig, which: str = "u0") -> SpectralField:
    """``u0 = zero | mode | random`` with ``u0_amplitude`` (H1 homogeneous norm) and ``u0_mode``."""
    modes = cfg.modes
    kind = cfgfmt.get(spec, which, str, "zero")
    amp = cfgfmt.get(spec, f"{which}_amplitude", float, 1.0)
    if kind == "zero":
        return SpectralField.zeros(modes)
    if kind == "mode":
        i = cfgfmt.get(spec, f"{which}_mode", int, 0)
        if not 0 <= i < cfg.n:
            raise cfgfmt.ConfigError(f"mode {i} outside Galerkin space", key=f"{which}_mode")
        return basis_field(modes, i, "H1_homog") * amp
    if kind == "random":
        # initial data draws from the spec seed on a reserved stream
        stream = 2**64 - 1 - (which != "u0")
        key = np.array([cfg.seed & (2**64 - 1), stream], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        u = random_field(modes, rng, n=cfg.n)
        return u * (amp / sobolev_norm(u, 1, "homogeneous"))
    raise cfgfmt.ConfigError(f"unknown initial state {kind!r}", line=_lines(spec).get(which), key=which)


class Run:
    """Collects outputs and assertion results for one experiment."""

    def __init__(self, outdir: Path):
        self.outdir = outdir
        self.files: dict[str, str] = {}
        self.checks: list[tuple[str, bool, str]] = []

    def write(self, name: str, text: str):
        data = text.encode()
        (self.outdir / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def write_bytes(self, name: str, data: bytes):
        (self.outdir / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def check(self, name: str, ok: bool, detail: str = ""):
        self.checks.append((name, bool(ok), detail))


def _structure_checks(run: Run, series, label=""):
    div = float(np.max(series["div_residual"]))
    im = float(np.max(series["imag_residue"]))
    run.check(f"{label}divergence residual < 1e-12", div < 1e-12, f"max {div:.3e}")
    run.check(f"{label}imaginary residue < 1e-12", im < 1e-12, f"max {im:.3e}")


# ----------------------------------------------------------------------------
# experiment kinds


def _kind_simulate(spec, cfg, run: Run):
    u0 = initial_state(spec, cfg)
    rec = simulate(cfg, u0)
    run.write("trajectory.csv", rec.to_csv())
    if cfg.snapshots:
        run.write_bytes("snapshots.bin", rec.to_bytes())
    _structure_checks(run, rec.series)
    if cfgfmt.get(spec, "replay_check", bool, False):
        again = simulate(cfg, u0, increments=rec.increments)
        run.check("replay of stored increments is bit-identical", again.to_csv() == rec.to_csv())
    return {"n_records": len(rec.times), "final_h1_homog": float(rec.series["h1_homog"][-1])}


def _kind_twin(spec, cfg, run: Run):
    u0 = initial_state(spec, cfg)
    direction = initial_state(spec, cfg, "direction") if "direction" in spec else None
    if direction is None:
        direction = basis_field(cfg.modes, 0, "H1_full")
    deltas = cfgfmt.get(spec, "deltas", "floats", (1e-2, 1e-3, 1e-4))
    dn = sobolev_norm(direction, 1, "full")
    same = twin_simulate(cfg, u0, u0)
    run.check("identical initial data give identical paths", bool(np.all(same.dist_h0 == 0)))
    _structure_checks(run, same.first.series)
    ratios = []
    lines = ["delta,t,dist_h0,dist_h1"]
    for d in deltas:
        tw = twin_simulate(cfg, u0, u0 + direction * (d / dn))
        ratios.append(float(np.max(tw.dist_h1**2) / d**2))
        for t, a, b in zip(tw.first.times, tw.dist_h0, tw.dist_h1):
            lines.append(f"{d!r},{float(t)!r},{float(a)!r},{float(b)!r}")
    run.write("twin.csv", "\n".join(lines) + "\n")
    spread = max(ratios) / min(ratios)
    run.check("sup |u - u'|_H1^2 / delta^2 varies by less than x10", spread < 10, f"spread {spread:.3f}")
    return {"deltas": list(deltas), "sup_ratio": ratios, "spread": spread}


def _kind_jacobian(spec, cfg, run: Run):
    cfg = cfg.with_(stride=1, snapshots=True)
    u0 = initial_state(spec, cfg)
    v0 = initial_state(spec, cfg, "direction") if "direction" in spec else basis_field(cfg.modes, 0, "H1_full")
    eps = cfgfmt.get(spec, "eps", "floats", (1e-3, 5e-4, 2.5e-4))
    base = simulate(cfg, u0)
    J = derivative_flow(base, v0)
    w = 1.0 + cfg.modes.lam
    errs = []
    for e in eps:
        pert = simulate(cfg, u0 + v0 * e)
        d = (pert.snapshots - base.snapshots) / e - J.values
        errs.append(float(np.max(np.sqrt(np.sum(w * d * d, axis=-1)))))
    ratios = [a / b for a, b in zip(errs[:-1], errs[1:])]
    run.write("jacobian.csv", "eps,h1_error\n" + "".join(f"{e!r},{x!r}\n" for e, x in zip(eps, errs)))
    for r in ratios:
        run.check("error ratio per eps halving in [1.6, 2.4]", 1.6 <= r <= 2.4, f"ratio {r:.4f}")
    return {"eps": list(eps), "errors": errs, "ratios": ratios}


def _kind_control(spec, cfg, run: Run):
    ms = cfgfmt.get(spec, "m_values", "ints", (12, 36))
    n_paths = cfgfmt.get(spec, "n_paths", int, 8)
    T = cfgfmt.get(spec, "T", float, 0.1)
    q = cfgfmt.get(spec, "q_uniform", float, cfg.additive.q[0] if cfg.additive else 1.0)
    fit_from = cfgfmt.get(spec, "fit_from", float) if "fit_from" in spec else None
    rep = highmode_decay_experiment(cfg, ms, n_paths, T, q=q, fit_from=fit_from)
    run.write("decay.csv", rep.to_csv())
    run.write("decay.json", rep.to_json())
    run.check("fitted decay rates negative", all(r < 0 for r in rep.rates))
    run.check("decay rate more negative for larger m", all(a > b for a, b in zip(rep.rates, rep.rates[1:])))
    run.check("control cost finite", all(np.isfinite(c) for c in rep.costs))
    if cfg.noise == "none":
        for r, lam in zip(rep.rates, rep.lambda_next):
            err = abs(r / -lam - 1)
            run.check("noise-off rate matches -lambda_{m+1} within 2%", err < 0.02, f"rel err {err:.4f}")
    return rep.summary()


def _kind_gradient(spec, cfg, run: Run):
    cat = gradient_catalog(cfg.modes, cfgfmt.get(spec, "rho", float, 0.5))
    name = cfgfmt.get(spec, "observable", str, "bump_mode")
    if name not in cat:
        raise cfgfmt.ConfigError(f"observable must be one of {sorted(cat)}", key="observable",
                                 line=_lines(spec).get("observable"))
    u0 = initial_state(spec, cfg)
    times = cfgfmt.get(spec, "times", "floats", (cfg.T,))
    n_paths = cfgfmt.get(spec, "n_paths", int, 16)
    eps = cfgfmt.get(spec, "fd_eps", float, 1e-4)
    rows = ["t,fd_estimate,fd_stderr,bound,sup_term,grad_term,mean_v_h1,cost"]
    out = []
    for t in times:
        r = gradient_probe(cat[name], cfg, u0, t, n_paths, eps=eps)
        out.append(r.as_dict())
        rows.append(",".join(repr(float(x)) for x in (r.t, r.fd_estimate, r.fd_stderr, r.bound,
                                                       r.bound_sup_term, r.bound_grad_term,
                                                       r.mean_v_norm, r.cost)))
        run.check(f"finite difference dominated by bound at t={t!r}", r.dominated,
                  f"fd {r.fd_estimate:.4e} bound {r.bound:.4e}")
    run.write("gradient.csv", "\n".join(rows) + "\n")
    return {"observable": name, "results": out}


def _kind_kb(spec, cfg, run: Run):
    ops = Operators(cfg.modes, cfg.G, cfg.taming, cfg.model, cfg.advection)
    obs = default_catalog(cfg.modes, ops, cfgfmt.get(spec, "rho", float, 0.5),
                          cfgfmt.get(spec, "energy_cap", float, 1.0))
    T_avg = cfgfmt.get(spec, "T_avg", float, 20.0)
    T_burn = cfgfmt.get(spec, "T_burn", float, T_avg / 2)
    n_paths = cfgfmt.get(spec, "n_paths", int, 1)
    nb = cfgfmt.get(spec, "n_batches", int, 16)
    every = cfgfmt.get(spec, "sample_every", int, 5)
    u0a = initial_state(spec, cfg)
    u0b = initial_state(spec, cfg, "u0_second") if "u0_second" in spec else basis_field(cfg.modes, 0, "H1_homog")
    a = kb_average(cfg, u0a, T_burn, T_avg, obs, nb, every, n_paths, 0)
    b = kb_average(cfg, u0b, T_burn, T_avg, obs, nb, every, n_paths, n_paths)
    run.write("kb_first.csv", a.to_csv())
    run.write("kb_second.csv", b.to_csv())
    for name, ok in a.agrees_with(b).items():
        run.check(f"ergodic averages agree within 3 standard errors: {name}", ok,
                  f"{a.means[name]:.5g} vs {b.means[name]:.5g}")
    return {"first": a.summary(), "second": b.summary()}


def _ensemble(spec, cfg):
    n_paths = cfgfmt.get(spec, "n_paths", int, 64)
    u0 = initial_state(spec, cfg)
    return simulate_ensemble(cfg, u0, n_paths)


def _kind_moment(spec, cfg, run: Run):
    rec = _ensemble(spec, cfg)
    window = cfgfmt.get(spec, "window", "floats", (5.0, 20.0))
    audit = moment_audit(rec, window)
    run.write("moments.csv", audit.to_csv())
    run.check("integrated moments nondecreasing", audit.nondecreasing)
    run.check("composite moment grows linearly (R^2 > 0.95)", audit.passed, f"R^2 {audit.r2:.5f}")
    _structure_checks(run, rec.series)
    return audit.summary()


def _kind_exp(spec, cfg, run: Run):
    rec = _ensemble(spec, cfg)
    eta = cfgfmt.get(spec, "eta", float, 1e-4)
    window = cfgfmt.get(spec, "window", "floats", (2.0, 10.0))
    rep = exp_moment_probe(rec, eta, window)
    run.write("exp_moment.csv", rep.to_csv())
    run.check("log exponential moment linear in T (R^2 > 0.9)", rep.r2 > 0.9, f"R^2 {rep.r2:.5f}")
    return rep.summary()


def _kind_support(spec, cfg, run: Run):
    u0 = initial_state(spec, cfg)
    r1 = cfgfmt.get(spec, "r1", float, 1.0)
    r2 = cfgfmt.get(spec, "r2", float, 0.1)
    eps = cfgfmt.get(spec, "eps", float, 1e-3)
    path = cfgfmt.get(spec, "path", str, "zero")
    rep = support_probe(cfg, u0, r1, r2, cfgfmt.get(spec, "T_max", float, 10.0), eps, path)
    run.write("support.csv", rep.to_csv())
    run.check("probe finds T with |u(T)|_H1 <= r2", rep.found, f"T = {rep.T_found}")
    run.check("sup |w|_H6 < eps", rep.w_h6 < eps)
    if path == "zero":
        run.check("H0 norm under the lambda_1 heat envelope", rep.envelope_ok)
    # linear decay envelope from the comparison bound with the heat constants
    lam1 = cfg.modes.lambda1
    h0_sq = rep.h0[0] ** 2
    bound = comparison_bound(h0_sq, 2 * lam1, 0.0, 0.0, 0.0, 2.0, rep.times, 0.0)
    out = rep.summary()
    out["comparison_bound_final"] = float(bound[-1])
    return out


KINDS = {
    "simulate": _kind_simulate,
    "twin": _kind_twin,
    "jacobian_check": _kind_jacobian,
    "control_decay": _kind_control,
    "gradient_probe": _kind_gradient,
    "kb_invariant": _kind_kb,
    "moment_audit": _kind_moment,
    "exp_moment": _kind_exp,
    "support_probe": _kind_support,
}


# ----------------------------------------------------------------------------
# commands


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "outputs"))


def _prepare(spec_path):
    text, spec = load_spec(spec_path)
    kind = cfgfmt.get(spec, "kind", str)
    if kind not in KINDS:
        raise cfgfmt.ConfigError(f"unknown kind {kind!r}; see `list`", line=_lines(spec).get("kind"), key="kind")
    cfg = sim_config(spec)
    report = validate_assumptions(cfg.model)
    return text, spec, kind, cfg, report


def cmd_run(spec_path, out=None) -> int:
    out = out or sys.stdout
    text, spec, kind, cfg, report = _prepare(spec_path)
    outdir = output_root() / cfgfmt.get(spec, "output", str, Path(spec_path).stem)
    outdir.mkdir(parents=True, exist_ok=True)
    run = Run(outdir)
    summary = KINDS[kind](spec, cfg, run)
    run.write("summary.json", report_json({"kind": kind, "assumptions": _jsonable(report.as_dict()),
                                           "result": _jsonable(summary)}))
    manifest = {
        "spec_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "code_version": __version__,
        "seed": cfg.seed,
        "kind": kind,
        "files": dict(sorted(run.files.items())),
        "checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in run.checks],
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for name, ok, detail in run.checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""), file=out)
    print(f"outputs written to {outdir}", file=out)
    return EXIT_OK if all(ok for _, ok, _ in run.checks) else EXIT_ASSERT


def cmd_validate(spec_path, out=None) -> int:
    out = out or sys.stdout
    _, spec, kind, cfg, report = _prepare(spec_path)
    from .spectral import dealias_floor

    if cfg.G < dealias_floor(cfg.modes):
        raise ResolutionError(f"G={cfg.G} below dealias floor {dealias_floor(cfg.modes)}")
    print(f"kind {kind}: K_max={cfg.K_max} n={cfg.n} G={cfg.G} dt={cfg.dt!r} T={cfg.T!r} noise={cfg.noise}", file=out)
    for k, v in report.as_dict().items():
        if k != "details":
            print(f"  {k} = {v!r}", file=out)
    print("valid", file=out)
    return EXIT_OK


def cmd_list(out=None) -> int:
    out = out or sys.stdout
    for kind, (desc, anchor) in CATALOG.items():
        print(f"{kind:15s} {desc} [{anchor}]", file=out)
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tamedns", description="stochastic tamed Navier-Stokes laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment spec")
    p_run.add_argument("spec")
    sub.add_parser("list", help="list experiment kinds")
    p_val = sub.add_parser("validate", help="check a spec without running it")
    p_val.add_argument("spec")
    args = parser.parse_args(argv)
    try:
        if args.command == "list":
            return cmd_list()
        if args.command == "validate":
            return cmd_validate(args.spec)
        return cmd_run(args.spec)
    except AssumptionViolation as exc:
        print(f"assumption violation: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except ResolutionError as exc:
        print(f"resolution error: {exc}", file=sys.stderr)
        return EXIT_RESOLUTION
    except cfgfmt.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
