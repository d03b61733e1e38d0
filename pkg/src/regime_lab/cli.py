"""Command-line interface: ``regime-lab <subcommand> --config file.json``.

Exit codes: 0 success, 2 validation failure, 3 numerical failure, 4 usage.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .errors import DegenerateRegression, NoNegativeDrift, NumericalError, RegimeLabError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_USAGE = 0, 2, 3, 4
IDENTITY_GATE = 1e-6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


class Run:
    """Shared per-invocation state: config, output directory, writers."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.raw = b""
        self.cfg = {}
        if args.config:
            try:
                with open(args.config, "rb") as fh:
                    self.raw = fh.read()
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc.strerror}") from None
            try:
                self.cfg = json.loads(self.raw)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"config is not valid JSON: {exc.msg} (line {exc.lineno})") from None
        self.out = args.out
        os.makedirs(self.out, exist_ok=True)
        self.files = []

    @property
    def seed(self):
        if self.args.seed is not None:
            return self.args.seed
        return int(self.cfg.get("sim", {}).get("seed", 0))

    def write_table(self, name, header, rows):
        path = os.path.join(self.out, f"{name}.{self.args.format}")
        if self.args.format == "csv":
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for r in rows:
                    w.writerow([_fmt(v) for v in r])
        else:
            with open(path, "w") as fh:
                json.dump(_jsonable([dict(zip(header, r)) for r in rows]), fh, indent=2)
        self.files.append(path)
        return path

    def write_json(self, name, obj):
        path = os.path.join(self.out, f"{name}.json")
        with open(path, "w") as fh:
            json.dump(_jsonable(obj), fh, indent=2)
        self.files.append(path)
        return path

    def manifest(self, status, extra=None):
        import numba
        import scipy

        man = {
            "command": self.args.command,
            "argv": self.argv,
            "config": self.args.config,
            "config_sha256": hashlib.sha256(self.raw).hexdigest(),
            "seed": self.seed,
            "threads": self.args.threads,
            "status": status,
            "outputs": [os.path.basename(p) for p in self.files],
            "versions": {"regime_lab": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__,
                         "numba": numba.__version__},
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        if extra:
            man.update(extra)
        with open(os.path.join(self.out, "manifest.json"), "w") as fh:
            json.dump(_jsonable(man), fh, indent=2)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _say(text):
    print(text)


def _setup(run: Run, n=None):
    from .experiment import ExperimentConfig
    from .model import make_context

    exp = ExperimentConfig.from_dict(run.cfg)
    model, chain = exp.build()
    ctx = None
    if n is not None:
        ctx = make_context(model, n, exp.alpha, chain)
    return exp, model, chain, ctx


def _n_arg(run: Run, default=100):
    if run.args.n is not None:
        return float(run.args.n)
    return float(run.cfg.get("n", default))


# ------------------------------------------------------------- subcommands

def cmd_validate(run: Run):
    from .model import validate_hypotheses

    exp, model, chain, ctx = _setup(run, _n_arg(run))
    rep = validate_hypotheses(model, ctx, chain, seed=run.seed)
    run.write_json("validate", {"model": model.name, "n": ctx.n, "alpha": ctx.alpha,
                                "x_star": ctx.x_star, **rep.as_dict()})
    for name, ok in rep.clauses.items():
        _say(f"{name}: {'pass' if ok else 'FAIL'}")
    _say(f"m0={rep.m0:g} N0={rep.N0} C_tilde={rep.C_tilde:.6g}")
    return EXIT_OK if rep.passed else EXIT_VALIDATION


def cmd_fluid(run: Run):
    from .model import solve_fluid_equilibrium, averaged_drift

    exp, model, chain, _ = _setup(run)
    grid = [float(run.args.n)] if run.args.n is not None else exp.n_grid
    rows = []
    for n in grid:
        x = solve_fluid_equilibrium(model, n, chain.p)
        res = float(np.abs(averaged_drift(model, n, chain.p, x)).max())
        rows.append([model.name, float(n), json.dumps(x.tolist()), res])
        _say(f"n={n:g} x*={x.tolist()} residual={res:.3e}")
    run.write_table("fluid", ["model", "n", "x_star", "residual"], rows)
    return EXIT_OK


def cmd_diffusion(run: Run):
    from .diffusion import build_diffusion, limit_coefficients

    exp, model, chain, ctx = _setup(run, _n_arg(run))
    spec = build_diffusion(model, ctx, chain)
    table = {}
    for a in sorted({2.0, 1.0, 0.5, float(exp.alpha)}, reverse=True):
        try:
            lim = limit_coefficients(model, a, chain)
            table[str(a)] = lim.sigma_alpha2.tolist()
        except NumericalError as exc:
            table[str(a)] = f"{type(exc).__name__}: {exc}"
    out = {**spec.as_dict(), "sigma_alpha2": table}
    run.write_json("diffusion", out)
    print(json.dumps(_jsonable(out), indent=2))
    return EXIT_OK


def cmd_simulate(run: Run):
    from .simulator import simulate_joint

    exp, model, chain, ctx = _setup(run, _n_arg(run))
    funcs = [__import__("regime_lab.testfunctions", fromlist=["x"]).parse_test_function(f, model.d)
             for f in exp.f_list]
    sim = exp.sim_config(run.seed, run.args.threads)
    est = simulate_joint(model, ctx, chain, sim, funcs)
    rows = []
    for r in est.replications:
        for f in funcs:
            e, s = r.estimates[f.tag]
            rows.append([r.rep, f.tag, e, s, r.x_events, r.j_events, r.horizon])
    run.write_table("simulate", ["rep", "f", "estimate", "se", "x_events", "j_events", "horizon"], rows)
    for f in funcs:
        v = est[f.tag]
        _say(f"{f.tag}: {v.estimate:.6g} +- {v.se:.3g}")
    return EXIT_OK


def cmd_drift_check(run: Run):
    from .lyapunov import (LyapunovCandidate, build_corrector, build_corrector_c21, certify_drift,
                           corrected, scaled_lattice, verify_sandwich)
    from .model import phi_psi_split
    from .testfunctions import parse_test_function

    exp, model, chain, ctx = _setup(run, _n_arg(run, 400))
    lat_cfg = exp.lattice
    radius = float(run.args.radius or lat_cfg.get("radius", 10.0))
    lattice = scaled_lattice(ctx, radius, int(lat_cfg.get("step", 1)))
    V = parse_test_function(run.cfg.get("lyapunov", "x2"), model.d)
    cand = LyapunovCandidate(V)
    split = None
    if model.kind == "mmn_plus_m" and model.d > 1:
        split = phi_psi_split(model, chain, ctx)
    out = {"model": model.name, "n": ctx.n, "alpha": ctx.alpha, "V": V.tag,
           "norm_like": cand.check_norm_like()}
    status = EXIT_OK
    ops = ["Gk"] if split is not None else ["averaged"]
    for op in ops:
        try:
            out[op] = certify_drift(op, V, lattice, model, ctx, chain, split).as_dict()
        except NoNegativeDrift as exc:
            out[op] = {"error": str(exc)}
            status = EXIT_NUMERICAL
    Vt = build_corrector_c21(split, ctx, chain, V) if split else build_corrector(model, ctx, chain, V)
    Vh = corrected(V, Vt)
    sw = verify_sandwich(V, Vh, lattice)
    out["sandwich"] = {"violations": sw.violations, "holds": sw.holds, "worst": sw.worst}
    try:
        out["hatL"] = certify_drift("hatL", Vh, lattice, model, ctx, chain).as_dict()
        base = out.get(ops[0], {}).get("c2")
        if base:
            out["hatL"]["c2_ratio"] = out["hatL"]["c2"] / base
    except NoNegativeDrift as exc:
        out["hatL"] = {"error": str(exc)}
        status = EXIT_NUMERICAL
    run.write_json("drift_check", out)
    for key in ops + ["hatL"]:
        v = out[key]
        _say(f"{key}: " + (f"C1={v['c1']:.6g} C2={v['c2']:.6g} margin={v['margin']:.3g}"
                           if "c2" in v else v["error"]))
    _say(f"sandwich: {'holds' if sw.holds else f'{sw.violations} violations'}")
    return status


def _points(run, ctx, d, count):
    rng = np.random.default_rng(run.seed)
    X = rng.uniform(-3.0, 3.0, size=(count, d))
    lattice = np.maximum(np.rint(ctx.to_lattice(X)), 0.0)
    return ctx.to_scaled(lattice)


def cmd_identity_check(run: Run):
    from .expansion import ExpansionContext, check_identity
    from .testfunctions import parse_test_function

    exp, model, chain, ctx = _setup(run, _n_arg(run))
    X = _points(run, ctx, model.d, int(run.args.points))
    rows, worst = [], 0.0
    for name in exp.f_list:
        f = parse_test_function(name, model.d)
        ec = ExpansionContext.create(model, ctx, chain, f)
        for k in range(model.K):
            rep = check_identity(ec, X, k)
            worst = max(worst, float(rep.rel_gap.max()))
            for i in range(len(X)):
                rows.append([model.name, ctx.n, ctx.alpha, name, json.dumps(X[i].tolist()), k,
                             float(rep.lhs[i]), float(rep.rhs[i]), float(rep.rel_gap[i]),
                             *[float(t[i]) for t in rep.R]])
    run.write_table("identity", ["model", "n", "alpha", "f", "x_hat", "k", "lhs", "rhs", "rel_gap",
                                 "R1", "R2", "R3", "R4", "R5", "R6"], rows)
    _say(f"max rel_gap = {worst:.3e}")
    return EXIT_OK if worst <= IDENTITY_GATE else EXIT_NUMERICAL


def cmd_residual_probe(run: Run):
    from .expansion import residual_decay_probe
    from .testfunctions import parse_test_function

    exp, model, chain, _ = _setup(run)
    xhat = np.full(model.d, float(run.args.xhat))
    grid = run.cfg.get("probe_grid", [25, 100, 400, 1600])
    rows = []
    for name in exp.f_list:
        f = parse_test_function(name, model.d)
        try:
            pr = residual_decay_probe(model, chain, exp.alpha, f, xhat, int(run.args.k), grid)
        except DegenerateRegression as exc:
            _say(f"{name}: no slope ({exc})")
            continue
        for n, v, t in zip(pr.n, pr.values, pr.terms):
            rows.append([model.name, float(n), exp.alpha, name, float(v), *map(float, t),
                         pr.slope, pr.predicted])
        _say(f"{name}: slope={pr.slope:.4f} predicted={pr.predicted:.4f}")
    run.write_table("residual_probe", ["model", "n", "alpha", "f", "sum_R", "R1", "R2", "R3", "R4",
                                       "R5", "R6", "slope", "predicted_exponent"], rows)
    return EXIT_OK


def cmd_convergence(run: Run):
    from .experiment import CONVERGENCE_COLUMNS, ExperimentConfig, run_convergence

    exp = ExperimentConfig.from_dict(run.cfg)
    res = run_convergence(exp, seed=run.seed, threads=run.args.threads)
    rows = [r.as_list() for r in res.rows]
    if res.failure:
        rows.append([f"FAILED:{res.failure}"] + [""] * (len(CONVERGENCE_COLUMNS) - 1))
    run.write_table("convergence", CONVERGENCE_COLUMNS, rows)
    summary = {}
    for tag, fit in res.slopes.items():
        summary[tag] = None if fit is None else {
            "slope": fit.slope, "se": fit.se, "ci95": [fit.ci_low, fit.ci_high],
            "predicted": fit.predicted}
        if fit is not None:
            _say(f"{tag}: slope={fit.slope:.3f} CI95=[{fit.ci_low:.3f}, {fit.ci_high:.3f}] "
                 f"predicted={fit.predicted:.3f}")
    run.write_json("convergence_summary", summary)
    if res.failure:
        raise res.failure_error
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "fluid": cmd_fluid,
    "diffusion": cmd_diffusion,
    "simulate": cmd_simulate,
    "drift-check": cmd_drift_check,
    "identity-check": cmd_identity_check,
    "residual-probe": cmd_residual_probe,
    "convergence": cmd_convergence,
}


def build_parser():
    p = _Parser(prog="regime-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"regime-lab {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="model/experiment JSON file")
        sp.add_argument("--out", default="regime-lab-out", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--format", choices=["csv", "json"], default="csv")
        sp.add_argument("--n", type=float, default=None, help="scale parameter")
        if name == "identity-check":
            sp.add_argument("--points", type=int, default=20)
        if name == "residual-probe":
            sp.add_argument("--xhat", type=float, default=0.5)
            sp.add_argument("--k", type=int, default=0)
        if name == "drift-check":
            sp.add_argument("--radius", type=float, default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        run = Run(args, sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"regime-lab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"regime-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        code = COMMANDS[args.command](run)
    except ValidationError as exc:
        print(f"regime-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_VALIDATION
    except NumericalError as exc:
        print(f"regime-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except (KeyError, TypeError) as exc:
        print(f"regime-lab: ValidationError: malformed config ({exc})", file=sys.stderr)
        code = EXIT_VALIDATION
    except RegimeLabError as exc:  # pragma: no cover - every error is one of the two families
        print(f"regime-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    run.manifest("ok" if code == EXIT_OK else f"exit {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
