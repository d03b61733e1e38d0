"""Steady-state convergence experiment and configuration handling."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .diffusion import (
    build_diffusion,
    simulate_em,
    stationary_gaussian,
)
from .errors import DegenerateRegression, NonlinearDrift, RegimeLabError, ValidationError
from .expansion import predicted_exponent
from .markov_env import ModulatingChain
from .model import JumpModel, make_context, model_from_config
from .simulator import SimConfig, simulate_joint
from .testfunctions import parse_test_function

Z95 = 1.96
CONVERGENCE_COLUMNS = ["model", "n", "alpha", "beta", "f", "pi_hat", "pi_se", "nu_hat", "nu_se",
                       "gap", "gap_se", "predicted_exponent"]


@dataclass
class ExperimentConfig:
    model: dict
    alpha: float
    n_grid: list = field(default_factory=lambda: [25, 100, 400])
    f_list: list = field(default_factory=lambda: ["x", "x2"])
    sim: dict = field(default_factory=lambda: {"horizon": 5000.0})
    em: dict = field(default_factory=lambda: {"dt": 1e-3, "T": 2000.0})
    lattice: dict = field(default_factory=lambda: {"radius": 10.0, "step": 1})
    output: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.f_list:
            raise ValidationError("f_list must not be empty")
        grid = [float(n) for n in self.n_grid]
        if any(b <= a for a, b in zip(grid, grid[1:])) or not grid:
            raise ValidationError(f"n_grid must be strictly increasing, got {self.n_grid}")
        if not self.alpha > 0:
            raise ValidationError("alpha must be positive")

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        model = dict(cfg.get("model", cfg))
        if "Q" in cfg and "Q" not in model:
            model["Q"] = cfg["Q"]
        kw = {k: v for k, v in cfg.items() if k in known and k != "model"}
        kw.setdefault("alpha", cfg.get("alpha", model.get("alpha", 1.0)))
        return cls(model=model, **kw)

    def build(self):
        """``(model, chain)`` from the model section."""
        model = model_from_config(self.model)
        chain = chain_from_config(self.model, model.K)
        validate_functions(self.f_list, model.d)
        return model, chain

    def sim_config(self, seed=None, threads=None) -> SimConfig:
        kw = {k: v for k, v in self.sim.items() if k in {f.name for f in fields(SimConfig)}}
        if seed is not None:
            kw["seed"] = int(seed)
        if threads is not None:
            kw["threads"] = int(threads)
        if "max_events" in kw:
            kw["max_events"] = int(float(kw["max_events"]))
        return SimConfig(**kw)


def chain_from_config(cfg: dict, K: int) -> ModulatingChain:
    Q = cfg.get("Q")
    if Q is None:
        if K != 1:
            raise ValidationError("a rate matrix Q is required for K > 1 regimes")
        Q = [[0.0]]
    chain = ModulatingChain.from_matrix(Q)
    if chain.K != K:
        raise ValidationError(f"Q has {chain.K} states but the model has {K} regimes")
    return chain


def validate_functions(names, d):
    return [parse_test_function(nm, d) for nm in names]


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


@dataclass
class ConvergenceRow:
    model: str
    n: float
    alpha: float
    beta: float
    f: str
    pi_hat: float
    pi_se: float
    nu_hat: float
    nu_se: float
    gap: float
    gap_se: float
    predicted_exponent: float

    def as_list(self):
        d = asdict(self)
        return [d[c] for c in CONVERGENCE_COLUMNS]


@dataclass
class SlopeFit:
    slope: float
    se: float
    ci_low: float
    ci_high: float
    predicted: float

    def intersects(self, lo, hi) -> bool:
        return self.ci_low <= hi and self.ci_high >= lo


def wls_slope(n, gap, gap_se, predicted=float("nan")) -> SlopeFit:
    """Weighted least squares of ``log gap`` on ``log n``.

    Weights ``(gap / gap_se)^2`` come from the delta method for the log.
    """
    n = np.asarray(n, dtype=float)
    g = np.asarray(gap, dtype=float)
    s = np.asarray(gap_se, dtype=float)
    if n.size < 2 or np.unique(n).size < 2:
        raise DegenerateRegression("need at least two distinct n values")
    if np.any(~(g > 0)):
        raise DegenerateRegression("gaps must be positive for a log-log fit")
    x, y = np.log(n), np.log(g)
    if np.all(s > 0):
        w = (g / s) ** 2
    else:
        w = np.ones_like(g)
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * (y - ym)) / sxx)
    se = float(np.sqrt(1.0 / sxx)) if np.all(s > 0) else float("nan")
    return SlopeFit(slope, se, slope - Z95 * se, slope + Z95 * se, predicted)


def strictly_decreasing(rows, k_se: float = 2.0):
    """Per consecutive pair: ``gap_i - gap_{i+1} > k_se * sqrt(se_i^2 + se_{i+1}^2)``."""
    return [a.gap - b.gap > k_se * np.hypot(a.gap_se, b.gap_se) for a, b in zip(rows, rows[1:])]


@dataclass
class ConvergenceResult:
    rows: list
    slopes: dict
    failure: str | None = None
    failure_error: BaseException | None = None


def reference_moments(model: JumpModel, ctx, chain, funcs, em_cfg: dict, seed: int, reps: int = 1):
    """``nu^n(f)`` exactly for affine drift, else by Euler-Maruyama."""
    diff = build_diffusion(model, ctx, chain)
    try:
        law = stationary_gaussian(diff)
        return {f.tag: (law.expect(f), 0.0) for f in funcs}
    except NonlinearDrift:
        pass
    out = {f.tag: [] for f in funcs}
    for r in range(reps):
        res = simulate_em(diff, float(em_cfg.get("T", 2000.0)), float(em_cfg.get("dt", 1e-3)),
                          seed=seed, funcs=funcs, rep=r,
                          batches=int(em_cfg.get("batches", 16)))
        for f in funcs:
            out[f.tag].append((res.estimates[f.tag], res.se[f.tag]))
    return {t: (float(np.mean([e for e, _ in v])),
                float(np.sqrt(sum(s * s for _, s in v)) / len(v))) for t, v in out.items()}


def run_convergence(cfg: ExperimentConfig, seed=None, threads=None, on_row=None) -> ConvergenceResult:
    model, chain = cfg.build()
    funcs = validate_functions(cfg.f_list, model.d)
    sim = cfg.sim_config(seed, threads)
    rows = []
    pred = predicted_exponent(cfg.alpha)
    try:
        for n in cfg.n_grid:
            ctx = make_context(model, n, cfg.alpha, chain)
            est = simulate_joint(model, ctx, chain, sim, funcs)
            nu = reference_moments(model, ctx, chain, funcs, cfg.em, sim.seed,
                                   int(cfg.em.get("replications", 1)))
            for f in funcs:
                p = est[f.tag]
                v, vs = nu[f.tag]
                row = ConvergenceRow(model.name, float(n), cfg.alpha, ctx.beta, f.tag, p.estimate,
                                     p.se, v, vs, abs(p.estimate - v), float(np.hypot(p.se, vs)),
                                     pred)
                rows.append(row)
                if on_row:
                    on_row(row)
    except RegimeLabError as exc:
        return ConvergenceResult(rows, {}, type(exc).__name__, exc)
    slopes = {}
    for f in funcs:
        fr = [r for r in rows if r.f == f.tag]
        try:
            slopes[f.tag] = wls_slope([r.n for r in fr], [r.gap for r in fr],
                                      [r.gap_se for r in fr], pred)
        except DegenerateRegression:
            slopes[f.tag] = None
    return ConvergenceResult(rows, slopes)
