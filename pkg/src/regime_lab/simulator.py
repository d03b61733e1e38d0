"""Exact simulation of the joint chain and steady-state moment estimation."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels as kern
from . import rng as rng_mod
from .diffusion import batch_stats
from .errors import EventBudgetExceeded, NumericalError, ValidationError, ZeroTotalRate
from .markov_env import ModulatingChain
from .model import JumpModel, ScalingContext
from .testfunctions import Polynomial

DEFAULT_BUDGET = 5_000_000_000
UNIFORM_CHUNK = 1 << 20


@dataclass
class SimConfig:
    horizon: float
    burn_in_fraction: float = 0.2
    batches: int = 16
    seed: int = 0
    initial_state: tuple | None = None  # lattice point; default nearest to x*
    initial_regime: int = 0
    replications: int = 1
    max_events: int = DEFAULT_BUDGET
    threads: int = 1
    debug: bool = False
    histogram: bool = False

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        if not 0 <= self.burn_in_fraction < 1:
            raise ValidationError("burn_in_fraction must lie in [0, 1)")
        if self.batches < 8:
            raise ValidationError("at least 8 batches are required")
        if self.replications < 1:
            raise ValidationError("need at least one replication")


@dataclass
class FEstimate:
    estimate: float
    se: float
    batches: int
    horizon: float


@dataclass
class RepResult:
    rep: int
    batch_means: np.ndarray  # (B, M) monomial batch means
    occupation: np.ndarray  # (B, K)
    x_events: int
    j_events: int
    horizon: float
    effective_horizon: float
    hist: np.ndarray | None = None
    hist_lo: int = 0
    up: np.ndarray | None = None
    down: np.ndarray | None = None
    estimates: dict = field(default_factory=dict)


@dataclass
class SteadyStateEstimate:
    values: dict  # tag -> FEstimate (pooled over replications)
    replications: list  # RepResult
    x_events: int
    j_events: int
    occupation: np.ndarray
    occupation_se: np.ndarray
    n: float
    alpha: float

    def __getitem__(self, tag) -> FEstimate:
        return self.values[tag]


def monomial_table(funcs, d):
    monos = [(0,) * d]
    for f in funcs:
        if not isinstance(f, Polynomial):
            raise ValidationError(f"simulation estimates need polynomial test functions, got {f.tag!r}")
        for p, _ in f.monomials():
            if p not in monos:
                monos.append(p)
    return monos


def _coef(f, monos):
    c = np.zeros(len(monos))
    for p, v in f.monomials():
        c[monos.index(p)] += v
    return c


def _initial_state(ctx: ScalingContext, cfg: SimConfig):
    if cfg.initial_state is not None:
        x0 = np.array(cfg.initial_state, dtype=np.int64).reshape(-1)
    else:
        x0 = np.maximum(np.rint(ctx.x_star), 0).astype(np.int64)
    if x0.size != ctx.x_star.size or np.any(x0 < 0):
        raise ValidationError(f"initial state {x0.tolist()} is not an orthant lattice point")
    return x0


def run_replication(model: JumpModel, ctx: ScalingContext, chain: ModulatingChain, cfg: SimConfig,
                    monos, rep: int) -> RepResult:
    prog = model.compiled(ctx.n)
    x = _initial_state(ctx, cfg).copy()
    k0 = int(cfg.initial_regime)
    if not 0 <= k0 < model.K:
        raise ValidationError(f"initial regime {k0} out of range")
    qn = ctx.na * np.asarray(chain.q, dtype=float)
    np.fill_diagonal(qn, 0.0)
    powers = np.array(monos, dtype=np.int64)
    B = cfg.batches
    t_burn = cfg.burn_in_fraction * cfg.horizon
    batch_len = (cfg.horizon - t_burn) / B
    acc = np.zeros((B, len(monos)))
    occ = np.zeros((B, model.K))
    if cfg.histogram:
        if model.d != 1:
            raise ValidationError("occupancy histograms are available for d = 1 only")
        sd = 12.0 * ctx.nb
        lo = int(max(0, np.floor(ctx.x_star[0] - sd)))
        size = int(np.ceil(ctx.x_star[0] + sd)) - lo + 1
    else:
        lo, size = 0, 0
    hist = np.zeros(size)
    up = np.zeros(size, dtype=np.int64)
    down = np.zeros(size, dtype=np.int64)
    istate = np.array([k0, 0, 0], dtype=np.int64)
    fstate = np.zeros(1)
    gen = rng_mod.stream(cfg.seed, rep, rng_mod.STREAM_SSA)
    while True:
        u = gen.random(UNIFORM_CHUNK)
        status, _ = kern.ssa_run(
            x, istate, fstate, model.jumps, prog.ops, prog.args, prog.consts, prog.starts,
            prog.lens, prog.const_starts, prog.stack, qn, ctx.x_star, ctx.h, t_burn,
            cfg.horizon, batch_len, powers, acc, occ, lo, hist, up, down, u, 0,
            int(cfg.max_events), bool(cfg.debug))
        if status == kern.DONE:
            break
        if status == kern.NEED_RANDOM:
            continue
        if status == kern.ZERO_RATE:
            raise ZeroTotalRate(f"total rate vanished at x={x.tolist()}, k={int(istate[0])}")
        if status == kern.BUDGET:
            raise EventBudgetExceeded(
                f"event budget {cfg.max_events} exhausted at t={fstate[0]:.4g} of {cfg.horizon}")
        if status == kern.LEFT_ORTHANT:
            raise NumericalError(f"path left the orthant at x={x.tolist()}")
        raise NumericalError(f"unexpected kernel status {status}")
    denom = acc[:, 0:1]
    means = acc / denom
    return RepResult(rep, means, occ / occ.sum(axis=1, keepdims=True), int(istate[1]),
                     int(istate[2]), cfg.horizon, cfg.horizon - t_burn,
                     hist if size else None, lo, up if size else None, down if size else None)


def resolve_threads(requested: int | None) -> int:
    env = os.environ.get("REGIME_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"REGIME_LAB_THREADS={env!r} is not an integer") from None
    return max(1, int(requested or 1))


def simulate_joint(model: JumpModel, ctx: ScalingContext, chain: ModulatingChain, cfg: SimConfig,
                   funcs) -> SteadyStateEstimate:
    """Direct-method simulation; time averages of ``f(xhat)`` after burn-in.

    Each replication reports batch means over ``cfg.batches`` equal-time
    batches. Pooled estimates average the replications; the pooled standard
    error combines the per-replication batch-means errors.
    """
    funcs = list(funcs)
    monos = monomial_table(funcs, model.d)
    model.compiled(ctx.n)  # compile once before threads start
    threads = resolve_threads(cfg.threads)
    reps = range(cfg.replications)
    if threads > 1 and cfg.replications > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda r: run_replication(model, ctx, chain, cfg, monos, r), reps))
    else:
        results = [run_replication(model, ctx, chain, cfg, monos, r) for r in reps]
    results.sort(key=lambda r: r.rep)

    values = {}
    for f in funcs:
        c = _coef(f, monos)
        ests, ses = [], []
        for r in results:
            e, s = batch_stats(r.batch_means @ c)
            r.estimates[f.tag] = (e, s)
            ests.append(e)
            ses.append(s)
        ests = np.array(ests)
        if np.all(ests == ests[0]):
            est = float(ests[0])
        else:
            est = float(ests.mean())
        se = float(np.sqrt(np.sum(np.square(ses))) / len(results))
        values[f.tag] = FEstimate(est, se, cfg.batches * len(results),
                                  sum(r.effective_horizon for r in results))
    occ_all = np.concatenate([r.occupation for r in results])
    occ_mean = occ_all.mean(axis=0)
    occ_se = occ_all.std(axis=0, ddof=1) / np.sqrt(occ_all.shape[0])
    xe = sum(r.x_events for r in results)
    je = sum(r.j_events for r in results)
    per_batch = (xe + je) * (1 - cfg.burn_in_fraction) / (cfg.batches * len(results))
    if per_batch < 100:
        warnings.warn(f"only about {per_batch:.0f} events per batch; batch means may be unreliable",
                      RuntimeWarning, stacklevel=2)
    return SteadyStateEstimate(values, results, xe, je, occ_mean, occ_se, ctx.n, ctx.alpha)


def start_sensitivity(model, ctx, chain, cfg: SimConfig, funcs) -> dict:
    """Difference between estimates started at ``x*`` and at the origin."""
    from dataclasses import replace

    a = simulate_joint(model, ctx, chain, cfg, funcs)
    b = simulate_joint(model, ctx, chain, replace(cfg, initial_state=(0,) * model.d), funcs)
    return {t: (a[t].estimate - b[t].estimate, float(np.hypot(a[t].se, b[t].se))) for t in a.values}


@dataclass
class OccupationReport:
    n: np.ndarray
    ratio: np.ndarray  # J-events / X-events
    slope: float | None
    expected_slope: float
    j_rate: np.ndarray  # J-events per unit time
    slow_mixing: list


def occupation_check(estimates, alpha: float, min_j_rate: float = 10.0) -> OccupationReport:
    """J/X event ratio across an ``n`` grid; expected to scale like ``n^(alpha-1)``."""
    ns = np.array([e.n for e in estimates], dtype=float)
    ratio = np.array([e.j_events / max(e.x_events, 1) for e in estimates])
    horizon = np.array([sum(r.horizon for r in e.replications) for e in estimates])
    j_rate = np.array([e.j_events for e in estimates]) / horizon
    slope = None
    if len(ns) >= 2 and np.all(ratio > 0):
        slope = float(np.polyfit(np.log(ns), np.log(ratio), 1)[0])
    slow = [float(n) for n, r in zip(ns, j_rate) if r < min_j_rate]
    return OccupationReport(ns, ratio, slope, alpha - 1.0, j_rate, slow)


# ----------------------------------------------------- truncated exact chain

@dataclass
class TruncatedStationary:
    moments: dict  # tag -> value
    mass_at_edge: float
    states: int


def truncated_stationary(model: JumpModel, ctx: ScalingContext, chain: ModulatingChain, funcs,
                         width: float = 12.0) -> TruncatedStationary:
    """Stationary law of the joint chain censored to ``|xhat|_inf <= width``.

    Jumps leaving the box are suppressed. Used as an exact oracle for
    ``pi^n(f)`` when the box carries negligible mass at its edge.
    """
    from .model import lattice_points

    pts = lattice_points(ctx, width)
    N = pts.shape[0]
    K = model.K
    index = {tuple(p.astype(np.int64)): i for i, p in enumerate(pts)}
    rows, cols, vals = [], [], []
    for k in range(K):
        r = model.rates(pts, k, ctx.n)
        for j, z in enumerate(model.jumps):
            tgt = pts + z
            for i in range(N):
                if r[i, j] <= 0:
                    continue
                t = index.get(tuple(tgt[i].astype(np.int64)))
                if t is None:
                    continue
                rows.append(k * N + i)
                cols.append(k * N + t)
                vals.append(r[i, j])
        for l in range(K):
            if l != k and chain.q[k, l] > 0:
                rows.extend(k * N + np.arange(N))
                cols.extend(l * N + np.arange(N))
                vals.extend([ctx.na * chain.q[k, l]] * N)
    G = sp.csr_matrix((vals, (rows, cols)), shape=(K * N, K * N))
    G = G - sp.diags(np.asarray(G.sum(axis=1)).ravel())
    A = G.T.tolil()
    A[0, :] = np.ones(K * N)
    b = np.zeros(K * N)
    b[0] = 1.0
    p = spla.spsolve(A.tocsc(), b)
    p = np.maximum(p, 0.0)
    p /= p.sum()
    marg = p.reshape(K, N).sum(axis=0)
    xh = ctx.to_scaled(pts)
    edge = np.abs(xh).max(axis=1) >= width - 2 * ctx.h
    moments = {f.tag: float(marg @ f.value(xh)) for f in funcs}
    return TruncatedStationary(moments, float(marg[edge].sum()), K * N)
