"""Lyapunov correctors and finite-lattice drift certificates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyLattice, NoNegativeDrift, ValidationError
from .generators import (
    apply_An,
    apply_averaged,
    apply_breve,
    apply_Gk,
    apply_Gk_breve,
    apply_hatL,
)
from .markov_env import ModulatingChain
from .model import JumpModel, PhiPsiSplit, ScalingContext, lattice_points
from .testfunctions import RegimeFunction, TestFunction, value_at

DEFAULT_RADIUS = 10.0
FLOOR_FRACTION = 0.25


@dataclass
class LyapunovCandidate:
    f: TestFunction
    kind: str = ""

    def __post_init__(self):
        if not self.kind:
            self.kind = self.f.tag

    def check_norm_like(self, rays: int = 16, r0: float = 10.0, r1: float = 1000.0, seed=0) -> bool:
        """Monotone growth along random rays beyond radius ``r0``."""
        rng = np.random.default_rng(seed)
        dirs = rng.normal(size=(rays, self.f.d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = np.geomspace(r0, r1, 24)
        vals = self.f.value(radii[None, :, None] * dirs[:, None, :])
        return bool(np.all(np.diff(vals, axis=1) > 0))


@dataclass(frozen=True)
class Lattice:
    points: np.ndarray  # lattice coordinates, (N, d)
    xhat: np.ndarray  # scaled coordinates, (N, d)
    radius: float
    step: int

    def __len__(self):
        return self.points.shape[0]


def scaled_lattice(ctx: ScalingContext, radius: float = DEFAULT_RADIUS, step: int = 1) -> Lattice:
    """All orthant lattice points with ``|xhat|_inf <= radius``, thinned by ``step``."""
    pts = lattice_points(ctx, radius, step)
    if pts.shape[0] == 0:
        raise EmptyLattice(f"no lattice points within scaled radius {radius}")
    return Lattice(pts, ctx.to_scaled(pts), float(radius), int(step))


@dataclass
class DriftCertificate:
    c1: float
    c2: float
    margin: float
    worst_point: tuple
    lattice: dict
    v0: float
    points: int
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.c2 > 0 and self.margin >= 0)

    def as_dict(self):
        return {"c1": self.c1, "c2": self.c2, "margin": self.margin,
                "worst_point": [list(map(float, self.worst_point[0])), self.worst_point[1]],
                "lattice": self.lattice, "v0": self.v0, "points": self.points,
                "passed": self.passed}


def extract_constants(lv, vv, xhat, regimes, lattice_desc, v0=None) -> DriftCertificate:
    """Constants ``C1, C2`` with ``LV <= C1 - C2 V`` on the given points.

    ``C2`` is the smallest ratio ``-LV / V`` over points with ``V >= v0``;
    ``C1`` then absorbs everything else.
    """
    lv = np.asarray(lv, dtype=float).reshape(-1)
    vv = np.asarray(vv, dtype=float).reshape(-1)
    if lv.size == 0:
        raise EmptyLattice("no points to certify")
    if v0 is None:
        v0 = FLOOR_FRACTION * float(vv.max())
    outer = vv >= v0
    if not outer.any() or not v0 > 0:
        raise NoNegativeDrift(f"no lattice point with V >= v0 = {v0!r}")
    c2 = float(np.min(-lv[outer] / vv[outer]))
    slack = lv + c2 * vv
    c1 = max(0.0, float(slack.max()))
    gap = c1 - slack
    i = int(np.argmin(gap))
    cert = DriftCertificate(c1, c2, float(gap[i]), (xhat[i], int(regimes[i])), lattice_desc,
                            float(v0), int(lv.size))
    if not c2 > 0:
        raise NoNegativeDrift(f"extracted C2 = {c2:.4g} is not positive", cert)
    return cert


def build_corrector(model: JumpModel, ctx: ScalingContext, chain: ModulatingChain,
                    V: TestFunction) -> RegimeFunction:
    """``Vtilde(x, k) = n^-alpha sum_l T_kl (Lbar - L_l) V(x)``."""
    T = chain.t
    pi = chain.p

    def value(X, k):
        terms = [apply_breve(model, ctx, pi, V, X, l) for l in range(model.K)]
        return ctx.n ** (-ctx.alpha) * sum(T[k, l] * terms[l] for l in range(model.K))

    return RegimeFunction(value, model.K, f"corrector[{V.tag}]")


def build_corrector_c21(split: PhiPsiSplit, ctx: ScalingContext, chain: ModulatingChain,
                        V: TestFunction) -> RegimeFunction:
    """Corrector driven by ``psi_bar - psi_k`` instead of ``rbar - xi_k``."""
    T = chain.t
    K = split.model.K

    def value(X, k):
        terms = [apply_Gk_breve(split, ctx, V, X, l) for l in range(K)]
        return ctx.n ** (-ctx.alpha) * sum(T[k, l] * terms[l] for l in range(K))

    return RegimeFunction(value, K, f"corrector_c21[{V.tag}]")


def corrected(V: TestFunction, Vt: RegimeFunction) -> RegimeFunction:
    """``Vhat = V + Vtilde``."""
    return RegimeFunction(lambda X, k: V.value(X) + Vt.value(X, k), Vt.K, f"hat[{V.tag}]")


def certify_drift(kind: str, V, lattice: Lattice, model: JumpModel, ctx: ScalingContext,
                  chain: ModulatingChain, split: PhiPsiSplit | None = None,
                  v0: float | None = None) -> DriftCertificate:
    """Certify ``LV <= C1 - C2 V`` on ``lattice``.

    ``kind`` selects the operator: ``"averaged"`` (regime-free ``Lbar``),
    ``"Gk"`` (``G_k`` for every regime, needs ``split``) or ``"hatL"`` (joint
    generator on a regime-dependent ``V``; a plain candidate is corrected
    first, with the split-based corrector when ``split`` is given).
    """
    X = lattice.xhat
    desc = {"radius": lattice.radius, "step": lattice.step, "n": ctx.n, "alpha": ctx.alpha,
            "operator": kind}
    if kind == "averaged":
        lv = apply_averaged(model, ctx, chain.p, V, X)
        vv = value_at(V, X, None)
        return extract_constants(lv, vv, X, np.zeros(len(X), dtype=int), desc, v0)
    if kind == "Gk":
        if split is None:
            raise ValidationError("Gk certification needs a phi/psi split")
        lv = np.concatenate([apply_Gk(split, ctx, V, X, k) for k in range(model.K)])
    elif kind == "hatL":
        if not getattr(V, "regime_dependent", False):
            Vt = (build_corrector_c21(split, ctx, chain, V) if split is not None
                  else build_corrector(model, ctx, chain, V))
            V = corrected(V, Vt)
        lv = np.concatenate([apply_hatL(model, ctx, chain, V, X, k) for k in range(model.K)])
    else:
        raise ValidationError(f"unknown operator kind {kind!r}")
    vv = np.concatenate([value_at(V, X, k) for k in range(model.K)])
    Xs = np.concatenate([X] * model.K)
    ks = np.repeat(np.arange(model.K), len(X))
    return extract_constants(lv, vv, Xs, ks, desc, v0)


@dataclass
class SandwichReport:
    violations: int
    max_lower_violation: float
    max_upper_violation: float
    worst: list
    points: int

    @property
    def holds(self) -> bool:
        return self.violations == 0


def verify_sandwich(V: TestFunction, Vhat: RegimeFunction, lattice: Lattice,
                    tol: float = 0.0, keep: int = 10) -> SandwichReport:
    """Check ``(V - 1)/2 <= Vhat <= 3V/2 + 1/2`` at every point and regime."""
    X = lattice.xhat
    v = V.value(X)
    count, lo_max, hi_max, worst = 0, 0.0, 0.0, []
    for k in range(Vhat.K):
        vh = Vhat.value(X, k)
        lo = 0.5 * (v - 1.0) - vh
        hi = vh - (1.5 * v + 0.5)
        bad = (lo > tol) | (hi > tol)
        count += int(bad.sum())
        lo_max = max(lo_max, float(lo.max()))
        hi_max = max(hi_max, float(hi.max()))
        for i in np.flatnonzero(bad)[: max(0, keep - len(worst))]:
            worst.append((X[i].tolist(), k, float(max(lo[i], hi[i]))))
    return SandwichReport(count, lo_max, hi_max, worst, len(X) * Vhat.K)


def first_passing_n(reports: dict):
    """Smallest ``n`` whose report passes, given ``{n: report}``."""
    for n in sorted(reports):
        r = reports[n]
        ok = r.holds if hasattr(r, "holds") else r.passed
        if ok:
            return n
    return None


@dataclass
class IncrementReport:
    c_first: float
    c_second: float
    c_first_doubled: float
    c_second_doubled: float
    passed: bool


def _increment_ratios(V, eps0, radius, count, rng):
    d = V.d
    X = rng.uniform(-radius, radius, size=(count, d))

    def ball(size):
        u = rng.normal(size=(size, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = eps0 * rng.uniform(0.0, 1.0, size=(size, 1)) ** (1.0 / d)
        return u * np.maximum(r, 1e-12)

    Y, Z = ball(count), ball(count)
    nx = np.linalg.norm(X, axis=1)
    ny = np.linalg.norm(Y, axis=1)
    nz = np.linalg.norm(Z, axis=1)
    vx = V.value(X)
    first = (1 + nx) * np.abs(V.value(X + Y) - vx) / (ny * (1 + vx))
    second = (1 + nx ** 2) * np.abs(V.value(X + Y + Z) - V.value(X + Y) - V.value(X + Z) + vx) \
        / (ny * nz * (1 + vx))
    return float(first.max()), float(second.max())


def verify_increment_conditions(V: TestFunction, eps0: float = 0.5, radius: float = 20.0,
                                samples: int = 20000, seed: int = 0,
                                growth: float = 1.25) -> IncrementReport:
    """Empirical suprema of the two increment ratios.

    Passes when both suprema are finite and do not grow by more than
    ``growth`` when radius and sample size are doubled.
    """
    if not eps0 > 0:
        raise ValidationError("eps0 must be positive")
    rng = np.random.default_rng(seed)
    a1, a2 = _increment_ratios(V, eps0, radius, samples, rng)
    b1, b2 = _increment_ratios(V, eps0, 2 * radius, 2 * samples, rng)
    ok = all(np.isfinite([a1, a2, b1, b2])) and b1 <= growth * a1 and b2 <= growth * a2
    return IncrementReport(a1, a2, b1, b2, bool(ok))


@dataclass
class DiffusionDriftReport:
    kappa: float
    kappa_max: float
    normalizer: float
    max_violation: float
    passed: bool


def verify_diffusion_drift(diff, V: TestFunction, kappa: float, ball_radius: float,
                           points: np.ndarray) -> DiffusionDriftReport:
    """Check ``A V <= 1_B - kappa V`` for ``c V`` with the best normalizer ``c``.

    Outside the ball the inequality is scale free; inside it fixes ``c``.
    ``kappa_max`` is the largest rate admissible outside the ball.
    """
    X = np.asarray(points, dtype=float)
    av = apply_An(diff, V, X)
    v = V.value(X)
    inside = np.linalg.norm(X, axis=-1, ord=np.inf) <= ball_radius
    out = ~inside
    kappa_max = float(np.min(-av[out] / v[out])) if out.any() else np.inf
    inner = av[inside] + kappa * v[inside] if inside.any() else np.zeros(1)
    top = float(inner.max())
    c = 1.0 if top <= 1.0 else 1.0 / top
    slack = c * av - inside.astype(float) + kappa * c * v
    viol = float(max(0.0, slack.max()))
    return DiffusionDriftReport(float(kappa), kappa_max, c, viol, bool(viol <= 1e-12 and kappa > 0))
