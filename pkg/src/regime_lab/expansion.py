"""Generator expansion: correction functions, residual operators, identity check.

For a smooth ``f`` the correction ``g[f] = g1 + g2 + g3`` turns the joint
generator applied to ``f + g[f]`` into the diffusion generator plus six
residual terms. Both sides are evaluated independently here, so the gap
between them measures the whole chain of definitions at once.

The second-order Taylor remainder carries the factor 1/2:
``D0 f = f(x + h z) - f(x) - h z . grad f - (h^2 / 2) z^T hess f z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import DiffusionSpec, build_diffusion
from .errors import DegenerateRegression, MissingDerivatives, ValidationError
from .generators import apply_An, apply_hatL, apply_Lk, neumaier_sum
from .markov_env import ModulatingChain
from .model import JumpModel, ScalingContext, covariance, drift, make_context
from .testfunctions import RegimeFunction, TestFunction


@dataclass(frozen=True, eq=False)
class ExpansionContext:
    model: JumpModel
    ctx: ScalingContext
    chain: ModulatingChain
    diff: DiffusionSpec
    f: TestFunction
    C: np.ndarray = field(repr=False)  # C[k] = Xi(x*, k)

    @classmethod
    def create(cls, model, ctx, chain, f, diff=None) -> "ExpansionContext":
        if not f.has_derivatives:
            raise MissingDerivatives(f"{f.tag!r} needs gradient and Hessian")
        if diff is None:
            diff = build_diffusion(model, ctx, chain)
        elif diff.model is not model or diff.ctx.n != ctx.n or diff.ctx.alpha != ctx.alpha:
            raise ValidationError("diffusion spec was built from a different model or scale")
        C = np.array([drift(model, ctx.n, ctx.x_star, k) for k in range(model.K)])
        return cls(model, ctx, chain, diff, f, C)

    @property
    def pi(self):
        return self.chain.p

    @property
    def ups(self):
        return self.chain.ups

    # -- scaled field helpers, X in scaled coordinates
    def xi_hat(self, X, k):
        return self.ctx.h * drift(self.model, self.ctx.n, self.ctx.to_lattice(X), k)

    def gamma_bar(self, X, k):
        return self.ctx.h ** 2 * covariance(self.model, self.ctx.n, self.ctx.to_lattice(X), k)

    def abar(self, X):
        return sum(self.pi[k] * self.gamma_bar(X, k) for k in range(self.model.K))

    def rates(self, X, k):
        return self.model.rates(self.ctx.to_lattice(X), k, self.ctx.n)


def gt1(ec: ExpansionContext, X, k):
    """Drift and covariance mismatch of regime ``k``, contracted with derivatives."""
    f = ec.f
    g, H = f.grad(X), f.hess(X)
    zero = np.zeros(ec.model.d)
    b = ec.diff.bbar(X)
    first = ((b - (ec.xi_hat(X, k) - ec.xi_hat(zero, k))) * g).sum(axis=-1)
    second = 0.5 * np.einsum("...ij,...ij->...", ec.abar(X) - ec.gamma_bar(X, k), H)
    return first + second


def gt2(ec: ExpansionContext, X, k):
    """Deviation-weighted rate fluctuations contracted with the Hessian."""
    model, ctx = ec.model, ec.ctx
    H = ec.f.hess(X)
    R = np.stack([ec.rates(X, l) for l in range(model.K)])  # (K, ..., J)
    pi, ups = ec.pi, ec.ups
    # W[..., j, h] = sum_l pi_l xi_j(l) ups_lh - xi_j(k) ups_kh
    avg = np.einsum("l,l...j,lh->...jh", pi, R, ups)
    W = avg - R[k][..., None] * ups[k][None, :]
    z = model.jumps.astype(float)
    # v[..., j, h] = z_j^T H c(h)
    v = np.einsum("ja,...ab,hb->...jh", z, H, ec.C)
    return ctx.n ** (-ctx.alpha - 2 * ctx.beta) * (W * v).sum(axis=(-1, -2))


def g3_value(ec: ExpansionContext, X, k):
    ctx = ec.ctx
    g = ec.f.grad(X)
    w = ec.ups[k] @ ec.C  # (d,)
    return ctx.n ** (-ctx.alpha - ctx.beta) * (g * w).sum(axis=-1)


def _lift(ec, tilde):
    """``n^-alpha sum_l T_kl tilde(x, l)``."""
    T = ec.chain.t

    def value(X, k):
        vals = [tilde(ec, X, l) for l in range(ec.model.K)]
        return ec.ctx.n ** (-ec.ctx.alpha) * sum(T[k, l] * vals[l] for l in range(ec.model.K))

    return value


@dataclass(frozen=True)
class GFunctions:
    g1: RegimeFunction
    g2: RegimeFunction
    g3: RegimeFunction
    g: RegimeFunction


def g_functions_of(ec: ExpansionContext) -> GFunctions:
    K = ec.model.K
    g1 = RegimeFunction(_lift(ec, gt1), K, "g1")
    g2 = RegimeFunction(_lift(ec, gt2), K, "g2")
    g3 = RegimeFunction(lambda X, k: g3_value(ec, X, k), K, "g3")
    g = RegimeFunction(lambda X, k: g1.value(X, k) + g2.value(X, k) + g3.value(X, k), K, "g")
    return GFunctions(g1, g2, g3, g)


def g_functions(ec: ExpansionContext, xhat, k):
    """Values ``(g1, g2, g3, g)`` at ``(xhat, k)``."""
    G = g_functions_of(ec)
    X = np.asarray(xhat, dtype=float)
    v1, v2, v3 = G.g1.value(X, k), G.g2.value(X, k), G.g3.value(X, k)
    return v1, v2, v3, v1 + v2 + v3


def residuals(ec: ExpansionContext, xhat, k, G: GFunctions | None = None):
    """The six residual terms at ``(xhat, k)``."""
    model, ctx, f = ec.model, ec.ctx, ec.f
    X = np.asarray(xhat, dtype=float)
    G = G or g_functions_of(ec)
    h = ctx.h
    z = model.jumps.astype(float)
    fx, g, H = f.value(X), f.grad(X), f.hess(X)
    r = ec.rates(X, k)  # (..., J)
    pi, ups, C = ec.pi, ec.ups, ec.C
    zero = np.zeros(model.d)

    d0, d1 = [], []
    for j in range(model.J):
        Y = X + h * z[j]
        lin = h * (g @ z[j])
        quad = 0.5 * h * h * np.einsum("a,...ab,b->...", z[j], H, z[j])
        d0.append(r[..., j] * (f.value(Y) - fx - lin - quad))
        d1.append((f.grad(Y) - g - h * np.einsum("a,...ab->...b", z[j], H)))
    R1 = neumaier_sum(d0)

    dG = sum(pi[l] * (ec.gamma_bar(X, l) - ec.gamma_bar(zero, l)) for l in range(model.K))
    R2 = 0.5 * np.einsum("...ij,...ij->...", dG, H)

    # R3: sum_{ij,l,h} (Xi_i(x, l) - Xi_i(x*, l)) c_j(h) pi_l ups_lh H_ij
    xl = ctx.to_lattice(X)
    dXi = np.stack([drift(model, ctx.n, xl, l) - C[l] for l in range(model.K)])  # (K, ..., d)
    mix = np.einsum("l...i,l,lh,hj->...ij", dXi, pi, ups, C)
    R3 = ctx.n ** (-ctx.alpha - 2 * ctx.beta) * np.einsum("...ij,...ij->...", mix, H)

    w = ups[k] @ C  # (d,)
    R4 = ctx.n ** (-ctx.alpha - ctx.beta) * neumaier_sum(
        [r[..., j] * (d1[j] @ w) for j in range(model.J)])

    R5 = apply_Lk(model, ctx, G.g1, X, k)
    R6 = apply_Lk(model, ctx, G.g2, X, k)
    return R1, R2, R3, R4, R5, R6


@dataclass
class IdentityReport:
    lhs: np.ndarray
    rhs: np.ndarray
    abs_gap: np.ndarray
    rel_gap: np.ndarray
    R: tuple
    scale: np.ndarray


def check_identity(ec: ExpansionContext, xhat, k) -> IdentityReport:
    """Evaluate both sides of the expansion identity independently."""
    model, ctx, f = ec.model, ec.ctx, ec.f
    X = np.asarray(xhat, dtype=float)
    G = g_functions_of(ec)
    lhs_f = apply_hatL(model, ctx, ec.chain, f, X, k)
    lhs_g = apply_hatL(model, ctx, ec.chain, G.g, X, k)
    lhs = lhs_f + lhs_g
    af = apply_An(ec.diff, f, X)
    R = residuals(ec, X, k, G)
    rhs = neumaier_sum([af, *R])
    gap = np.abs(lhs - rhs)
    scale = np.maximum.reduce([np.abs(lhs), np.abs(rhs), np.abs(lhs_f), np.abs(lhs_g),
                               np.abs(af), *[np.abs(t) for t in R]])
    rel = np.where(scale > 0, gap / np.where(scale > 0, scale, 1.0), 0.0)
    return IdentityReport(lhs, rhs, gap, rel, R, scale)


@dataclass
class DecayProbe:
    n: np.ndarray
    values: np.ndarray
    slope: float
    predicted: float
    terms: np.ndarray  # (len(n), 6)
    floor: np.ndarray | None = None  # roundoff level per n


ROUNDOFF_FACTOR = 64 * np.finfo(float).eps


def loglog_slope(n, values, floor=None):
    """Least-squares slope of ``log |values|`` on ``log n``.

    Values below ``floor`` (default ``1e-14``; may be per point) are treated
    as exact zeros and dropped.
    """
    n = np.asarray(n, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    floor = np.broadcast_to(1e-14 if floor is None else np.maximum(floor, 1e-14), v.shape)
    if np.all(v < floor):
        raise DegenerateRegression("all residual values are at roundoff level")
    keep = v >= floor
    if keep.sum() < 2:
        raise DegenerateRegression("need at least two nonzero values")
    A = np.vstack([np.log(n[keep]), np.ones(keep.sum())]).T
    coef, *_ = np.linalg.lstsq(A, np.log(v[keep]), rcond=None)
    return float(coef[0])


def predicted_exponent(alpha: float) -> float:
    return -min(alpha / 2.0, 0.5)


def residual_decay_probe(model: JumpModel, chain: ModulatingChain, alpha: float,
                         f: TestFunction, xhat, k: int, n_grid=(25, 100, 400, 1600)) -> DecayProbe:
    """Slope of ``|sum_i R_i[f](xhat, k)|`` against ``n`` on a log-log scale.

    Each value is compared with the largest term of the identity at the same
    ``n``; values within a few ulps of that scale are cancellation noise and
    count as zero. Raises ``DegenerateRegression`` when nothing survives,
    e.g. for linear ``f`` on a model whose residuals vanish identically.
    """
    X = np.asarray(xhat, dtype=float)
    vals, terms, floor = [], [], []
    for n in n_grid:
        ctx = make_context(model, n, alpha, chain)
        ec = ExpansionContext.create(model, ctx, chain, f)
        rep = check_identity(ec, X, k)
        terms.append([float(t) for t in rep.R])
        vals.append(float(neumaier_sum(rep.R)))
        floor.append(ROUNDOFF_FACTOR * float(rep.scale))
    vals, floor = np.array(vals), np.array(floor)
    return DecayProbe(np.array(n_grid, dtype=float), vals, loglog_slope(n_grid, vals, floor),
                      predicted_exponent(alpha), np.array(terms), floor)
