"""Exact generator evaluation on test functions.

All generators are finite sums over the jump list, taken in jump-list order
with compensated (Neumaier) summation. Points ``xhat`` are scaled
coordinates of shape ``(d,)`` or ``(N, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MissingDerivatives
from .markov_env import ModulatingChain
from .model import JumpModel, PhiPsiSplit, ScalingContext
from .testfunctions import value_at


@dataclass(frozen=True)
class GeneratorValue:
    value: np.ndarray
    terms: np.ndarray  # (J, ...) per-jump contributions


def neumaier_sum(terms) -> np.ndarray:
    """Compensated sum of a sequence of equally shaped arrays."""
    terms = list(terms)
    if not terms:
        return np.array(0.0)
    s = np.array(terms[0], dtype=float)
    c = np.zeros_like(s)
    for t in terms[1:]:
        t = np.asarray(t, dtype=float)
        u = s + t
        big = np.abs(s) >= np.abs(t)
        c = c + np.where(big, (s - u) + t, (t - u) + s)
        s = u
    return s + c


def _points(xhat):
    return np.asarray(xhat, dtype=float)


def _increments(model: JumpModel, ctx: ScalingContext, f, X, k):
    """``f(x + h z, k) - f(x, k)`` for each jump, shape ``(J, ...)``."""
    base = value_at(f, X, k)
    z = model.jumps.astype(float) * ctx.h
    return np.stack([value_at(f, X + z[j], k) - base for j in range(model.J)])


def _finish(terms, return_terms):
    val = neumaier_sum(terms)
    if return_terms:
        return GeneratorValue(val, np.asarray(terms))
    return val


def jump_sum(model, ctx, rates, f, xhat, k, return_terms=False):
    """``sum_z rates_z (f(x + h z) - f(x))`` with ``rates`` of shape ``(..., J)``."""
    X = _points(xhat)
    inc = _increments(model, ctx, f, X, k)
    terms = [rates[..., j] * inc[j] for j in range(model.J)]
    return _finish(terms, return_terms)


def apply_Lk(model: JumpModel, ctx: ScalingContext, f, xhat, k, return_terms=False):
    """Birth-death part ``L_k f(xhat)`` in regime ``k``."""
    X = _points(xhat)
    r = model.rates(ctx.to_lattice(X), k, ctx.n)
    return jump_sum(model, ctx, r, f, X, k, return_terms)


def _q_matrix(Q):
    if isinstance(Q, ModulatingChain):
        return Q.q
    if hasattr(Q, "entries"):
        return Q.entries
    return np.asarray(Q, dtype=float)


def apply_Qn(f, xhat, k, ctx: ScalingContext, Q):
    """``n^alpha sum_l q_kl f(xhat, l)``; zero for regime-independent ``f``."""
    X = _points(xhat)
    q = _q_matrix(Q)
    if not getattr(f, "regime_dependent", False):
        return np.zeros(X.shape[:-1])
    terms = [q[k, l] * f.value(X, l) for l in range(q.shape[0])]
    return ctx.na * neumaier_sum(terms)


def apply_hatL(model, ctx, Q, f, xhat, k):
    """Joint generator ``L_k f + Q^n f`` at ``(xhat, k)``."""
    return apply_Lk(model, ctx, f, xhat, k) + apply_Qn(f, xhat, k, ctx, Q)


def averaged_rates(model: JumpModel, ctx: ScalingContext, pi, X):
    x = ctx.to_lattice(X)
    return neumaier_sum([pi[k] * model.rates(x, k, ctx.n) for k in range(model.K)])


def apply_averaged(model, ctx, pi, f, xhat, return_terms=False):
    """Averaged generator with rates ``rbar = sum_k pi_k xi(., k)``."""
    pi = np.asarray(pi.pi if hasattr(pi, "pi") else pi, dtype=float)
    X = _points(xhat)
    r = averaged_rates(model, ctx, pi, X)
    return jump_sum(model, ctx, r, f, X, None, return_terms)


def apply_breve(model, ctx, pi, f, xhat, k):
    """``(Lbar - L_k) f``: jump sum with rates ``rbar - xi(., k)``."""
    pi = np.asarray(pi.pi if hasattr(pi, "pi") else pi, dtype=float)
    X = _points(xhat)
    x = ctx.to_lattice(X)
    r = averaged_rates(model, ctx, pi, X) - model.rates(x, k, ctx.n)
    return jump_sum(model, ctx, r, f, X, None)


def apply_Gk(split: PhiPsiSplit, ctx, f, xhat, k, return_terms=False):
    """Operator with rates ``phi_k + psi_bar`` (not clipped)."""
    X = _points(xhat)
    x = ctx.to_lattice(X)
    r = split.phi(x, k, ctx.n) + split.psi_bar(x, ctx.n)
    return jump_sum(split.model, ctx, r, f, X, k, return_terms)


def apply_Gk_breve(split: PhiPsiSplit, ctx, f, xhat, k):
    """``(G_k - L_k) f`` on the lattice: rates ``psi_bar - psi_k``."""
    X = _points(xhat)
    x = ctx.to_lattice(X)
    r = split.psi_bar(x, ctx.n) - split.psi(x, k, ctx.n)
    return jump_sum(split.model, ctx, r, f, X, None)


def apply_An(diff, f, x):
    """Diffusion generator ``bbar . grad f + (1/2) Sigma : hess f``."""
    if not getattr(f, "has_derivatives", False):
        raise MissingDerivatives(f"{getattr(f, 'tag', f)!r} lacks derivatives")
    X = _points(x)
    b = diff.bbar(X)
    g = f.grad(X)
    H = f.hess(X)
    first = (b * g).sum(axis=-1)
    second = 0.5 * np.einsum("ij,...ij->...", diff.sigma2, H)
    return first + second
