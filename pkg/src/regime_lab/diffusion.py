"""Approximating diffusion: coefficients, limits, Gaussian laws, Euler-Maruyama."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import _kernels as kern
from . import rng as rng_mod
from .errors import (
    IndefiniteCovariance,
    LimitNotConverged,
    NonlinearDrift,
    NumericalBlowup,
    UnstableDrift,
    ValidationError,
)
from .markov_env import ModulatingChain
from .model import JumpModel, ScalingContext, covariance, drift, make_context
from .testfunctions import Polynomial

PSD_TOL = 1e-10


def symmetric_sqrt(S, tol=PSD_TOL):
    """Symmetric square root by eigendecomposition, clipping tiny negative modes."""
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -tol * scale:
        raise IndefiniteCovariance(f"covariance has eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def theta_matrix(C, pi, ups, scale=1.0):
    """``2 scale C^T diag(pi) Upsilon C``, unsymmetrized. ``C[k, i] = Xi_i(x*, k)``."""
    return 2.0 * scale * (C.T * pi) @ ups @ C


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    model: JumpModel
    ctx: ScalingContext
    pi: np.ndarray
    sigma2: np.ndarray
    sigma: np.ndarray
    theta: np.ndarray
    theta_raw: np.ndarray
    abar0: np.ndarray
    provenance: tuple

    @property
    def d(self) -> int:
        return self.model.d

    def bbar(self, Y):
        """``bbar(y) = n^-beta sum_k pi_k Xi(n^beta y + x*, k)``."""
        Y = np.asarray(Y, dtype=float)
        x = self.ctx.to_lattice(Y)
        return self.ctx.h * sum(self.pi[k] * drift(self.model, self.ctx.n, x, k)
                                for k in range(self.model.K))

    def drift_jacobian(self, y=None, step=1e-3):
        y = np.zeros(self.d) if y is None else np.asarray(y, dtype=float)
        jac = np.empty((self.d, self.d))
        for i in range(self.d):
            e = np.zeros(self.d)
            e[i] = step
            jac[:, i] = (self.bbar(y + e) - self.bbar(y - e)) / (2 * step)
        return jac

    def as_dict(self):
        return {
            "model": self.provenance[0], "n": self.provenance[1], "alpha": self.provenance[2],
            "beta": self.ctx.beta, "x_star": self.ctx.x_star.tolist(),
            "drift_jacobian_at_0": self.drift_jacobian().tolist(),
            "abar0": self.abar0.tolist(), "theta": self.theta.tolist(),
            "Sigma": self.sigma2.tolist(), "sigma": self.sigma.tolist(),
        }


def build_diffusion(model: JumpModel, ctx: ScalingContext, chain: ModulatingChain) -> DiffusionSpec:
    pi = np.asarray(chain.p)
    n, a, b = ctx.n, ctx.alpha, ctx.beta
    C = np.array([drift(model, n, ctx.x_star, k) for k in range(model.K)])
    gams = np.array([covariance(model, n, ctx.x_star, k) for k in range(model.K)])
    abar0 = np.einsum("k,kij->ij", pi, gams) * n ** (-2 * b)
    theta_raw = theta_matrix(C, pi, chain.ups, n ** (-a - 2 * b))
    # only the symmetric part of theta enters the generator
    theta = 0.5 * (theta_raw + theta_raw.T)
    sigma2 = abar0 + theta
    sigma2 = 0.5 * (sigma2 + sigma2.T)
    sigma = symmetric_sqrt(sigma2)
    return DiffusionSpec(model, ctx, pi, sigma2, sigma, theta, theta_raw, abar0,
                         (model.name, n, a))


# ------------------------------------------------------------------- limits

@dataclass(frozen=True)
class LimitDiffusionSpec:
    alpha: float
    xi_bar: np.ndarray  # (K, d)
    gamma_bar: np.ndarray  # (K, d, d)
    theta_limit: np.ndarray
    sigma_alpha2: np.ndarray
    n_ref: float
    empirical: bool
    model: JumpModel = field(repr=False)
    pi: np.ndarray = field(repr=False)

    def bbar_limit(self, xhat):
        """``sum_k pi_k sum_z z xihat_z(xhat, k)`` evaluated at the reference scale."""
        return _scaled_rate_drift(self.model, self.alpha, self.pi, self.n_ref, xhat)


def _scaled_rate_drift(model, alpha, pi, n, xhat):
    from .model import solve_fluid_equilibrium, beta_of

    xs = solve_fluid_equilibrium(model, n, pi)
    nb = n ** beta_of(alpha)
    X = np.asarray(xhat, dtype=float)
    out = 0.0
    z = model.jumps.astype(float)
    for k in range(model.K):
        dr = (model.rates(nb * X + xs, k, n) - model.rates(xs, k, n)) / nb
        out = out + pi[k] * (dr @ z)
    return out


def limit_coefficients(model: JumpModel, alpha: float, chain: ModulatingChain,
                       n_grid=(1e4, 1e5, 1e6), tol=1e-6) -> LimitDiffusionSpec:
    """Limits of ``Xi(x*, k)/n`` and ``Gamma(x*, k)/n`` and the regime-wise ``sigma_alpha``."""
    from .model import solve_fluid_equilibrium

    pi = np.asarray(chain.p)
    xis, gams = [], []
    for n in n_grid:
        xs = solve_fluid_equilibrium(model, n, pi)
        xis.append(np.array([drift(model, n, xs, k) for k in range(model.K)]) / n)
        gams.append(np.array([covariance(model, n, xs, k) for k in range(model.K)]) / n)
    for seq, nm in ((xis, "Xi/n"), (gams, "Gamma/n")):
        scale = max(1.0, float(np.abs(seq[-1]).max()))
        diff = float(np.abs(seq[-1] - seq[-2]).max()) / scale
        if diff > tol:
            raise LimitNotConverged(f"{nm} Cauchy difference {diff:.3e} exceeds {tol}")
    xi_bar, gamma_bar = xis[-1], gams[-1]
    th = theta_matrix(xi_bar, pi, chain.ups)
    theta = 0.5 * (th + th.T)
    avg_gamma = np.einsum("k,kij->ij", pi, gamma_bar)
    if alpha > 1:
        s2 = avg_gamma
    elif alpha == 1:
        s2 = avg_gamma + theta
    else:
        s2 = theta
    return LimitDiffusionSpec(float(alpha), xi_bar, gamma_bar, theta, s2, float(n_grid[-1]),
                              model.kind == "custom", model, pi)


# ------------------------------------------------------------ Gaussian laws

def lyapunov_solve(M, S):
    """Solve ``M X + X M^T = S`` by the Kronecker linear system."""
    d = M.shape[0]
    eye = np.eye(d)
    A = np.kron(eye, M) + np.kron(M, eye)
    x = np.linalg.solve(A, S.reshape(-1, order="F"))
    X = x.reshape((d, d), order="F")
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def moment(self, powers) -> float:
        """``E prod_i (X_i - mean_i)^{p_i}`` for a centered Gaussian via Stein recursion."""
        return _stein_moment(tuple(int(p) for p in powers), _freeze(self.cov))

    def expect(self, f: Polynomial) -> float:
        if np.any(self.mean != 0):
            raise ValidationError("moments are implemented for centered laws only")
        return float(sum(c * self.moment(p) for p, c in f.monomials()))


def _freeze(S):
    return tuple(tuple(float(v) for v in row) for row in S)


@lru_cache(maxsize=4096)
def _stein_moment(powers, cov):
    if sum(powers) == 0:
        return 1.0
    if sum(powers) % 2:
        return 0.0
    i = next(j for j, p in enumerate(powers) if p)
    rest = list(powers)
    rest[i] -= 1
    # E[x_i g] = sum_j S_ij E[d_j g] for g = prod x^rest
    total = 0.0
    for j, pj in enumerate(rest):
        if pj and cov[i][j] != 0.0:
            q = list(rest)
            q[j] -= 1
            total += cov[i][j] * pj * _stein_moment(tuple(q), cov)
    return total


def stationary_gaussian(diff: DiffusionSpec, samples=20, radius=3.0, seed=0) -> Gaussian:
    """Exact stationary law when ``bbar(x) = -M x`` on a sampled box."""
    jac = diff.drift_jacobian()
    M = -jac
    rng = np.random.default_rng(seed)
    Y = rng.uniform(-radius, radius, size=(samples, diff.d))
    resid = diff.bbar(Y) - Y @ jac.T
    scale = max(1.0, float(np.abs(M).max()) * radius)
    if np.abs(resid).max() > 1e-8 * scale:
        raise NonlinearDrift(f"bbar deviates from its linearization by {np.abs(resid).max():.3e}")
    if np.linalg.eigvals(M).real.min() <= 0:
        raise UnstableDrift("drift matrix has eigenvalues with nonpositive real part")
    S = lyapunov_solve(M, diff.sigma2)
    return Gaussian(np.zeros(diff.d), S)


# ----------------------------------------------------------- Euler-Maruyama

@dataclass
class EMResult:
    estimates: dict
    se: dict
    batches: np.ndarray  # (B, F) batch means of the monomials
    monomials: list
    final: np.ndarray
    path: np.ndarray | None
    steps: int


def _monomial_table(funcs, d):
    monos = [(0,) * d]
    for f in funcs:
        for p, _ in f.monomials():
            if p not in monos:
                monos.append(p)
    return monos


def batch_stats(values):
    """Mean and batch-means standard error of a 1-d array of batch means."""
    values = np.asarray(values, dtype=float)
    if np.all(values == values[0]):
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def simulate_em(diff: DiffusionSpec, T: float, dt: float, x0=None, seed: int = 0,
                funcs=(), burn_in_fraction=0.2, batches=16, rep: int = 0,
                record_every: int | None = None, chunk: int = 1 << 18) -> EMResult:
    """Euler-Maruyama for ``dY = bbar(Y) dt + sigma dW`` with batch-means moments."""
    if not dt > 0 or not T > 0:
        raise ValidationError("T and dt must be positive")
    d = diff.d
    funcs = list(funcs)
    monos = _monomial_table(funcs, d)
    powers = np.array(monos, dtype=np.int64)
    steps = int(round(T / dt))
    burn = int(round(burn_in_fraction * steps))
    batch_steps = max(1, (steps - burn) // batches)
    acc = np.zeros((batches, len(monos)))
    y = np.zeros(d) if x0 is None else np.array(x0, dtype=float).reshape(d)
    prog = diff.model.compiled(diff.ctx.n)
    gen = rng_mod.stream(seed, rep, rng_mod.STREAM_EM)
    istate = np.zeros(1, dtype=np.int64)
    path = [y.copy()] if record_every else None
    sigma = np.ascontiguousarray(diff.sigma)
    while True:
        normals = gen.standard_normal(chunk)
        npos = 0
        while True:
            target = steps
            if record_every:
                target = min(steps, int(istate[0]) + record_every)
            status, npos = kern.em_run(
                y, istate, diff.pi, diff.model.jumps, prog.ops, prog.args, prog.consts,
                prog.starts, prog.lens, prog.const_starts, prog.stack, diff.ctx.nb,
                diff.ctx.x_star, sigma, dt, target, burn, batch_steps, powers, acc,
                normals, npos)
            if status == kern.BLOWUP:
                raise NumericalBlowup(f"|Y| exceeded 1e8 at step {int(istate[0])}")
            if status == kern.NEED_RANDOM:
                break
            if record_every:
                path.append(y.copy())
            if istate[0] >= steps:
                break
        if istate[0] >= steps:
            break
    means = acc / (batch_steps * dt)
    est, se = {}, {}
    for f in funcs:
        coef = np.zeros(len(monos))
        for p, c in f.monomials():
            coef[monos.index(p)] += c
        est[f.tag], se[f.tag] = batch_stats(means @ coef)
    return EMResult(est, se, means, monos, y.copy(),
                    np.array(path) if record_every else None, steps)


def with_sigma(diff: DiffusionSpec, sigma) -> DiffusionSpec:
    """Copy of ``diff`` with a replaced noise factor (and matching ``Sigma``)."""
    sigma = np.asarray(sigma, dtype=float)
    return replace(diff, sigma=sigma, sigma2=sigma @ sigma.T)


def build_for(model, n, alpha, chain) -> DiffusionSpec:
    return build_diffusion(model, make_context(model, n, alpha, chain), chain)
