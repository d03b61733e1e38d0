"""Markov-modulated birth-death models.

A :class:`JumpModel` is a finite list of jump vectors ``z`` plus, for every
regime ``k`` and jump, a piecewise-affine rate expression in ``x`` and ``n``.
Interpolated rates are the expressions clipped at zero, so every rate is
defined and nonnegative on all of ``R^d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import expr as E
from .errors import (
    NonpositiveRate,
    NonUniqueEquilibrium,
    NoEquilibrium,
    SplitMismatch,
    SubstochasticViolation,
    ValidationError,
)
from .markov_env import ModulatingChain

EQUILIBRIUM_TOL = 1e-9
CRITICAL_LOAD_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class JumpModel:
    name: str
    kind: str
    d: int
    K: int
    jumps: np.ndarray
    rate_exprs: tuple  # rate_exprs[k][j]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        jumps = np.array(self.jumps, dtype=np.int64).reshape(-1, self.d)
        jumps.setflags(write=False)
        object.__setattr__(self, "jumps", jumps)
        if len(self.rate_exprs) != self.K or any(len(r) != len(jumps) for r in self.rate_exprs):
            raise ValidationError("rate_exprs must have shape (K, number of jumps)")
        object.__setattr__(self, "_compiled", {})

    @property
    def J(self) -> int:
        return self.jumps.shape[0]

    @property
    def m0(self) -> float:
        return float(np.linalg.norm(self.jumps, axis=1).max())

    def raw_rates(self, X, k: int, n: float) -> np.ndarray:
        """Unclipped rate expressions, shape ``(..., J)``."""
        X = np.asarray(X, dtype=float)
        return np.stack([E.evaluate(e, X, k, n) for e in self.rate_exprs[k]], axis=-1)

    def rates(self, X, k: int, n: float) -> np.ndarray:
        """Interpolated rates ``xi_z(x, k)`` for all jumps, shape ``(..., J)``."""
        return np.maximum(self.raw_rates(X, k, n), 0.0)

    def compiled(self, n: float):
        """Bytecode for all ``(k, j)`` rate programs at scale ``n`` (cached)."""
        key = float(n)
        c = self._compiled.get(key)
        if c is None:
            c = _compile_model(self, key)
            self._compiled[key] = c
        return c


@dataclass(frozen=True)
class CompiledRates:
    ops: np.ndarray
    args: np.ndarray
    consts: np.ndarray
    starts: np.ndarray  # (K, J)
    lens: np.ndarray  # (K, J)
    const_starts: np.ndarray  # (K, J)
    stack: int


def _compile_model(model: JumpModel, n: float) -> CompiledRates:
    ops, args, consts = [], [], []
    starts = np.zeros((model.K, model.J), dtype=np.int64)
    lens = np.zeros_like(starts)
    cstarts = np.zeros_like(starts)
    depth = 1
    for k in range(model.K):
        for j, e in enumerate(model.rate_exprs[k]):
            o, a, c = E.compile_expr(e, k, n)
            starts[k, j] = len(ops)
            lens[k, j] = len(o)
            cstarts[k, j] = len(consts)
            ops += o
            args += a
            consts += c
            depth = max(depth, E.stack_depth(e))
    return CompiledRates(
        np.array(ops, dtype=np.int64),
        np.array(args, dtype=np.int64),
        np.array(consts if consts else [0.0], dtype=float),
        starts, lens, cstarts, depth + 1,
    )


@dataclass(frozen=True)
class ScalingContext:
    n: float
    alpha: float
    beta: float
    x_star: np.ndarray

    @classmethod
    def create(cls, n, alpha, x_star) -> "ScalingContext":
        if n <= 0 or alpha <= 0:
            raise ValidationError("n and alpha must be positive")
        xs = np.array(x_star, dtype=float).reshape(-1)
        xs.setflags(write=False)
        return cls(float(n), float(alpha), beta_of(alpha), xs)

    @property
    def nb(self) -> float:
        """``n^beta``."""
        return self.n ** self.beta

    @property
    def h(self) -> float:
        """Scaled lattice spacing ``n^-beta``."""
        return self.n ** (-self.beta)

    @property
    def na(self) -> float:
        return self.n ** self.alpha

    def to_lattice(self, xhat):
        return self.nb * np.asarray(xhat, dtype=float) + self.x_star

    def to_scaled(self, x):
        return (np.asarray(x, dtype=float) - self.x_star) / self.nb


def beta_of(alpha: float) -> float:
    return max(0.5, 1.0 - alpha / 2.0)


@dataclass(frozen=True)
class DriftCovEval:
    xi: np.ndarray
    gamma: np.ndarray


def drift(model: JumpModel, n, X, k) -> np.ndarray:
    """``Xi^n(x, k) = sum_z z xi_z(x, k)``, shape ``(..., d)``."""
    r = model.rates(X, k, n)
    return r @ model.jumps.astype(float)


def covariance(model: JumpModel, n, X, k) -> np.ndarray:
    """``Gamma^n_ij(x, k) = sum_z z_i z_j xi_z(x, k)``, shape ``(..., d, d)``."""
    r = model.rates(X, k, n)
    z = model.jumps.astype(float)
    return np.einsum("...j,ja,jb->...ab", r, z, z)


def drift_and_cov(model: JumpModel, ctx: ScalingContext, x, k) -> DriftCovEval:
    return DriftCovEval(drift(model, ctx.n, x, k), covariance(model, ctx.n, x, k))


def averaged_drift(model: JumpModel, n, pi, X) -> np.ndarray:
    return sum(pi[k] * drift(model, n, X, k) for k in range(model.K))


# ---------------------------------------------------------------- builders

def _as_regime_vector(v, K=None, name="value"):
    a = np.array(v, dtype=float).reshape(-1)
    if K is not None and a.size != K:
        raise ValidationError(f"{name} must have length {K}, got {a.size}")
    return a


def _require_positive(name, a):
    if np.any(~(np.asarray(a) > 0)):
        raise NonpositiveRate(f"{name} must be strictly positive, got {np.asarray(a).tolist()}")


def build_mm_infinity(lam, mu) -> JumpModel:
    """Markov-modulated M/M/inf: births ``n lam(k)``, deaths ``mu(k) x^+``."""
    lam = _as_regime_vector(lam, name="lambda")
    mu = _as_regime_vector(mu, lam.size, "mu")
    _require_positive("lambda", lam)
    _require_positive("mu", mu)
    x1 = E.x(0)
    rates = tuple(
        (E.N * lam[k], mu[k] * E.emax(x1, 0.0)) for k in range(lam.size)
    )
    return JumpModel("mm_infinity", "mm_infinity", 1, lam.size, [[1], [-1]], rates,
                     {"lambda": lam, "mu": mu})


def priority_allocation(d: int):
    """Static-priority server allocation ``z_i = x_i ^ (n - sum_{j<i} x_j)^+``."""
    out = []
    for i in range(d):
        before = E.esum(E.x(j) for j in range(i))
        out.append(E.emin(E.x(i), E.pos(E.N - before)))
    return out


def build_multiclass_mmn(lam, mu, gam) -> JumpModel:
    """Multiclass M/M/n+M under static priority. Inputs are ``d x K`` arrays."""
    lam = np.atleast_2d(np.array(lam, dtype=float))
    mu = np.atleast_2d(np.array(mu, dtype=float))
    gam = np.atleast_2d(np.array(gam, dtype=float))
    if not (lam.shape == mu.shape == gam.shape):
        raise ValidationError("lambda, mu, gamma must share shape (d, K)")
    for nm, a in (("lambda", lam), ("mu", mu), ("gamma", gam)):
        _require_positive(nm, a)
    d, K = lam.shape
    zs = priority_allocation(d)
    jumps, rates = [], [[] for _ in range(K)]
    for i in range(d):
        ei = np.zeros(d, dtype=int)
        ei[i] = 1
        jumps += [ei, -ei]
        for k in range(K):
            rates[k].append(E.N * lam[i, k])
            rates[k].append(mu[i, k] * zs[i] + gam[i, k] * (E.x(i) - zs[i]))
    return JumpModel("mmn_plus_m", "mmn_plus_m", d, K, jumps, tuple(map(tuple, rates)),
                     {"lambda": lam, "mu": mu, "gamma": gam})


def build_mph_n(lam, mu, P, gam) -> JumpModel:
    """M/PH/n+M with phase-1 entry.

    ``lam``: K-vector, ``mu``: ``d x K``, ``P``: K matrices ``d x d`` of phase
    routing probabilities, ``gam``: K-vector of abandonment rates.
    """
    lam = _as_regime_vector(lam, name="lambda")
    K = lam.size
    mu = np.array(mu, dtype=float)
    if mu.ndim == 1:
        mu = mu.reshape(-1, 1).repeat(K, axis=1) if K > 1 else mu.reshape(-1, 1)
    d = mu.shape[0]
    if mu.shape != (d, K):
        raise ValidationError(f"mu must have shape (d, K) = ({d}, {K})")
    gam = _as_regime_vector(gam, K, "gamma")
    P = np.array(P, dtype=float)
    if P.ndim == 2:
        P = np.repeat(P[None], K, axis=0)
    if P.shape != (K, d, d):
        raise ValidationError(f"P must hold K={K} matrices of shape ({d},{d})")
    _require_positive("lambda", lam)
    _require_positive("mu", mu)
    _require_positive("gamma", gam)
    tol = 1e-12
    for k in range(K):
        if np.any(P[k] < -tol):
            raise SubstochasticViolation(f"P[{k}] has negative entries")
        rs = P[k].sum(axis=1)
        if np.any(rs > 1 + tol):
            i = int(np.argmax(rs))
            raise SubstochasticViolation(f"row {i + 1} of P[{k}] sums to {rs[i]} > 1")
        if np.any(np.abs(np.diag(P[k])) > tol):
            raise SubstochasticViolation(f"P[{k}] has self-routing on the diagonal")
        if d > 1 and np.any(np.abs(P[k][1:, 0]) > tol):
            raise SubstochasticViolation(f"P[{k}] routes back into phase 1")
    P = np.clip(P, 0.0, None)

    xs = [E.x(i) for i in range(d)]
    queue = E.emin(E.pos(E.esum(xs) - E.N), E.pos(xs[0]))
    serving = [xs[0] - queue] + xs[1:]
    jumps, rates = [], [[] for _ in range(K)]

    def add(z, per_k):
        jumps.append(np.asarray(z, dtype=int))
        for k in range(K):
            rates[k].append(per_k[k])

    e = np.eye(d, dtype=int)
    add(e[0], [E.N * lam[k] for k in range(K)])
    add(-e[0], [mu[0, k] * (1.0 - P[k][0].sum()) * serving[0] + gam[k] * queue
                for k in range(K)])
    for i in range(1, d):
        if any(1.0 - P[k][i].sum() > tol for k in range(K)):
            add(-e[i], [mu[i, k] * (1.0 - P[k][i].sum()) * serving[i] for k in range(K)])
    for i in range(d):
        for j in range(d):
            if i != j and np.any(P[:, i, j] > tol):
                add(e[j] - e[i], [P[k][i, j] * mu[i, k] * serving[i] for k in range(K)])
    return JumpModel("mph_n", "mph_n", d, K, jumps, tuple(map(tuple, rates)),
                     {"lambda": lam, "mu": mu, "P": P, "gamma": gam})


def build_custom(d: int, K: int, jumps, rates, params=None, name="custom") -> JumpModel:
    """User model from expression strings.

    ``rates`` has one entry per jump: a string used in every regime (regime
    dependence via vector-valued ``params``), or a list of ``K`` strings.
    """
    params = dict(params or {})
    jumps = np.array(jumps, dtype=np.int64).reshape(-1, d)
    if len(rates) != len(jumps):
        raise ValidationError("need one rate expression per jump")
    for nm, v in params.items():
        if np.ndim(v) > 0 and len(v) != K:
            raise ValidationError(f"parameter {nm!r} must be scalar or length {K}")
    table = [[] for _ in range(K)]
    for spec in rates:
        if isinstance(spec, str):
            e = E.parse(spec, d, params)
            for k in range(K):
                table[k].append(e)
        else:
            if len(spec) != K:
                raise ValidationError("per-regime rate lists need K entries")
            for k in range(K):
                table[k].append(E.parse(spec[k], d, params))
    return JumpModel(name, "custom", d, K, jumps, tuple(map(tuple, table)), params)


# ------------------------------------------------------------- equilibrium

def _avg(model, name, pi):
    v = np.asarray(model.params[name], dtype=float)
    return v @ pi


def solve_fluid_equilibrium(model: JumpModel, n, pi) -> np.ndarray:
    """Root ``x*`` of the averaged drift ``sum_k pi_k Xi^n(x, k)``."""
    pi = np.asarray(pi, dtype=float)
    if model.kind == "mm_infinity":
        x = np.array([n * _avg(model, "lambda", pi) / _avg(model, "mu", pi)])
    elif model.kind == "mmn_plus_m":
        lb, mb, gb = (_avg(model, nm, pi) for nm in ("lambda", "mu", "gamma"))
        if model.d == 1:
            lb, mb, gb = lb[0], mb[0], gb[0]
            x = np.array([n * lb / mb if lb <= mb else n + n * (lb - mb) / gb])
        else:
            rho = lb / mb
            if rho.sum() <= 1 + CRITICAL_LOAD_TOL:
                x = n * rho
            else:
                x = _newton_equilibrium(model, n, pi, n * rho)
    elif model.kind == "mph_n":
        x = _mph_equilibrium(model, n, pi)
    else:
        x = _custom_equilibrium(model, n, pi)
    res = np.abs(averaged_drift(model, n, pi, x)).max()
    if not res <= EQUILIBRIUM_TOL * n:
        raise NoEquilibrium(f"averaged drift residual {res:.3e} at x*={x}")
    return x


def mph_effective_matrix(model: JumpModel, pi) -> np.ndarray:
    """Averaged service/routing matrix ``M`` with ``M_ij = -avg(p_ji mu_j)``."""
    mu = model.params["mu"]
    P = model.params["P"]
    d = model.d
    m = np.diag(mu @ pi)
    for i in range(d):
        for j in range(d):
            if i != j:
                m[i, j] = -sum(pi[k] * P[k][j, i] * mu[j, k] for k in range(model.K))
    return m


def _mph_equilibrium(model, n, pi):
    m = mph_effective_matrix(model, pi)
    lb = model.params["lambda"] @ pi
    e1 = np.zeros(model.d)
    e1[0] = 1.0
    x = n * lb * np.linalg.solve(m, e1)
    if x.sum() <= n * (1 + CRITICAL_LOAD_TOL):
        return x
    return _newton_equilibrium(model, n, pi, x)


def _jacobian(fun, x, step):
    d = x.size
    jac = np.empty((d, d))
    for i in range(d):
        dx = np.zeros(d)
        dx[i] = step
        jac[:, i] = (fun(x + dx) - fun(x - dx)) / (2 * step)
    return jac


def _newton_equilibrium(model, n, pi, x0, maxiter=200):
    fun = lambda x: averaged_drift(model, n, pi, x)
    x = np.array(x0, dtype=float)
    tol = EQUILIBRIUM_TOL * n
    fx = fun(x)
    for _ in range(maxiter):
        if np.abs(fx).max() <= tol:
            return x
        jac = _jacobian(fun, x, 1e-4 * max(1.0, n ** 0.5))
        try:
            step = np.linalg.solve(jac, -fx)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-8:
            xn = x + t * step
            fn = fun(xn)
            if np.abs(fn).max() < np.abs(fx).max():
                break
            t *= 0.5
        else:
            break
        x, fx = xn, fn
    if np.abs(fx).max() <= tol:
        return x
    return _coordinate_bisection(model, n, pi, x)


def _bisect_1d(g, lo, hi, tol, maxiter=400):
    glo = g(lo)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) <= tol or hi - lo < 1e-14 * max(1.0, abs(mid)):
            return mid
        if np.sign(gm) == np.sign(glo):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _bracket(g, center, width):
    lo, hi = center - width, center + width
    for _ in range(60):
        if np.sign(g(lo)) != np.sign(g(hi)):
            return lo, hi
        lo, hi = lo - width, hi + width
        width *= 2
    raise NoEquilibrium("root finder failed to bracket the averaged drift")


def _coordinate_bisection(model, n, pi, x, sweeps=200):
    x = np.array(x, dtype=float)
    tol = EQUILIBRIUM_TOL * n
    for _ in range(sweeps):
        for i in range(model.d):
            def g(v, i=i):
                y = x.copy()
                y[i] = v
                return averaged_drift(model, n, pi, y)[i]
            lo, hi = _bracket(g, x[i], max(1.0, 0.1 * n))
            x[i] = _bisect_1d(g, lo, hi, 0.1 * tol)
        if np.abs(averaged_drift(model, n, pi, x)).max() <= tol:
            return x
    raise NoEquilibrium("coordinate bisection did not converge")


def _custom_equilibrium(model, n, pi):
    fun = lambda x: averaged_drift(model, n, pi, x)
    if model.d == 1:
        grid = np.linspace(0.0, 10.0 * n, 4001)
        vals = fun(grid[:, None])[:, 0]
        s = np.sign(vals)
        nz = s != 0
        crossings = np.flatnonzero(np.diff(s[nz]) != 0)
        zeros = np.flatnonzero(~nz)
        if crossings.size > 1:
            raise NonUniqueEquilibrium("averaged drift changes sign more than once")
        if zeros.size > 1:
            raise NonUniqueEquilibrium("averaged drift vanishes at several grid points")
        if zeros.size:
            # a grid point hit exactly; any sign change must straddle it
            return grid[zeros]
        if crossings.size == 0:
            raise NoEquilibrium("averaged drift has no sign change on [0, 10n]")
        gi = np.flatnonzero(nz)
        lo, hi = grid[gi[crossings[0]]], grid[gi[crossings[0] + 1]]
        g = lambda v: fun(np.array([v]))[0]
        return np.array([_bisect_1d(g, lo, hi, 0.1 * EQUILIBRIUM_TOL * n)])
    roots = []
    for start in (np.full(model.d, float(n)), np.full(model.d, 0.5 * n), np.full(model.d, 2.0 * n)):
        try:
            roots.append(_newton_equilibrium(model, n, pi, start))
        except NoEquilibrium:
            pass
    if not roots:
        raise NoEquilibrium("no equilibrium found from any start")
    for r in roots[1:]:
        if np.abs(r - roots[0]).max() > 1e-6 * max(1.0, n):
            raise NonUniqueEquilibrium(f"distinct equilibria {roots[0]} and {r}")
    return roots[0]


def make_context(model: JumpModel, n, alpha, chain: ModulatingChain) -> ScalingContext:
    return ScalingContext.create(n, alpha, solve_fluid_equilibrium(model, n, chain.p))


# ------------------------------------------------------------------ lattice

def lattice_points(ctx: ScalingContext, radius: float, step: int = 1) -> np.ndarray:
    """Integer orthant points with ``|x - x*|_inf <= radius * n^beta``."""
    axes = []
    for xs in ctx.x_star:
        lo = max(0, int(np.ceil(xs - radius * ctx.nb - 1e-9)))
        hi = int(np.floor(xs + radius * ctx.nb + 1e-9))
        axes.append(np.arange(lo, hi + 1, step, dtype=float))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def random_lattice_points(ctx: ScalingContext, radius, size, rng) -> np.ndarray:
    d = ctx.x_star.size
    lo = np.maximum(0, np.ceil(ctx.x_star - radius * ctx.nb))
    hi = np.floor(ctx.x_star + radius * ctx.nb)
    return np.stack([rng.integers(lo[i], hi[i] + 1, size=size) for i in range(d)], axis=-1).astype(float)


# -------------------------------------------------------- hypothesis checks

@dataclass
class HypothesisReport:
    m0: float
    N0: int
    C_tilde: float
    clauses: dict
    details: dict
    delta1: Any = None  # indeterminate for the builtins

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())

    def as_dict(self):
        return {"m0": self.m0, "N0": self.N0, "C_tilde": self.C_tilde,
                "clauses": dict(self.clauses), "details": self.details,
                "delta1": self.delta1, "passed": self.passed}


def _lipschitz_ratio(model, ctx, radius, count, rng):
    xa = random_lattice_points(ctx, radius, count, rng)
    near = xa + rng.integers(-2, 3, size=xa.shape)
    near = np.maximum(near, 0.0)
    xb = np.concatenate([random_lattice_points(ctx, radius, count, rng), near])
    xa = np.concatenate([xa, xa])
    dist = np.linalg.norm(xa - xb, axis=1)
    keep = dist > 0
    best = 0.0
    for k in range(model.K):
        diff = np.abs(model.rates(xa[keep], k, ctx.n) - model.rates(xb[keep], k, ctx.n))
        best = max(best, float((diff / dist[keep, None]).max()))
    return best


def validate_hypotheses(model: JumpModel, ctx: ScalingContext, chain: ModulatingChain,
                        radius: float = 5.0, samples: int = 2000, seed: int = 0) -> HypothesisReport:
    """Empirical checks of the structural hypotheses on sampled lattice points."""
    rng = np.random.default_rng(seed)
    pi = chain.p
    clauses, details = {}, {}

    m0 = model.m0
    clauses["H1a_bounded_jumps"] = bool(np.all(np.linalg.norm(model.jumps, axis=1) <= m0))

    pts = random_lattice_points(ctx, radius, samples, rng)
    active = max(int((model.rates(pts, k, ctx.n) > 0).sum(axis=1).max()) for k in range(model.K))
    clauses["H1b_finite_jumps"] = active <= model.J
    details["active_jumps_max"] = active

    lips = [_lipschitz_ratio(model, ctx, r, samples, rng) for r in (radius, 2 * radius, 4 * radius)]
    c_tilde = lips[0]
    details["lipschitz_by_radius"] = lips
    clauses["EA2.2B_lipschitz"] = lips[2] <= 1.5 * lips[0] + 1e-12

    res = float(np.abs(averaged_drift(model, ctx.n, pi, ctx.x_star)).max())
    details["equilibrium_residual"] = res
    clauses["EA2.2A_equilibrium"] = res <= EQUILIBRIUM_TOL * ctx.n

    bound_ratio, gam_ratio, pd_ok = [], [], True
    ns = [ctx.n, 4 * ctx.n, 16 * ctx.n]
    for nn in ns:
        xs = solve_fluid_equilibrium(model, nn, pi) if nn != ctx.n else ctx.x_star
        bound_ratio.append(max(float(model.rates(xs, k, nn).max()) / nn for k in range(model.K)))
        g = np.array([covariance(model, nn, xs, k) for k in range(model.K)])
        if nn == ctx.n:
            eig = [float(np.linalg.eigvalsh(gk).min()) for gk in g]
            details["gamma_min_eig"] = eig
            pd_ok = min(eig) > 0
        gam_ratio.append(g / nn)
    details["rate_bound_ratio_by_n"] = bound_ratio
    clauses["EA2.2C_rate_bound"] = bound_ratio[2] <= 1.5 * bound_ratio[0] + 1e-12
    clauses["A2.2iv_positive_definite"] = pd_ok
    cauchy = float(np.abs(gam_ratio[2] - gam_ratio[1]).max() / max(np.abs(gam_ratio[2]).max(), 1e-300))
    details["gamma_over_n_cauchy"] = cauchy
    clauses["EA2.2D_limit"] = cauchy <= 1e-2
    return HypothesisReport(m0, active, c_tilde, clauses, details)


# ----------------------------------------------------------- phi/psi split

@dataclass(frozen=True, eq=False)
class PhiPsiSplit:
    """Rate decomposition ``xi = phi_k + psi_k`` on the lattice."""

    model: JumpModel
    phi_exprs: tuple  # [k][j]
    psi_exprs: tuple
    pi: np.ndarray
    deltas: tuple = (None, 0.0)

    def phi(self, X, k, n):
        X = np.asarray(X, dtype=float)
        return np.stack([E.evaluate(e, X, k, n) for e in self.phi_exprs[k]], axis=-1)

    def psi(self, X, k, n):
        X = np.asarray(X, dtype=float)
        return np.stack([E.evaluate(e, X, k, n) for e in self.psi_exprs[k]], axis=-1)

    def psi_bar(self, X, n):
        return sum(self.pi[k] * self.psi(X, k, n) for k in range(self.model.K))

    def check(self, ctx: ScalingContext, count=100, radius=5.0, seed=0, tol=1e-12):
        rng = np.random.default_rng(seed)
        pts = random_lattice_points(ctx, radius, count, rng)
        for k in range(self.model.K):
            lhs = self.phi(pts, k, ctx.n) + self.psi(pts, k, ctx.n)
            rhs = self.model.rates(pts, k, ctx.n)
            err = np.abs(lhs - rhs).max() / max(1.0, np.abs(rhs).max())
            if err > tol:
                raise SplitMismatch(f"phi + psi differs from xi by {err:.3e} in regime {k}")


def phi_psi_split(model: JumpModel, chain: ModulatingChain, ctx: ScalingContext | None = None,
                  phi=None, psi=None) -> PhiPsiSplit:
    """Split for the critically loaded multiclass model, or a user split.

    User splits pass ``phi`` and ``psi`` as ``[k][j]`` expression tables.
    """
    pi = chain.p
    if phi is not None or psi is not None:
        split = PhiPsiSplit(model, tuple(map(tuple, phi)), tuple(map(tuple, psi)), pi, (None, None))
    elif model.kind == "mmn_plus_m":
        lam, mu, gam = (model.params[k] for k in ("lambda", "mu", "gamma"))
        rho = (lam @ pi) / (mu @ pi)
        if abs(rho.sum() - 1.0) > CRITICAL_LOAD_TOL:
            raise ValidationError(f"split requires critical load, sum(rho) = {rho.sum()!r}")
        zs = priority_allocation(model.d)
        phis, psis = [[] for _ in range(model.K)], [[] for _ in range(model.K)]
        for i in range(model.d):
            for k in range(model.K):
                phis[k] += [E.Const(0.0),
                            mu[i, k] * (zs[i] - E.N * rho[i]) + gam[i, k] * (E.x(i) - zs[i])]
                psis[k] += [E.N * lam[i, k], E.N * (rho[i] * mu[i, k])]
        split = PhiPsiSplit(model, tuple(map(tuple, phis)), tuple(map(tuple, psis)), pi, (None, 0.0))
    else:
        raise ValidationError(f"no builtin split for model kind {model.kind!r}")
    if ctx is not None:
        split.check(ctx)
    return split


# ------------------------------------------------------------------ config

def model_from_config(cfg: dict) -> JumpModel:
    kind = cfg.get("type")
    if kind == "mm_infinity":
        return build_mm_infinity(cfg["lambda"], cfg["mu"])
    if kind == "mmn_plus_m":
        lam = np.array(cfg["lambda"], dtype=float)
        if lam.ndim == 1:
            # one class: K-vectors
            return build_multiclass_mmn([cfg["lambda"]], [cfg["mu"]], [cfg["gamma"]])
        return build_multiclass_mmn(cfg["lambda"], cfg["mu"], cfg["gamma"])
    if kind == "mph_n":
        return build_mph_n(cfg["lambda"], cfg["mu"], cfg["P"], cfg["gamma"])
    if kind == "custom":
        jumps = np.array(cfg["jumps"], dtype=int)
        d = jumps.shape[1]
        K = len(cfg.get("Q", [[0]]))
        params = dict(cfg.get("params", {}))
        for key, alias in (("lambda", "lam"), ("mu", "mu"), ("gamma", "gamma")):
            if key in cfg:
                params.setdefault(alias, cfg[key])
        return build_custom(d, K, jumps, cfg["rates"], params, cfg.get("name", "custom"))
    raise ValidationError(f"unknown model type {kind!r}")
