"""Test functions with analytic derivatives.

Polynomials are stored as ``{powers: coefficient}`` maps. Values, gradients
and Hessians are vectorized over points of shape ``(..., d)``. Regime-dependent
functions (correctors, expansion terms) implement ``value(X, k)``.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import MissingDerivatives, ValidationError

FD_REL_TOL = 1e-6


def _mono(X, powers):
    out = np.ones(X.shape[:-1])
    for i, p in enumerate(powers):
        if p:
            out = out * X[..., i] ** p
    return out


class TestFunction:
    """Regime-independent ``f`` with optional analytic derivatives.

    Parameters
    ----------
    value : callable
        ``value(X)`` for ``X`` of shape ``(..., d)``.
    grad, hess : callable, optional
        Analytic derivatives; shapes ``(..., d)`` and ``(..., d, d)``.
    allow_fd : bool
        Use central finite differences when ``grad``/``hess`` are missing.
        Results are then flagged ``approximate``.
    """

    __test__ = False  # keep pytest from collecting this class
    regime_dependent = False

    def __init__(self, value: Callable, d: int, grad: Optional[Callable] = None,
                 hess: Optional[Callable] = None, tag: str = "f", allow_fd: bool = False):
        self._value = value
        self._grad = grad
        self._hess = hess
        self.d = d
        self.tag = tag
        self.allow_fd = allow_fd

    @property
    def approximate(self) -> bool:
        return self._grad is None or self._hess is None

    @property
    def has_derivatives(self) -> bool:
        return not self.approximate or self.allow_fd

    def value(self, X, k=None):
        return self._value(np.asarray(X, dtype=float))

    def __call__(self, X, k=None):
        return self.value(X)

    def grad(self, X, k=None):
        X = np.asarray(X, dtype=float)
        if self._grad is not None:
            return self._grad(X)
        if not self.allow_fd:
            raise MissingDerivatives(f"test function {self.tag!r} has no gradient")
        return fd_grad(self._value, X)

    def hess(self, X, k=None):
        X = np.asarray(X, dtype=float)
        if self._hess is not None:
            return self._hess(X)
        if not self.allow_fd:
            raise MissingDerivatives(f"test function {self.tag!r} has no Hessian")
        return fd_hess(self._value, X)


def _fd_step(X):
    return 1e-5 * (1.0 + np.abs(X))


def fd_grad(value, X):
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    step = _fd_step(X)
    out = np.empty(X.shape)
    for i in range(d):
        e = np.zeros(X.shape)
        e[..., i] = step[..., i]
        out[..., i] = (value(X + e) - value(X - e)) / (2 * step[..., i])
    return out


def fd_hess(value, X):
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    step = _fd_step(X) * 10.0
    out = np.empty(X.shape + (d,))
    for i in range(d):
        for j in range(d):
            ei = np.zeros(X.shape)
            ej = np.zeros(X.shape)
            ei[..., i] = step[..., i]
            ej[..., j] = step[..., j]
            out[..., i, j] = (value(X + ei + ej) - value(X + ei - ej) - value(X - ei + ej)
                              + value(X - ei - ej)) / (4 * step[..., i] * step[..., j])
    return out


class Polynomial(TestFunction):
    """Polynomial ``sum_p c_p x^p`` with exact derivatives."""

    def __init__(self, terms: dict, d: int, tag: str = "poly"):
        clean = {}
        for p, c in terms.items():
            p = tuple(int(v) for v in p)
            if len(p) != d or min(p) < 0:
                raise ValidationError(f"bad monomial powers {p} for d={d}")
            if c != 0:
                clean[p] = clean.get(p, 0.0) + float(c)
        self.terms = clean
        super().__init__(self._eval, d, self._eval_grad, self._eval_hess, tag)

    @property
    def degree(self) -> int:
        return max((sum(p) for p in self.terms), default=0)

    def monomials(self):
        return list(self.terms.items())

    def _eval(self, X):
        out = np.zeros(X.shape[:-1])
        for p, c in self.terms.items():
            out = out + c * _mono(X, p)
        return out

    def _eval_grad(self, X):
        out = np.zeros(X.shape)
        for p, c in self.terms.items():
            for i in range(self.d):
                if p[i]:
                    q = list(p)
                    q[i] -= 1
                    out[..., i] += c * p[i] * _mono(X, q)
        return out

    def _eval_hess(self, X):
        d = self.d
        out = np.zeros(X.shape + (d,))
        for p, c in self.terms.items():
            for i in range(d):
                if not p[i]:
                    continue
                for j in range(d):
                    q = list(p)
                    q[i] -= 1
                    coef = c * p[i]
                    if not q[j]:
                        continue
                    coef *= q[j]
                    q[j] -= 1
                    out[..., i, j] += coef * _mono(X, q)
        return out

    def scaled(self, a: float) -> "Polynomial":
        return Polynomial({p: a * c for p, c in self.terms.items()}, self.d, self.tag)

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        terms = dict(self.terms)
        for p, c in other.terms.items():
            terms[p] = terms.get(p, 0.0) + c
        return Polynomial(terms, self.d, f"{self.tag}+{other.tag}")


class AbsPower(TestFunction):
    """``sum_i zeta_i |x_i|^m`` for real ``m >= 2``."""

    def __init__(self, zeta, m: float, tag=None):
        self.zeta = np.asarray(zeta, dtype=float)
        self.m = float(m)
        if self.m < 2:
            raise ValidationError("weighted |x|^m needs m >= 2 for a C^2 function")
        d = self.zeta.size
        super().__init__(self._v, d, self._g, self._h, tag or f"weighted_m:{m}")

    def _v(self, X):
        return (self.zeta * np.abs(X) ** self.m).sum(axis=-1)

    def _g(self, X):
        return self.zeta * self.m * np.abs(X) ** (self.m - 1) * np.sign(X)

    def _h(self, X):
        diag = self.zeta * self.m * (self.m - 1) * np.abs(X) ** (self.m - 2)
        out = np.zeros(X.shape + (self.d,))
        idx = np.arange(self.d)
        out[..., idx, idx] = diag
        return out


class RegimeFunction:
    """Regime-dependent function ``f(x, k)`` given as a callable."""

    regime_dependent = True

    def __init__(self, value: Callable, K: int, tag: str = "g"):
        self._value = value
        self.K = K
        self.tag = tag

    def value(self, X, k):
        return self._value(np.asarray(X, dtype=float), k)

    def __call__(self, X, k):
        return self.value(X, k)

    def __add__(self, other):
        if getattr(other, "regime_dependent", False):
            return RegimeFunction(lambda X, k: self.value(X, k) + other.value(X, k),
                                  self.K, f"{self.tag}+{other.tag}")
        return RegimeFunction(lambda X, k: self.value(X, k) + other.value(X),
                              self.K, f"{self.tag}+{other.tag}")

    __radd__ = __add__

    def scaled(self, a: float) -> "RegimeFunction":
        return RegimeFunction(lambda X, k: a * self.value(X, k), self.K, f"{a}*{self.tag}")


def indicator_regime(j: int, K: int) -> RegimeFunction:
    """``f(x, k) = 1{k == j}``."""
    return RegimeFunction(lambda X, k: np.full(X.shape[:-1], 1.0 if k == j else 0.0), K,
                          f"1[k={j}]")


def value_at(f, X, k):
    """Evaluate ``f`` at ``(X, k)`` whether or not it depends on the regime."""
    if getattr(f, "regime_dependent", False):
        return f.value(X, k)
    return f.value(X)


# ------------------------------------------------------------------ builders

def coordinate(i: int, d: int) -> Polynomial:
    p = [0] * d
    p[i] = 1
    return Polynomial({tuple(p): 1.0}, d, f"x_{i + 1}")


def constant(c: float, d: int) -> Polynomial:
    return Polynomial({(0,) * d: float(c)}, d, f"const:{c}")


def norm_power(m: int, d: int) -> Polynomial:
    """``|x|^m`` for even ``m``, expanded as a polynomial."""
    if m % 2:
        raise ValidationError("norm_power needs an even exponent")
    terms = {(0,) * d: 1.0}
    square = {}
    for i in range(d):
        p = [0] * d
        p[i] = 2
        square[tuple(p)] = 1.0
    for _ in range(m // 2):
        nxt = {}
        for p, c in terms.items():
            for q, e in square.items():
                r = tuple(a + b for a, b in zip(p, q))
                nxt[r] = nxt.get(r, 0.0) + c * e
        terms = nxt
    return Polynomial(terms, d, f"x{m}")


def separable(coeffs, d: int) -> Polynomial:
    """``c_0 + sum_i sum_{p>=1} c_p x_i^p``."""
    terms = {}
    if coeffs and coeffs[0]:
        terms[(0,) * d] = float(coeffs[0])
    for p, c in enumerate(coeffs):
        if p == 0 or not c:
            continue
        for i in range(d):
            q = [0] * d
            q[i] = p
            terms[tuple(q)] = float(c)
    return Polynomial(terms, d, "poly:" + ",".join(str(c) for c in coeffs))


def weighted_power(zeta, m) -> TestFunction:
    """``sum_i zeta_i |x_i|^m``; a polynomial when ``m`` is an even integer."""
    zeta = [float(v) for v in zeta]
    d = len(zeta)
    if float(m).is_integer() and int(m) % 2 == 0:
        terms = {}
        for i, z in enumerate(zeta):
            p = [0] * d
            p[i] = int(m)
            terms[tuple(p)] = z
        return Polynomial(terms, d, f"weighted_m:{','.join(map(str, zeta))}:{m}")
    return AbsPower(zeta, m, f"weighted_m:{','.join(map(str, zeta))}:{m}")


def parse_test_function(name: str, d: int, check: bool = True) -> TestFunction:
    """Resolve a registered test-function name.

    Names: ``x`` (first coordinate), ``x_<i>``, ``x2`` (|x|^2), ``x4``
    (|x|^4), ``one``, ``poly:c0,c1,...`` and ``weighted_m:z1,...,zd:m``.
    """
    name = name.strip()
    if name == "x":
        f = coordinate(0, d)
        f.tag = "x"
    elif name.startswith("x_"):
        try:
            i = int(name[2:])
        except ValueError:
            raise ValidationError(f"bad coordinate test function {name!r}") from None
        if not 1 <= i <= d:
            raise ValidationError(f"{name!r} out of range for d={d}")
        f = coordinate(i - 1, d)
    elif name in ("x2", "x4", "x6"):
        f = norm_power(int(name[1]), d)
    elif name == "one":
        f = constant(1.0, d)
        f.tag = "one"
    elif name.startswith("poly:"):
        try:
            coeffs = [float(c) for c in name[5:].split(",")]
        except ValueError:
            raise ValidationError(f"bad coefficients in {name!r}") from None
        f = separable(coeffs, d)
    elif name.startswith("weighted_m:"):
        parts = name.split(":")
        if len(parts) != 3:
            raise ValidationError(f"expected weighted_m:z1,...,zd:m, got {name!r}")
        zeta = [float(v) for v in parts[1].split(",")]
        if len(zeta) != d:
            raise ValidationError(f"{name!r} needs {d} weights")
        f = weighted_power(zeta, float(parts[2]))
    else:
        raise ValidationError(f"unknown test function {name!r}")
    f.tag = name
    if check:
        check_derivatives(f)
    return f


def check_derivatives(f: TestFunction, count: int = 8, seed: int = 12345, scale: float = 2.0):
    """Compare analytic derivatives with central differences at random points."""
    if f.approximate:
        return
    rng = np.random.default_rng(seed)
    X = rng.uniform(-scale, scale, size=(count, f.d))
    g, h = f.grad(X), f.hess(X)
    gf = fd_grad(f.value, X)
    # Hessian against central differences of the analytic gradient
    hf = np.stack([fd_grad(lambda Y, j=j: f.grad(Y)[..., j], X) for j in range(f.d)], axis=-2)
    gerr = np.abs(g - gf) / np.maximum(1.0, np.abs(g))
    herr = np.abs(h - hf) / np.maximum(1.0, np.abs(h))
    if gerr.max() > FD_REL_TOL or herr.max() > FD_REL_TOL:
        raise ValidationError(
            f"derivatives of {f.tag!r} disagree with finite differences "
            f"(grad {gerr.max():.2e}, hess {herr.max():.2e})"
        )
