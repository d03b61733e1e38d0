"""Algebra of the finite modulating chain.

Builds and validates the rate matrix ``Q``, its stationary law ``pi``, the
deviation matrix ``Upsilon = (Pi - Q)^{-1} - Pi`` and a left pseudo-inverse
``T`` with ``Q T y = y`` for every ``pi``-centered ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    NegativeOffDiagonal,
    Reducible,
    RowSumNonzero,
    SingularSolve,
    ValidationError,
)

ROW_SUM_TOL = 1e-9
_RCOND_MIN = 1e-13


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RateMatrix:
    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class StationaryDist:
    pi: np.ndarray


@dataclass(frozen=True)
class DeviationMatrix:
    upsilon: np.ndarray


@dataclass(frozen=True)
class PseudoInverse:
    t: np.ndarray


def _reachability(adj):
    """Boolean transitive-reflexive closure of a directed graph."""
    k = adj.shape[0]
    reach = adj | np.eye(k, dtype=bool)
    # repeated squaring: log2(K) boolean products
    for _ in range(max(1, int(np.ceil(np.log2(max(k, 2)))))):
        nxt = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
        if np.array_equal(nxt, reach):
            break
        reach = nxt
    return reach


def validate_rate_matrix(entries) -> RateMatrix:
    """Check that ``entries`` is an irreducible conservative rate matrix.

    Raises
    ------
    NegativeOffDiagonal, RowSumNonzero, Reducible
        Each carries the offending (0-based) index in ``.index``; messages use
        1-based indices.
    """
    q = np.array(entries, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
        raise ValidationError(f"rate matrix must be square and non-empty, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValidationError("rate matrix has non-finite entries")
    k = q.shape[0]
    for i in range(k):
        for j in range(k):
            if i != j and q[i, j] < 0:
                raise NegativeOffDiagonal(i, j, q[i, j])
    sums = q.sum(axis=1)
    scale = np.maximum(1.0, np.abs(q).max(axis=1))
    for i in range(k):
        if abs(sums[i]) > ROW_SUM_TOL * scale[i]:
            raise RowSumNonzero(i, sums[i])
    # enforce exact zero row sums by recomputing the diagonal
    off = q - np.diag(np.diag(q))
    q = off - np.diag(off.sum(axis=1))
    reach = _reachability(off > 0)
    if not reach.all():
        i, j = np.argwhere(~reach)[0]
        raise Reducible(int(i), int(j))
    return RateMatrix(_frozen(q))


def stationary_distribution(Q: RateMatrix) -> StationaryDist:
    """Solve ``pi Q = 0``, ``pi e = 1`` via an LU solve of the augmented system."""
    q = Q.entries
    k = q.shape[0]
    a = q.T.copy()
    a[-1, :] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    lu, piv = scipy.linalg.lu_factor(a)
    rcond = np.min(np.abs(np.diag(lu))) / max(np.max(np.abs(np.diag(lu))), 1e-300)
    if rcond < _RCOND_MIN:
        raise SingularSolve(f"stationary system is numerically rank-deficient (rcond~{rcond:.2e})")
    pi = scipy.linalg.lu_solve((lu, piv), b)
    if np.any(pi <= 0):
        raise SingularSolve(f"stationary vector has non-positive entries: {pi}")
    pi = pi / pi.sum()
    return StationaryDist(_frozen(pi))


def deviation_matrix(Q: RateMatrix, pi: StationaryDist) -> DeviationMatrix:
    q = Q.entries
    k = q.shape[0]
    big_pi = np.outer(np.ones(k), pi.pi)
    m = big_pi - q
    lu, piv = scipy.linalg.lu_factor(m)
    d = np.abs(np.diag(lu))
    if d.min() < _RCOND_MIN * max(d.max(), 1e-300):
        raise SingularSolve("Pi - Q is numerically singular")
    ups = scipy.linalg.lu_solve((lu, piv), np.eye(k)) - big_pi
    return DeviationMatrix(_frozen(ups))


def pseudo_inverse(upsilon: DeviationMatrix) -> PseudoInverse:
    """Return ``T = -Upsilon``.

    Since ``Q Upsilon = Pi - I``, ``Q(-Upsilon)y = y - e (pi . y) = y`` on
    centered ``y``. Outside that subspace the contract does not apply.
    """
    return PseudoInverse(_frozen(-upsilon.upsilon))


@dataclass(frozen=True)
class ModulatingChain:
    """Bundle of ``Q`` with its derived objects."""

    Q: RateMatrix
    pi: StationaryDist
    upsilon: DeviationMatrix
    T: PseudoInverse

    @classmethod
    def from_matrix(cls, entries) -> "ModulatingChain":
        Q = validate_rate_matrix(entries)
        pi = stationary_distribution(Q)
        ups = deviation_matrix(Q, pi)
        return cls(Q, pi, ups, pseudo_inverse(ups))

    @property
    def K(self) -> int:
        return self.Q.dim

    @property
    def q(self) -> np.ndarray:
        return self.Q.entries

    @property
    def p(self) -> np.ndarray:
        return self.pi.pi

    @property
    def ups(self) -> np.ndarray:
        return self.upsilon.upsilon

    @property
    def t(self) -> np.ndarray:
        return self.T.t

    def with_pseudo_inverse(self, t) -> "ModulatingChain":
        return ModulatingChain(self.Q, self.pi, self.upsilon, PseudoInverse(_frozen(t)))


def deviation_matrix_integral(Q: RateMatrix, pi: StationaryDist, tol=1e-12) -> np.ndarray:
    """Oracle ``int_0^T (P(t) - Pi) dt`` via the block matrix exponential.

    ``expm([[Q, I], [0, 0]] T)`` carries ``int_0^T exp(Qs) ds`` in its upper
    right block. ``T`` is doubled until ``|P(T) - Pi|_inf < tol``.
    """
    q = Q.entries
    k = q.shape[0]
    big_pi = np.outer(np.ones(k), pi.pi)
    horizon = 1.0
    while np.abs(scipy.linalg.expm(q * horizon) - big_pi).max() >= tol:
        horizon *= 2.0
        if horizon > 1e9:
            raise SingularSolve("chain mixes too slowly for the integral oracle")
    blk = np.zeros((2 * k, 2 * k))
    blk[:k, :k] = q
    blk[:k, k:] = np.eye(k)
    # integrate in pieces to keep the exponential well scaled
    pieces = max(1, int(np.ceil(horizon / 8.0)))
    step = horizon / pieces
    e_step = scipy.linalg.expm(blk * step)
    p_step = e_step[:k, :k]
    i_step = e_step[:k, k:]
    total = np.zeros((k, k))
    p_cur = np.eye(k)
    for _ in range(pieces):
        total += p_cur @ i_step - big_pi * step
        p_cur = p_cur @ p_step
    return total
