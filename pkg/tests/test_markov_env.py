import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings

from regime_lab.errors import NegativeOffDiagonal, Reducible, RowSumNonzero
from regime_lab.markov_env import (
    ModulatingChain,
    deviation_matrix_integral,
    validate_rate_matrix,
)

from conftest import rate_matrices


def test_symmetric_two_state_closed_form(sym_chain):
    # P(t) - Pi = exp(-2t)(I - Pi), so the integral is (I - Pi)/2
    assert np.allclose(sym_chain.p, [0.5, 0.5])
    assert np.allclose(sym_chain.ups, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-14)


def test_asymmetric_two_state_closed_form():
    a, b = 2.0, 0.5
    ch = ModulatingChain.from_matrix([[-a, a], [b, -b]])
    pi = np.array([b, a]) / (a + b)
    assert np.allclose(ch.p, pi, rtol=1e-14)
    expected = (np.eye(2) - np.outer(np.ones(2), pi)) / (a + b)
    assert np.allclose(ch.ups, expected, atol=1e-14)


def test_single_state_chain():
    ch = ModulatingChain.from_matrix([[0.0]])
    assert ch.K == 1
    assert ch.p[0] == 1.0
    assert ch.ups[0, 0] == 0.0


@pytest.mark.parametrize("q, err", [
    ([[-1.0, 1.0], [-0.5, 0.5]], NegativeOffDiagonal),
    ([[-1.0, 1.0], [1.0, -0.5]], RowSumNonzero),
    ([[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 0.0]], Reducible),
])
def test_invalid_rate_matrices(q, err):
    with pytest.raises(err):
        validate_rate_matrix(q)


def test_reducible_reports_pair():
    with pytest.raises(Reducible) as info:
        validate_rate_matrix([[-1.0, 1.0], [0.0, 0.0]])
    assert "1" in str(info.value)


@settings(max_examples=60, deadline=None)
@given(rate_matrices())
def test_chain_identities(q):
    ch = ModulatingChain.from_matrix(q)
    K = ch.K
    pi, ups = ch.p, ch.ups
    Pi = np.outer(np.ones(K), pi)
    scale = max(1.0, np.abs(q).max())
    assert np.allclose(pi @ q, 0.0, atol=1e-9 * scale)
    assert abs(pi.sum() - 1.0) < 1e-12
    assert np.allclose(q @ ups, Pi - np.eye(K), atol=1e-9)
    assert np.allclose(ups @ q, Pi - np.eye(K), atol=1e-9)
    assert np.allclose(ups @ np.ones(K), 0.0, atol=1e-9)
    assert np.allclose(pi @ ups, 0.0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(rate_matrices())
def test_pseudo_inverse_solves_centered_poisson(q):
    ch = ModulatingChain.from_matrix(q)
    rng = np.random.default_rng(0)
    y = rng.normal(size=ch.K)
    y -= ch.p @ y
    assert np.allclose(q @ ch.t @ y, y, atol=1e-9 * max(1.0, np.abs(y).max()))


@settings(max_examples=25, deadline=None)
@given(rate_matrices())
def test_any_pseudo_inverse_works(q):
    # T + e w^T is again a left pseudo-inverse since Q e = 0
    ch = ModulatingChain.from_matrix(q)
    w = np.linspace(-1.0, 2.0, ch.K)
    other = ch.with_pseudo_inverse(ch.t + np.outer(np.ones(ch.K), w))
    y = np.arange(ch.K, dtype=float)
    y -= ch.p @ y
    assert np.allclose(q @ other.t @ y, y, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(rate_matrices(max_k=5))
def test_deviation_matrix_matches_integral_oracle(q):
    ch = ModulatingChain.from_matrix(q)
    oracle = deviation_matrix_integral(ch.Q, ch.pi)
    assert np.allclose(ch.ups, oracle, atol=1e-6)


def test_stationary_matches_expm_limit():
    q = np.array([[-3.0, 2.0, 1.0], [0.5, -0.5, 0.0], [1.0, 4.0, -5.0]])
    ch = ModulatingChain.from_matrix(q)
    P = scipy.linalg.expm(q * 200.0)
    assert np.allclose(P[0], ch.p, atol=1e-12)
