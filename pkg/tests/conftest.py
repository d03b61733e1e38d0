import numpy as np
import pytest
from hypothesis import strategies as st

from regime_lab.markov_env import ModulatingChain
from regime_lab.model import (
    build_mm_infinity,
    build_mph_n,
    build_multiclass_mmn,
    make_context,
)

SYM2 = [[-1.0, 1.0], [1.0, -1.0]]


def random_generator_matrix(rng, K, density=1.0):
    """Irreducible rate matrix: a random cycle plus random extra edges."""
    q = np.zeros((K, K))
    perm = rng.permutation(K)
    for a, b in zip(perm, np.roll(perm, -1)):
        if a != b:
            q[a, b] = rng.uniform(0.1, 3.0)
    extra = (rng.uniform(size=(K, K)) < density) & ~np.eye(K, dtype=bool)
    q[extra] += rng.uniform(0.0, 3.0, size=extra.sum())
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


@st.composite
def rate_matrices(draw, max_k=6):
    K = draw(st.integers(2, max_k))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    density = draw(st.floats(0.0, 1.0))
    return random_generator_matrix(np.random.default_rng(seed), K, density)


@pytest.fixture
def sym_chain():
    return ModulatingChain.from_matrix(SYM2)


@pytest.fixture
def mm2(sym_chain):
    """Two-regime M/M/infinity with lambda = (1, 3), mu = (1, 1)."""
    return build_mm_infinity([1.0, 3.0], [1.0, 1.0]), sym_chain


@pytest.fixture
def mm1():
    return build_mm_infinity([1.0], [1.0]), ModulatingChain.from_matrix([[0.0]])


@pytest.fixture
def two_class(sym_chain):
    model = build_multiclass_mmn([[0.3, 0.7], [0.6, 0.4]], [[0.8, 1.2], [1.2, 0.8]],
                                 [[0.5, 0.7], [0.6, 0.4]])
    return model, sym_chain


@pytest.fixture
def mph(sym_chain):
    model = build_mph_n([0.8, 1.2], [[1.8, 2.2], [2.2, 1.8]], [[[0, 1], [0, 0]]] * 2, [0.5, 0.7])
    return model, sym_chain


def ctx_for(pair, n, alpha=1.0):
    model, chain = pair
    return make_context(model, n, alpha, chain)


ACCEPTANCE_LINES = {}


@pytest.fixture
def report_criterion():
    """Record the one-line verdict of an acceptance criterion."""

    def record(i, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {i}: {detail}"
        ACCEPTANCE_LINES[i] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for i in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[i])
