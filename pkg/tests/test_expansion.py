import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regime_lab.diffusion import build_diffusion
from regime_lab.errors import DegenerateRegression, MissingDerivatives, ValidationError
from regime_lab.expansion import (
    ExpansionContext,
    check_identity,
    g_functions_of,
    gt1,
    gt2,
    loglog_slope,
    predicted_exponent,
    residual_decay_probe,
    residuals,
)
from regime_lab.generators import apply_Qn
from regime_lab.testfunctions import Polynomial, TestFunction, norm_power

from conftest import ctx_for

BUILTINS = ["mm2", "mm1", "two_class", "mph"]


def _ec(pair, n, alpha, f):
    return ExpansionContext.create(pair[0], ctx_for(pair, n, alpha), pair[1], f)


@pytest.mark.parametrize("fixture", BUILTINS)
@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_identity_holds(fixture, alpha, request):
    pair = request.getfixturevalue(fixture)
    d = pair[0].d
    f = norm_power(4, d) + Polynomial({(1,) + (0,) * (d - 1): 0.7}, d)
    ec = _ec(pair, 100.0, alpha, f)
    X = np.random.default_rng(4).uniform(-3, 3, size=(30, d))
    for k in range(pair[0].K):
        rep = check_identity(ec, X, k)
        assert rep.rel_gap.max() <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=5, max_size=5), st.floats(-3, 3), st.integers(0, 1))
def test_identity_random_quartic_two_class(coeffs, x, k):
    from conftest import SYM2
    from regime_lab.markov_env import ModulatingChain
    from regime_lab.model import build_multiclass_mmn

    model = build_multiclass_mmn([[0.3, 0.7], [0.6, 0.4]], [[0.8, 1.2], [1.2, 0.8]],
                                 [[0.5, 0.7], [0.6, 0.4]])
    chain = ModulatingChain.from_matrix(SYM2)
    terms = {(4, 0): coeffs[0], (2, 2): coeffs[1], (1, 1): coeffs[2], (0, 3): coeffs[3],
             (0, 1): coeffs[4]}
    f = Polynomial(terms, 2)
    ec = _ec((model, chain), 25.0, 1.0, f)
    rep = check_identity(ec, np.array([x, -0.5 * x]), k)
    assert rep.rel_gap <= 1e-10


@pytest.mark.parametrize("fixture", ["mm2", "two_class"])
def test_g_solves_regime_poisson_equation(fixture, request):
    # pi . gt = 0 for both pieces, so Q^n g_i(., k) = gt_i(., k)
    pair = request.getfixturevalue(fixture)
    model, chain = pair
    f = norm_power(4, model.d)
    ec = _ec(pair, 100.0, 1.0, f)
    G = g_functions_of(ec)
    X = np.random.default_rng(0).uniform(-2, 2, size=(10, model.d))
    for piece, g in ((gt1, G.g1), (gt2, G.g2)):
        vals = [piece(ec, X, k) for k in range(model.K)]
        scale = max(1.0, max(np.abs(v).max() for v in vals))
        assert np.abs(sum(chain.p[k] * vals[k] for k in range(model.K))).max() <= 1e-12 * scale
        for k in range(model.K):
            assert np.allclose(apply_Qn(g, X, k, ec.ctx, chain), vals[k], atol=1e-10 * scale)


def test_quadratic_residuals_mm2(mm2):
    # f = x^2: Taylor terms vanish, R2 = n^-beta mu_bar x, R4 = 0
    f = norm_power(2, 1)
    for alpha in (0.5, 1.0, 2.0):
        ec = _ec(mm2, 400.0, alpha, f)
        X = np.array([[0.5], [-1.5]])
        R = residuals(ec, X, 0)
        assert np.allclose(R[0], 0.0, atol=1e-10)
        assert np.allclose(R[1], ec.ctx.h * X[:, 0], rtol=1e-10)
        assert np.allclose(R[3], 0.0, atol=1e-12)


def test_R3_does_not_depend_on_regime(two_class):
    ec = _ec(two_class, 100.0, 1.0, norm_power(4, 2))
    X = np.array([[1.0, -2.0], [0.3, 0.4]])
    assert np.allclose(residuals(ec, X, 0)[2], residuals(ec, X, 1)[2], rtol=1e-14)


def test_context_requires_derivatives(mm2):
    f = TestFunction(lambda X, k=None: np.asarray(X)[..., 0], 1)
    with pytest.raises(MissingDerivatives):
        _ec(mm2, 100.0, 1.0, f)


def test_context_rejects_foreign_diffusion(mm2):
    model, chain = mm2
    other = build_diffusion(model, ctx_for(mm2, 400.0), chain)
    with pytest.raises(ValidationError):
        ExpansionContext.create(model, ctx_for(mm2, 100.0), chain, norm_power(2, 1), other)


@pytest.mark.parametrize("alpha, expect", [(2.0, -0.5), (1.0, -0.5), (0.5, -0.25), (0.1, -0.05)])
def test_predicted_exponent(alpha, expect):
    assert predicted_exponent(alpha) == pytest.approx(expect)


def test_probe_at_alpha_two_has_half_power_decay(mm2):
    pr = residual_decay_probe(mm2[0], mm2[1], 2.0, norm_power(2, 1), [0.5], 0)
    assert pr.slope == pytest.approx(-0.5, abs=0.01)


@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_probe_decays_for_small_alpha(mm2, alpha):
    # the n^-beta residual dominates, so alpha = 0.5 decays no slower than alpha = 1
    pr = residual_decay_probe(mm2[0], mm2[1], alpha, norm_power(2, 1), [0.5], 0)
    assert pr.slope < -0.15
    assert np.all(np.diff(np.abs(pr.values)) < 0)


def test_probe_linear_f_is_degenerate(mm2):
    # residuals of a linear f vanish identically for linear rates
    with pytest.raises(DegenerateRegression):
        residual_decay_probe(mm2[0], mm2[1], 1.0, Polynomial({(1,): 1.0}, 1), [0.5], 0)


def test_loglog_slope():
    n = np.array([10.0, 100.0, 1000.0])
    assert loglog_slope(n, 3.0 * n ** -0.7) == pytest.approx(-0.7)
    with pytest.raises(DegenerateRegression):
        loglog_slope(n, [1e-16, 0.0, 1e-15])
