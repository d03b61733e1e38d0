import numpy as np
import pytest

from regime_lab.diffusion import build_diffusion
from regime_lab.errors import EmptyLattice, NoNegativeDrift
from regime_lab.generators import apply_averaged, apply_breve, apply_Gk_breve, apply_Qn
from regime_lab.lyapunov import (
    LyapunovCandidate,
    build_corrector,
    build_corrector_c21,
    certify_drift,
    corrected,
    extract_constants,
    first_passing_n,
    scaled_lattice,
    verify_diffusion_drift,
    verify_increment_conditions,
    verify_sandwich,
)
from regime_lab.model import phi_psi_split
from regime_lab.testfunctions import TestFunction, constant, norm_power, weighted_power

from conftest import ctx_for


def test_averaged_drift_of_square_closed_form(mm2):
    # Lbar x^2 = -2 mu_bar x^2 + 2 lam_bar_scaled + mu_bar h x at alpha = 1 (lam_bar = 2, mu_bar = 1)
    model, chain = mm2
    ctx = ctx_for(mm2, 100.0)
    lat = scaled_lattice(ctx, 10.0)
    x = lat.xhat[:, 0]
    lv = apply_averaged(model, ctx, chain.p, norm_power(2, 1), lat.xhat)
    assert np.allclose(lv, -2 * x ** 2 + 4.0 + ctx.h * x, rtol=1e-11, atol=1e-10)


def test_certificate_constants_mm2(mm2):
    model, chain = mm2
    ctx = ctx_for(mm2, 100.0)
    lat = scaled_lattice(ctx, 10.0)
    x = lat.xhat[:, 0]
    cert = certify_drift("averaged", norm_power(2, 1), lat, model, ctx, chain)
    outer = x ** 2 >= 0.25 * (x ** 2).max()
    expect = np.min((2 * x ** 2 - 4.0 - ctx.h * x)[outer] / x[outer] ** 2)
    assert cert.c2 == pytest.approx(expect, rel=1e-10)
    assert cert.passed and cert.margin >= 0


@pytest.mark.parametrize("kind", ["averaged", "hatL"])
@pytest.mark.parametrize("m", [2, 4])
def test_certificate_inequality_holds_pointwise(mm2, kind, m):
    model, chain = mm2
    ctx = ctx_for(mm2, 400.0)
    lat = scaled_lattice(ctx, 10.0)
    V = norm_power(m, 1)
    cert = certify_drift(kind, V, lat, model, ctx, chain)
    assert cert.c2 > 0 and cert.c1 >= 0
    assert cert.margin >= 0


def test_Gk_certificate_two_class(two_class):
    model, chain = two_class
    ctx = ctx_for(two_class, 100.0)
    split = phi_psi_split(model, chain, ctx)
    lat = scaled_lattice(ctx, 10.0, 2)
    cert = certify_drift("Gk", weighted_power([1.0, 1.0], 4), lat, model, ctx, chain, split)
    assert cert.passed


def test_corrector_solves_regime_poisson_equation(mm2):
    # Q^n Vtilde(., k) = (Lbar - L_k) V
    model, chain = mm2
    ctx = ctx_for(mm2, 100.0, 0.5)
    V = norm_power(4, 1)
    Vt = build_corrector(model, ctx, chain, V)
    X = np.linspace(-4, 4, 17)[:, None]
    for k in range(2):
        lhs = apply_Qn(Vt, X, k, ctx, chain)
        rhs = apply_breve(model, ctx, chain.p, V, X, k)
        assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


def test_c21_corrector_solves_split_poisson_equation(two_class):
    model, chain = two_class
    ctx = ctx_for(two_class, 100.0)
    split = phi_psi_split(model, chain, ctx)
    V = weighted_power([1.0, 2.0], 4)
    Vt = build_corrector_c21(split, ctx, chain, V)
    X = np.random.default_rng(2).uniform(-3, 3, size=(25, 2))
    for k in range(2):
        assert np.allclose(apply_Qn(Vt, X, k, ctx, chain), apply_Gk_breve(split, ctx, V, X, k),
                           rtol=1e-10, atol=1e-10)


def test_corrector_is_independent_of_pseudo_inverse_shift(mm2):
    # a shift T + e w^T changes Vtilde(., k) by a k-independent amount only
    model, chain = mm2
    ctx = ctx_for(mm2, 100.0)
    V = norm_power(2, 1)
    other = chain.with_pseudo_inverse(chain.t + np.outer(np.ones(2), [0.3, -0.1]))
    a = build_corrector(model, ctx, chain, V)
    b = build_corrector(model, ctx, other, V)
    X = np.array([[0.5], [2.0]])
    d0 = b.value(X, 0) - a.value(X, 0)
    d1 = b.value(X, 1) - a.value(X, 1)
    assert np.allclose(d0, d1, atol=1e-12)


def test_sandwich_at_large_n(mm2):
    model, chain = mm2
    ctx = ctx_for(mm2, 400.0)
    lat = scaled_lattice(ctx, 10.0)
    V = norm_power(2, 1)
    rep = verify_sandwich(V, corrected(V, build_corrector(model, ctx, chain, V)), lat)
    assert rep.holds
    assert rep.points == 2 * len(lat)


def test_sandwich_fails_for_oversized_corrector(mm2):
    model, chain = mm2
    ctx = ctx_for(mm2, 400.0)
    lat = scaled_lattice(ctx, 10.0)
    V = norm_power(2, 1)
    big = build_corrector(model, ctx, chain, V).scaled(1e4)
    assert not verify_sandwich(V, corrected(V, big), lat).holds


def test_first_passing_n(mm2):
    model, chain = mm2
    V = norm_power(2, 1)
    reports = {}
    for n in (4.0, 100.0, 400.0):
        ctx = ctx_for(mm2, n)
        lat = scaled_lattice(ctx, 10.0)
        reports[n] = verify_sandwich(V, corrected(V, build_corrector(model, ctx, chain, V)), lat)
    n0 = first_passing_n(reports)
    assert n0 is not None
    assert all(reports[n].holds for n in reports if n >= n0)


def test_constant_candidate_has_no_negative_drift(mm2):
    model, chain = mm2
    ctx = ctx_for(mm2, 100.0)
    with pytest.raises(NoNegativeDrift) as info:
        certify_drift("averaged", constant(1.0, 1), scaled_lattice(ctx), model, ctx, chain)
    assert info.value.certificate is not None


def test_extract_constants_on_hand_data():
    lv = np.array([1.0, -3.0, -10.0])
    vv = np.array([1.0, 4.0, 9.0])
    cert = extract_constants(lv, vv, np.zeros((3, 1)), [0, 0, 0], {}, v0=2.0)
    assert cert.c2 == pytest.approx(0.75)
    assert cert.c1 == pytest.approx(1.75)
    assert cert.margin == pytest.approx(0.0)


def test_empty_lattice(mm2):
    ctx = ctx_for(mm2, 100.0)  # x* = 200 is itself a lattice point
    assert len(scaled_lattice(ctx, 0.0)) == 1
    ctx = ctx_for(mm2, 100.25)  # x* = 200.5
    with pytest.raises(EmptyLattice):
        scaled_lattice(ctx, 1e-6)


def test_norm_like_candidates():
    assert LyapunovCandidate(norm_power(2, 2)).check_norm_like()
    assert not LyapunovCandidate(constant(2.0, 1)).check_norm_like()


def test_increment_conditions():
    assert verify_increment_conditions(norm_power(4, 2)).passed
    fast = TestFunction(lambda X, k=None: np.exp(np.linalg.norm(np.asarray(X), axis=-1)), 1)
    assert not verify_increment_conditions(fast, samples=4000).passed


def test_diffusion_drift(mm2):
    diff = build_diffusion(mm2[0], ctx_for(mm2, 100.0), mm2[1])
    pts = np.linspace(-20, 20, 401)[:, None]
    rep = verify_diffusion_drift(diff, norm_power(2, 1), 1.0, 3.0, pts)
    assert rep.passed
    # outside the ball A x^2 / x^2 = -2 + 5 / x^2 is smallest in size just past radius 3
    x = pts[np.abs(pts[:, 0]) > 3.0, 0]
    assert rep.kappa_max == pytest.approx(np.min(2 - 5 / x ** 2), rel=1e-8)
    assert not verify_diffusion_drift(diff, norm_power(2, 1), 2.5, 3.0, pts).passed
