import warnings
from dataclasses import replace

import numpy as np
import pytest

from regime_lab.errors import EventBudgetExceeded, ValidationError, ZeroTotalRate
from regime_lab.markov_env import ModulatingChain
from regime_lab.model import build_custom, make_context
from regime_lab.simulator import (
    SimConfig,
    occupation_check,
    resolve_threads,
    simulate_joint,
    start_sensitivity,
    truncated_stationary,
)
from regime_lab.testfunctions import constant, coordinate, norm_power, parse_test_function

from conftest import ctx_for

X1 = parse_test_function("x", 1)
X2 = parse_test_function("x2", 1)


def test_constant_function_is_exact(mm2):
    est = simulate_joint(mm2[0], ctx_for(mm2, 25.0), mm2[1], SimConfig(horizon=200.0),
                         [constant(3.0, 1)])
    v = next(iter(est.values.values()))
    assert v.estimate == 3.0
    assert v.se == 0.0


def test_poisson_oracle_k1(mm1):
    # stationary law Poisson(100): scaled mean 0, scaled second moment 1
    ctx = ctx_for(mm1, 100.0)
    est = simulate_joint(mm1[0], ctx, mm1[1], SimConfig(horizon=1500.0, seed=11), [X1, X2])
    assert abs(est["x"].estimate) <= 3 * est["x"].se
    assert abs(est["x2"].estimate - 1.0) <= 3 * est["x2"].se
    assert est.j_events == 0


def test_regime_occupation_matches_pi(sym_chain):
    model = build_custom(1, 2, [[1], [-1]], ["lam * n", "x1"], {"lam": [1.0, 3.0]})
    q = [[-2.0, 2.0], [1.0, -1.0]]
    chain = ModulatingChain.from_matrix(q)
    ctx = make_context(model, 100.0, 1.0, chain)
    est = simulate_joint(model, ctx, chain, SimConfig(horizon=400.0, seed=2, replications=2), [X1])
    assert np.all(np.abs(est.occupation - chain.p) <= 3 * est.occupation_se)


def test_reproducible_and_thread_independent(mm2, monkeypatch):
    monkeypatch.delenv("REGIME_LAB_THREADS", raising=False)
    ctx = ctx_for(mm2, 25.0)
    cfg = SimConfig(horizon=300.0, seed=9, replications=3)
    a = simulate_joint(mm2[0], ctx, mm2[1], cfg, [X2])
    b = simulate_joint(mm2[0], ctx, mm2[1], replace(cfg, threads=3), [X2])
    c = simulate_joint(mm2[0], ctx, mm2[1], replace(cfg, seed=10), [X2])
    assert a["x2"] == b["x2"]
    assert a.x_events == b.x_events
    assert a["x2"].estimate != c["x2"].estimate


def test_against_exact_truncated_chain(mm2):
    ctx = ctx_for(mm2, 25.0)
    exact = truncated_stationary(mm2[0], ctx, mm2[1], [X1, X2], width=20.0)
    assert exact.mass_at_edge < 1e-12
    est = simulate_joint(mm2[0], ctx, mm2[1], SimConfig(horizon=2000.0, seed=4, replications=2),
                         [X1, X2])
    for tag in ("x", "x2"):
        assert abs(est[tag].estimate - exact.moments[tag]) <= 4 * est[tag].se


@pytest.mark.parametrize("n", [25.0, 100.0])
def test_truncated_chain_second_moment_closed_form(mm2, n):
    # exact pi^n(xhat^2) for the symmetric two-regime fixture at alpha = 1
    exact = truncated_stationary(mm2[0], ctx_for(mm2, n), mm2[1], [X1, X2], width=20.0)
    assert exact.moments["x"] == pytest.approx(0.0, abs=1e-9)
    assert exact.moments["x2"] == pytest.approx(2.5 - 1.0 / (2.0 + 4.0 * n), rel=1e-9)


def test_truncated_chain_k1_is_poisson(mm1):
    exact = truncated_stationary(mm1[0], ctx_for(mm1, 49.0), mm1[1], [X1, X2])
    assert exact.moments["x2"] == pytest.approx(1.0, rel=1e-9)


def test_crossing_counts_balance(mm2):
    # up-jumps out of level i and down-jumps out of level i + 1 alternate on every edge
    ctx = ctx_for(mm2, 25.0)
    est = simulate_joint(mm2[0], ctx, mm2[1], SimConfig(horizon=300.0, seed=3, histogram=True),
                         [X1])
    r = est.replications[0]
    assert np.all(np.abs(r.up[:-1] - r.down[1:]) <= 1)
    # the occupancy histogram reproduces the time average
    levels = ctx.to_scaled(np.arange(r.hist_lo, r.hist_lo + r.hist.size)[:, None])[:, 0]
    assert r.hist @ levels / r.hist.sum() == pytest.approx(est["x"].estimate, rel=1e-9, abs=1e-12)


def test_zero_total_rate():
    model = build_custom(1, 1, [[1], [-1]], ["pos(n - x1)", "pos(x1 - n)"])
    chain = ModulatingChain.from_matrix([[0.0]])
    ctx = make_context(model, 10.0, 1.0, chain)
    with pytest.raises(ZeroTotalRate):
        simulate_joint(model, ctx, chain, SimConfig(horizon=10.0), [X1])


def test_event_budget(mm2):
    with pytest.raises(EventBudgetExceeded):
        simulate_joint(mm2[0], ctx_for(mm2, 100.0), mm2[1],
                       SimConfig(horizon=100.0, max_events=1000), [X1])


@pytest.mark.parametrize("kw", [{"horizon": 0.0}, {"horizon": 1.0, "batches": 4},
                                {"horizon": 1.0, "burn_in_fraction": 1.0},
                                {"horizon": 1.0, "replications": 0}])
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        SimConfig(**kw)


def test_bad_initial_state(mm2):
    with pytest.raises(ValidationError):
        simulate_joint(mm2[0], ctx_for(mm2, 25.0), mm2[1],
                       SimConfig(horizon=1.0, initial_state=(-1,)), [X1])


def test_non_polynomial_rejected(mm2):
    from regime_lab.testfunctions import weighted_power

    with pytest.raises(ValidationError):
        simulate_joint(mm2[0], ctx_for(mm2, 25.0), mm2[1], SimConfig(horizon=1.0),
                       [weighted_power([1.0], 3)])


def test_short_batches_warn(mm2):
    with pytest.warns(RuntimeWarning):
        simulate_joint(mm2[0], ctx_for(mm2, 25.0), mm2[1], SimConfig(horizon=2.0), [X1])


def test_occupation_ratio_scaling(mm2):
    ests = [simulate_joint(mm2[0], ctx_for(mm2, n, 0.5), mm2[1], SimConfig(horizon=200.0, seed=1),
                           [X1]) for n in (25.0, 100.0, 400.0)]
    rep = occupation_check(ests, 0.5)
    # J-events grow like n^alpha, X-events like n
    assert rep.slope == pytest.approx(-0.5, abs=0.05)
    # n^alpha q = 5 switches per unit time at n = 25 is flagged, 20 at n = 400 is not
    assert 25.0 in rep.slow_mixing and 400.0 not in rep.slow_mixing


def test_start_sensitivity(mm2):
    out = start_sensitivity(mm2[0], ctx_for(mm2, 25.0), mm2[1],
                            SimConfig(horizon=500.0, seed=1), [X2])
    diff, se = out["x2"]
    assert abs(diff) <= 4 * se


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv("REGIME_LAB_THREADS", raising=False)
    assert resolve_threads(3) == 3
    monkeypatch.setenv("REGIME_LAB_THREADS", "2")
    assert resolve_threads(8) == 2
    monkeypatch.setenv("REGIME_LAB_THREADS", "many")
    with pytest.raises(ValidationError):
        resolve_threads(1)


def test_two_dimensional_simulation(two_class):
    ctx = ctx_for(two_class, 25.0)
    f = norm_power(2, 2)
    est = simulate_joint(two_class[0], ctx, two_class[1], SimConfig(horizon=200.0, seed=5),
                         [f, coordinate(0, 2)])
    assert est[f.tag].estimate > 0
    assert np.isfinite(est[coordinate(0, 2).tag].se)
