import numpy as np
import pytest

from ipwreserve.core import snapshot
from ipwreserve.estimators import IBNR, IBNS, RBNS, reserve_set
from ipwreserve.hazard import FitOptions, InclusionProbabilities, TimeGrid
from ipwreserve.pipeline import (
    ReserveSettings,
    chain_ladder_baseline,
    chain_ladder_probabilities,
    error_metrics,
    estimates_from_probabilities,
    ks_normal,
    payment_weights,
    residual_diagnostics,
    run_reserve_at,
)
from ipwreserve.simulate import CovariateSpec, SimConfig, simulate_portfolio, true_reserves

CFG = SimConfig(
    horizon=36, claim_rate=40, covariates=(CovariateSpec("x"),),
    reporting_coefficients=(0.3,), payment_coefficients=(0.2, 0.0), seed=11,
)


@pytest.fixture(scope="module")
def simulated():
    return simulate_portfolio(CFG)


def _settings(**kw):
    return ReserveSettings(TimeGrid.uniform(1, 24), TimeGrid.uniform(2, 24),
                           FitOptions(weight_scheme="unit"), FitOptions(), **kw)


def test_run_reserve_consistency(simulated):
    port, truth = simulated
    run = run_reserve_at(port, 30.0, _settings())
    est = run.estimates
    assert est[IBNS].point == pytest.approx(est[RBNS].point + est[IBNR].point, rel=1e-12)
    assert est[IBNS].ci_lower < est[IBNS].point < est[IBNS].ci_upper
    t = true_reserves(truth, 30.0)
    # order-of-magnitude sanity only; accuracy is covered by the acceptance suite
    assert 0.3 * t.ibns < est[IBNS].point < 3 * t.ibns
    w = payment_weights(run)
    np.testing.assert_allclose(w["weight"], 1 / w["pi"])


def test_fully_developed_gives_zero(simulated):
    port, _ = simulated
    run = run_reserve_at(port, 36 + 24.0, _settings())
    for k in (IBNS, RBNS, IBNR):
        assert run.estimates[k].point == 0


def test_trim_threshold_rule():
    Y = np.array([10.0, 10.0, 10.0])
    probs = InclusionProbabilities.from_components([0.05, 0.2, 0.9], [1.0, 1.0, 1.0], tau=1.0)
    snap = type("S", (), {"amount": Y, "n_paid": 3})()
    raw, chosen, tprobs, n = estimates_from_probabilities(snap, probs, trim=True, trim_threshold=0.03)
    np.testing.assert_allclose(tprobs.pi, [0.2, 0.2, 0.9])
    assert n == 1 and chosen[IBNS].trimmed and chosen[IBNS].point < raw[IBNS].point
    _, kept, _, _ = estimates_from_probabilities(snap, probs, trim=True, trim_threshold=1e6)
    assert not kept[IBNS].trimmed and kept[IBNS].point == raw[IBNS].point


def test_error_metrics_definitions():
    m = error_metrics([110.0, 90.0], [100.0, 100.0])
    assert (m.me, m.rmse, m.mae, m.mape) == pytest.approx((0.0, 10.0, 10.0, 0.1))
    single = error_metrics([120.0], [100.0])
    assert single.mape == pytest.approx(abs(120 - 100) / 100)
    with pytest.raises(ValueError):
        error_metrics([], [])


def test_chain_ladder_probabilities_reproduce_cl():
    port, _ = simulate_portfolio(SimConfig(horizon=36, claim_rate=20, seed=2))
    for tau in (12.0, 24.0, 36.0):
        snap = snapshot(port, tau)
        probs = chain_ladder_probabilities(snap, 1.0, 1.0)
        ipw = reserve_set(snap.amount, probs)
        cl = chain_ladder_baseline(snap, 1.0, 1.0)
        assert ipw[IBNS].point == pytest.approx(cl.ibns, rel=1e-10)
        assert ipw[RBNS].point == pytest.approx(cl.rbns, rel=1e-10)


def test_ks_against_normal():
    rng = np.random.default_rng(0)
    ok = ks_normal(rng.normal(size=2000))
    bad = ks_normal(rng.normal(0.3, 1, size=2000))
    assert not ok.rejects and bad.rejects
    assert ok.critical_value == pytest.approx(1.63 / np.sqrt(2000), rel=0.02)


def test_residual_diagnostics_shapes(simulated):
    port, _ = simulated
    snap = snapshot(port, 30.0)
    diag = residual_diagnostics(snap, CFG.reporting_model, CFG.payment_model)
    assert diag["payment"][0].size == snap.n_paid
    assert np.all(np.isfinite(diag["reporting"][0]))


def test_rolling_window_restricts_fit(simulated):
    port, _ = simulated
    full = run_reserve_at(port, 36.0, _settings())
    rolled = run_reserve_at(port, 36.0, _settings(rolling_window=18.0))
    assert rolled.reporting_model.report.n_claims < full.reporting_model.report.n_claims
