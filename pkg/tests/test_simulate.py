import json
import math

import numpy as np
import pytest

from ipwreserve.core import snapshot
from ipwreserve.simulate import (
    CovariateSpec,
    SimConfig,
    oracle_probabilities,
    simulate_portfolio,
    true_reserves,
    write_simulation,
)

HETERO = SimConfig(
    horizon=36, claim_rate=30, covariates=(CovariateSpec("x"), CovariateSpec("z", "normal")),
    reporting_coefficients=(0.5, -0.2), payment_coefficients=(0.3, 0.1, -0.05), seed=17,
)


def test_zero_rate_gives_empty_portfolio():
    port, truth = simulate_portfolio(SimConfig(claim_rate=0))
    assert port.n_claims == 0 and port.n_payments == 0
    assert true_reserves(truth, 10).ibns == 0


def test_identical_seeds_identical_files(tmp_path):
    for name in ("a", "b"):
        _, truth = simulate_portfolio(HETERO)
        write_simulation(truth, tmp_path / name, [12, 24])
    for rel in ("claims.csv", "payments.csv", "sim_config.json", "tau_12/truth.csv", "tau_24/reserves_truth.json"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    _, other = simulate_portfolio(SimConfig(**{**HETERO.__dict__, "seed": 18}))
    write_simulation(other, tmp_path / "c", [12])
    assert (tmp_path / "a/claims.csv").read_bytes() != (tmp_path / "c/claims.csv").read_bytes()


def test_adding_claims_keeps_earlier_draws():
    small, _ = simulate_portfolio(SimConfig(**{**HETERO.__dict__, "horizon": 24}))
    big, _ = simulate_portfolio(HETERO)
    n = small.n_claims
    np.testing.assert_array_equal(big.accident_time[:n], small.accident_time)
    np.testing.assert_array_equal(big.reporting_time[:n], small.reporting_time)
    np.testing.assert_array_equal(big.covariates[:n], small.covariates)
    sel = big.payment_claim < n
    np.testing.assert_array_equal(big.payment_time[sel], small.payment_time)
    np.testing.assert_array_equal(big.amount[sel], small.amount)


def test_claim_count_poisson_mean():
    counts = [simulate_portfolio(SimConfig(claim_rate=10, horizon=36, seed=s))[0].n_claims for s in range(200)]
    assert abs(np.mean(counts) - 360) < 3 * math.sqrt(360 / 200)


def test_generated_data_respects_structure():
    port, _ = simulate_portfolio(HETERO)
    U = port.reporting_time - port.accident_time
    assert np.all(U >= 0) and np.all(U <= HETERO.omega)
    W = port.payment_time
    assert np.all(W >= port.reporting_time[port.payment_claim])
    assert np.all(W - port.accident_time[port.payment_claim] <= HETERO.omega)
    assert np.all(port.amount > 0)


def test_truth_identities():
    port, truth = simulate_portfolio(HETERO)
    for tau in (0.0, 5.5, 18, 36, 100):
        t = true_reserves(truth, tau)
        assert t.ibns == t.rbns + t.ibnr
        assert t.paid + t.ibns == pytest.approx(t.total, rel=1e-14)
        assert t.paid == pytest.approx(snapshot(port, tau).amount.sum(), rel=1e-14)
    assert true_reserves(truth, 100).ibns == 0
    assert true_reserves(truth, -1).total == 0


def test_oracle_examples():
    cfg = SimConfig(payment_cuts=(0, 24), payment_rates=(0.3,))
    pu, pv, pi = oracle_probabilities(cfg, [0.0], [0.0], np.empty((1, 0)), 12.0)
    assert pv[0] == pytest.approx(0.5, rel=1e-14)
    pu, _, _ = oracle_probabilities(cfg, [0.0], [1.0], np.empty((1, 0)), 30.0)
    assert pu[0] == 1.0


def test_oracle_product_against_raw_rates():
    rng = np.random.default_rng(2)
    cfg = HETERO
    rc, rr = np.array(cfg.reporting_cuts), np.array(cfg.reporting_rates)
    pcut, pr = np.array(cfg.payment_cuts), np.array(cfg.payment_rates)

    def cum(cuts, rates, t):
        return sum(r * min(max(t - a, 0.0), b - a) for a, b, r in zip(cuts[:-1], cuts[1:], rates))

    for _ in range(100):
        T = rng.uniform(0, 36)
        U = rng.uniform(0, 10)
        X = np.array([rng.integers(0, 2), rng.normal()])
        tau = T + U + rng.uniform(0, 20)
        pu, pv, pi = oracle_probabilities(cfg, [T], [T + U], X[None, :], tau)
        e_r = math.exp(X @ cfg.reporting_coefficients)
        e_p = math.exp(np.append(X, U) @ cfg.payment_coefficients)
        c = min(tau - T, 24)
        ref_u = (1 - math.exp(-e_r * cum(rc, rr, c))) / (1 - math.exp(-e_r * cum(rc, rr, 24)))
        w = 24 - U
        ref_v = 1.0 if tau - T - U >= w else cum(pcut, pr, tau - T - U) / cum(pcut, pr, w)
        assert pi[0] == pytest.approx(ref_u * ref_v, rel=1e-12)
        assert e_p > 0  # proportional factor cancels in the ratio


def test_reporting_fraction_matches_oracle():
    port, truth = simulate_portfolio(SimConfig(**{**HETERO.__dict__, "claim_rate": 200}))
    tau = 20.0
    sel = port.accident_time <= tau
    pu, _, _ = oracle_probabilities(HETERO, port.accident_time[sel], port.reporting_time[sel],
                                    port.covariates[sel], tau)
    reported = port.reporting_time[sel] <= tau
    se = math.sqrt(np.sum(pu * (1 - pu))) / sel.sum()
    assert abs(reported.mean() - pu.mean()) < 3 * se


def test_payment_count_matches_intensity():
    port, _ = simulate_portfolio(SimConfig(**{**HETERO.__dict__, "claim_rate": 200}))
    U = port.reporting_time - port.accident_time
    Xd = np.column_stack([port.covariates, U])
    lam = HETERO.payment_model.cumulative(24 - U, Xd)
    n = np.bincount(port.payment_claim, minlength=port.n_claims)
    se = math.sqrt(lam.sum()) / port.n_claims
    assert abs(n.mean() - lam.mean()) < 3 * se


def test_truth_files(tmp_path):
    port, truth = simulate_portfolio(HETERO)
    write_simulation(truth, tmp_path, [18])
    lines = (tmp_path / "tau_18/truth.csv").read_text().splitlines()
    assert lines[0] == "payment_row,pi_u,pi_v,pi,reported_by_tau,paid_by_tau"
    assert len(lines) == port.n_payments + 1
    d = json.loads((tmp_path / "tau_18/reserves_truth.json").read_text())
    assert d["ibns"] == true_reserves(truth, 18).ibns
    cfg = SimConfig.from_dict(json.loads((tmp_path / "sim_config.json").read_text()))
    assert cfg == HETERO


def test_config_validation():
    with pytest.raises(ValueError, match="end at omega"):
        SimConfig(reporting_cuts=(0, 12), reporting_rates=(1.0,))
    with pytest.raises(ValueError, match="one per covariate plus one for U"):
        SimConfig(payment_coefficients=())
