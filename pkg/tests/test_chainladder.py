import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipwreserve.chainladder import (
    DevelopmentFactors,
    ProbabilityCurve,
    RunoffTriangle,
    build_triangle,
    chain_ladder_reserves,
    cl_project,
    double_cl_decomposition,
    estimate_factors,
    estimate_factors_by_origin,
    implied_factors_from_probabilities,
    ipw_triangle_projection,
    pi_curve_from_factors,
    reverse_hazard_factors,
    reverse_hazard_rates,
    triangle_factors,
)
from ipwreserve.core import Claim, Payment, Portfolio, snapshot
from ipwreserve.estimators import cumulative_estimate, incremental_estimate
from ipwreserve.simulate import SimConfig, simulate_portfolio


def _snap(claims, payments, tau, omega=24.0):
    return snapshot(Portfolio.from_records(claims, payments, (), omega), tau)


def test_single_payment_triangle():
    snap = _snap([Claim("a", 0.5, 0.5)], [Payment("a", 1.5, 100.0)], 3.0)
    tri = build_triangle(snap, 1.0, 1.0)
    assert tri.cells.shape == (3, 25)
    np.testing.assert_array_equal(tri.cells[0, :3], [0, 100, 100])
    assert tri.mask[0, :3].all() and not tri.mask[1, 2] and not tri.mask[2, 1]
    count = build_triangle(snap, 1.0, 1.0, measure="count")
    np.testing.assert_array_equal(count.cells[0, :3], [0, 1, 1])


def test_two_payments_land_in_adjacent_columns():
    snap = _snap([Claim("a", 0.0, 0.0)], [Payment("a", 0.5, 10.0), Payment("a", 1.5, 20.0)], 3.0)
    inc = build_triangle(snap, 1.0, 1.0).incremental()
    np.testing.assert_array_equal(inc[0, :3], [10, 20, 0])


def test_empty_snapshot_gives_zero_triangle():
    snap = _snap([Claim("a", 5.0, 5.0)], [], 3.0)
    tri = build_triangle(snap, 1.0, 1.0)
    assert np.nansum(tri.cells) == 0


def test_triangle_argument_errors():
    snap = _snap([], [], 3.0)
    with pytest.raises(ValueError, match="divide the valuation time"):
        build_triangle(snap, 2.0, 1.0)
    with pytest.raises(ValueError, match="dev_width must divide"):
        build_triangle(snap, 1.0, 0.4)


def test_triangle_csv(tmp_path):
    snap = _snap([Claim("a", 0.5, 0.5)], [Payment("a", 1.5, 100.0)], 2.0)
    build_triangle(snap, 1.0, 1.0, n_dev=2).to_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text() == "origin,1,2\n0-1,0,100\n1-2,0,\n"


def test_factor_examples():
    claims = [Claim("a", 0.0, 0.0)]
    pays = [Payment("a", 0.5, 60.0), Payment("a", 1.0, 40.0), Payment("a", 1.7, 50.0)]
    f = estimate_factors(_snap(claims, pays, 10.0), [1.0, 2.0], "amount")
    assert f.factors[0] == pytest.approx(1.5)
    claims = [Claim(f"c{k}", 0.0, 0.0) for k in range(10)]
    pays = [Payment(f"c{k}", 0.5 if k < 8 else 1.5, 3.0) for k in range(10)]
    f = estimate_factors(_snap(claims, pays, 10.0), [1.0, 2.0], "unit")
    assert f.factors[0] == pytest.approx(1.25)


def test_insufficient_mass():
    snap = _snap([Claim("a", 0.0, 0.0)], [Payment("a", 1.5, 1.0)], 10.0)
    with pytest.raises(ValueError, match="insufficient mass at step 1"):
        estimate_factors(snap, [1.0, 2.0])


def test_factor_weight_schemes():
    snap = _snap([Claim("a", 0.0, 0.0)], [Payment("a", 0.5, 2.0), Payment("a", 1.5, 3.0)], 10.0)
    assert estimate_factors(snap, [1, 2], "amount-squared").factors[0] == pytest.approx(13 / 4)
    with pytest.raises(ValueError, match="unknown weight scheme"):
        estimate_factors(snap, [1, 2], "log")


def _tri(rows):
    cells = np.array(rows, dtype=float)
    mask = ~np.isnan(cells)
    n = cells.shape[1]
    return RunoffTriangle(np.arange(cells.shape[0] + 1.0), np.arange(1.0, n + 1), cells, mask)


def test_cl_project_examples():
    tri = _tri([[50, 80, 100], [60, 100, np.nan], [100, np.nan, np.nan]])
    ones = DevelopmentFactors(tri.dev_cuts, [1.0, 1.0])
    assert cl_project(tri, ones).total_reserve == 0
    proj = cl_project(tri, DevelopmentFactors(tri.dev_cuts, [1.5, 1.2]))
    assert proj.ultimate[2] == pytest.approx(180) and proj.reserve[2] == pytest.approx(80)
    assert proj.reserve[0] == 0
    assert proj.reserve[1] == pytest.approx(20)


def test_textbook_factors_and_per_origin():
    tri = _tri([[50, 80, 100], [60, 100, np.nan], [100, np.nan, np.nan]])
    f = triangle_factors(tri).factors
    assert f[0] == pytest.approx(180 / 110) and f[1] == pytest.approx(100 / 80)
    by = estimate_factors_by_origin(tri)
    assert by[0, 0] == pytest.approx(1.6) and np.isnan(by[1, 1])


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_reserve_scaling_homogeneity(c):
    tri = _tri([[50, 80, 100], [60, 100, np.nan], [100, np.nan, np.nan]])
    f = triangle_factors(tri)
    base = cl_project(tri, f).total_reserve
    scaled = cl_project(tri.scaled(c), triangle_factors(tri.scaled(c))).total_reserve
    assert scaled == pytest.approx(c * base, rel=1e-12)


def test_implied_and_reverse_hazard_factors():
    f = implied_factors_from_probabilities([0.5, 0.75, 1.0])
    np.testing.assert_allclose(f.factors, [1.5, 4 / 3], rtol=1e-15)
    assert np.all(implied_factors_from_probabilities([0.4, 0.4, 0.4]).factors == 1)
    assert np.prod(f.factors) == pytest.approx(1 / 0.5)
    assert reverse_hazard_rates([0.5, 0.75], [0, 1])[0] == pytest.approx(1 / 3)
    assert reverse_hazard_factors([0.5, 0.75], [0, 1]).factors[0] == pytest.approx(1.5)
    assert reverse_hazard_factors([0.3, 0.3], [0, 1]).factors[0] == 1
    for bad in ([0.5, 0.4], [0.0, 0.5], [0.5, 1.2]):
        with pytest.raises(ValueError, match="non-monotone curve"):
            implied_factors_from_probabilities(bad)


def test_factor_routes_agree_on_random_curves():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = rng.integers(2, 30)
        pi = np.sort(rng.uniform(0.01, 1.0, m))
        cuts = np.cumsum(rng.uniform(0.1, 3.0, m))
        a = implied_factors_from_probabilities(pi, cuts).factors
        b = reverse_hazard_factors(pi, cuts).factors
        np.testing.assert_allclose(a, b, rtol=1e-12)
        curve = pi_curve_from_factors(DevelopmentFactors(cuts, a))
        np.testing.assert_allclose(curve, pi / pi[-1], rtol=1e-12)


def test_double_cl_examples():
    flat = ProbabilityCurve([0, 10], [0.5, 0.5])
    assert double_cl_decomposition([10.0], 1.0, flat, (2, 4), tau=1.0).value == 0
    # N_paid = 10, pi_u = 0.8, p = 0.1, Ybar = 50 with pi_v = 0.5
    curve = ProbabilityCurve([0, 1, 2, 3], [0.2, 0.4, 0.5, 0.6])
    d = double_cl_decomposition(np.full(10, 25.0), 0.8, curve, (2, 3), tau=1.0)
    assert (d.n_hat, d.proportion, d.mean_amount) == pytest.approx((12.5, 0.1, 50.0))
    assert d.value == pytest.approx(62.5)
    with pytest.raises(ValueError, match="N_paid = 0"):
        double_cl_decomposition([], 0.8, curve, (2, 3), tau=1.0)


def test_double_cl_equals_incremental_ipw():
    rng = np.random.default_rng(5)
    for _ in range(100):
        Y = rng.lognormal(3, 1, rng.integers(1, 50))
        vals = np.sort(rng.uniform(0.05, 1, 4))
        curve = ProbabilityCurve([0, 1, 2, 3], vals)
        pu = rng.uniform(vals[0], 1.0)
        d = double_cl_decomposition(Y, pu, curve, (1.0, 2.0), tau=0.0)
        n = Y.size
        ipw = incremental_estimate(Y, np.full(n, vals[0]), np.full(n, vals[1]), np.full(n, vals[2]))
        assert d.value == pytest.approx(ipw, rel=1e-12)


def _homogeneous_snapshot(seed, tau=36.0):
    cfg = SimConfig(horizon=36, claim_rate=15, seed=seed)
    port, _ = simulate_portfolio(cfg)
    return snapshot(port, tau)


@pytest.mark.parametrize("scheme,measure", [("amount", "amount"), ("unit", "count")])
def test_cl_equals_ipw_cell_by_cell(scheme, measure):
    snap = _homogeneous_snapshot(3)
    tri = build_triangle(snap, 1.0, 1.0, measure, n_dev=36)
    f = estimate_factors(snap, tri.dev_cuts, scheme, origin_width=1.0)
    np.testing.assert_allclose(f.factors, triangle_factors(tri).factors, rtol=1e-12)
    pi = pi_curve_from_factors(f)
    proj = cl_project(tri, f)
    ipw = ipw_triangle_projection(snap, tri, pi)
    np.testing.assert_allclose(ipw, proj.completed, rtol=1e-10)
    # row ultimates also follow from the generic cumulative estimator
    k = tri.latest_index
    start = np.floor(snap.payment_accident_time)
    Y = snap.amount if measure == "amount" else np.ones(snap.n_paid)
    for o in range(tri.n_origins):
        sel = start == o
        if k[o] < 0 or not sel.any():
            continue
        n = int(sel.sum())
        est = cumulative_estimate(Y[sel], np.full(n, pi[k[o]]), np.full(n, pi[-1]))
        assert est == pytest.approx(proj.ultimate[o], rel=1e-10)


def test_chain_ladder_reserves_split_and_developed():
    snap = _homogeneous_snapshot(4)
    res = chain_ladder_reserves(snap, 1.0, 1.0)
    assert res.ibns == pytest.approx(res.rbns + res.ibnr)
    assert res.rbns > 0 and res.ibnr > 0
    done = _homogeneous_snapshot(4, tau=72.0)
    zero = chain_ladder_reserves(done, 1.0, 1.0)
    assert zero.ibns == pytest.approx(0, abs=1e-9)
