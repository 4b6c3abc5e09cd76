import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ipwreserve.estimators import (
    confidence_interval,
    cumulative_estimate,
    ibnr_reserve,
    ibns_reserve,
    incremental_estimate,
    outstanding_count,
    rbns_reserve,
    trim_inclusion,
    trim_probabilities,
    ultimate_estimate,
    variance_estimate,
)
from ipwreserve.hazard import InclusionProbabilities


def test_ibns_examples():
    assert ibns_reserve([100, 50], [1.0, 1.0]).point == 0
    assert ibns_reserve([100], [0.5]).point == 100
    assert ibns_reserve([200, 50], [0.8, 0.25]).point == pytest.approx(200, rel=1e-15)


def test_ultimate_examples():
    assert ultimate_estimate([100, 50], [1, 1]) == 150
    assert ultimate_estimate([100], [0.5]) == 200
    assert ultimate_estimate([200, 50], [0.8, 0.25]) == pytest.approx(450)


def test_count_examples():
    assert outstanding_count([1, 1, 1]).point == 0
    assert outstanding_count([0.5]).point == 1
    assert outstanding_count([0.25, 0.8]).point == pytest.approx(3.25)


def test_rbns_ibnr_examples():
    assert rbns_reserve([1, 2], [1.0, 1.0]).point == 0
    assert rbns_reserve([80], [0.8]).point == pytest.approx(20)
    assert rbns_reserve([80, 30], [0.8, 0.5]).point == pytest.approx(50)
    assert ibnr_reserve([80, 9], [1.0, 1.0], pi_v=[0.3, 0.7]).point == 0
    assert ibnr_reserve([80], [0.5], pi_v=[0.8]).point == pytest.approx(100)
    probs = InclusionProbabilities.from_components([0.5], [0.8], tau=1.0)
    assert probs.pi[0] == pytest.approx(0.4)
    assert ibnr_reserve([80], probs).point == pytest.approx(100)


def test_cumulative_and_incremental_examples():
    assert cumulative_estimate([100, 50], [0.5, 0.2], [0.5, 0.2]) == 150
    assert cumulative_estimate([100, 50], [0.5, 0.25], [1, 1]) == ultimate_estimate([100, 50], [0.5, 0.25])
    assert cumulative_estimate([100], [0.5], [0.75]) == pytest.approx(150)
    assert incremental_estimate([100], [0.5], [0.7], [0.7]) == 0
    assert incremental_estimate([100], [0.5], [0.6], [0.9]) == pytest.approx(60)
    with pytest.raises(ValueError, match="inconsistent probability curves"):
        cumulative_estimate([100], [0.5], [0.4])
    with pytest.raises(ValueError, match="ordering violation"):
        incremental_estimate([100], [0.5], [0.9], [0.6])


def test_variance_examples():
    assert variance_estimate([100, 100], [0.5, 0.5]) == 0
    assert variance_estimate([200, 50], [0.8, 0.25]) == pytest.approx(10000)
    with pytest.raises(ValueError, match="variance undefined"):
        variance_estimate([100], [0.5])
    single = ibns_reserve([100], [0.5])
    assert math.isnan(single.variance)


def test_confidence_interval_examples():
    assert confidence_interval(100, 0) == (100, 100)
    lo, hi = confidence_interval(100, 25, 0.05)
    assert lo == pytest.approx(90.665, abs=5e-4) and hi == pytest.approx(110.296, abs=5e-4)
    assert hi / 100 == pytest.approx(100 / lo, rel=1e-14)
    assert confidence_interval(0, 0) == (0, 0)
    assert all(math.isnan(v) for v in confidence_interval(-5, 1))


def test_input_errors():
    with pytest.raises(ValueError, match="length mismatch"):
        ibns_reserve([1, 2], [0.5])
    with pytest.raises(ValueError, match=r"\(0, 1\]"):
        ibns_reserve([1], [0.0])
    with pytest.raises(ValueError, match=r"\(0, 1\]"):
        ibns_reserve([1], [1.5])


def test_trimming_hand_traces():
    t = trim_probabilities([0.05, 0.2, 0.9])
    assert t.trimmed.tolist() == [0.2, 0.2, 0.9] and t.n_modified == 1
    assert trim_probabilities([0.6, 0.7]).trimmed.tolist() == [0.6, 0.7]
    assert trim_probabilities([0.3]).trimmed.tolist() == [0.3]
    # original positions are kept
    assert trim_probabilities([0.9, 0.05, 0.2]).trimmed.tolist() == [0.9, 0.2, 0.2]


def _reference_trim(p):
    # literal loop over the trimming rule with the sentinel and stable ordering
    p = np.asarray(p, dtype=float)
    order = np.argsort(p, kind="stable")
    s = list(p[order])
    n = len(s)
    for j in range(1, n + 1):
        nxt = s[j] if j < n else 1.0
        if s[j - 1] <= 1 / (j + 1) and nxt > 1 / (j + 2):
            for i in range(j - 1):
                s[i] = s[j - 1]
    out = np.empty(n)
    out[order] = s
    return out


probs_strategy = arrays(float, st.integers(1, 40), elements=st.floats(1e-4, 1.0))
amounts_strategy = st.integers(1, 40).flatmap(
    lambda n: st.tuples(
        arrays(float, n, elements=st.floats(0, 1e6)),
        arrays(float, n, elements=st.floats(1e-3, 1.0)),
        arrays(float, n, elements=st.floats(1e-3, 1.0)),
    )
)


@settings(max_examples=300, deadline=None)
@given(probs_strategy)
def test_trimming_properties(p):
    t = trim_probabilities(p)
    assert np.all(t.trimmed >= p)
    np.testing.assert_array_equal(t.trimmed, _reference_trim(p))
    assert ibns_reserve(np.ones_like(p), t.trimmed).point <= ibns_reserve(np.ones_like(p), p).point + 1e-9


@settings(max_examples=300, deadline=None)
@given(amounts_strategy)
def test_decomposition_identity(data):
    Y, pu, pv = data
    probs = InclusionProbabilities.from_components(pu, pv, tau=1.0)
    ibns = ibns_reserve(Y, probs).point
    split = rbns_reserve(Y, probs).point + ibnr_reserve(Y, probs).point
    assert split == pytest.approx(ibns, rel=1e-12, abs=1e-9)
    assert ibns >= 0


@settings(max_examples=200, deadline=None)
@given(amounts_strategy, st.integers(0, 39), st.floats(1e-3, 0.5))
def test_monotone_response(data, k, bump):
    Y, pu, pv = data
    pi = pu * pv
    k = k % pi.size
    raised = pi.copy()
    raised[k] = min(1.0, pi[k] + bump)
    before = ibns_reserve(Y, pi).point
    after = ibns_reserve(Y, raised).point
    assert after <= before + 1e-9 * (1 + before)
    # strict decrease whenever the drop is above rounding level
    drop = Y[k] * (1 / pi[k] - 1 / raised[k])
    if drop > 1e-9 * (1 + before):
        assert after < before


def test_trim_inclusion_keeps_product():
    probs = InclusionProbabilities.from_components([0.02, 0.9, 0.8], [0.9, 0.05, 0.95], tau=1.0)
    out, n = trim_inclusion(probs)
    np.testing.assert_allclose(out.pi, out.pi_u * out.pi_v)
    assert np.all(out.pi >= probs.pi - 1e-15) and n >= 1
