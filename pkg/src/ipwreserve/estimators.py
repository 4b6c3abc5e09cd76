"""Horvitz-Thompson (IPW) reserve estimators, their variance and intervals.

Every estimator is a sum over the payments observed at the valuation date,
each weighted by a function of its inclusion probabilities.  Payment amounts
``Y`` and probability vectors are aligned arrays; counts use ``Y = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .hazard import InclusionProbabilities

IBNS = "IBNS"
RBNS = "RBNS"
IBNR = "IBNR"
COUNT = "COUNT"
CUMULATIVE = "CUMULATIVE"
INCREMENTAL = "INCREMENTAL"


@dataclass(frozen=True)
class ReserveEstimate:
    reserve_kind: str
    point: float
    variance: float
    ci_lower: float
    ci_upper: float
    alpha: float
    n_paid: int
    trimmed: bool = False

    def as_row(self) -> dict:
        return {
            "kind": self.reserve_kind,
            "point": self.point,
            "variance": self.variance,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "alpha": self.alpha,
            "n_paid": self.n_paid,
            "trimmed": self.trimmed,
        }


@dataclass(frozen=True, eq=False)
class TrimmedProbabilities:
    original: np.ndarray
    trimmed: np.ndarray
    n_modified: int


def _check_probs(*arrays) -> list[np.ndarray]:
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if a.size and (np.any(~(a > 0)) or np.any(a > 1)):
            raise ValueError("probabilities must lie in (0, 1]")
        out.append(a)
    return out


def _aligned(payments, *probs) -> tuple[np.ndarray, list[np.ndarray]]:
    Y = np.asarray(payments, dtype=float)
    probs = _check_probs(*probs)
    for p in probs:
        if p.shape != Y.shape:
            raise ValueError(f"length mismatch: {Y.size} payments, {p.size} probabilities")
    return Y, probs


# ---------------------------------------------------------------------------
# point estimators
# ---------------------------------------------------------------------------


def ultimate_estimate(payments, pi) -> float:
    """HT estimate of the population total: ``sum Y / pi``."""
    Y, (pi,) = _aligned(payments, _pi(pi))
    return float(np.sum(Y / pi))


def ibns_terms(payments, pi) -> np.ndarray:
    Y, (pi,) = _aligned(payments, _pi(pi))
    return Y * (1.0 - pi) / pi


def rbns_terms(payments, pi_v) -> np.ndarray:
    Y, (pi_v,) = _aligned(payments, pi_v)
    return Y * (1.0 - pi_v) / pi_v


def ibnr_terms(payments, pi_u, pi_v) -> np.ndarray:
    Y, (pi_u, pi_v) = _aligned(payments, pi_u, pi_v)
    return (1.0 - pi_u) / pi_u * Y / pi_v


def cumulative_estimate(payments, pi_tau, pi_t) -> float:
    """Cumulative payments up to a later time t: ``sum Y pi(t) / pi(tau)``."""
    Y, (p0, pt) = _aligned(payments, _pi(pi_tau), _pi(pi_t))
    if np.any(pt < p0):
        raise ValueError("inconsistent probability curves: pi(t) < pi(tau)")
    return float(np.sum(Y * pt / p0))


def incremental_estimate(payments, pi_tau, pi_t1, pi_t2) -> float:
    """Payments falling in ``(t1, t2]``: ``sum Y (pi(t2) - pi(t1)) / pi(tau)``."""
    Y, (p0, p1, p2) = _aligned(payments, _pi(pi_tau), _pi(pi_t1), _pi(pi_t2))
    if np.any(p1 < p0) or np.any(p2 < p1):
        raise ValueError("ordering violation: need pi(tau) <= pi(t1) <= pi(t2)")
    return float(np.sum(Y * (p2 - p1) / p0))


def _pi(p):
    return p.pi if isinstance(p, InclusionProbabilities) else p


# ---------------------------------------------------------------------------
# variance and intervals
# ---------------------------------------------------------------------------


def variance_from_terms(terms) -> float:
    """Simplified HT variance from per-payment reserve summands ``d_i``.

    ``sum_i (n d_i - sum_j d_j)^2 / (n (n - 1))``
    """
    d = np.asarray(terms, dtype=float)
    n = d.size
    if n < 2:
        raise ValueError("variance undefined for fewer than two paid payments")
    total = d.sum()
    return float(np.sum((n * d - total) ** 2) / (n * (n - 1)))


def variance_estimate(payments, pi) -> float:
    return variance_from_terms(ibns_terms(payments, pi))


def confidence_interval(point: float, variance: float, alpha: float = 0.05) -> tuple[float, float]:
    """Log-scale interval ``point * exp(-+ z sqrt(var) / point)``.

    A zero point gives the degenerate ``(0, 0)``; a negative point has no
    log-scale interval and gives ``(nan, nan)``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if variance < 0:
        raise ValueError("variance must be >= 0")
    if point == 0:
        return 0.0, 0.0
    if not point > 0 or math.isnan(variance):
        return math.nan, math.nan
    z = norm.ppf(1 - alpha / 2)
    half = z * math.sqrt(variance) / point
    return point * math.exp(-half), point * math.exp(half)


def _estimate(kind, terms, alpha, trimmed=False) -> ReserveEstimate:
    point = float(np.sum(terms))
    n = int(np.size(terms))
    if n >= 2:
        var = variance_from_terms(terms)
        lo, hi = confidence_interval(point, var, alpha)
    else:
        var, lo, hi = math.nan, math.nan, math.nan
        if point == 0:
            lo = hi = 0.0
    return ReserveEstimate(kind, point, var, lo, hi, alpha, n, trimmed)


def ibns_reserve(payments, probs, alpha: float = 0.05, trimmed: bool = False) -> ReserveEstimate:
    """Outstanding (IBNS) reserve ``sum Y (1 - pi) / pi``."""
    return _estimate(IBNS, ibns_terms(payments, _pi(probs)), alpha, trimmed)


def rbns_reserve(payments, probs, alpha: float = 0.05, trimmed: bool = False) -> ReserveEstimate:
    """Reported-but-not-settled reserve from ``pi_v`` alone."""
    pi_v = probs.pi_v if isinstance(probs, InclusionProbabilities) else probs
    return _estimate(RBNS, rbns_terms(payments, pi_v), alpha, trimmed)


def ibnr_reserve(payments, probs, pi_v=None, alpha: float = 0.05, trimmed: bool = False) -> ReserveEstimate:
    """Pure IBNR reserve ``sum (1 - pi_u) / pi_u * Y / pi_v``.

    ``probs`` is an :class:`InclusionProbabilities` or, with ``pi_v`` given,
    the ``pi_u`` vector.
    """
    if isinstance(probs, InclusionProbabilities):
        pi_u, pi_v = probs.pi_u, probs.pi_v
    else:
        pi_u = probs
        if pi_v is None:
            raise ValueError("pi_v required")
    return _estimate(IBNR, ibnr_terms(payments, pi_u, pi_v), alpha, trimmed)


def outstanding_count(probs, alpha: float = 0.05) -> ReserveEstimate:
    """Number of outstanding payments ``sum (1 - pi) / pi``."""
    pi = np.asarray(_pi(probs), dtype=float)
    return _estimate(COUNT, ibns_terms(np.ones_like(pi), pi), alpha)


# ---------------------------------------------------------------------------
# trimming
# ---------------------------------------------------------------------------


def trim_probabilities(probs) -> TrimmedProbabilities:
    """Raise abnormally small inclusion probabilities.

    Scan the ascending order statistics ``p_(1) <= ... <= p_(N)`` for
    j = 1..N; whenever ``p_(j) <= 1/(j+1)`` and ``p_(j+1) > 1/(j+2)``
    (with ``p_(N+1) = 1``), set the j-1 smallest values to ``p_(j)``.
    Ties keep their original order.
    """
    (orig,) = _check_probs(probs)
    n = orig.size
    order = np.argsort(orig, kind="stable")
    s = orig[order].copy()
    nxt = np.append(s[1:], 1.0)
    j = np.arange(1, n + 1)
    fires = (s <= 1.0 / (j + 1)) & (nxt > 1.0 / (j + 2))
    if np.any(fires):
        # later firings overwrite earlier prefixes; the largest j decides
        jmax = int(j[fires][-1])
        s[: jmax - 1] = s[jmax - 1]
    trimmed = np.empty_like(orig)
    trimmed[order] = s
    return TrimmedProbabilities(orig, trimmed, int(np.count_nonzero(trimmed != orig)))


def trim_inclusion(probs: InclusionProbabilities) -> tuple[InclusionProbabilities, int]:
    """Trim ``pi`` and ``pi_v``; ``pi_u`` is rederived so ``pi = pi_u * pi_v`` holds."""
    tp = trim_probabilities(probs.pi)
    tv = trim_probabilities(probs.pi_v)
    pi_v = tv.trimmed
    pi_u = np.minimum(tp.trimmed / pi_v, 1.0)
    out = InclusionProbabilities(pi_u, pi_v, pi_u * pi_v, probs.tau, probs.time, probs.floor,
                                 probs.n_floored)
    return out, tp.n_modified + tv.n_modified


def reserve_set(payments, probs: InclusionProbabilities, alpha=0.05, trimmed=False) -> dict:
    """IBNS, RBNS and IBNR estimates keyed by kind."""
    return {
        IBNS: ibns_reserve(payments, probs, alpha, trimmed),
        RBNS: rbns_reserve(payments, probs, alpha, trimmed),
        IBNR: ibnr_reserve(payments, probs, alpha=alpha, trimmed=trimmed),
    }
