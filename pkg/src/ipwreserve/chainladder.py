"""Run-off triangles, Chain-Ladder factors and their inclusion-probability reading.

Development lag of a payment is measured from the start of its origin
(accident) period, ``W - s(T)``, as in a classical triangle.  With
``origin_width=None`` the origin start is the accident time itself and the
lag is the total delay ``Z = W - T``.

Pooled factor estimation keeps, for each step, only payments whose origin
period is observed through the end of that step (the staircase restriction).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import ObservedSnapshot, fmt

WEIGHT_SCHEMES = ("amount", "unit", "amount-squared")
_EPS = 1e-9


def _origin_start(T: np.ndarray, origin_width: float | None) -> np.ndarray:
    if origin_width is None:
        return np.asarray(T, dtype=float)
    return np.floor(np.asarray(T, dtype=float) / origin_width + _EPS) * origin_width


def development_lags(snap: ObservedSnapshot, origin_width: float | None = None):
    """``(lag, origin_start)`` of every observed payment."""
    s = _origin_start(snap.payment_accident_time, origin_width)
    return snap.payment_time - s, s


def _weights(Y: np.ndarray, scheme: str) -> np.ndarray:
    if scheme == "amount":
        return Y
    if scheme == "unit":
        return np.ones_like(Y)
    if scheme == "amount-squared":
        return Y * Y
    raise ValueError(f"unknown weight scheme {scheme!r}; use one of {WEIGHT_SCHEMES}")


@dataclass(frozen=True, eq=False)
class RunoffTriangle:
    """Cumulative amounts (or counts) by origin period x development cut.

    ``cells[o, d]`` is the cumulative measure of origin ``o`` up to lag
    ``dev_cuts[d]``; unobserved cells are NaN and ``mask`` is False there.
    """

    origin_cuts: np.ndarray
    dev_cuts: np.ndarray
    cells: np.ndarray
    mask: np.ndarray
    measure: str = "amount"

    @property
    def n_origins(self) -> int:
        return self.cells.shape[0]

    @property
    def latest_index(self) -> np.ndarray:
        """Index of the latest observed column per row (-1 if none)."""
        observed = self.mask.any(axis=1)
        last = self.mask.shape[1] - 1 - np.argmax(self.mask[:, ::-1], axis=1)
        return np.where(observed, last, -1)

    @property
    def latest(self) -> np.ndarray:
        k = self.latest_index
        rows = np.arange(self.n_origins)
        return np.where(k >= 0, self.cells[rows, np.maximum(k, 0)], 0.0)

    def incremental(self) -> np.ndarray:
        """Incremental (per-column) display of the observed cells."""
        inc = self.cells.copy()
        inc[:, 1:] = self.cells[:, 1:] - self.cells[:, :-1]
        return inc

    def scaled(self, c: float) -> "RunoffTriangle":
        return RunoffTriangle(self.origin_cuts, self.dev_cuts, self.cells * c, self.mask, self.measure)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["origin"] + [fmt(t) for t in self.dev_cuts])
            for o in range(self.n_origins):
                label = f"{self.origin_cuts[o]:g}-{self.origin_cuts[o + 1]:g}"
                w.writerow(
                    [label] + [fmt(v) if m else "" for v, m in zip(self.cells[o], self.mask[o])]
                )


def build_triangle(
    snap: ObservedSnapshot,
    origin_width: float,
    dev_width: float,
    measure: str = "amount",
    n_dev: int | None = None,
) -> RunoffTriangle:
    """Aggregate observed payments into a cumulative run-off triangle.

    Origins are periods ``[k w, (k+1) w)`` covering ``[0, tau)``; development
    cuts are ``d * dev_width`` for d = 1..n_dev, by default reaching
    ``omega + origin_width`` (the largest possible lag).
    """
    tau = snap.tau
    if origin_width <= 0 or dev_width <= 0:
        raise ValueError("widths must be positive")
    n_orig = tau / origin_width
    if abs(n_orig - round(n_orig)) > 1e-9 or round(n_orig) < 1:
        raise ValueError("origin_width must divide the valuation time")
    if abs(origin_width / dev_width - round(origin_width / dev_width)) > 1e-9:
        raise ValueError("dev_width must divide origin_width")
    n_orig = int(round(n_orig))
    if n_dev is None:
        n_dev = int(math.ceil((snap.max_settlement + origin_width) / dev_width - _EPS))
    origin_cuts = np.arange(n_orig + 1) * origin_width
    dev_cuts = np.arange(1, n_dev + 1) * dev_width

    lag, start = development_lags(snap, origin_width)
    Y = snap.amount if measure == "amount" else np.ones(snap.n_paid)
    if measure not in ("amount", "count"):
        raise ValueError("measure must be 'amount' or 'count'")
    row = np.rint(start / origin_width).astype(np.intp)
    inside = (row >= 0) & (row < n_orig)
    # first development column whose cut covers the lag
    col = np.searchsorted(dev_cuts, lag - _EPS * dev_width, side="left")
    inc = np.zeros((n_orig, n_dev + 1))
    np.add.at(inc, (row[inside], np.minimum(col[inside], n_dev)), Y[inside])
    cells = np.cumsum(inc[:, :n_dev], axis=1)
    mask = origin_cuts[:-1, None] + dev_cuts[None, :] <= tau + _EPS
    cells = np.where(mask, cells, np.nan)
    return RunoffTriangle(origin_cuts, dev_cuts, cells, mask, measure)


@dataclass(frozen=True, eq=False)
class DevelopmentFactors:
    """Link ratios ``factors[n]`` from ``dev_cuts[n]`` to ``dev_cuts[n + 1]``."""

    dev_cuts: np.ndarray
    factors: np.ndarray
    weight_scheme: str = "amount"

    def __post_init__(self):
        object.__setattr__(self, "dev_cuts", np.asarray(self.dev_cuts, dtype=float))
        object.__setattr__(self, "factors", np.asarray(self.factors, dtype=float))
        if self.factors.size != self.dev_cuts.size - 1:
            raise ValueError("need one factor per consecutive pair of cuts")

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "from", "to", "factor", "weight_scheme"])
            for n, f in enumerate(self.factors, start=1):
                w.writerow([n, fmt(self.dev_cuts[n - 1]), fmt(self.dev_cuts[n]), fmt(f), self.weight_scheme])


def estimate_factors(
    snap: ObservedSnapshot,
    dev_cuts: Sequence[float],
    weight_scheme: str = "amount",
    origin_width: float | None = None,
) -> DevelopmentFactors:
    """Weighted empirical link ratios between consecutive ``dev_cuts``.

    ``f_n = sum g_i 1{lag_i <= t_n} / sum g_i 1{lag_i <= t_(n-1)}`` over
    payments whose origin start ``s`` satisfies ``s + t_n <= tau``.
    """
    cuts = np.asarray(dev_cuts, dtype=float)
    lag, start = development_lags(snap, origin_width)
    g = _weights(snap.amount, weight_scheme)
    tol = _EPS * max(1.0, float(np.max(np.abs(cuts))) if cuts.size else 1.0)
    factors = np.empty(cuts.size - 1)
    for n in range(1, cuts.size):
        eligible = start + cuts[n] <= snap.tau + tol
        num = g[eligible & (lag <= cuts[n] + tol)].sum()
        den = g[eligible & (lag <= cuts[n - 1] + tol)].sum()
        if not den > 0:
            raise ValueError(f"insufficient mass at step {n}")
        factors[n - 1] = num / den
    return DevelopmentFactors(cuts, factors, weight_scheme)


def estimate_factors_by_origin(triangle: RunoffTriangle) -> np.ndarray:
    """Per-origin link ratios ``C[o, n] / C[o, n-1]`` (NaN where unobserved)."""
    with np.errstate(invalid="ignore", divide="ignore"):
        return triangle.cells[:, 1:] / triangle.cells[:, :-1]


def triangle_factors(triangle: RunoffTriangle) -> DevelopmentFactors:
    """Textbook volume-weighted factors from column sums over complete pairs."""
    f = np.empty(triangle.dev_cuts.size - 1)
    for n in range(1, triangle.dev_cuts.size):
        rows = triangle.mask[:, n]
        den = triangle.cells[rows, n - 1].sum()
        if not den > 0:
            raise ValueError(f"insufficient mass at step {n}")
        f[n - 1] = triangle.cells[rows, n].sum() / den
    return DevelopmentFactors(triangle.dev_cuts, f, "amount" if triangle.measure == "amount" else "unit")


@dataclass(frozen=True, eq=False)
class CLProjection:
    completed: np.ndarray
    latest: np.ndarray
    ultimate: np.ndarray
    reserve: np.ndarray

    @property
    def total_reserve(self) -> float:
        return float(self.reserve.sum())

    @property
    def total_ultimate(self) -> float:
        return float(self.ultimate.sum())


def cl_project(triangle: RunoffTriangle, factors: DevelopmentFactors) -> CLProjection:
    """Develop each row's latest cumulative through the remaining factors."""
    if factors.dev_cuts.size != triangle.dev_cuts.size or not np.allclose(
        factors.dev_cuts, triangle.dev_cuts
    ):
        raise ValueError("factors must cover the triangle's development cuts")
    f = factors.factors
    completed = triangle.cells.copy()
    k = triangle.latest_index
    latest = triangle.latest
    m = triangle.dev_cuts.size
    for o in range(triangle.n_origins):
        value = latest[o]
        for d in range(max(k[o], 0) + 1, m):
            value = value * f[d - 1]
            completed[o, d] = value
        if k[o] < 0:
            completed[o, 0] = 0.0
    ultimate = completed[:, -1]
    return CLProjection(completed, latest, ultimate, ultimate - latest)


# ---------------------------------------------------------------------------
# factors as probability ratios
# ---------------------------------------------------------------------------


def _check_curve(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.size < 2 or np.any(pi <= 0) or np.any(pi > 1) or np.any(np.diff(pi) < 0):
        raise ValueError("non-monotone curve: need 0 < pi(t_0) <= ... <= pi(t_m) <= 1")
    return pi


def implied_factors_from_probabilities(pi_curve, dev_cuts=None) -> DevelopmentFactors:
    """``f_n = pi(t_n) / pi(t_(n-1))``."""
    pi = _check_curve(pi_curve)
    cuts = np.arange(pi.size, dtype=float) if dev_cuts is None else dev_cuts
    return DevelopmentFactors(cuts, pi[1:] / pi[:-1], "probability")


def reverse_hazard_factors(pi_curve, dev_cuts) -> DevelopmentFactors:
    """Factors ``(1 - delta_n alpha_n)^-1`` from the reverse-time hazard
    ``alpha_n = (pi(t_n) - pi(t_(n-1))) / (delta_n pi(t_n))``."""
    pi = _check_curve(pi_curve)
    cuts = np.asarray(dev_cuts, dtype=float)
    delta = np.diff(cuts)
    alpha = (pi[1:] - pi[:-1]) / (delta * pi[1:])
    return DevelopmentFactors(cuts, 1.0 / (1.0 - delta * alpha), "reverse-hazard")


def reverse_hazard_rates(pi_curve, dev_cuts) -> np.ndarray:
    pi = _check_curve(pi_curve)
    delta = np.diff(np.asarray(dev_cuts, dtype=float))
    return (pi[1:] - pi[:-1]) / (delta * pi[1:])


def pi_curve_from_factors(factors: DevelopmentFactors) -> np.ndarray:
    """Empirical inclusion curve at ``dev_cuts`` with ``pi(t_m) = 1``."""
    f = factors.factors
    tail = np.concatenate([np.cumprod(f[::-1])[::-1], [1.0]])
    return 1.0 / tail


class ProbabilityCurve:
    """Inclusion probability as a function of development time, linear between cuts."""

    def __init__(self, cuts, values):
        self.cuts = np.asarray(cuts, dtype=float)
        self.values = _check_curve(values) if len(values) > 1 else np.asarray(values, dtype=float)

    def __call__(self, t):
        return np.interp(t, self.cuts, self.values)


# ---------------------------------------------------------------------------
# IPW cumulative projections on a triangle
# ---------------------------------------------------------------------------


def ipw_triangle_projection(
    snap: ObservedSnapshot, triangle: RunoffTriangle, pi_curve: np.ndarray
) -> np.ndarray:
    """IPW cumulative estimates ``sum Y pi(t)/pi(tau)`` per origin and dev cut.

    ``pi_curve`` gives a homogeneous probability at each of the triangle's
    dev cuts; a payment of origin ``o`` has ``pi_i(tau) = pi(tau - s_o)``.
    Observed cells are returned as observed.
    """
    pi_curve = np.asarray(pi_curve, dtype=float)
    w = triangle.origin_cuts[1] - triangle.origin_cuts[0]
    lag, start = development_lags(snap, w)
    Y = snap.amount if triangle.measure == "amount" else np.ones(snap.n_paid)
    row = np.rint(start / w).astype(np.intp)
    paid_by_row = np.bincount(row, weights=Y, minlength=triangle.n_origins)[: triangle.n_origins]
    k = triangle.latest_index
    out = triangle.cells.copy()
    m = triangle.dev_cuts.size
    for o in range(triangle.n_origins):
        if k[o] < 0:
            continue
        pi_tau = pi_curve[k[o]]
        # sum over the row's payments of Y * pi(t_d) / pi(tau); homogeneous
        # within a row, so it factors as paid * pi(t_d) / pi(tau)
        for d in range(k[o] + 1, m):
            out[o, d] = paid_by_row[o] * pi_curve[d] / pi_tau
    return out


@dataclass(frozen=True)
class DoubleCL:
    n_hat: float
    proportion: float
    mean_amount: float

    @property
    def value(self) -> float:
        return self.n_hat * self.proportion * self.mean_amount


def double_cl_decomposition(
    snap,
    pi_u: float,
    pi_curve: Callable[[float], float],
    window: tuple[float, float],
    tau: float | None = None,
) -> DoubleCL:
    """Homogeneous incremental reserve as count x payout proportion x severity.

    ``N = N_paid / pi_u``, ``p = pi(t2) - pi(t1)``,
    ``Ybar = sum(Y / pi_v) / N_paid`` with ``pi_v = pi(tau) / pi_u``.
    ``snap`` is an :class:`ObservedSnapshot` or an array of paid amounts.
    ``pi_curve`` is evaluated in development time; ``tau`` defaults to the
    snapshot's valuation time (a single accident date at 0).
    """
    if isinstance(snap, ObservedSnapshot):
        Y = snap.amount
        tau = snap.tau if tau is None else tau
    else:
        Y = np.asarray(snap, dtype=float)
        if tau is None:
            raise ValueError("tau required with a plain amount vector")
    n = Y.size
    if n == 0:
        raise ValueError("no paid payments (N_paid = 0)")
    t1, t2 = window
    pi_tau = float(pi_curve(tau))
    if not 0 < pi_tau <= pi_u <= 1:
        raise ValueError("need 0 < pi(tau) <= pi_u <= 1")
    pi_v = pi_tau / pi_u
    p = float(pi_curve(t2)) - float(pi_curve(t1))
    y_bar = float(np.sum(Y / pi_v)) / n
    return DoubleCL(n / pi_u, p, y_bar)


# ---------------------------------------------------------------------------
# aggregate baselines used by comparisons
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainLadderReserves:
    ibns: float
    rbns: float
    ibnr: float


def reporting_factors(
    snap: ObservedSnapshot, dev_cuts: Sequence[float], origin_width: float
) -> DevelopmentFactors:
    """Count factors of reported claims by reporting lag from origin start."""
    cuts = np.asarray(dev_cuts, dtype=float)
    start = _origin_start(snap.accident_time, origin_width)
    lag = snap.reporting_time - start
    f = np.empty(cuts.size - 1)
    for n in range(1, cuts.size):
        eligible = start + cuts[n] <= snap.tau + _EPS
        num = np.count_nonzero(eligible & (lag <= cuts[n] + _EPS))
        den = np.count_nonzero(eligible & (lag <= cuts[n - 1] + _EPS))
        f[n - 1] = num / den if den else 1.0
    return DevelopmentFactors(cuts, f, "unit")


def observable_dev_count(snap: ObservedSnapshot, origin_width: float, dev_width: float) -> int:
    """Development columns identifiable at ``tau``.

    Lags beyond the age of the oldest origin cannot be estimated; baselines
    cap the triangle there, i.e. assume a unit tail factor.
    """
    full = int(math.ceil((snap.max_settlement + origin_width) / dev_width - _EPS))
    return max(1, min(full, int(math.floor(snap.tau / dev_width + _EPS))))


def chain_ladder_reserves(
    snap: ObservedSnapshot,
    origin_width: float,
    dev_width: float,
    weight_scheme: str = "amount",
) -> ChainLadderReserves:
    """Classical CL total reserve split RBNS/IBNR double-CL style.

    The paid triangle gives ``pi(t)`` per origin; the reported-claim count
    triangle gives ``pi_u(t)``; RBNS uses ``pi_v = pi / pi_u`` per origin and
    IBNR is the remainder.
    """
    n_dev = observable_dev_count(snap, origin_width, dev_width)
    tri = build_triangle(
        snap, origin_width, dev_width, "amount" if weight_scheme != "unit" else "count", n_dev
    )
    factors = estimate_factors(snap, tri.dev_cuts, weight_scheme, origin_width)
    proj = cl_project(tri, factors)
    pi = pi_curve_from_factors(factors)
    pu = pi_curve_from_factors(reporting_factors(snap, tri.dev_cuts, origin_width))
    k = tri.latest_index
    pi_row = np.where(k >= 0, pi[np.maximum(k, 0)], 1.0)
    pu_row = np.where(k >= 0, pu[np.maximum(k, 0)], 1.0)
    pv_row = np.minimum(pi_row / pu_row, 1.0)
    rbns = float(np.sum(proj.latest * (1 - pv_row) / pv_row))
    total = proj.total_reserve
    return ChainLadderReserves(total, rbns, total - rbns)
