"""End-to-end reserving at one or many valuation dates.

These functions hold every computation the command line performs, so a
report can be reproduced exactly from library calls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import chainladder as cl
from .core import ObservedSnapshot, Portfolio, snapshot
from .estimators import (
    IBNR,
    IBNS,
    RBNS,
    ReserveEstimate,
    reserve_set,
    trim_inclusion,
)
from .hazard import (
    FitOptions,
    InclusionProbabilities,
    PemModel,
    TimeGrid,
    compute_inclusion_probabilities,
    fit_payment_model,
    fit_reporting_model,
    pseudo_residuals,
)

DEFAULT_TRIM_THRESHOLD = 0.03


@dataclass(frozen=True)
class ReserveSettings:
    """Everything besides the data that determines a reserve run."""

    reporting_grid: TimeGrid
    payment_grid: TimeGrid
    reporting_options: FitOptions = field(default_factory=FitOptions)
    payment_options: FitOptions = field(default_factory=FitOptions)
    alpha: float = 0.05
    trim: bool = False
    trim_threshold: float = DEFAULT_TRIM_THRESHOLD
    rolling_window: float | None = None

    def options_at(self, tau: float) -> tuple[FitOptions, FitOptions]:
        if self.rolling_window is None:
            return self.reporting_options, self.payment_options
        start = tau - self.rolling_window
        r, p = self.reporting_options, self.payment_options
        return (
            FitOptions(**{**r.__dict__, "accident_from": start}),
            FitOptions(**{**p.__dict__, "accident_from": start}),
        )


@dataclass(frozen=True, eq=False)
class ReserveRun:
    tau: float
    snapshot: ObservedSnapshot
    reporting_model: PemModel
    payment_model: PemModel
    probabilities: InclusionProbabilities
    raw: dict[str, ReserveEstimate]
    estimates: dict[str, ReserveEstimate]
    trimmed_probabilities: InclusionProbabilities | None = None
    n_trimmed: int = 0

    @property
    def trimmed(self) -> bool:
        return self.estimates[IBNS].trimmed


def fit_models(snap: ObservedSnapshot, settings: ReserveSettings) -> tuple[PemModel, PemModel]:
    ro, po = settings.options_at(snap.tau)
    return (
        fit_reporting_model(snap, settings.reporting_grid, ro),
        fit_payment_model(snap, settings.payment_grid, po),
    )


def estimates_from_probabilities(
    snap: ObservedSnapshot,
    probs: InclusionProbabilities,
    alpha: float = 0.05,
    trim: bool = False,
    trim_threshold: float = DEFAULT_TRIM_THRESHOLD,
):
    """Raw and reported estimates, the latter trimmed when trimming matters.

    The trimmed set is retained only when the relative change of the IBNS
    point exceeds ``trim_threshold``.
    """
    Y = snap.amount
    raw = reserve_set(Y, probs, alpha)
    if not trim or snap.n_paid == 0:
        return raw, raw, None, 0
    tprobs, n_mod = trim_inclusion(probs)
    trimmed = reserve_set(Y, tprobs, alpha, trimmed=True)
    base = raw[IBNS].point
    change = abs(base - trimmed[IBNS].point) / base if base > 0 else 0.0
    return raw, (trimmed if change > trim_threshold else raw), tprobs, n_mod


def run_reserve_at(portfolio: Portfolio, tau: float, settings: ReserveSettings) -> ReserveRun:
    """Fit both models on data censored at ``tau`` and estimate the reserves."""
    snap = snapshot(portfolio, tau)
    reporting, payment = fit_models(snap, settings)
    probs = compute_inclusion_probabilities(reporting, payment, snap)
    raw, est, tprobs, n_mod = estimates_from_probabilities(
        snap, probs, settings.alpha, settings.trim, settings.trim_threshold
    )
    return ReserveRun(tau, snap, reporting, payment, probs, raw, est, tprobs, n_mod)


def payment_weights(run: ReserveRun) -> dict[str, np.ndarray]:
    """Per-payment IPW diagnostics for the reported estimate."""
    probs = run.trimmed_probabilities if run.trimmed else run.probabilities
    return {
        "pi_u": probs.pi_u,
        "pi_v": probs.pi_v,
        "pi": probs.pi,
        "weight": 1.0 / probs.pi,
    }


# ---------------------------------------------------------------------------
# comparisons
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorMetrics:
    me: float
    rmse: float
    mae: float
    mape: float

    def to_dict(self) -> dict:
        return {"me": self.me, "rmse": self.rmse, "mae": self.mae, "mape": self.mape}


def error_metrics(estimates, truths) -> ErrorMetrics:
    """Mean error, RMSE, MAE and MAPE (as a fraction) of estimates vs truth."""
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truths, dtype=float)
    if e.shape != t.shape or e.size == 0:
        raise ValueError("need equally many estimates and truths")
    d = e - t
    with np.errstate(divide="ignore", invalid="ignore"):
        ape = np.abs(d) / np.abs(t)
    return ErrorMetrics(
        float(d.mean()),
        float(math.sqrt(np.mean(d * d))),
        float(np.mean(np.abs(d))),
        float(np.mean(ape)),
    )


@dataclass(frozen=True)
class ComparisonRow:
    tau: float
    truth: dict
    ipw: dict[str, ReserveEstimate]
    cl: cl.ChainLadderReserves


def chain_ladder_baseline(
    snap: ObservedSnapshot, origin_width: float, dev_width: float, weight_scheme: str = "amount"
) -> cl.ChainLadderReserves:
    return cl.chain_ladder_reserves(snap, origin_width, dev_width, weight_scheme)


def chain_ladder_probabilities(
    snap: ObservedSnapshot, origin_width: float, dev_width: float, weight_scheme: str = "amount"
) -> InclusionProbabilities:
    """Homogeneous probabilities implied by Chain-Ladder, per observed payment.

    ``pi`` comes from the paid factors and ``pi_u`` from the reported-claim
    count factors, both read at each payment's origin age ``tau - s``.
    Feeding these to the IPW estimators reproduces the CL reserves.
    """
    tri = cl.build_triangle(
        snap, origin_width, dev_width, n_dev=cl.observable_dev_count(snap, origin_width, dev_width)
    )
    f = cl.estimate_factors(snap, tri.dev_cuts, weight_scheme, origin_width)
    pi_curve = cl.pi_curve_from_factors(f)
    pu_curve = cl.pi_curve_from_factors(cl.reporting_factors(snap, tri.dev_cuts, origin_width))
    _, start = cl.development_lags(snap, origin_width)
    age = snap.tau - start
    col = np.searchsorted(tri.dev_cuts, age - 1e-9 * dev_width, side="left")
    col = np.minimum(col, tri.dev_cuts.size - 1)
    pi = pi_curve[col]
    pu = pu_curve[col]
    pv = np.minimum(pi / pu, 1.0)
    pu = pi / pv
    return InclusionProbabilities(pu, pv, pi, snap.tau, snap.tau, 0.0, 0)


# ---------------------------------------------------------------------------
# residual diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    critical_value: float
    n: int

    @property
    def rejects(self) -> bool:
        return self.statistic > self.critical_value


def ks_normal(residuals, level: float = 0.01) -> KSResult:
    """Kolmogorov-Smirnov test of residuals against N(0, 1)."""
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        raise ValueError("no residuals")
    res = stats.kstest(r, "norm")
    crit = float(stats.kstwo.ppf(1 - level, r.size))
    return KSResult(float(res.statistic), float(res.pvalue), crit, int(r.size))


def residual_diagnostics(snap: ObservedSnapshot, reporting: PemModel, payment: PemModel):
    r_rep = pseudo_residuals(reporting, snap)
    r_pay = pseudo_residuals(payment, snap)
    return {
        "reporting": (r_rep, ks_normal(r_rep)),
        "payment": (r_pay, ks_normal(r_pay)),
    }


__all__ = [
    "IBNS",
    "RBNS",
    "IBNR",
    "ReserveSettings",
    "ReserveRun",
    "run_reserve_at",
    "fit_models",
    "estimates_from_probabilities",
    "payment_weights",
    "ErrorMetrics",
    "error_metrics",
    "chain_ladder_baseline",
    "chain_ladder_probabilities",
    "KSResult",
    "ks_normal",
    "residual_diagnostics",
]
