"""Synthetic portfolios with closed-form inclusion probabilities.

Generative model
----------------
* accidents: homogeneous Poisson process with ``claim_rate`` per month on
  ``[0, horizon]``;
* covariates per claim from :class:`CovariateSpec` (binary with an optional
  linear drift of its probability over calendar time, or standard normal);
* reporting delay U: piecewise-exponential hazard ``rate_n * exp(x . beta)``,
  conditioned on ``U <= omega``;
* payments: NHPP in ``v = W - R`` with intensity ``rate_n * exp((x, U) . alpha)``
  on the payment window ``(0, omega - U]``, sampled exactly as Poisson counts
  per constant-rate piece plus uniform positions;
* amounts: i.i.d. log-normal.

Random numbers come from :class:`~ipwreserve.rng.CounterRNG` with one family
of streams per claim, so a claim's draws never depend on other claims.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri
from scipy.stats import poisson

from .core import Portfolio, fmt, write_portfolio
from .hazard import PAYMENT, REPORTING, InclusionProbabilities, PemModel, payment_feature_names
from .rng import CounterRNG

# stream purposes within a claim's block of 16 streams
_S_COVARIATE, _S_REPORT, _S_COUNT, _S_POSITION, _S_AMOUNT = range(5)
_ARRIVAL_STREAM = 0


def claim_stream(claim_number, purpose: int):
    """Stream id of ``purpose`` for claim ``claim_number`` (0-based)."""
    return (np.asarray(claim_number, dtype=np.uint64) + np.uint64(1)) * np.uint64(16) + np.uint64(purpose)


@dataclass(frozen=True)
class CovariateSpec:
    """``kind`` is ``"binary"`` (P(x=1) = ``p``, drifting linearly to
    ``p_end`` at the end of the horizon when given) or ``"normal"``."""

    name: str
    kind: str = "binary"
    p: float = 0.5
    p_end: float | None = None

    def __post_init__(self):
        if self.kind not in ("binary", "normal"):
            raise ValueError(f"unknown covariate kind {self.kind!r}")
        for q in (self.p, self.p if self.p_end is None else self.p_end):
            if not 0.0 <= q <= 1.0:
                raise ValueError("binary probability must lie in [0, 1]")


@dataclass(frozen=True)
class SimConfig:
    horizon: float = 36.0
    claim_rate: float = 50.0
    omega: float = 24.0
    reporting_cuts: tuple[float, ...] = (0.0, 1.0, 24.0)
    reporting_rates: tuple[float, ...] = (1.2, 0.8)
    reporting_coefficients: tuple[float, ...] = ()
    payment_cuts: tuple[float, ...] = (0.0, 6.0, 24.0)
    payment_rates: tuple[float, ...] = (0.4, 0.1)
    # one per covariate, then one for the reporting delay
    payment_coefficients: tuple[float, ...] = (0.0,)
    covariates: tuple[CovariateSpec, ...] = ()
    amount_mu: float = 7.0
    amount_sigma: float = 1.0
    amount_delay_correlation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.horizon > 0 or not self.omega > 0:
            raise ValueError("horizon and omega must be positive")
        if self.claim_rate < 0:
            raise ValueError("claim_rate must be >= 0")
        if any(r < 0 for r in self.reporting_rates + self.payment_rates):
            raise ValueError("rates must be >= 0")
        for cuts in (self.reporting_cuts, self.payment_cuts):
            if not math.isclose(cuts[-1], self.omega):
                raise ValueError("rate grids must end at omega")
        k = len(self.covariates)
        if len(self.reporting_coefficients) != k:
            raise ValueError("one reporting coefficient per covariate required")
        if len(self.payment_coefficients) != k + 1:
            raise ValueError("payment coefficients: one per covariate plus one for U")
        if not -1.0 < self.amount_delay_correlation < 1.0:
            raise ValueError("amount_delay_correlation must lie in (-1, 1)")
        object.__setattr__(
            self, "covariates",
            tuple(c if isinstance(c, CovariateSpec) else CovariateSpec(**c) for c in self.covariates),
        )

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    @property
    def reporting_model(self) -> PemModel:
        return PemModel.from_rates(
            self.reporting_cuts, self.reporting_rates, self.reporting_coefficients,
            REPORTING, self.feature_names,
        )

    @property
    def payment_model(self) -> PemModel:
        return PemModel.from_rates(
            self.payment_cuts, self.payment_rates, self.payment_coefficients,
            PAYMENT, payment_feature_names(self.feature_names),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        for key in ("reporting_cuts", "reporting_rates", "reporting_coefficients",
                    "payment_cuts", "payment_rates", "payment_coefficients"):
            if key in d:
                d[key] = tuple(float(x) for x in d[key])
        if "covariates" in d:
            d["covariates"] = tuple(CovariateSpec(**c) for c in d["covariates"])
        return cls(**d)


# ---------------------------------------------------------------------------
# oracle probabilities
# ---------------------------------------------------------------------------


def oracle_probabilities(config: SimConfig, accident_time, reporting_time, X, tau):
    """True ``(pi_u, pi_v, pi)`` of payments of claims ``(T, R, X)`` at ``tau``.

    ``pi_u`` includes the renormalization by ``F(omega)`` from the hard
    truncation of U at omega.  ``pi_v`` is evaluated at the realized
    reporting delay (0 for claims reported after ``tau``).
    """
    T = np.asarray(accident_time, dtype=float)
    R = np.asarray(reporting_time, dtype=float)
    X = np.asarray(X, dtype=float).reshape(T.size, -1)
    rep, pay = config.reporting_model, config.payment_model
    omega = config.omega
    c = np.clip(tau - T, 0.0, omega)
    pi_u = rep.cdf(c, X) / rep.cdf(np.full(T.size, omega), X)
    U = R - T
    window = omega - U
    Xd = np.column_stack([X, U])
    s = np.clip(tau - R, 0.0, None)
    den = pay.cumulative(window, Xd)
    num = pay.cumulative(np.minimum(s, window), Xd)
    with np.errstate(invalid="ignore", divide="ignore"):
        pi_v = np.where(s >= window, 1.0, num / np.where(den > 0, den, 1.0))
    pi_v = np.minimum(pi_v, 1.0)
    return pi_u, pi_v, pi_u * pi_v


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrueReserves:
    tau: float
    total: float
    paid: float
    ibns: float
    rbns: float
    ibnr: float
    n_total: int
    n_paid: int
    n_ibns: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """The uncensored simulated population and its generating model."""

    config: SimConfig
    portfolio: Portfolio
    # 0-based position of each payment within its claim
    payment_number: np.ndarray = field(repr=False)

    def incurred(self, tau: float) -> np.ndarray:
        p = self.portfolio
        return p.accident_time[p.payment_claim] <= tau

    def probabilities(self, tau: float):
        """Oracle ``(pi_u, pi_v, pi)`` for every population payment."""
        p = self.portfolio
        pc = p.payment_claim
        pu, pv, pi = oracle_probabilities(
            self.config, p.accident_time, p.reporting_time, p.covariates, tau
        )
        return pu[pc], pv[pc], pi[pc]

    def oracle_inclusion(self, snap) -> InclusionProbabilities:
        """Oracle probabilities aligned with the observed payments of ``snap``."""
        pu, pv, _ = oracle_probabilities(
            self.config, snap.accident_time, snap.reporting_time, snap.covariates, snap.tau
        )
        pc = snap.payment_claim
        return InclusionProbabilities.from_components(pu[pc], pv[pc], snap.tau, floor=1e-12)

    def incremental(self, tau: float, t1: float, t2: float) -> float:
        """Payments of claims incurred by tau made in ``(t1, t2]``."""
        p = self.portfolio
        sel = self.incurred(tau) & (p.payment_time > t1) & (p.payment_time <= t2)
        return float(p.amount[sel].sum())


def true_reserves(truth: GroundTruth, tau: float) -> TrueReserves:
    """Bookkeeping reserves on the uncensored population at ``tau``."""
    p = truth.portfolio
    inc = truth.incurred(tau)
    paid = inc & (p.payment_time <= tau)
    unpaid = inc & ~paid
    reported = p.reporting_time[p.payment_claim] <= tau
    Y = p.amount
    rbns = float(Y[unpaid & reported].sum())
    ibnr = float(Y[unpaid & ~reported].sum())
    paid_amt = float(Y[paid].sum())
    total = float(Y[inc].sum())
    return TrueReserves(
        tau=float(tau),
        total=total,
        paid=paid_amt,
        ibns=rbns + ibnr,
        rbns=rbns,
        ibnr=ibnr,
        n_total=int(inc.sum()),
        n_paid=int(paid.sum()),
        n_ibns=int(unpaid.sum()),
    )


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _accident_times(rng: CounterRNG, rate: float, horizon: float) -> np.ndarray:
    if rate <= 0:
        return np.empty(0)
    times = []
    last = 0.0
    start = 0
    chunk = int(rate * horizon * 1.1) + 64
    while True:
        u = rng.uniform(_ARRIVAL_STREAM, np.arange(start, start + chunk))
        t = last + np.cumsum(-np.log(u) / rate)
        times.append(t)
        if t[-1] > horizon:
            break
        last = t[-1]
        start += chunk
    t = np.concatenate(times)
    return t[t <= horizon]


def _invert_cumulative(cum_at_cuts, cuts, target):
    """Solve ``Lambda(u) = target`` row-wise for piecewise-linear ``Lambda``.

    ``cum_at_cuts`` has shape (n, m+1) with Lambda at each cut.
    """
    n, m1 = cum_at_cuts.shape
    k = np.sum(cum_at_cuts[:, 1:] < target[:, None], axis=1)
    k = np.minimum(k, m1 - 2)
    rows = np.arange(n)
    lo = cum_at_cuts[rows, k]
    slope = (cum_at_cuts[rows, k + 1] - lo) / (cuts[k + 1] - cuts[k])
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cuts[k] + np.where(slope > 0, (target - lo) / slope, 0.0)
    return np.clip(u, cuts[k], cuts[k + 1])


def simulate_portfolio(config: SimConfig) -> tuple[Portfolio, GroundTruth]:
    """Draw a portfolio and its ground truth; deterministic given ``config.seed``."""
    rng = CounterRNG(config.seed)
    omega = config.omega
    T = _accident_times(rng, config.claim_rate, config.horizon)
    n = T.size
    k = len(config.covariates)
    ids = np.arange(n, dtype=np.uint64)

    X = np.zeros((n, k))
    for j, spec in enumerate(config.covariates):
        u = rng.uniform(claim_stream(ids, _S_COVARIATE), j) if n else np.empty(0)
        if spec.kind == "normal":
            X[:, j] = ndtri(u)
        else:
            p_end = spec.p if spec.p_end is None else spec.p_end
            prob = spec.p + (p_end - spec.p) * T / config.horizon
            X[:, j] = (u < prob).astype(float)

    # reporting delay, conditioned on U <= omega
    rep = config.reporting_model
    rcuts = np.asarray(rep.grid.cuts)
    rscale = np.exp(X @ rep.coefficients) if k else np.ones(n)
    rcum = np.concatenate([[0.0], np.cumsum(rep.baseline_rates * rep.grid.widths)])
    rcum = rcum[None, :] * rscale[:, None]
    u = rng.uniform(claim_stream(ids, _S_REPORT), 0) if n else np.empty(0)
    F_omega = -np.expm1(-rcum[:, -1])
    target = -np.log1p(-u * F_omega)
    U = _invert_cumulative(rcum, rcuts, target) if n else np.empty(0)
    R = T + U

    # payments
    pay = config.payment_model
    pcuts = np.asarray(pay.grid.cuts)
    m = pay.grid.n_intervals
    window = omega - U
    Xd = np.column_stack([X, U])
    pscale = np.exp(Xd @ pay.coefficients)
    overlap = pay.grid.overlap(window)  # (n, m)
    mu = overlap * pay.baseline_rates[None, :] * pscale[:, None]
    if n:
        uc = rng.uniform(claim_stream(ids[:, None], _S_COUNT), np.arange(m)[None, :])
        counts = poisson.ppf(uc, mu).astype(np.int64)
    else:
        counts = np.zeros((0, m), dtype=np.int64)
    per_claim = counts.sum(axis=1)
    claim_of = np.repeat(np.arange(n), per_claim)
    interval_of = np.repeat(np.tile(np.arange(m), n), counts.ravel())
    first = np.concatenate([[0], np.cumsum(per_claim)[:-1]]) if n else np.empty(0, dtype=np.int64)
    number = np.arange(claim_of.size) - np.repeat(first, per_claim)
    if claim_of.size:
        up = rng.uniform(claim_stream(claim_of.astype(np.uint64), _S_POSITION), number)
        ua = rng.uniform(claim_stream(claim_of.astype(np.uint64), _S_AMOUNT), number)
    else:
        up = ua = np.empty(0)
    v = pcuts[interval_of] + up * overlap[claim_of, interval_of]
    z = ndtri(ua)
    rho = config.amount_delay_correlation
    if rho:
        zv = ndtri(np.clip(v / np.maximum(window[claim_of], 1e-300), 1e-12, 1 - 1e-12))
        z = math.sqrt(1 - rho * rho) * z + rho * zv
    Y = np.exp(config.amount_mu + config.amount_sigma * z)
    W = R[claim_of] + v

    # order payments by claim, then payment time
    order = np.lexsort((W, claim_of))
    claim_of, W, Y = claim_of[order], W[order], Y[order]
    number = np.arange(claim_of.size) - np.repeat(first, per_claim)

    portfolio = Portfolio(
        claim_ids=np.array([f"C{j:06d}" for j in range(n)], dtype=object),
        accident_time=T,
        reporting_time=R,
        covariates=X,
        payment_claim=claim_of,
        payment_time=W,
        amount=Y,
        feature_names=config.feature_names,
        max_settlement=omega,
    )
    return portfolio, GroundTruth(config, portfolio, number)


def write_simulation(truth: GroundTruth, out_dir: str | Path, taus) -> None:
    """Write claims/payments CSVs plus per-tau truth files under ``out_dir``.

    Layout: ``claims.csv``, ``payments.csv``, ``sim_config.json`` and, per
    valuation date, ``tau_<tau>/truth.csv`` and ``tau_<tau>/reserves_truth.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_portfolio(truth.portfolio, out / "claims.csv", out / "payments.csv")
    (out / "sim_config.json").write_text(json.dumps(truth.config.to_dict(), indent=2) + "\n")
    p = truth.portfolio
    for tau in taus:
        d = out / tau_dirname(tau)
        d.mkdir(exist_ok=True)
        pu, pv, pi = truth.probabilities(tau)
        reported = p.reporting_time[p.payment_claim] <= tau
        paid = p.payment_time <= tau
        with (d / "truth.csv").open("w", encoding="utf-8") as fh:
            fh.write("payment_row,pi_u,pi_v,pi,reported_by_tau,paid_by_tau\n")
            for i in range(p.n_payments):
                fh.write(
                    f"{i},{fmt(pu[i])},{fmt(pv[i])},{fmt(pi[i])},{int(reported[i])},{int(paid[i])}\n"
                )
        (d / "reserves_truth.json").write_text(
            json.dumps(true_reserves(truth, tau).to_dict(), indent=2) + "\n"
        )


def tau_dirname(tau: float) -> str:
    return f"tau_{float(tau):g}"
