"""Piecewise-exponential proportional-hazards models for reporting and payment delays.

Both delay processes use the same machinery: a log-rate per grid interval
plus a log-linear covariate effect, fitted by damped Newton on the exact
piecewise-exponential (Poisson-form) log-likelihood.

* Reporting delay U (one event per claim) is right truncated: a claim is only
  seen when ``U <= tau - T``, so each event density is divided by
  ``F(tau - T | X)``.
* Payments form a non-homogeneous Poisson process in ``v = W - R`` on the
  claim's payment window ``(0, omega - U]``, observed up to ``tau - R``.
  Covariates are the claim features plus the realized reporting delay.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .core import Claim, ObservedSnapshot

REPORTING = "reporting-delay"
PAYMENT = "payment-intensity"
KINDS = (REPORTING, PAYMENT)

RATE_FLOOR = 1e-10
RESIDUAL_CLAMP = 1e-12
PROBABILITY_FLOOR = 1e-6


class FitError(RuntimeError):
    """Raised when a fit cannot produce a trustworthy model.

    ``model`` holds the last iterate (with its diagnostics) when available.
    """

    def __init__(self, message: str, model: "PemModel | None" = None):
        super().__init__(message)
        self.model = model


@dataclass(frozen=True)
class TimeGrid:
    """Cut points ``0 = c_0 < c_1 < ... < c_m = omega`` in months."""

    cuts: tuple[float, ...]

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        object.__setattr__(self, "cuts", cuts)
        if len(cuts) < 2:
            raise ValueError("a grid needs at least two cut points")
        if cuts[0] != 0.0:
            raise ValueError("first cut must be 0")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValueError("cut points must be strictly increasing")

    @classmethod
    def uniform(cls, width: float, omega: float) -> "TimeGrid":
        """Cuts every ``width`` months, the last interval ending at ``omega``."""
        if width <= 0:
            raise ValueError("width must be positive")
        n = int(math.ceil(omega / width - 1e-9))
        cuts = [min(k * width, omega) for k in range(n)] + [omega]
        return cls(tuple(cuts))

    @property
    def omega(self) -> float:
        return self.cuts[-1]

    @property
    def n_intervals(self) -> int:
        return len(self.cuts) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.cuts)

    def overlap(self, t) -> np.ndarray:
        """Length of ``[0, t] ∩ interval_n``, shape ``t.shape + (m,)``."""
        c = np.asarray(self.cuts)
        t = np.asarray(t, dtype=float)[..., None]
        return np.clip(t - c[:-1], 0.0, c[1:] - c[:-1])

    def interval_of(self, t) -> np.ndarray:
        """Index n (0-based) of the interval ``(c_n, c_{n+1}]`` containing t; 0 maps to 0."""
        idx = np.searchsorted(np.asarray(self.cuts), np.asarray(t, dtype=float), side="left") - 1
        return np.clip(idx, 0, self.n_intervals - 1)


@dataclass(frozen=True)
class FitOptions:
    """Fitting controls.

    ``weight_scheme`` is ``"unit"`` or ``"amount"`` (claim weight = observed
    paid amount of the claim); ``None`` picks the per-model default
    (amount for reporting, unit for payments).  ``truncation=False`` drops the
    right-truncation term from the reporting likelihood; it exists to
    demonstrate the resulting bias.  Claims with accident time before
    ``accident_from`` are ignored (rolling windows).
    """

    weight_scheme: str | None = None
    max_iterations: int = 100
    gradient_tolerance: float = 1e-6
    ridge_penalty: float = 1e-8
    truncation: bool = True
    accident_from: float = -math.inf

    def __post_init__(self):
        if self.weight_scheme not in (None, "unit", "amount"):
            raise ValueError(f"unknown weight scheme {self.weight_scheme!r}")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.ridge_penalty < 0:
            raise ValueError("ridge_penalty must be >= 0")


@dataclass(frozen=True)
class FitReport:
    converged: bool
    iterations: int
    gradient_norm: float
    loglik: float
    n_claims: int
    n_events: int
    pinned_intervals: tuple[int, ...] = ()
    weight_scheme: str = "unit"


@dataclass(frozen=True, eq=False)
class PemModel:
    """Fitted (or specified) piecewise-exponential model.

    hazard ``lambda(t | x) = exp(log_baseline[n(t)] + x . coefficients)``.
    ``covariance`` is the inverse observed information of
    ``(log_baseline, coefficients)`` when the model was fitted.
    """

    grid: TimeGrid
    log_baseline: np.ndarray
    coefficients: np.ndarray
    kind: str
    feature_names: tuple[str, ...] = ()
    report: FitReport | None = None
    covariance: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        lb = np.asarray(self.log_baseline, dtype=float).ravel()
        co = np.asarray(self.coefficients, dtype=float).ravel()
        object.__setattr__(self, "log_baseline", lb)
        object.__setattr__(self, "coefficients", co)
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if lb.size != self.grid.n_intervals:
            raise ValueError("one log-baseline value per grid interval required")
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"x{k}" for k in range(co.size)))
        if len(self.feature_names) != co.size:
            raise ValueError("coefficient vector length must equal feature count")
        if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(co))):
            raise ValueError("parameters must be finite")

    @classmethod
    def from_rates(cls, cuts, rates, coefficients=(), kind=REPORTING, feature_names=()) -> "PemModel":
        rates = np.asarray(rates, dtype=float)
        if np.any(rates < 0):
            raise ValueError("rates must be non-negative")
        return cls(
            TimeGrid(tuple(cuts)),
            np.log(np.maximum(rates, RATE_FLOOR)),
            np.asarray(coefficients, dtype=float),
            kind,
            tuple(feature_names),
        )

    @property
    def omega(self) -> float:
        return self.grid.omega

    @property
    def baseline_rates(self) -> np.ndarray:
        return np.exp(self.log_baseline)

    @property
    def standard_errors(self) -> np.ndarray | None:
        if self.covariance is None:
            return None
        return np.sqrt(np.diag(self.covariance))

    @property
    def parameters(self) -> np.ndarray:
        return np.concatenate([self.log_baseline, self.coefficients])

    def linear_predictor(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.coefficients.size:
            raise ValueError(f"expected {self.coefficients.size} covariates, got {X.shape[1]}")
        return X @ self.coefficients

    def hazard(self, t, X) -> np.ndarray:
        n = self.grid.interval_of(t)
        return np.exp(self.log_baseline[n] + self.linear_predictor(X))

    def cumulative(self, t, X) -> np.ndarray:
        """Exact cumulative hazard ``Lambda(t | x)`` (t clipped to [0, omega])."""
        base = self.grid.overlap(t) @ self.baseline_rates
        return base * np.exp(self.linear_predictor(X))

    def cdf(self, t, X) -> np.ndarray:
        """Delay distribution ``1 - exp(-Lambda(t))`` of the reporting model."""
        return -np.expm1(-self.cumulative(t, X))

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "cuts": list(self.grid.cuts),
            "log_baseline": self.log_baseline.tolist(),
            "coefficients": dict(zip(self.feature_names, self.coefficients.tolist())),
            "feature_names": list(self.feature_names),
        }
        if self.report is not None:
            r = self.report
            d["diagnostics"] = {
                "converged": r.converged,
                "iterations": r.iterations,
                "gradient_norm": r.gradient_norm,
                "loglik": r.loglik,
                "n_claims": r.n_claims,
                "n_events": r.n_events,
                "pinned_intervals": list(r.pinned_intervals),
                "weight_scheme": r.weight_scheme,
            }
        if self.covariance is not None:
            # pinned intervals have no variance; JSON null stands for NaN
            cov = self.covariance
            d["covariance"] = [[None if math.isnan(v) else v for v in row] for row in cov.tolist()]
        return d

    def to_json(self) -> str:
        # json writes floats with repr(), which round-trips doubles exactly
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "PemModel":
        names = tuple(d["feature_names"])
        report = None
        if "diagnostics" in d:
            g = dict(d["diagnostics"])
            g["pinned_intervals"] = tuple(g.get("pinned_intervals", ()))
            report = FitReport(**g)
        cov = np.asarray(d["covariance"], dtype=float) if "covariance" in d else None
        return cls(
            TimeGrid(tuple(d["cuts"])),
            np.asarray(d["log_baseline"], dtype=float),
            np.asarray([d["coefficients"][n] for n in names], dtype=float),
            d["kind"],
            names,
            report,
            cov,
        )

    @classmethod
    def from_json(cls, text: str) -> "PemModel":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# likelihood
# ---------------------------------------------------------------------------


class PemLikelihood:
    """Weighted piecewise-exponential log-likelihood over claims.

    Per claim j with weight ``w``, covariates ``x``, event counts ``K[j, n]``,
    at-risk overlaps ``E[j, n]`` and truncation-bound overlaps ``C[j, n]``::

        l_j = w * ( sum_n K[j,n] (a_n + x.b)
                    - exp(x.b) sum_n exp(a_n) E[j,n]
                    - trunc_j * log(1 - exp(-exp(x.b) sum_n exp(a_n) C[j,n])) )

    minus ``ridge/2 * |b|^2``.  Parameters are ``theta = (a, b)``.
    """

    def __init__(self, K, E, X, weights=None, C=None, truncated=None, ridge=0.0):
        self.K = np.asarray(K, dtype=float)
        self.E = np.asarray(E, dtype=float)
        n, m = self.E.shape
        self.X = np.asarray(X, dtype=float).reshape(n, -1)
        self.w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        self.C = None if C is None else np.asarray(C, dtype=float)
        if self.C is not None:
            tr = np.ones(n, dtype=bool) if truncated is None else np.asarray(truncated, dtype=bool)
            keep = tr & (self.w > 0)
            self._tidx = np.flatnonzero(keep)
        else:
            self._tidx = np.empty(0, dtype=np.intp)
        self.ridge = float(ridge)
        self.m = m
        self.p = self.X.shape[1]
        wK = self.w[:, None] * self.K
        self.event_mass = wK.sum(axis=0)
        self._event_grad = np.concatenate([self.event_mass, self.X.T @ wK.sum(axis=1)])
        self.exposure = (self.w[:, None] * self.E).sum(axis=0)

    @property
    def n_params(self) -> int:
        return self.m + self.p

    def _split(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta[: self.m], theta[self.m :]

    def _trunc_terms(self, a, b):
        idx = self._tidx
        rx = np.exp(self.X[idx] @ b)
        Hn = self.C[idx] * np.exp(a)[None, :] * rx[:, None]
        H = Hn.sum(axis=1)
        return idx, Hn, H

    def loglik(self, theta) -> float:
        a, b = self._split(theta)
        eta = self.X @ b
        A = (self.E @ np.exp(a)) * np.exp(eta)
        val = self._event_grad[: self.m] @ a + (self.w * self.K.sum(axis=1)) @ eta - self.w @ A
        if self._tidx.size:
            idx, _, H = self._trunc_terms(a, b)
            with np.errstate(divide="ignore"):
                logF = np.log(-np.expm1(-H))
            val -= self.w[idx] @ logF
        return float(val - 0.5 * self.ridge * b @ b)

    def gradient(self, theta) -> np.ndarray:
        return self.derivatives(theta, hessian=False)[0]

    def hessian(self, theta) -> np.ndarray:
        return self.derivatives(theta, hessian=True)[1]

    def derivatives(self, theta, hessian=True):
        a, b = self._split(theta)
        w = self.w
        rx = np.exp(self.X @ b)
        An = self.E * np.exp(a)[None, :] * rx[:, None]
        A = An.sum(axis=1)
        grad = self._event_grad.copy()
        grad[: self.m] -= w @ An
        grad[self.m :] -= self.X.T @ (w * A)
        grad[self.m :] -= self.ridge * b
        hess = None
        if hessian:
            hess = np.zeros((self.n_params, self.n_params))
            self._add_second(hess, -w, An, A, self.X)
            hess[self.m :, self.m :] -= self.ridge * np.eye(self.p)
        if self._tidx.size:
            idx, Hn, H = self._trunc_terms(a, b)
            wt = w[idx]
            Xt = self.X[idx]
            em1 = np.expm1(H)
            g1 = 1.0 / em1  # d(-log F)/dH with sign: l += -log F, d/dH(-log F) = -1/expm1(H)
            grad[: self.m] -= wt * g1 @ Hn
            grad[self.m :] -= Xt.T @ (wt * g1 * H)
            if hessian:
                # d2(-log F)/dH2 = exp(H) / expm1(H)^2
                with np.errstate(over="ignore"):
                    g2 = np.where(H > 700, 0.0, np.exp(np.minimum(H, 700)) / em1**2)
                self._add_second(hess, -wt * g1, Hn, H, Xt)
                G = np.hstack([Hn, H[:, None] * Xt])
                hess += G.T @ ((wt * g2)[:, None] * G)
        return grad, hess

    def _add_second(self, hess, coef, Qn, Q, X):
        """hess += sum_j coef_j * d2 Q_j / dtheta2 for Q_j = exp(x.b) sum_n exp(a_n) M[j,n]."""
        m = self.m
        hess[np.arange(m), np.arange(m)] += coef @ Qn
        cross = Qn.T @ (coef[:, None] * X)
        hess[:m, m:] += cross
        hess[m:, :m] += cross.T
        hess[m:, m:] += X.T @ ((coef * Q)[:, None] * X)


def newton_maximize(lik: PemLikelihood, theta0, free, options: FitOptions):
    """Damped Newton ascent over the ``free`` coordinates of ``theta``.

    Returns ``(theta, converged, iterations, gradient_norm, loglik, hessian)``.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    free = np.asarray(free, dtype=bool)
    f = np.flatnonzero(free)
    ll = lik.loglik(theta)
    grad, hess = lik.derivatives(theta)
    gnorm = float(np.max(np.abs(grad[f]))) if f.size else 0.0
    it = 0
    while gnorm >= options.gradient_tolerance and it < options.max_iterations:
        it += 1
        g = grad[f]
        info = -hess[np.ix_(f, f)]
        scale = max(1.0, float(np.max(np.abs(np.diag(info)))))
        mu = 0.0
        step = None
        for _ in range(40):
            try:
                cf = linalg.cho_factor(info + mu * np.eye(f.size), check_finite=False)
                step = linalg.cho_solve(cf, g, check_finite=False)
                break
            except linalg.LinAlgError:
                mu = scale * 1e-10 if mu == 0.0 else mu * 10.0
        if step is None or not np.all(np.isfinite(step)):
            break
        # cap huge moves in log-rate space before the line search
        big = np.max(np.abs(step))
        if big > 20.0:
            step *= 20.0 / big
        s = 1.0
        improved = False
        # near the optimum the true gain is below summation round-off, so
        # ties within that noise count as progress
        slack = 1e-12 * (1.0 + abs(ll))
        for _ in range(31):
            trial = theta.copy()
            trial[f] += s * step
            ll_new = lik.loglik(trial)
            if np.isfinite(ll_new) and ll_new >= ll - slack:
                improved = True
                break
            s *= 0.5
        if not improved:
            break
        theta, ll = trial, ll_new
        grad, hess = lik.derivatives(theta)
        gnorm = float(np.max(np.abs(grad[f])))
    return theta, gnorm < options.gradient_tolerance, it, gnorm, ll, hess


def _fit(lik: PemLikelihood, grid, kind, names, options, scheme, n_claims, n_events) -> PemModel:
    m = grid.n_intervals
    pinned = lik.event_mass <= 0
    a0 = np.where(
        pinned,
        math.log(RATE_FLOOR),
        np.log(np.maximum(lik.event_mass, 1e-300) / np.maximum(lik.exposure, 1e-12)),
    )
    theta0 = np.concatenate([a0, np.zeros(lik.p)])
    free = np.concatenate([~pinned, np.ones(lik.p, dtype=bool)])
    theta, ok, it, gnorm, ll, hess = newton_maximize(lik, theta0, free, options)
    f = np.flatnonzero(free)
    cov = np.full((lik.n_params, lik.n_params), np.nan)
    try:
        cov[np.ix_(f, f)] = linalg.inv(-hess[np.ix_(f, f)])
    except (linalg.LinAlgError, ValueError):
        pass
    report = FitReport(
        converged=bool(ok),
        iterations=it,
        gradient_norm=gnorm,
        loglik=ll,
        n_claims=n_claims,
        n_events=n_events,
        pinned_intervals=tuple(int(k) for k in np.flatnonzero(pinned)),
        weight_scheme=scheme,
    )
    model = PemModel(grid, theta[:m], theta[m:], kind, tuple(names), report, cov)
    if not ok:
        raise FitError(
            f"{kind} fit did not converge after {it} iterations (gradient norm {gnorm:.3g})",
            model,
        )
    return model


def _claim_weights(snap: ObservedSnapshot, scheme: str, keep: np.ndarray) -> np.ndarray:
    if scheme == "unit":
        w = np.ones(keep.size)
    else:
        w = snap.claim_paid_amount()[keep]
    total = w.sum()
    if total <= 0:
        raise FitError("no events to fit (zero total weight)")
    # rescale to mean one: leaves the maximizer unchanged and keeps the
    # gradient tolerance on a per-claim scale
    return w * (np.count_nonzero(w) / total)


def _check_grid(grid: TimeGrid, snap: ObservedSnapshot):
    if not math.isclose(grid.omega, snap.max_settlement, rel_tol=1e-12):
        raise ValueError(f"grid must end at omega={snap.max_settlement}, ends at {grid.omega}")


def reporting_likelihood(
    snap: ObservedSnapshot, grid: TimeGrid, options: FitOptions | None = None
) -> PemLikelihood:
    """Weighted (right-truncated) reporting-delay likelihood of ``snap``."""
    options = options or FitOptions()
    scheme = options.weight_scheme or "amount"
    _check_grid(grid, snap)
    sel = snap.accident_time >= options.accident_from
    if options.truncation:
        # a zero truncation bound forces U = 0 and carries no information
        sel &= snap.tau - snap.accident_time > 0
    keep = np.flatnonzero(sel)
    if keep.size == 0:
        raise FitError("no events to fit")
    U = snap.reporting_delay[keep]
    if np.any(U > grid.omega * (1 + 1e-12)):
        raise ValueError("observed reporting delay exceeds omega")
    w = _claim_weights(snap, scheme, keep)
    X = snap.covariates[keep]
    n, m = keep.size, grid.n_intervals
    K = np.zeros((n, m))
    K[np.arange(n), grid.interval_of(U)] = 1.0
    E = grid.overlap(U)
    C = trunc = None
    if options.truncation:
        bound = snap.tau - snap.accident_time[keep]
        trunc = bound < grid.omega
        C = grid.overlap(bound)
    return PemLikelihood(K, E, X, w, C, trunc, options.ridge_penalty)


def fit_reporting_model(
    snap: ObservedSnapshot, grid: TimeGrid, options: FitOptions | None = None
) -> PemModel:
    """Fit the right-truncated reporting-delay model on reported claims."""
    options = options or FitOptions()
    lik = reporting_likelihood(snap, grid, options)
    n = lik.K.shape[0]
    return _fit(lik, grid, REPORTING, snap.feature_names, options,
                options.weight_scheme or "amount", n, n)


def payment_design(snap: ObservedSnapshot, keep=None) -> np.ndarray:
    """Payment-model covariates per reported claim: claim features plus U."""
    X = np.column_stack([snap.covariates, snap.reporting_delay])
    return X if keep is None else X[keep]


def payment_feature_names(feature_names: Sequence[str]) -> tuple[str, ...]:
    return tuple(feature_names) + ("reporting_delay",)


def payment_likelihood(
    snap: ObservedSnapshot, grid: TimeGrid, options: FitOptions | None = None
) -> PemLikelihood:
    """Weighted NHPP likelihood of the observed payments of reported claims."""
    options = options or FitOptions()
    scheme = options.weight_scheme or "unit"
    _check_grid(grid, snap)
    if snap.n_paid == 0:
        raise FitError("no events to fit")
    keep = np.flatnonzero(snap.accident_time >= options.accident_from)
    if keep.size == 0:
        raise FitError("no events to fit")
    U = snap.reporting_delay
    window = np.minimum(snap.tau - snap.reporting_time, grid.omega - U)[keep]
    n, m = keep.size, grid.n_intervals
    pos = np.full(snap.n_reported, -1, dtype=np.intp)
    pos[keep] = np.arange(n)
    rows = pos[snap.payment_claim]
    sel = rows >= 0
    K = np.zeros((n, m))
    np.add.at(K, (rows[sel], grid.interval_of(snap.V[sel])), 1.0)
    E = grid.overlap(np.maximum(window, 0.0))
    w = _claim_weights(snap, scheme, keep)
    X = payment_design(snap, keep)
    return PemLikelihood(K, E, X, w, ridge=options.ridge_penalty)


def fit_payment_model(
    snap: ObservedSnapshot, grid: TimeGrid, options: FitOptions | None = None
) -> PemModel:
    """Fit the payment-intensity (NHPP) model on reported claims' payments."""
    options = options or FitOptions()
    lik = payment_likelihood(snap, grid, options)
    return _fit(
        lik, grid, PAYMENT, payment_feature_names(snap.feature_names), options,
        options.weight_scheme or "unit", lik.K.shape[0], int(round(lik.K.sum())),
    )


# ---------------------------------------------------------------------------
# inclusion probabilities
# ---------------------------------------------------------------------------


def reporting_probability(model: PemModel, accident_time, X, tau) -> np.ndarray:
    """Vectorized pi^U: ``1 - exp(-Lambda(tau - T))``, 1 once ``tau - T >= omega``."""
    if model.kind != REPORTING:
        raise ValueError("reporting probabilities need a reporting-delay model")
    c = tau - np.asarray(accident_time, dtype=float)
    if np.any(c < 0):
        raise ValueError("claim after valuation date")
    p = model.cdf(np.minimum(c, model.omega), X)
    return np.where(c >= model.omega, 1.0, p)


def payment_probability(model: PemModel, reporting_time, U, X, tau) -> np.ndarray:
    """Vectorized pi^V: ``Lambda(tau - R) / Lambda(omega - U)`` on the payment window."""
    if model.kind != PAYMENT:
        raise ValueError("payment probabilities need a payment-intensity model")
    R = np.asarray(reporting_time, dtype=float)
    U = np.asarray(U, dtype=float)
    s = tau - R
    if np.any(s < 0):
        raise ValueError("claim not reported at valuation date")
    window = model.omega - U
    full = s >= window
    Xd = np.column_stack([np.atleast_2d(X).reshape(R.size, -1), U])
    num = model.cumulative(np.minimum(s, window), Xd)
    den = model.cumulative(window, Xd)
    if np.any((den <= 0) & ~full):
        raise ValueError("degenerate intensity")
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(full, 1.0, num / np.where(den > 0, den, 1.0))
    return np.minimum(p, 1.0)


def reporting_inclusion_probability(model: PemModel, claim: Claim, tau: float) -> float:
    if tau < claim.accident_time:
        raise ValueError("claim after valuation date")
    return float(reporting_probability(model, [claim.accident_time], [claim.covariates], tau)[0])


def payment_inclusion_probability(
    model: PemModel, claim: Claim, reporting_delay: float, tau: float
) -> float:
    if claim.reporting_time > tau:
        raise ValueError("claim not reported at valuation date")
    return float(
        payment_probability(
            model, [claim.reporting_time], [reporting_delay], [claim.covariates], tau
        )[0]
    )


@dataclass(frozen=True, eq=False)
class InclusionProbabilities:
    """Per observed payment ``pi_u``, ``pi_v`` and ``pi = pi_u * pi_v`` at ``time``.

    ``time`` equals the valuation date for sampling probabilities; later
    times give the change-of-population probabilities used for cumulative
    and incremental projections.  ``n_floored`` counts components raised to
    ``floor``.
    """

    pi_u: np.ndarray
    pi_v: np.ndarray
    pi: np.ndarray
    tau: float
    time: float
    floor: float = PROBABILITY_FLOOR
    n_floored: int = 0

    @classmethod
    def from_components(cls, pi_u, pi_v, tau, time=None, floor=PROBABILITY_FLOOR):
        pi_u = np.asarray(pi_u, dtype=float)
        pi_v = np.asarray(pi_v, dtype=float)
        if pi_u.shape != pi_v.shape:
            raise ValueError("pi_u and pi_v must have the same length")
        n_floored = int(np.count_nonzero(pi_u < floor) + np.count_nonzero(pi_v < floor))
        pi_u = np.clip(pi_u, floor, 1.0)
        pi_v = np.clip(pi_v, floor, 1.0)
        return cls(pi_u, pi_v, pi_u * pi_v, float(tau), float(tau if time is None else time),
                   floor, n_floored)

    def __len__(self):
        return self.pi.size


def compute_inclusion_probabilities(
    reporting: PemModel,
    payment: PemModel,
    snap: ObservedSnapshot,
    time: float | None = None,
    floor: float = PROBABILITY_FLOOR,
) -> InclusionProbabilities:
    """Inclusion probabilities of every observed payment of ``snap``.

    With ``time`` later than the valuation date, the same formulas are
    evaluated at ``time`` (the probability of being paid by ``time``).
    """
    omega = snap.max_settlement
    for model in (reporting, payment):
        if not math.isclose(model.omega, omega, rel_tol=1e-12):
            raise ValueError("model grid must end at the portfolio's omega")
    t = snap.tau if time is None else float(time)
    if t < snap.tau:
        raise ValueError("probabilities are only defined from the valuation date on")
    pu_claim = reporting_probability(reporting, snap.accident_time, snap.covariates, t)
    pv_claim_X = snap.covariates
    pc = snap.payment_claim
    # pi^V depends only on the claim (intensity has no payment-level covariates)
    pv_claim = payment_probability(
        payment, snap.reporting_time, snap.reporting_delay, pv_claim_X, t
    )
    return InclusionProbabilities.from_components(pu_claim[pc], pv_claim[pc], snap.tau, t, floor)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def _to_normal(ratio: np.ndarray) -> np.ndarray:
    return norm.ppf(np.clip(ratio, RESIDUAL_CLAMP, 1.0 - RESIDUAL_CLAMP))


def pseudo_residuals(model: PemModel, snap: ObservedSnapshot) -> np.ndarray:
    """Normal pseudo-residuals of the truncated fitted distribution, one per event.

    Reporting model: ``Phi^-1(F(U) / F(tau - T))`` per reported claim.
    Payment model: ``Phi^-1(Lambda(V) / Lambda(min(tau - R, omega - U)))``
    per observed payment.  Events whose truncation bound has zero mass
    (e.g. an accident on the valuation date) carry no information and are
    dropped.
    """
    omega = model.omega
    if model.kind == REPORTING:
        U = snap.reporting_delay
        X = snap.covariates
        bound = snap.tau - snap.accident_time
        num = model.cdf(U, X)
        den = np.where(bound < omega, model.cdf(np.minimum(bound, omega), X), 1.0)
        keep = den > 0
        return _to_normal(num[keep] / den[keep])
    pc = snap.payment_claim
    Xd = payment_design(snap)[pc]
    U = snap.reporting_delay[pc]
    window = np.minimum(snap.tau - snap.reporting_time[pc], omega - U)
    num = model.cumulative(snap.V, Xd)
    den = model.cumulative(window, Xd)
    keep = den > 0
    return _to_normal(num[keep] / den[keep])


def with_parameters(model: PemModel, theta) -> PemModel:
    """Copy of ``model`` with parameters ``theta = (log_baseline, coefficients)``."""
    m = model.grid.n_intervals
    theta = np.asarray(theta, dtype=float)
    return replace(model, log_baseline=theta[:m], coefficients=theta[m:], report=None, covariance=None)
