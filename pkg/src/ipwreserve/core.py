"""Claims, payments, portfolios and their censoring at a valuation date.

All times are real-valued months on one calendar axis.  A :class:`Portfolio`
stores claims and payments column-wise in numpy arrays; :class:`Claim` and
:class:`Payment` are light record views for row-level APIs and ingestion.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CLAIM_COLUMNS = ("claim_id", "accident_time", "reporting_time")
PAYMENT_COLUMNS = ("claim_id", "payment_time", "amount")


class DataError(ValueError):
    """Invalid input data; ``line`` is the 1-based file line when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


@dataclass(frozen=True)
class Claim:
    claim_id: str
    accident_time: float
    reporting_time: float
    covariates: tuple[float, ...] = ()

    @property
    def reporting_delay(self) -> float:
        return self.reporting_time - self.accident_time


@dataclass(frozen=True)
class Payment:
    claim_id: str
    payment_time: float
    amount: float


@dataclass(frozen=True, eq=False)
class Portfolio:
    """Population (or observed history) of claims and their payments.

    ``payment_claim`` holds, for every payment, the row index of its claim.
    ``feature_scaling`` maps a standardized feature name to the
    ``(mean, sd)`` used at ingestion.
    """

    claim_ids: np.ndarray
    accident_time: np.ndarray
    reporting_time: np.ndarray
    covariates: np.ndarray
    payment_claim: np.ndarray
    payment_time: np.ndarray
    amount: np.ndarray
    feature_names: tuple[str, ...]
    max_settlement: float
    feature_scaling: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.claim_ids)
        covs = np.asarray(self.covariates, dtype=float).reshape(n, len(self.feature_names))
        object.__setattr__(self, "covariates", covs)
        for name in ("accident_time", "reporting_time", "payment_time", "amount"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "payment_claim", np.asarray(self.payment_claim, dtype=np.intp))
        object.__setattr__(self, "claim_ids", np.asarray(self.claim_ids, dtype=object))
        self.validate()

    def validate(self) -> None:
        omega = self.max_settlement
        if not omega > 0:
            raise DataError(f"max settlement must be positive, got {omega}")
        if len(set(self.claim_ids.tolist())) != len(self.claim_ids):
            raise DataError("duplicate claim_id")
        bad = np.flatnonzero(self.reporting_time < self.accident_time)
        if bad.size:
            raise DataError(f"claim {self.claim_ids[bad[0]]}: reporting precedes accident")
        if self.payment_claim.size:
            if self.payment_claim.min() < 0 or self.payment_claim.max() >= len(self.claim_ids):
                raise DataError("payment references unknown claim")
            R = self.reporting_time[self.payment_claim]
            T = self.accident_time[self.payment_claim]
            bad = np.flatnonzero(self.payment_time < R)
            if bad.size:
                raise DataError(f"payment {bad[0]}: W < R (payment precedes reporting)")
            bad = np.flatnonzero(self.amount < 0)
            if bad.size:
                raise DataError(f"payment {bad[0]}: negative amount")
            bad = np.flatnonzero(self.payment_time - T > omega * (1 + 1e-12))
            if bad.size:
                raise DataError(
                    f"payment {bad[0]}: total delay exceeds maximum settlement {omega}"
                )

    @classmethod
    def from_records(
        cls,
        claims: Iterable[Claim],
        payments: Iterable[Payment],
        feature_names: Sequence[str] = (),
        max_settlement: float = math.inf,
    ) -> "Portfolio":
        claims = list(claims)
        payments = list(payments)
        index = {c.claim_id: k for k, c in enumerate(claims)}
        k = len(feature_names)
        for c in claims:
            if len(c.covariates) != k:
                raise DataError(f"claim {c.claim_id}: expected {k} covariates")
        try:
            pc = [index[p.claim_id] for p in payments]
        except KeyError as exc:
            raise DataError(f"unknown claim {exc.args[0]!r}") from None
        return cls(
            claim_ids=np.array([c.claim_id for c in claims], dtype=object),
            accident_time=np.array([c.accident_time for c in claims], dtype=float),
            reporting_time=np.array([c.reporting_time for c in claims], dtype=float),
            covariates=np.array([c.covariates for c in claims], dtype=float).reshape(len(claims), k),
            payment_claim=np.array(pc, dtype=np.intp),
            payment_time=np.array([p.payment_time for p in payments], dtype=float),
            amount=np.array([p.amount for p in payments], dtype=float),
            feature_names=tuple(feature_names),
            max_settlement=float(max_settlement),
        )

    @property
    def n_claims(self) -> int:
        return len(self.claim_ids)

    @property
    def n_payments(self) -> int:
        return len(self.payment_time)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def total_amount(self) -> float:
        return float(self.amount.sum())

    def claim(self, k: int) -> Claim:
        return Claim(
            str(self.claim_ids[k]),
            float(self.accident_time[k]),
            float(self.reporting_time[k]),
            tuple(float(x) for x in self.covariates[k]),
        )

    def payment(self, i: int) -> Payment:
        return Payment(
            str(self.claim_ids[self.payment_claim[i]]),
            float(self.payment_time[i]),
            float(self.amount[i]),
        )

    def claims(self) -> list[Claim]:
        return [self.claim(k) for k in range(self.n_claims)]

    def payments(self) -> list[Payment]:
        return [self.payment(i) for i in range(self.n_payments)]


@dataclass(frozen=True, eq=False)
class ObservedSnapshot:
    """A portfolio censored at valuation time ``tau``.

    Claims are *observed* when reported (R <= tau) and payments when made
    (W <= tau).  Index arrays point into ``portfolio``; per-payment delay
    arrays are aligned with ``payment_index``.
    """

    portfolio: Portfolio
    tau: float
    claim_index: np.ndarray
    payment_index: np.ndarray
    payment_claim: np.ndarray
    membership: np.ndarray

    @property
    def n_paid(self) -> int:
        return int(self.payment_index.size)

    @property
    def n_reported(self) -> int:
        return int(self.claim_index.size)

    @property
    def n_total(self) -> int:
        """Population payments of claims incurred by tau (meaningful for
        uncensored, simulated portfolios only)."""
        p = self.portfolio
        return int(np.count_nonzero(p.accident_time[p.payment_claim] <= self.tau))

    @property
    def max_settlement(self) -> float:
        return self.portfolio.max_settlement

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.portfolio.feature_names

    # claim-level columns of reported claims
    @property
    def accident_time(self) -> np.ndarray:
        return self.portfolio.accident_time[self.claim_index]

    @property
    def reporting_time(self) -> np.ndarray:
        return self.portfolio.reporting_time[self.claim_index]

    @property
    def reporting_delay(self) -> np.ndarray:
        return self.reporting_time - self.accident_time

    @property
    def covariates(self) -> np.ndarray:
        return self.portfolio.covariates[self.claim_index]

    # payment-level columns of observed payments
    @property
    def payment_time(self) -> np.ndarray:
        return self.portfolio.payment_time[self.payment_index]

    @property
    def amount(self) -> np.ndarray:
        return self.portfolio.amount[self.payment_index]

    @property
    def U(self) -> np.ndarray:
        return self.reporting_delay[self.payment_claim]

    @property
    def V(self) -> np.ndarray:
        return self.payment_time - self.reporting_time[self.payment_claim]

    @property
    def Z(self) -> np.ndarray:
        return self.U + self.V

    @property
    def payment_accident_time(self) -> np.ndarray:
        return self.accident_time[self.payment_claim]

    def claim_paid_amount(self) -> np.ndarray:
        """Observed paid amount per reported claim."""
        return np.bincount(self.payment_claim, weights=self.amount, minlength=self.n_reported)

    def claim_payment_count(self) -> np.ndarray:
        return np.bincount(self.payment_claim, minlength=self.n_reported)


def snapshot(portfolio: Portfolio, tau: float) -> ObservedSnapshot:
    """Censor ``portfolio`` at valuation time ``tau`` (payments with W <= tau)."""
    tau = float(tau)
    reported = portfolio.reporting_time <= tau
    claim_index = np.flatnonzero(reported)
    membership = portfolio.payment_time <= tau
    payment_index = np.flatnonzero(membership)
    position = np.full(portfolio.n_claims, -1, dtype=np.intp)
    position[claim_index] = np.arange(claim_index.size)
    payment_claim = position[portfolio.payment_claim[payment_index]]
    return ObservedSnapshot(portfolio, tau, claim_index, payment_index, payment_claim, membership)


def paid_amount(snap: ObservedSnapshot) -> float:
    """Total of payments made by the valuation date."""
    return float(snap.amount.sum())


def _parse_float(text: str, column: str, line: int, path: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"column {column!r}: not a number: {text!r}", line, path) from None
    if math.isnan(value):
        raise DataError(f"column {column!r}: NaN", line, path)
    return value


def load_portfolio(
    claims_file: str | Path,
    payments_file: str | Path,
    max_settlement: float,
    standardize: Sequence[str] = (),
) -> Portfolio:
    """Read ``claims.csv`` / ``payments.csv`` into a validated portfolio.

    Features listed in ``standardize`` are centred and scaled to unit
    standard deviation; the scaling is kept in ``feature_scaling``.
    """
    claims_file, payments_file = Path(claims_file), Path(payments_file)
    for p in (claims_file, payments_file):
        if not p.is_file():
            raise DataError(f"missing file: {p}")

    claims: list[Claim] = []
    seen: dict[str, int] = {}
    with claims_file.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header[:3]) != CLAIM_COLUMNS:
            raise DataError(f"header must start with {','.join(CLAIM_COLUMNS)}", 1, str(claims_file))
        features = tuple(h.strip() for h in header[3:])
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", line, str(claims_file))
            cid = row[0].strip()
            if cid in seen:
                raise DataError(f"duplicate claim_id {cid!r}", line, str(claims_file))
            T = _parse_float(row[1], "accident_time", line, str(claims_file))
            R = _parse_float(row[2], "reporting_time", line, str(claims_file))
            if R < T:
                raise DataError(f"claim {cid!r}: reporting_time < accident_time", line, str(claims_file))
            x = tuple(
                _parse_float(v, features[k], line, str(claims_file)) for k, v in enumerate(row[3:])
            )
            seen[cid] = len(claims)
            claims.append(Claim(cid, T, R, x))

    payments: list[Payment] = []
    with payments_file.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PAYMENT_COLUMNS:
            raise DataError(f"header must be {','.join(PAYMENT_COLUMNS)}", 1, str(payments_file))
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"expected 3 fields, got {len(row)}", line, str(payments_file))
            cid = row[0].strip()
            if cid not in seen:
                raise DataError(f"unknown claim {cid!r}", line, str(payments_file))
            W = _parse_float(row[1], "payment_time", line, str(payments_file))
            Y = _parse_float(row[2], "amount", line, str(payments_file))
            claim = claims[seen[cid]]
            if W < claim.reporting_time:
                raise DataError(f"claim {cid!r}: W < R (payment precedes reporting)", line, str(payments_file))
            if Y < 0:
                raise DataError("negative amount", line, str(payments_file))
            if W - claim.accident_time > max_settlement * (1 + 1e-12):
                raise DataError(
                    f"claim {cid!r}: total delay exceeds maximum settlement {max_settlement}",
                    line,
                    str(payments_file),
                )
            payments.append(Payment(cid, W, Y))

    portfolio = Portfolio.from_records(claims, payments, features, max_settlement)
    if standardize:
        portfolio = standardize_features(portfolio, standardize)
    return portfolio


def standardize_features(portfolio: Portfolio, names: Sequence[str]) -> Portfolio:
    covs = portfolio.covariates.copy()
    scaling = dict(portfolio.feature_scaling)
    for name in names:
        if name not in portfolio.feature_names:
            raise DataError(f"unknown feature {name!r}")
        k = portfolio.feature_names.index(name)
        mean = float(covs[:, k].mean()) if len(covs) else 0.0
        sd = float(covs[:, k].std()) if len(covs) else 1.0
        sd = sd if sd > 0 else 1.0
        covs[:, k] = (covs[:, k] - mean) / sd
        scaling[name] = (mean, sd)
    return Portfolio(
        portfolio.claim_ids,
        portfolio.accident_time,
        portfolio.reporting_time,
        covs,
        portfolio.payment_claim,
        portfolio.payment_time,
        portfolio.amount,
        portfolio.feature_names,
        portfolio.max_settlement,
        scaling,
    )


def write_portfolio(portfolio: Portfolio, claims_file: str | Path, payments_file: str | Path) -> None:
    """Write the two CSV files of the ingestion schema (17 significant digits)."""
    with Path(claims_file).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLAIM_COLUMNS + portfolio.feature_names)
        for k in range(portfolio.n_claims):
            w.writerow(
                [portfolio.claim_ids[k], fmt(portfolio.accident_time[k]), fmt(portfolio.reporting_time[k])]
                + [fmt(x) for x in portfolio.covariates[k]]
            )
    with Path(payments_file).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAYMENT_COLUMNS)
        for i in range(portfolio.n_payments):
            w.writerow(
                [
                    portfolio.claim_ids[portfolio.payment_claim[i]],
                    fmt(portfolio.payment_time[i]),
                    fmt(portfolio.amount[i]),
                ]
            )


def fmt(x: float) -> str:
    return format(float(x), ".17g")
