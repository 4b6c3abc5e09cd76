"""Command-line interface: ``ipwreserve <subcommand> [--config FILE] [--key value ...]``.

Subcommands: simulate, fit, reserve, triangle, compare, residuals.  Each
reads one flat JSON config; ``--key value`` flags override its entries
(values are parsed as JSON when possible, otherwise taken as strings).

Exit codes: 0 success, 2 data/config error, 3 fit non-convergence.
``IPWRESERVE_THREADS`` caps the number of valuation dates evaluated
concurrently; reports are assembled in valuation-date order.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from . import chainladder as cl
from .core import DataError, Portfolio, fmt, load_portfolio, snapshot
from .estimators import IBNR, IBNS, RBNS
from .hazard import FitError, FitOptions, InclusionProbabilities, TimeGrid
from .pipeline import (
    ReserveSettings,
    chain_ladder_baseline,
    chain_ladder_probabilities,
    error_metrics,
    estimates_from_probabilities,
    fit_models,
    payment_weights,
    residual_diagnostics,
    run_reserve_at,
)
from .simulate import (
    SimConfig,
    oracle_probabilities,
    simulate_portfolio,
    tau_dirname,
    true_reserves,
    write_simulation,
)

log = logging.getLogger("ipwreserve")

EXIT_OK, EXIT_DATA, EXIT_FIT = 0, 2, 3
KINDS = (IBNS, RBNS, IBNR)
RESERVE_COLUMNS = ("kind", "point", "variance", "ci_lower", "ci_upper", "alpha", "n_paid", "trimmed")

_DATA_KEYS = {"claims", "payments", "max_settlement", "standardize", "output", "tau"}
_FIT_KEYS = _DATA_KEYS | {
    "reporting_grid", "reporting_grid_width", "payment_grid", "payment_grid_width",
    "reporting_weights", "payment_weights", "max_iterations", "gradient_tolerance",
    "ridge_penalty", "truncation", "rolling_window",
}
_RESERVE_KEYS = _FIT_KEYS | {"alpha", "trim", "trim_threshold", "explain"}
_CL_KEYS = {"origin_width", "dev_width", "weight_scheme"}
ALLOWED_KEYS = {
    "simulate": set(SimConfig.__dataclass_fields__) | {"taus", "output"},
    "fit": _FIT_KEYS,
    "reserve": _RESERVE_KEYS,
    "triangle": _DATA_KEYS | _CL_KEYS | {"measure"},
    "compare": _RESERVE_KEYS | _CL_KEYS | {"truth", "probabilities"},
    "residuals": _FIT_KEYS,
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(tokens: list[str]) -> dict:
    """``['--a', '1', '--flag', '--b', 'x']`` -> ``{'a': 1, 'flag': True, 'b': 'x'}``."""
    out: dict = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigError(f"expected --key, got {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, value = key.split("=", 1)
            out[key] = _parse_value(value)
            i += 1
        elif i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
            out[key] = _parse_value(tokens[i + 1])
            i += 2
        else:
            out[key] = True
            i += 1
    return out


def load_config(command: str, path: str | None, overrides: dict) -> dict:
    cfg: dict = {}
    if path is not None:
        try:
            cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"missing file: config {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a flat JSON object")
        base = Path(path).resolve().parent
        for key in ("claims", "payments", "truth", "output"):
            if isinstance(cfg.get(key), str) and not Path(cfg[key]).is_absolute():
                cfg[key] = str(base / cfg[key])
    cfg.update(overrides)
    # one config may serve several subcommands; keys another subcommand
    # understands are ignored, anything else is a typo
    unknown = set(cfg) - set().union(*ALLOWED_KEYS.values())
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"missing required setting {key!r}")
    return cfg[key]


def _taus(cfg: dict) -> list[float]:
    tau = _require(cfg, "tau")
    taus = [float(t) for t in (tau if isinstance(tau, list) else [tau])]
    if not taus:
        raise ConfigError("no valuation dates given")
    return sorted(set(taus))


def _grid(cfg: dict, prefix: str, omega: float) -> TimeGrid:
    cuts = cfg.get(f"{prefix}_grid")
    if cuts is not None:
        grid = TimeGrid(np.asarray(cuts, dtype=float))
        if not math.isclose(grid.omega, omega, rel_tol=1e-12):
            raise ConfigError(f"{prefix}_grid must end at max_settlement={omega}")
        return grid
    return TimeGrid.uniform(float(cfg.get(f"{prefix}_grid_width", 1.0)), omega)


def _fit_options(cfg: dict, which: str) -> FitOptions:
    return FitOptions(
        weight_scheme=cfg.get(f"{which}_weights"),
        max_iterations=int(cfg.get("max_iterations", 100)),
        gradient_tolerance=float(cfg.get("gradient_tolerance", 1e-6)),
        ridge_penalty=float(cfg.get("ridge_penalty", 1e-8)),
        truncation=bool(cfg.get("truncation", True)) if which == "reporting" else True,
    )


def settings_from_config(cfg: dict, omega: float) -> ReserveSettings:
    window = cfg.get("rolling_window")
    return ReserveSettings(
        reporting_grid=_grid(cfg, "reporting", omega),
        payment_grid=_grid(cfg, "payment", omega),
        reporting_options=_fit_options(cfg, "reporting"),
        payment_options=_fit_options(cfg, "payment"),
        alpha=float(cfg.get("alpha", 0.05)),
        trim=bool(cfg.get("trim", False)),
        trim_threshold=float(cfg.get("trim_threshold", 0.03)),
        rolling_window=None if window is None else float(window),
    )


def portfolio_from_config(cfg: dict) -> Portfolio:
    return load_portfolio(
        _require(cfg, "claims"),
        _require(cfg, "payments"),
        float(_require(cfg, "max_settlement")),
        standardize=tuple(cfg.get("standardize", ())),
    )


def thread_count() -> int:
    raw = os.environ.get("IPWRESERVE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"IPWRESERVE_THREADS must be an integer, got {raw!r}") from None


def map_ordered(fn: Callable, items: Iterable) -> list:
    """Apply ``fn`` to every item, concurrently if allowed; results keep input order."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt(float(v))
    return str(v)


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_json_value(x) for x in v]
    return v


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_json_value(obj), indent=2) + "\n", encoding="utf-8")


def write_rows(path: Path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([_cell(v) for v in row])


def reserve_rows(estimates: dict) -> list[list]:
    return [[estimates[k].as_row()[c] for c in RESERVE_COLUMNS] for k in KINDS]


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg.get("output", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tau_dir(out: Path, tau: float) -> Path:
    d = out / tau_dirname(tau)
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: dict) -> int:
    out = _out_dir(cfg)
    taus = cfg.get("taus", [])
    taus = taus if isinstance(taus, list) else [taus]
    sim = {k: v for k, v in cfg.items() if k in SimConfig.__dataclass_fields__}
    config = SimConfig.from_dict(sim)
    _, truth = simulate_portfolio(config)
    write_simulation(truth, out, [float(t) for t in taus])
    print(f"simulated {truth.portfolio.n_claims} claims, {truth.portfolio.n_payments} payments -> {out}")
    return EXIT_OK


def _fit_one(portfolio: Portfolio, settings: ReserveSettings, tau: float):
    return fit_models(snapshot(portfolio, tau), settings)


def cmd_fit(cfg: dict) -> int:
    portfolio = portfolio_from_config(cfg)
    settings = settings_from_config(cfg, portfolio.max_settlement)
    out = _out_dir(cfg)
    results = map_ordered(lambda t: _fit_one(portfolio, settings, t), _taus(cfg))
    for tau, (rep, pay) in zip(_taus(cfg), results):
        d = _tau_dir(out, tau)
        (d / "reporting_model.json").write_text(rep.to_json() + "\n", encoding="utf-8")
        (d / "payment_model.json").write_text(pay.to_json() + "\n", encoding="utf-8")
        print(f"tau={tau:g}: reporting loglik {rep.report.loglik:.6g}, payment loglik {pay.report.loglik:.6g}")
    return EXIT_OK


def _write_reserve_run(run, d: Path, explain: bool) -> None:
    write_rows(d / "reserves.csv", RESERVE_COLUMNS, reserve_rows(run.estimates))
    doc = {
        "tau": run.tau,
        "estimates": [run.estimates[k].as_row() for k in KINDS],
        "raw": [run.raw[k].as_row() for k in KINDS],
        "n_trimmed": run.n_trimmed,
        "n_floored": run.probabilities.n_floored,
    }
    if explain:
        snap = run.snapshot
        w = payment_weights(run)
        doc["payments"] = [
            {
                "claim_id": snap.portfolio.claim_ids[snap.claim_index[snap.payment_claim[i]]],
                "payment_time": snap.payment_time[i],
                "amount": snap.amount[i],
                **{k: v[i] for k, v in w.items()},
            }
            for i in range(snap.n_paid)
        ]
    write_json(d / "reserves.json", doc)
    (d / "reporting_model.json").write_text(run.reporting_model.to_json() + "\n", encoding="utf-8")
    (d / "payment_model.json").write_text(run.payment_model.to_json() + "\n", encoding="utf-8")


def cmd_reserve(cfg: dict) -> int:
    portfolio = portfolio_from_config(cfg)
    settings = settings_from_config(cfg, portfolio.max_settlement)
    out = _out_dir(cfg)
    taus = _taus(cfg)
    runs = map_ordered(lambda t: run_reserve_at(portfolio, t, settings), taus)
    summary = []
    for run in runs:
        _write_reserve_run(run, _tau_dir(out, run.tau), bool(cfg.get("explain", False)))
        summary.extend([run.tau] + r for r in reserve_rows(run.estimates))
    write_rows(out / "reserves.csv", ("tau",) + RESERVE_COLUMNS, summary)
    with (out / "reserves.csv").open(encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


def cmd_triangle(cfg: dict) -> int:
    portfolio = portfolio_from_config(cfg)
    out = _out_dir(cfg)
    ow = float(cfg.get("origin_width", 1.0))
    dw = float(cfg.get("dev_width", ow))
    measure = cfg.get("measure", "amount")
    scheme = cfg.get("weight_scheme", "amount" if measure == "amount" else "unit")
    for tau in _taus(cfg):
        snap = snapshot(portfolio, tau)
        # lags older than the oldest origin are not identifiable: unit tail
        tri = cl.build_triangle(snap, ow, dw, measure, cl.observable_dev_count(snap, ow, dw))
        d = _tau_dir(out, tau)
        tri.to_csv(d / "triangle.csv")
        factors = cl.estimate_factors(snap, tri.dev_cuts, scheme, ow)
        factors.to_csv(d / "factors.csv")
        proj = cl.cl_project(tri, factors)
        labels = [f"{a:g}-{b:g}" for a, b in zip(tri.origin_cuts[:-1], tri.origin_cuts[1:])]
        write_rows(
            d / "projection.csv",
            ("origin", "latest", "ultimate", "reserve"),
            zip(labels, proj.latest, proj.ultimate, proj.reserve),
        )
        print(f"tau={tau:g}: CL reserve {fmt(proj.total_reserve)}")
    return EXIT_OK


def _load_truth(cfg: dict, taus: list[float]):
    tdir = Path(_require(cfg, "truth"))
    sim_path = tdir / "sim_config.json"
    sim = SimConfig.from_dict(json.loads(sim_path.read_text())) if sim_path.exists() else None
    regenerated = None
    truths = {}
    for tau in taus:
        f = tdir / tau_dirname(tau) / "reserves_truth.json"
        if f.exists():
            truths[tau] = json.loads(f.read_text())
        elif sim is not None:
            if regenerated is None:
                regenerated = simulate_portfolio(sim)[1]
            truths[tau] = true_reserves(regenerated, tau).to_dict()
        else:
            raise DataError(f"missing file: no truth for tau={tau:g} under {tdir}")
    return sim, truths


def _compare_one(portfolio, settings, cfg, sim, tau):
    snap = snapshot(portfolio, tau)
    mode = cfg.get("probabilities", "fitted")
    ow = float(cfg.get("origin_width", 1.0))
    dw = float(cfg.get("dev_width", ow))
    scheme = cfg.get("weight_scheme", "amount")
    if mode == "fitted":
        ipw = run_reserve_at(portfolio, tau, settings).estimates
    else:
        if mode == "oracle":
            if sim is None:
                raise ConfigError("oracle probabilities need sim_config.json in the truth directory")
            pu, pv, _ = oracle_probabilities(
                sim, snap.accident_time, snap.reporting_time, snap.covariates, tau
            )
            pc = snap.payment_claim
            probs = InclusionProbabilities.from_components(pu[pc], pv[pc], tau, floor=1e-12)
        elif mode == "chain-ladder":
            probs = chain_ladder_probabilities(snap, ow, dw, scheme)
        else:
            raise ConfigError(f"unknown probabilities mode {mode!r}")
        ipw = estimates_from_probabilities(
            snap, probs, settings.alpha, settings.trim, settings.trim_threshold
        )[1]
    return ipw, chain_ladder_baseline(snap, ow, dw, scheme)


def cmd_compare(cfg: dict) -> int:
    portfolio = portfolio_from_config(cfg)
    settings = settings_from_config(cfg, portfolio.max_settlement)
    out = _out_dir(cfg)
    taus = _taus(cfg)
    sim, truths = _load_truth(cfg, taus)
    results = map_ordered(lambda t: _compare_one(portfolio, settings, cfg, sim, t), taus)
    header = [
        "tau", "true_ibns", "true_rbns", "true_ibnr",
        "ipw_ibns", "ipw_ci_lower", "ipw_ci_upper", "ipw_rbns", "ipw_ibnr",
        "cl_ibns", "cl_rbns", "cl_ibnr",
    ]
    rows = []
    for tau, (ipw, clr) in zip(taus, results):
        t = truths[tau]
        rows.append([
            tau, float(t["ibns"]), float(t["rbns"]), float(t["ibnr"]),
            ipw[IBNS].point, ipw[IBNS].ci_lower, ipw[IBNS].ci_upper, ipw[RBNS].point, ipw[IBNR].point,
            clr.ibns, clr.rbns, clr.ibnr,
        ])
    write_rows(out / "comparison.csv", header, rows)
    arr = np.array([r for r in rows], dtype=float)
    metrics = []
    for method, off in (("ipw", 4), ("cl", 9)):
        cols = {IBNS: off, RBNS: off + (3 if method == "ipw" else 1), IBNR: off + (4 if method == "ipw" else 2)}
        for j, kind in enumerate(KINDS):
            m = error_metrics(arr[:, cols[kind]], arr[:, 1 + j])
            metrics.append([method, kind, m.me, m.rmse, m.mae, m.mape])
    write_rows(out / "metrics.csv", ("method", "kind", "me", "rmse", "mae", "mape"), metrics)
    write_json(out / "comparison.json", {
        "rows": [dict(zip(header, r)) for r in rows],
        "metrics": [dict(zip(("method", "kind", "me", "rmse", "mae", "mape"), m)) for m in metrics],
    })
    with (out / "metrics.csv").open(encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


def cmd_residuals(cfg: dict) -> int:
    portfolio = portfolio_from_config(cfg)
    settings = settings_from_config(cfg, portfolio.max_settlement)
    out = _out_dir(cfg)

    def one(tau):
        snap = snapshot(portfolio, tau)
        rep, pay = fit_models(snap, settings)
        return residual_diagnostics(snap, rep, pay)

    taus = _taus(cfg)
    for tau, diag in zip(taus, map_ordered(one, taus)):
        d = _tau_dir(out, tau)
        summary = {}
        for model, (res, ks) in diag.items():
            write_rows(d / f"residuals_{model}.csv", ("residual",), ([r] for r in res))
            summary[model] = {
                "ks_statistic": ks.statistic,
                "pvalue": ks.pvalue,
                "critical_value_1pct": ks.critical_value,
                "n": ks.n,
                "rejects": ks.rejects,
            }
            print(f"tau={tau:g} {model}: KS {ks.statistic:.4f} (1% critical {ks.critical_value:.4f}), p={ks.pvalue:.3g}")
        write_json(d / "ks.json", summary)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "reserve": cmd_reserve,
    "triangle": cmd_triangle,
    "compare": cmd_compare,
    "residuals": cmd_residuals,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ipwreserve",
        description="Inverse-probability-weighted claims reserving.",
        epilog="Any config entry can be overridden with --key value.",
    )
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--log-level", default="WARNING")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(message)s")
    cfg: dict = {}
    try:
        cfg = load_config(args.command, args.config, parse_overrides(rest))
        return COMMANDS[args.command](cfg)
    except FitError as exc:
        print(f"error: fit did not converge: {exc}", file=sys.stderr)
        out = Path(cfg.get("output", "."))
        out.mkdir(parents=True, exist_ok=True)
        model = exc.model
        write_json(out / "fit_error.json", {
            "message": str(exc),
            "model": None if model is None else model.to_dict(),
        })
        return EXIT_FIT
    except (DataError, ValueError, FileNotFoundError, KeyError, TypeError) as exc:
        msg = str(exc)
        if isinstance(exc, FileNotFoundError) and "missing file" not in msg:
            msg = f"missing file: {exc.filename}"
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_DATA

if __name__ == "__main__":
    sys.exit(main())
