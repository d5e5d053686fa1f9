"""Backtesting: weight matrices -> portfolio return series -> performance
metrics, benchmark-relative curves, and percentage-difference tables.

Causality convention throughout: weights decided on day t-1 earn day t's
returns, so a strategy never sees the return of its own decision day.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TRADING_DAYS_PER_YEAR
from .errors import NumericsError, ValidationError

log = logging.getLogger(__name__)

METRIC_NAMES = ("total_return", "annualized_return", "volatility", "sharpe",
                "var95", "max_drawdown")


def portfolio_returns(weights: np.ndarray, asset_returns: np.ndarray) -> np.ndarray:
    """Daily portfolio returns from date-aligned weights and asset returns.

    Row k of both inputs refers to the same date; output[k-1] = w[k-1] . r[k],
    so the result is one row shorter than the inputs.
    """
    weights = np.asarray(weights, dtype=np.float64)
    asset_returns = np.asarray(asset_returns, dtype=np.float64)
    if weights.shape != asset_returns.shape:
        raise ValidationError(f"misaligned shapes: weights {weights.shape} vs "
                              f"returns {asset_returns.shape}")
    if weights.shape[0] < 2:
        raise ValidationError("need at least 2 aligned dates")
    sums = weights.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ValidationError("weight rows must sum to 1")
    return np.sum(weights[:-1] * asset_returns[1:], axis=1)


def equity_curve(returns: np.ndarray) -> np.ndarray:
    """Compounded equity path starting at 1.0 (length = len(returns) + 1)."""
    return np.concatenate([[1.0], np.cumprod(1.0 + np.asarray(returns, dtype=np.float64))])


def max_drawdown(equity: np.ndarray) -> float:
    """Largest peak-to-trough decline: min over t of equity[t]/max_{s<=t} - 1."""
    equity = np.asarray(equity, dtype=np.float64)
    running_peak = np.maximum.accumulate(equity)
    return float((equity / running_peak - 1.0).min())


def value_at_risk(returns: np.ndarray, level: float = 0.05) -> float:
    """Historical VaR: the empirical `level` quantile of daily returns
    (reported as a negative number for losses)."""
    return float(np.quantile(np.asarray(returns, dtype=np.float64), level))


@dataclass(frozen=True)
class Metrics:
    total_return: float
    annualized_return: float
    volatility: float
    sharpe: float
    var95: float
    max_drawdown: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def compute_metrics(returns: np.ndarray, rf_daily: np.ndarray | None = None) -> Metrics:
    """The six standard performance numbers from a daily return series.

    Sharpe uses zero risk-free unless a daily rf series is supplied.
    Annualized return is geometric: (1 + total)^(252/n) - 1.
    """
    returns = np.asarray(returns, dtype=np.float64)
    n_d = returns.shape[0]
    if n_d < 2:
        raise ValidationError("metrics need at least 2 daily returns")
    if not np.all(np.isfinite(returns)):
        raise ValidationError("non-finite daily returns")
    total = float(np.prod(1.0 + returns) - 1.0)
    annualized = float((1.0 + total) ** (TRADING_DAYS_PER_YEAR / n_d) - 1.0)
    std = float(returns.std(ddof=1))
    if std <= 0.0:
        raise NumericsError("zero return standard deviation: Sharpe undefined")
    excess = returns if rf_daily is None else returns - np.asarray(rf_daily, dtype=np.float64)
    ex_std = float(excess.std(ddof=1))
    if ex_std <= 0.0:
        raise NumericsError("zero excess-return standard deviation: Sharpe undefined")
    sharpe = float(excess.mean() / ex_std * np.sqrt(TRADING_DAYS_PER_YEAR))
    return Metrics(total_return=total,
                   annualized_return=annualized,
                   volatility=std * float(np.sqrt(TRADING_DAYS_PER_YEAR)),
                   sharpe=sharpe,
                   var95=value_at_risk(returns),
                   max_drawdown=max_drawdown(equity_curve(returns)))


@dataclass
class BacktestReport:
    """One strategy's backtest: weights, realized daily returns, equity path,
    and summary metrics over a date range."""

    strategy: str
    dates: list[str]           # return dates (ISO), length = len(returns)
    weight_dates: list[str]    # decision dates, length = len(returns) + 1
    weights: np.ndarray
    returns: np.ndarray
    equity: np.ndarray         # length = len(returns) + 1, starts at 1.0
    metrics: Metrics

    def to_json_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "date_range": {"start": self.dates[0], "end": self.dates[-1]},
            "n_days": len(self.dates),
            "metrics": self.metrics.as_dict(),
        }


def run_backtest(strategy: str, dates: list[str], weights: np.ndarray,
                 asset_returns: np.ndarray, rf_daily: np.ndarray | None = None) -> BacktestReport:
    """Assemble a report from date-aligned weights and asset returns
    (dates[k] labels row k of both)."""
    rets = portfolio_returns(weights, asset_returns)
    rf = None if rf_daily is None else np.asarray(rf_daily)[1:]
    metrics = compute_metrics(rets, rf)
    return BacktestReport(strategy=strategy, dates=list(dates[1:]), weight_dates=list(dates),
                          weights=np.asarray(weights, dtype=np.float64),
                          returns=rets, equity=equity_curve(rets), metrics=metrics)


def excess_curve(strategy: BacktestReport, benchmark: BacktestReport) -> np.ndarray:
    """Daily difference of the two equity paths (both start at 1.0)."""
    if strategy.dates != benchmark.dates:
        raise ValidationError("reports cover different date ranges")
    return strategy.equity - benchmark.equity


def percentage_difference(model: Metrics, benchmark: Metrics) -> dict[str, float | None]:
    """(model - benchmark) / |benchmark| per metric, in percent; None marks a
    zero-benchmark entry."""
    out: dict[str, float | None] = {}
    for name in METRIC_NAMES:
        m, b = getattr(model, name), getattr(benchmark, name)
        out[name] = None if b == 0.0 else (m - b) / abs(b) * 100.0
    return out


# ---------------------------------------------------------------------------
# file output (plot-ready CSV/JSON)
# ---------------------------------------------------------------------------

def write_report_json(report: BacktestReport, path, config_echo: dict | None = None) -> None:
    payload = report.to_json_dict()
    if config_echo is not None:
        payload["config"] = config_echo
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_report_metrics(path) -> Metrics:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return Metrics(**{name: payload["metrics"][name] for name in METRIC_NAMES})


def write_weights_csv(dates: list[str], tickers, weights: np.ndarray, path) -> None:
    """`date,<ticker...>` rows at 12 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *tickers])
        for day, row in zip(dates, weights):
            w.writerow([day, *(f"{v:.12g}" for v in row)])


def read_weights_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        tickers = header[1:]
        dates, rows = [], []
        for row in reader:
            dates.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return dates, tickers, np.array(rows)


def write_series_csv(dates: list[str], values: np.ndarray, path, column: str = "value") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", column])
        for day, v in zip(dates, values):
            w.writerow([day, f"{v:.12g}"])


def write_comparison_csv(reports: list[BacktestReport], path) -> None:
    """Metric rows x strategy columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", *(r.strategy for r in reports)])
        for name in METRIC_NAMES:
            w.writerow([name, *(f"{getattr(r.metrics, name):.12g}" for r in reports)])


def write_pct_diff_csv(model: Metrics, benchmark: Metrics, benchmark_name: str, path) -> None:
    diff = percentage_difference(model, benchmark)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", f"pct_diff_vs_{benchmark_name}"])
        for name in METRIC_NAMES:
            value = diff[name]
            w.writerow([name, "undefined" if value is None else f"{value:.12g}"])
