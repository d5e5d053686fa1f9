"""Asset graphs for the attention layers.

Two kinds: a static signed graph from full-training-period log-return
correlations, and a dynamic binary graph rebuilt every five trading days from
sector identity and trailing 5-day return/sentiment correlations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)

DYNAMIC_WINDOW = 5
CORR_THRESHOLD = 0.5
REFRESH_PERIOD = 5


@dataclass(frozen=True)
class AssetGraph:
    """Symmetric adjacency with unit diagonal (self-loops always present).

    static: signed correlation weights in [-1, 1] over a complete graph.
    dynamic: binary edges; `as_of` is the build day index.
    """

    tickers: tuple[str, ...]
    adjacency: np.ndarray
    kind: str  # "static" | "dynamic"
    as_of: int | None = None

    def __post_init__(self):
        n = len(self.tickers)
        adj = self.adjacency
        if adj.shape != (n, n):
            raise ValidationError(f"adjacency shape {adj.shape} != ({n}, {n})")
        if not np.allclose(adj, adj.T, atol=1e-12):
            raise ValidationError("adjacency not symmetric")
        if not np.allclose(np.diag(adj), 1.0, atol=0):
            raise ValidationError("adjacency diagonal must be 1 (self-loops)")
        if self.kind == "static" and (adj.min() < -1.0 - 1e-12 or adj.max() > 1.0 + 1e-12):
            raise ValidationError("static edge weights must lie in [-1, 1]")

    @property
    def mask(self) -> np.ndarray:
        """Boolean attention mask. Static graphs are complete; dynamic graphs
        connect only where an edge rule fired."""
        if self.kind == "static":
            return np.ones_like(self.adjacency, dtype=bool)
        return self.adjacency > 0


def static_graph(log_returns: np.ndarray, tickers: list[str]) -> AssetGraph:
    """Pearson correlation matrix of training-period daily log returns."""
    lr = np.asarray(log_returns, dtype=np.float64)
    lr = lr[np.all(np.isfinite(lr), axis=1)]
    if lr.shape[0] < 30:
        raise ValidationError(f"static graph needs >= 30 return observations, got {lr.shape[0]}")
    centered = lr - lr.mean(axis=0)
    norms = np.sqrt((centered ** 2).sum(axis=0))
    flat = np.where(norms <= 0)[0]
    if flat.size:
        raise ValidationError(f"zero return variance for tickers: {[tickers[i] for i in flat]}")
    corr = (centered.T @ centered) / np.outer(norms, norms)
    corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return AssetGraph(tickers=tuple(tickers), adjacency=corr, kind="static")


def rolling_correlation(a: np.ndarray, b: np.ndarray, window: int = DYNAMIC_WINDOW,
                        end: int | None = None) -> float:
    """Pearson correlation over the trailing `window` observations ending at
    `end` (inclusive; defaults to the last). Zero variance on either side
    yields 0 by convention."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if end is None:
        end = a.shape[0] - 1
    start = end - window + 1
    if start < 0 or end >= a.shape[0] or end >= b.shape[0]:
        raise ValidationError(f"need {window} observations ending at index {end}")
    wa, wb = a[start:end + 1], b[start:end + 1]
    if not (np.all(np.isfinite(wa)) and np.all(np.isfinite(wb))):
        raise ValidationError("correlation window contains non-finite values")
    da, db = wa - wa.mean(), wb - wb.mean()
    va, vb = (da ** 2).sum(), (db ** 2).sum()
    if va <= 0.0 or vb <= 0.0:
        return 0.0
    return float((da * db).sum() / np.sqrt(va * vb))


def dynamic_graph(t: int, tickers: list[str], sectors: dict[str, str],
                  returns: np.ndarray, sentiment: np.ndarray,
                  threshold: float = CORR_THRESHOLD, window: int = DYNAMIC_WINDOW) -> AssetGraph:
    """Binary graph at day t: edge iff same sector, |trailing return corr| >
    threshold (strict), or |trailing sentiment corr| > threshold.

    Falls back to sector-only edges (with a warning) when the trailing window
    is not available.
    """
    n = len(tickers)
    adj = np.eye(n)
    start = t - window + 1
    window_ok = (start >= 0 and t < returns.shape[0]
                 and np.all(np.isfinite(returns[start:t + 1]))
                 and np.all(np.isfinite(sentiment[start:t + 1])))
    if not window_ok:
        log.warning("day %d lacks a full %d-day window; dynamic graph uses sector edges only", t, window)
    for i in range(n):
        for j in range(i + 1, n):
            edge = sectors[tickers[i]] == sectors[tickers[j]]
            if not edge and window_ok:
                if abs(rolling_correlation(returns[:, i], returns[:, j], window, t)) > threshold:
                    edge = True
                elif abs(rolling_correlation(sentiment[:, i], sentiment[:, j], window, t)) > threshold:
                    edge = True
            if edge:
                adj[i, j] = adj[j, i] = 1.0
    return AssetGraph(tickers=tuple(tickers), adjacency=adj, kind="dynamic", as_of=t)


def refresh_schedule(day_indices, period: int = REFRESH_PERIOD) -> dict[int, int]:
    """Map each day of an evaluation range to its graph-build day: builds on
    days 0, period, 2*period, ... of the range, reused until the next build."""
    days = list(day_indices)
    if not days:
        raise ValidationError("empty evaluation range")
    return {d: days[(k // period) * period] for k, d in enumerate(days)}


def write_graph_csv(graph: AssetGraph, path) -> None:
    """Adjacency dump with ticker headers, for inspection."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", *graph.tickers])
        for i, t in enumerate(graph.tickers):
            w.writerow([t, *(f"{v:.12g}" for v in graph.adjacency[i])])
