"""Data ingestion: CSV loaders, news-to-trading-day alignment, the merged
price/sentiment panel, chronological splits, and a synthetic data generator
for tests and demos.

File formats (UTF-8, comma-separated, header required, dot decimals):
    prices:   date,ticker,open,high,low,close,volume
    news:     timestamp,ticker,sentiment,relevance
    sectors:  ticker,sector
    market:   date,value
    riskfree: date,value      (annualized decimal rates)
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)

TRADING_DAYS_PER_YEAR = 252


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriceBar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    volume: float

    def validate(self, context: str = "") -> None:
        where = f" ({context})" if context else ""
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise ValidationError(f"non-positive price{where}")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise ValidationError(f"OHLC bounds violated: low/high do not bracket open/close{where}")
        if self.volume < 0:
            raise ValidationError(f"negative volume{where}")


@dataclass(frozen=True)
class NewsRecord:
    timestamp: dt.datetime
    ticker: str
    sentiment: float
    relevance: float


@dataclass
class MergedPanel:
    """Dense (day x ticker) grid of prices plus daily news aggregates."""

    calendar: list[dt.date]
    tickers: list[str]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    news_count: np.ndarray
    avg_sentiment: np.ndarray
    # per (day, ticker): array of that day's article sentiment scores
    news_scores: list[list[np.ndarray]]
    sectors: dict[str, str]

    @property
    def n_days(self) -> int:
        return len(self.calendar)

    @property
    def n_tickers(self) -> int:
        return len(self.tickers)

    def log_returns(self) -> np.ndarray:
        """(n_days, n_tickers); row 0 is NaN."""
        out = np.full_like(self.close, np.nan)
        out[1:] = np.log(self.close[1:] / self.close[:-1])
        return out

    def simple_returns(self) -> np.ndarray:
        """(n_days, n_tickers); row 0 is NaN."""
        out = np.full_like(self.close, np.nan)
        out[1:] = self.close[1:] / self.close[:-1] - 1.0
        return out

    def validate(self) -> None:
        if self.n_tickers < 2:
            raise ValidationError("panel needs at least 2 tickers")
        if any(b >= a for a, b in zip(self.calendar[1:], self.calendar[:-1])):
            raise ValidationError("panel calendar is not strictly increasing")
        for t in self.tickers:
            if t not in self.sectors:
                raise ValidationError(f"ticker {t} missing from sector map")


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac_of_train: float = 0.20

    def validate(self) -> None:
        for name, f in (("train_frac", self.train_frac), ("val_frac_of_train", self.val_frac_of_train)):
            if not 0.0 < f < 1.0:
                raise ValidationError(f"{name}={f} outside (0, 1)")


@dataclass(frozen=True)
class SplitRanges:
    """Contiguous chronological day-index ranges covering the calendar exactly."""

    train: range
    val: range
    test: range

    def boundaries(self, calendar: list[dt.date]) -> dict[str, tuple[str, str]]:
        def span(r: range) -> tuple[str, str]:
            return calendar[r.start].isoformat(), calendar[r.stop - 1].isoformat()

        return {"train": span(self.train), "val": span(self.val), "test": span(self.test)}


# ---------------------------------------------------------------------------
# CSV loaders
# ---------------------------------------------------------------------------

def _open_rows(path, expected_header: list[str]):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: no rows") from None
        if [h.strip() for h in header] != expected_header:
            raise ValidationError(f"{path}: expected header {','.join(expected_header)!r}, got {','.join(header)!r}")
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=2) if row]
    if not rows:
        raise ValidationError(f"{path}: no rows")
    return rows


def _parse_float(value: str, path, lineno: int, what: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ValidationError(f"{path}:{lineno}: malformed {what} {value!r}") from None


def _parse_date(value: str, path, lineno: int) -> dt.date:
    try:
        return dt.date.fromisoformat(value.strip())
    except ValueError:
        raise ValidationError(f"{path}:{lineno}: malformed date {value!r}") from None


def load_price_csv(path) -> dict[str, list[PriceBar]]:
    """Per-ticker price series, sorted by date, de-duplicated, validated."""
    series: dict[str, dict[dt.date, tuple[PriceBar, int]]] = {}
    for lineno, row in _open_rows(path, ["date", "ticker", "open", "high", "low", "close", "volume"]):
        if len(row) != 7:
            raise ValidationError(f"{path}:{lineno}: expected 7 fields, got {len(row)}")
        date = _parse_date(row[0], path, lineno)
        ticker = row[1].strip()
        if not ticker:
            raise ValidationError(f"{path}:{lineno}: empty ticker")
        o, h, lo, c, v = (_parse_float(row[k], path, lineno, name)
                          for k, name in zip(range(2, 7), ("open", "high", "low", "close", "volume")))
        bar = PriceBar(date, o, h, lo, c, v)
        try:
            bar.validate()
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        existing = series.setdefault(ticker, {}).get(date)
        if existing is not None:
            if existing[0] != bar:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate ({ticker},{date}) conflicts with line {existing[1]}")
            continue  # identical duplicate: drop silently
        series[ticker][date] = (bar, lineno)
    return {t: [bar for _, (bar, _) in sorted(by_date.items())] for t, by_date in sorted(series.items())}


def load_news_csv(path, known_tickers: set[str] | None = None) -> list[NewsRecord]:
    """News records sorted by timestamp. Out-of-range sentiment is an error;
    tickers outside `known_tickers` are kept but counted in a warning."""
    records: list[NewsRecord] = []
    unknown = 0
    path_p = Path(path)
    if path_p.exists() and path_p.stat().st_size > 0:
        with path_p.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                return []
            if [h.strip() for h in header] != ["timestamp", "ticker", "sentiment", "relevance"]:
                raise ValidationError(f"{path}: expected header 'timestamp,ticker,sentiment,relevance'")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 4:
                    raise ValidationError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
                try:
                    ts = dt.datetime.fromisoformat(row[0].strip())
                except ValueError:
                    raise ValidationError(f"{path}:{lineno}: malformed timestamp {row[0]!r}") from None
                ticker = row[1].strip()
                sentiment = _parse_float(row[2], path, lineno, "sentiment")
                relevance = _parse_float(row[3], path, lineno, "relevance")
                if not -1.0 <= sentiment <= 1.0:
                    raise ValidationError(f"{path}:{lineno}: sentiment {sentiment} outside [-1, 1]")
                if not 0.0 <= relevance <= 1.0:
                    raise ValidationError(f"{path}:{lineno}: relevance {relevance} outside [0, 1]")
                if known_tickers is not None and ticker not in known_tickers:
                    unknown += 1
                records.append(NewsRecord(ts, ticker, sentiment, relevance))
    else:
        raise ValidationError(f"file not found or empty: {path}")
    if unknown:
        log.warning("%s: %d news records reference tickers outside the price universe", path, unknown)
    records.sort(key=lambda r: (r.timestamp, r.ticker))
    return records


def load_sector_csv(path) -> dict[str, str]:
    sectors: dict[str, str] = {}
    for lineno, row in _open_rows(path, ["ticker", "sector"]):
        if len(row) != 2:
            raise ValidationError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
        ticker, sector = row[0].strip(), row[1].strip()
        if ticker in sectors and sectors[ticker] != sector:
            raise ValidationError(f"{path}:{lineno}: ticker {ticker} mapped to two sectors")
        sectors[ticker] = sector
    return sectors


def _load_value_series(path) -> tuple[list[dt.date], np.ndarray]:
    dates, values = [], []
    for lineno, row in _open_rows(path, ["date", "value"]):
        if len(row) != 2:
            raise ValidationError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
        dates.append(_parse_date(row[0], path, lineno))
        values.append(_parse_float(row[1], path, lineno, "value"))
    order = np.argsort(dates)
    return [dates[i] for i in order], np.asarray(values, dtype=np.float64)[order]


def load_market_series(path) -> tuple[list[dt.date], np.ndarray]:
    return _load_value_series(path)


def load_riskfree_series(path) -> tuple[list[dt.date], np.ndarray]:
    return _load_value_series(path)


def align_series_to_calendar(dates: list[dt.date], values: np.ndarray,
                             calendar: list[dt.date], name: str = "series") -> np.ndarray:
    """Forward-fill a date-indexed series onto a trading calendar."""
    uncovered = [d for d in calendar if d < dates[0]]
    if uncovered:
        head = ", ".join(d.isoformat() for d in uncovered[:5])
        raise ValidationError(f"{name} does not cover {len(uncovered)} calendar dates (first: {head})")
    out = np.empty(len(calendar), dtype=np.float64)
    j = 0
    for i, day in enumerate(calendar):
        while j + 1 < len(dates) and dates[j + 1] <= day:
            j += 1
        out[i] = values[j]
    return out


# ---------------------------------------------------------------------------
# alignment and panel assembly
# ---------------------------------------------------------------------------

def align_news_to_trading_days(records: list[NewsRecord], calendar: list[dt.date],
                               ) -> tuple[dict[tuple[str, dt.date], list[NewsRecord]], int]:
    """Assign each record to the first calendar day >= its date.

    Records after the final calendar day are dropped; the drop count is
    returned alongside the per-(ticker, day) lists.
    """
    if not calendar:
        raise ValidationError("empty calendar")
    cal = np.array(calendar)
    assigned: dict[tuple[str, dt.date], list[NewsRecord]] = {}
    dropped = 0
    for rec in records:
        day = rec.timestamp.date()
        idx = int(np.searchsorted(cal, day, side="left"))
        if idx >= len(calendar):
            dropped += 1
            continue
        assigned.setdefault((rec.ticker, calendar[idx]), []).append(rec)
    if dropped:
        log.warning("dropped %d news records dated after the final trading day", dropped)
    return assigned, dropped


def build_panel(prices: dict[str, list[PriceBar]],
                aligned_news: dict[tuple[str, dt.date], list[NewsRecord]],
                sector_map: dict[str, str]) -> MergedPanel:
    """Merge per-ticker bars and aligned news into a dense panel on the
    intersection calendar. Newsless days get count 0 and sentiment 0."""
    if len(prices) < 2:
        raise ValidationError("panel needs at least 2 tickers")
    tickers = sorted(prices)
    for t in tickers:
        if t not in sector_map:
            raise ValidationError(f"ticker {t} missing from sector map")

    calendars = [set(b.date for b in prices[t]) for t in tickers]
    common = set.intersection(*calendars)
    union = set.union(*calendars)
    if not common:
        raise ValidationError("tickers share no common trading days")
    if common != union:
        log.warning("tickers disagree on %d trading days; using the %d-day intersection",
                    len(union) - len(common), len(common))
    calendar = sorted(common)
    day_index = {d: i for i, d in enumerate(calendar)}

    n_days, n = len(calendar), len(tickers)
    fields = {name: np.empty((n_days, n)) for name in ("open", "high", "low", "close", "volume")}
    for j, t in enumerate(tickers):
        for bar in prices[t]:
            i = day_index.get(bar.date)
            if i is None:
                continue
            fields["open"][i, j] = bar.open
            fields["high"][i, j] = bar.high
            fields["low"][i, j] = bar.low
            fields["close"][i, j] = bar.close
            fields["volume"][i, j] = bar.volume

    news_count = np.zeros((n_days, n))
    avg_sentiment = np.zeros((n_days, n))
    news_scores: list[list[np.ndarray]] = [[np.empty(0)] * n for _ in range(n_days)]
    empty = np.empty(0)
    for i in range(n_days):
        row = news_scores[i]
        for j in range(n):
            recs = aligned_news.get((tickers[j], calendar[i]))
            if recs:
                scores = np.array([r.sentiment for r in recs], dtype=np.float64)
                row[j] = scores
                news_count[i, j] = len(scores)
                avg_sentiment[i, j] = scores.mean()
            else:
                row[j] = empty

    panel = MergedPanel(calendar=calendar, tickers=tickers, sectors=dict(sector_map),
                        news_count=news_count, avg_sentiment=avg_sentiment,
                        news_scores=news_scores, **fields)
    panel.validate()
    return panel


def split_panel(panel: MergedPanel, spec: SplitSpec = SplitSpec(), lookback: int = 0) -> SplitRanges:
    """Chronological train/val/test split: the last (1 - train_frac) of days is
    the test block and the last val_frac of the training block is validation.

    When the caller supplies the model lookback, each split must hold at
    least lookback + 2 days.
    """
    spec.validate()
    n = panel.n_days
    n_block = int(n * spec.train_frac)
    n_val = int(n_block * spec.val_frac_of_train)
    n_train = n_block - n_val
    ranges = SplitRanges(train=range(0, n_train), val=range(n_train, n_block), test=range(n_block, n))
    minimum = max(lookback + 2, 2)
    for name, r in (("train", ranges.train), ("val", ranges.val), ("test", ranges.test)):
        if len(r) < minimum:
            raise ValidationError(
                f"panel too short: {name} split has {len(r)} days, needs >= {minimum}")
    return ranges


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass
class RegimeSpec:
    """Controls for the synthetic market generator.

    drift/vol are annualized; drift applies to log returns. correlation is the
    common pairwise correlation of daily shocks. sentiment_signal in [0, 1]
    plants news sentiment correlated with the ticker's next-day return.
    """

    n_tickers: int = 9
    n_days: int = 1000
    start_date: dt.date = dt.date(2021, 1, 4)
    drift: float | list[float] = 0.05
    vol: float | list[float] = 0.20
    correlation: float = 0.3
    news_rate: float = 1.5
    sentiment_signal: float = 0.0
    rf_rate: float = 0.03
    start_price: float = 100.0

    def validate(self) -> None:
        if self.n_tickers < 2:
            raise ValidationError("generate_synthetic requires n_tickers >= 2")
        if self.n_days < 100:
            raise ValidationError("generate_synthetic requires n_days >= 100")
        if np.any(np.asarray(self.vol, dtype=float) <= 0):
            raise ValidationError("vol must be positive")
        if not -1.0 / (self.n_tickers - 1) <= self.correlation <= 1.0:
            raise ValidationError(f"pairwise correlation {self.correlation} not positive semi-definite "
                                  f"for {self.n_tickers} assets")
        if not 0.0 <= self.sentiment_signal <= 1.0:
            raise ValidationError("sentiment_signal must be in [0, 1]")
        if self.news_rate < 0:
            raise ValidationError("news_rate must be non-negative")


GICS_SECTORS = ("Information Technology", "Health Care", "Consumer Discretionary",
                "Industrials", "Consumer Staples", "Energy")


@dataclass
class SyntheticData:
    calendar: list[dt.date]
    tickers: list[str]
    close: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    volume: np.ndarray
    log_returns: np.ndarray
    news: list[NewsRecord]
    sectors: dict[str, str]
    market_dates: list[dt.date]
    market_values: np.ndarray
    rf_values: np.ndarray


def _weekday_calendar(start: dt.date, n_days: int) -> list[dt.date]:
    days: list[dt.date] = []
    d = start
    while len(days) < n_days:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def _corr_factor(n: int, rho: float) -> np.ndarray:
    """Symmetric square root of the equicorrelation matrix (handles rho = 1)."""
    corr = np.full((n, n), rho)
    np.fill_diagonal(corr, 1.0)
    vals, vecs = np.linalg.eigh(corr)
    return vecs @ np.diag(np.sqrt(np.maximum(vals, 0.0))) @ vecs.T


def synthesize(regime: RegimeSpec, seed: int) -> SyntheticData:
    """Deterministic synthetic market: correlated geometric random walks,
    Poisson news flow with optional planted sentiment signal, an equal-weight
    market index, and a flat risk-free series."""
    regime.validate()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 20210104]))
    n, n_days = regime.n_tickers, regime.n_days
    tickers = [f"SYN{i:02d}" for i in range(n)]
    sectors = {t: GICS_SECTORS[i % len(GICS_SECTORS)] for i, t in enumerate(tickers)}
    calendar = _weekday_calendar(regime.start_date, n_days)

    drift = np.broadcast_to(np.asarray(regime.drift, dtype=float), (n,)).copy()
    vol = np.broadcast_to(np.asarray(regime.vol, dtype=float), (n,)).copy()
    daily_mu = drift / TRADING_DAYS_PER_YEAR
    daily_sigma = vol / np.sqrt(TRADING_DAYS_PER_YEAR)

    factor = _corr_factor(n, regime.correlation)
    shocks = rng.standard_normal((n_days, n)) @ factor.T
    log_rets = np.empty((n_days, n))
    log_rets[0] = 0.0
    log_rets[1:] = daily_mu + daily_sigma * shocks[1:]

    close = regime.start_price * np.exp(np.cumsum(log_rets, axis=0))
    open_ = np.empty_like(close)
    open_[0] = regime.start_price
    open_[1:] = close[:-1]
    spread = np.abs(rng.standard_normal((n_days, n))) * 0.003
    high = np.maximum(open_, close) * (1.0 + spread)
    low = np.minimum(open_, close) * (1.0 - spread)
    volume = np.round(np.exp(rng.normal(14.0, 0.4, size=(n_days, n))))

    # news over all calendar days (weekends included) so alignment is exercised
    news: list[NewsRecord] = []
    span_days = (calendar[-1] - calendar[0]).days + 1
    all_days = [calendar[0] + dt.timedelta(days=k) for k in range(span_days)]
    cal_arr = np.array(calendar)
    rho_s = regime.sentiment_signal
    for day in all_days:
        counts = rng.poisson(regime.news_rate, size=n)
        for j in range(n):
            for _ in range(int(counts[j])):
                hour = int(rng.integers(0, 24))
                minute = int(rng.integers(0, 60))
                ts = dt.datetime.combine(day, dt.time(hour, minute))
                noise = rng.standard_normal()
                idx = int(np.searchsorted(cal_arr, day, side="left"))
                target_idx = idx + 1  # return the day after the alignment day
                if rho_s > 0 and target_idx < n_days:
                    z = (log_rets[target_idx, j] - daily_mu[j]) / daily_sigma[j]
                    raw = rho_s * z + np.sqrt(1.0 - rho_s ** 2) * noise
                else:
                    raw = noise
                sentiment = float(np.clip(0.5 * raw, -1.0, 1.0))
                relevance = float(rng.uniform(0.3, 1.0))
                news.append(NewsRecord(ts, tickers[j], sentiment, relevance))

    basket = close / close[0]
    market_values = 100.0 * basket.mean(axis=1)
    rf_values = np.full(n_days, regime.rf_rate)
    return SyntheticData(calendar=calendar, tickers=tickers, close=close, open=open_,
                         high=high, low=low, volume=volume, log_returns=log_rets,
                         news=news, sectors=sectors, market_dates=list(calendar),
                         market_values=market_values, rf_values=rf_values)


def write_synthetic(data: SyntheticData, out_dir) -> dict[str, Path]:
    """Write the five CSVs; returns the file manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.csv" for name in ("prices", "news", "sectors", "market", "riskfree")}

    with paths["prices"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "ticker", "open", "high", "low", "close", "volume"])
        for i, day in enumerate(data.calendar):
            for j, t in enumerate(data.tickers):
                w.writerow([day.isoformat(), t,
                            f"{data.open[i, j]:.6f}", f"{data.high[i, j]:.6f}",
                            f"{data.low[i, j]:.6f}", f"{data.close[i, j]:.6f}",
                            f"{int(data.volume[i, j])}"])

    with paths["news"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "ticker", "sentiment", "relevance"])
        for rec in data.news:
            w.writerow([rec.timestamp.isoformat(sep="T", timespec="seconds"), rec.ticker,
                        f"{rec.sentiment:.6f}", f"{rec.relevance:.6f}"])

    with paths["sectors"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "sector"])
        for t in data.tickers:
            w.writerow([t, data.sectors[t]])

    for name, values in (("market", data.market_values), ("riskfree", data.rf_values)):
        with paths[name].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "value"])
            for day, v in zip(data.market_dates, values):
                w.writerow([day.isoformat(), f"{v:.6f}"])

    return paths


def generate_synthetic(n_tickers: int, n_days: int, seed: int,
                       regime: RegimeSpec | None = None, out_dir=".") -> dict[str, Path]:
    """Generate and write a synthetic dataset; pure function of (regime, seed)."""
    regime = regime or RegimeSpec()
    regime.n_tickers = n_tickers
    regime.n_days = n_days
    return write_synthetic(synthesize(regime, seed), out_dir)


def synthetic_panel(regime: RegimeSpec, seed: int) -> tuple[MergedPanel, np.ndarray, np.ndarray]:
    """In-memory path: synthesize and assemble (panel, market, riskfree)
    without touching disk. Used by tests and demos."""
    data = synthesize(regime, seed)
    prices = {
        t: [PriceBar(data.calendar[i], data.open[i, j], data.high[i, j],
                     data.low[i, j], data.close[i, j], data.volume[i, j])
            for i in range(len(data.calendar))]
        for j, t in enumerate(data.tickers)
    }
    aligned, _ = align_news_to_trading_days(data.news, data.calendar)
    panel = build_panel(prices, aligned, data.sectors)
    market = align_series_to_calendar(data.market_dates, data.market_values, panel.calendar, "market")
    rf = align_series_to_calendar(data.market_dates, data.rf_values, panel.calendar, "riskfree")
    return panel, market, rf


def load_panel(prices_path, news_path, sectors_path) -> MergedPanel:
    """File path: load the three CSVs and assemble the merged panel."""
    prices = load_price_csv(prices_path)
    sectors = load_sector_csv(sectors_path)
    news = load_news_csv(news_path, known_tickers=set(prices))
    calendar = sorted(set.intersection(*(set(b.date for b in bars) for bars in prices.values())))
    if not calendar:
        raise ValidationError("tickers share no common trading days")
    aligned, _ = align_news_to_trading_days(news, calendar)
    return build_panel(prices, aligned, sectors)
