"""Feature engineering: price indicators, daily sentiment aggregates,
per-ticker standardization fit on the training split, PCA reduction for the
v5 variant, and causal lookback windows.

All per-day values at index t use data through t only; indicator warmup rows
are NaN and excluded from every fit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import MergedPanel, TRADING_DAYS_PER_YEAR
from .errors import ValidationError

log = logging.getLogger(__name__)

LOOKBACK = 30
PCA_COMPONENTS = 6

ANNUALIZED_HORIZONS = {"ann_ret_1w": 5, "ann_ret_2w": 10, "ann_ret_1m": 21}

# canonical ordering; versions select prefixes of this list
ALL_FEATURES = ("close", "volume", "log_return",
                "ann_ret_1w", "ann_ret_2w", "ann_ret_1m", "vol_5d", "macd",
                "sentiment_variance", "weighted_sentiment",
                "news_count", "avg_sentiment")

VERSIONS = ("v1", "v2", "v3", "v4", "v5")

# days of history each feature needs before it is defined
_FEATURE_WARMUP = {"close": 0, "volume": 0, "log_return": 1,
                   "ann_ret_1w": 5, "ann_ret_2w": 10, "ann_ret_1m": 21,
                   "vol_5d": 5, "macd": 0,
                   "sentiment_variance": 0, "weighted_sentiment": 0,
                   "news_count": 0, "avg_sentiment": 0}


def feature_set(version: str) -> list[str]:
    """Ordered feature names for a model version (v5 list is pre-PCA)."""
    if version in ("v1",):
        return list(ALL_FEATURES[:3])
    if version == "v2":
        return list(ALL_FEATURES[:8])
    if version in ("v3", "v4"):
        return list(ALL_FEATURES[:10])
    if version == "v5":
        return list(ALL_FEATURES)
    raise ValidationError(f"unknown model version {version!r}; expected one of {VERSIONS}")


def uses_dynamic_graph(version: str) -> bool:
    if version not in VERSIONS:
        raise ValidationError(f"unknown model version {version!r}")
    return version in ("v4", "v5")


# ---------------------------------------------------------------------------
# price indicators (columns = tickers; NaN before warmup)
# ---------------------------------------------------------------------------

def log_return(prices: np.ndarray) -> np.ndarray:
    prices = np.asarray(prices, dtype=np.float64)
    if prices.shape[0] < 2:
        raise ValidationError("log_return needs at least 2 observations")
    if np.any(prices <= 0):
        raise ValidationError("log_return requires strictly positive prices")
    out = np.full_like(prices, np.nan)
    out[1:] = np.log(prices[1:] / prices[:-1])
    return out


def annualized_return(prices: np.ndarray, horizon_days: int) -> np.ndarray:
    """(P_t / P_{t-h} - 1) * 252 / h; NaN before h observations exist."""
    prices = np.asarray(prices, dtype=np.float64)
    if prices.shape[0] <= horizon_days:
        raise ValidationError(f"annualized_return needs more than {horizon_days} observations")
    out = np.full_like(prices, np.nan)
    out[horizon_days:] = (prices[horizon_days:] / prices[:-horizon_days] - 1.0) \
        * (TRADING_DAYS_PER_YEAR / horizon_days)
    return out


def rolling_volatility(log_returns: np.ndarray, window: int = 5) -> np.ndarray:
    """Trailing sample std (ddof=1) of log returns; NaN until `window` returns exist."""
    if window < 2:
        raise ValidationError("rolling_volatility window must be >= 2")
    lr = np.asarray(log_returns, dtype=np.float64)
    out = np.full_like(lr, np.nan)
    for t in range(lr.shape[0]):
        chunk = lr[t - window + 1:t + 1]
        if t - window + 1 >= 0 and np.all(np.isfinite(chunk)):
            out[t] = np.std(chunk, axis=0, ddof=1)
    return out


def ema(prices: np.ndarray, span: int) -> np.ndarray:
    """EMA_t = alpha * P_t + (1 - alpha) * EMA_{t-1}, alpha = 2/(span+1), EMA_0 = P_0."""
    prices = np.asarray(prices, dtype=np.float64)
    if prices.shape[0] < 1:
        raise ValidationError("ema needs at least 1 observation")
    alpha = 2.0 / (span + 1)
    out = np.empty_like(prices)
    out[0] = prices[0]
    for t in range(1, prices.shape[0]):
        out[t] = alpha * prices[t] + (1.0 - alpha) * out[t - 1]
    return out


def macd(prices: np.ndarray, short_span: int = 5, long_span: int = 21) -> np.ndarray:
    """Difference of 1-week and 1-month EMAs of close."""
    return ema(prices, short_span) - ema(prices, long_span)


# ---------------------------------------------------------------------------
# sentiment features
# ---------------------------------------------------------------------------

def sentiment_features(panel: MergedPanel) -> dict[str, np.ndarray]:
    """Daily sentiment aggregates per ticker.

    frequency: share of that day's in-universe articles about the ticker
    (0 when the day has none); variance: population variance of the day's
    article scores (0 for <= 1 article); weighted: frequency * mean sentiment.
    """
    counts = panel.news_count
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        frequency = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 0.0)
    variance = np.zeros_like(counts)
    for i in range(panel.n_days):
        for j in range(panel.n_tickers):
            scores = panel.news_scores[i][j]
            if scores.size > 1:
                variance[i, j] = np.var(scores)  # population divisor
    weighted = frequency * panel.avg_sentiment
    return {"news_count": counts.copy(), "news_frequency": frequency,
            "avg_sentiment": panel.avg_sentiment.copy(),
            "sentiment_variance": variance, "weighted_sentiment": weighted}


# ---------------------------------------------------------------------------
# raw feature matrix
# ---------------------------------------------------------------------------

def compute_feature_matrix(panel: MergedPanel, version: str) -> np.ndarray:
    """(n_days, n_tickers, F) raw feature values; NaN before each feature's warmup."""
    names = feature_set(version)
    lr = log_return(panel.close)
    sent = sentiment_features(panel)
    columns = {"close": panel.close, "volume": panel.volume, "log_return": lr}
    for name, h in ANNUALIZED_HORIZONS.items():
        if name in names:
            columns[name] = annualized_return(panel.close, h)
    if "vol_5d" in names:
        columns["vol_5d"] = rolling_volatility(lr, window=5)
    if "macd" in names:
        columns["macd"] = macd(panel.close)
    for name in ("sentiment_variance", "weighted_sentiment", "news_count", "avg_sentiment"):
        if name in names:
            columns[name] = sent[name]
    return np.stack([columns[name] for name in names], axis=2)


def feature_warmup(version: str) -> int:
    """First day index with every feature of the version defined."""
    return max(_FEATURE_WARMUP[name] for name in feature_set(version))


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------

@dataclass
class Standardizer:
    """Per (ticker, feature) mean/std fit on training rows only."""

    mean: np.ndarray  # (n_tickers, F)
    std: np.ndarray   # (n_tickers, F); 0 marks a constant training column

    def transform(self, values: np.ndarray) -> np.ndarray:
        safe = np.where(self.std > 0, self.std, 1.0)
        out = (values - self.mean[None, :, :]) / safe[None, :, :]
        return np.where(self.std[None, :, :] > 0, out, 0.0)


def fit_standardizer(values: np.ndarray, train_range: range) -> Standardizer:
    """Fit on the training rows, skipping NaN warmup entries. Features with
    zero training variance standardize to 0 (with a warning), not an error."""
    if len(train_range) == 0:
        raise ValidationError("empty training range")
    block = values[train_range.start:train_range.stop]
    n_tickers, n_feat = values.shape[1], values.shape[2]
    mean = np.zeros((n_tickers, n_feat))
    std = np.zeros((n_tickers, n_feat))
    constant = []
    for j in range(n_tickers):
        for f in range(n_feat):
            col = block[:, j, f]
            col = col[np.isfinite(col)]
            if col.size == 0:
                raise ValidationError(f"feature column ({j},{f}) has no defined training values")
            mean[j, f] = col.mean()
            s = col.std(ddof=1) if col.size > 1 else 0.0
            if s > 0:
                std[j, f] = s
            else:
                constant.append((j, f))
    if constant:
        log.warning("%d feature columns are constant over the training range; "
                    "standardizing them to 0", len(constant))
    return Standardizer(mean=mean, std=std)


def apply_standardizer(standardizer: Standardizer, values: np.ndarray) -> np.ndarray:
    return standardizer.transform(values)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass
class PcaTransform:
    """Pooled-covariance principal components (fit on training rows only)."""

    mean: np.ndarray          # (F,)
    components: np.ndarray    # (F, k), orthonormal columns, eigenvalues descending
    eigenvalues: np.ndarray   # (k,)
    explained_variance_ratio: np.ndarray  # (k,)

    def transform(self, rows: np.ndarray) -> np.ndarray:
        return (rows - self.mean) @ self.components


def fit_pca(rows: np.ndarray, k: int = PCA_COMPONENTS) -> PcaTransform:
    """Top-k eigenvectors of the sample covariance of pooled rows."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValidationError("fit_pca expects pooled 2-D rows")
    n_rows, n_feat = rows.shape
    if n_rows < n_feat:
        raise ValidationError(f"fit_pca needs at least {n_feat} rows, got {n_rows}")
    if not 1 <= k <= n_feat:
        raise ValidationError(f"k={k} outside [1, {n_feat}]")
    mean = rows.mean(axis=0)
    centered = rows - mean
    cov = centered.T @ centered / (n_rows - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    tol = max(eigvals[0], 0.0) * 1e-12
    rank = int(np.sum(eigvals > tol))
    if rank < k:
        col_std = rows.std(axis=0)
        degenerate = [int(f) for f in np.where(col_std <= col_std.max() * 1e-12)[0]]
        raise ValidationError(
            f"pooled feature rank {rank} < k={k}; degenerate feature columns: {degenerate}")
    components = eigvecs[:, :k]
    # deterministic sign: largest-magnitude loading positive
    for c in range(k):
        pivot = np.argmax(np.abs(components[:, c]))
        if components[pivot, c] < 0:
            components[:, c] = -components[:, c]
    gram_dev = np.abs(components.T @ components - np.eye(k)).max()
    if gram_dev >= 1e-8:
        raise ValidationError(f"PCA components not orthonormal (gram deviation {gram_dev:.2e})")
    total = eigvals.sum()
    return PcaTransform(mean=mean, components=components, eigenvalues=eigvals[:k],
                        explained_variance_ratio=eigvals[:k] / total)


def apply_pca(pca: PcaTransform, rows: np.ndarray) -> np.ndarray:
    return pca.transform(rows)


# ---------------------------------------------------------------------------
# fitted pipeline and windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureWindow:
    """Causal lookback tensor for one as-of day: (n_tickers, lookback, dim)."""

    values: np.ndarray
    feature_names: tuple[str, ...]
    as_of: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f"feature window at day {self.as_of} contains non-finite values")


@dataclass
class FeatureTransforms:
    """Everything fit on the training split, reusable on any aligned panel."""

    version: str
    feature_names: tuple[str, ...]   # model-input names (PCA components for v5)
    lookback: int
    standardizer: Standardizer
    pca: PcaTransform | None

    @property
    def dim(self) -> int:
        return len(self.feature_names)


@dataclass
class PanelFeatures:
    """Transformed per-day model inputs for one panel."""

    transforms: FeatureTransforms
    values: np.ndarray  # (n_days, n_tickers, dim); NaN before warmup
    warmup: int         # first valid as-of index for a full window

    def window(self, t: int) -> FeatureWindow:
        r = self.transforms.lookback
        if t < self.warmup or t >= self.values.shape[0]:
            raise ValidationError(f"day {t} lacks the {r}-day warmup (first valid: {self.warmup})")
        return FeatureWindow(values=np.swapaxes(self.values[t - r + 1:t + 1], 0, 1).copy(),
                             feature_names=self.transforms.feature_names, as_of=t)


def fit_feature_transforms(panel: MergedPanel, version: str, train_range: range,
                           lookback: int = LOOKBACK) -> FeatureTransforms:
    raw = compute_feature_matrix(panel, version)
    standardizer = fit_standardizer(raw, train_range)
    names = tuple(feature_set(version))
    pca = None
    if version == "v5":
        standardized = standardizer.transform(raw)
        block = standardized[train_range.start:train_range.stop]
        rows = block.reshape(-1, block.shape[2])
        rows = rows[np.all(np.isfinite(rows), axis=1)]
        pca = fit_pca(rows, PCA_COMPONENTS)
        names = tuple(f"pc{i + 1}" for i in range(PCA_COMPONENTS))
    return FeatureTransforms(version=version, feature_names=names, lookback=lookback,
                             standardizer=standardizer, pca=pca)


def apply_feature_transforms(transforms: FeatureTransforms, panel: MergedPanel) -> PanelFeatures:
    raw = compute_feature_matrix(panel, transforms.version)
    values = transforms.standardizer.transform(raw)
    # standardizing maps NaN warmup cells through; keep them NaN
    values = np.where(np.isfinite(raw), values, np.nan)
    if transforms.pca is not None:
        flat = values.reshape(-1, values.shape[2])
        finite = np.all(np.isfinite(flat), axis=1)
        projected = np.full((flat.shape[0], transforms.pca.components.shape[1]), np.nan)
        projected[finite] = transforms.pca.transform(flat[finite])
        values = projected.reshape(values.shape[0], values.shape[1], -1)
    warmup = feature_warmup(transforms.version) + transforms.lookback - 1
    return PanelFeatures(transforms=transforms, values=values, warmup=warmup)


def build_features(panel: MergedPanel, version: str, train_range: range,
                   lookback: int = LOOKBACK) -> PanelFeatures:
    """Fit on the training split and transform the whole panel."""
    transforms = fit_feature_transforms(panel, version, train_range, lookback)
    return apply_feature_transforms(transforms, panel)
