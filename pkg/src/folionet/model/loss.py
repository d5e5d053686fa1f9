"""Training objective: the negative risk-adjusted-return loss and its
per-date inputs (next-day realized returns, trailing covariance)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ValidationError

# floor on the portfolio variance inside the square root; implemented as
# max(var, floor) so well-conditioned cases are untouched exactly
VARIANCE_FLOOR = 1e-10


@dataclass
class LossInputs:
    """One date's loss ingredients: weights, next-period returns, covariance."""

    weights: Tensor        # (n, 1), sums to 1
    realized: np.ndarray   # (n,) next-period simple returns
    cov: np.ndarray        # (n, n) symmetric PSD

    def validate(self) -> "LossInputs":
        n = self.weights.shape[0]
        if self.realized.shape != (n,):
            raise ValidationError(f"realized returns shape {self.realized.shape} != ({n},)")
        if self.cov.shape != (n, n):
            raise ValidationError(f"covariance shape {self.cov.shape} != ({n}, {n})")
        if np.abs(self.cov - self.cov.T).max() > 1e-12:
            raise ValidationError("covariance not symmetric within 1e-12")
        return self


def sharpe_loss(inputs: LossInputs) -> Tensor:
    """-(w^T r) / sqrt(max(w^T S w, floor)) as a differentiable scalar."""
    inputs.validate()
    w = inputs.weights
    r = Tensor(inputs.realized.reshape(-1, 1))
    sigma = Tensor(inputs.cov)
    port = ad.matmul(ad.transpose(w), r)                      # (1, 1)
    var = ad.matmul(ad.transpose(w), ad.matmul(sigma, w))     # (1, 1)
    denom = ad.sqrt(ad.clamp_min(var, VARIANCE_FLOOR))
    return ad.div(ad.mul(port, -1.0), denom)


def next_day_returns(close: np.ndarray) -> np.ndarray:
    """(n_days, n): row t holds close[t+1]/close[t] - 1; last row is NaN."""
    out = np.full_like(close, np.nan)
    out[:-1] = close[1:] / close[:-1] - 1.0
    return out


def trailing_covariance(simple_returns: np.ndarray, t: int, window: int = 30) -> np.ndarray:
    """Sample covariance (ddof=1) of daily simple returns over the `window`
    days ending at t, symmetrized exactly."""
    start = t - window + 1
    if start < 1:  # day 0 has no return
        raise ValidationError(f"day {t} lacks {window} trailing returns")
    block = simple_returns[start:t + 1]
    if not np.all(np.isfinite(block)):
        raise ValidationError(f"non-finite returns in covariance window ending at {t}")
    cov = np.cov(block, rowvar=False, ddof=1)
    return (cov + cov.T) / 2.0
