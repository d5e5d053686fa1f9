"""Benchmark strategies: daily-rebalanced equal weight, and a classic
CAPM-driven mean-variance allocation on rolling 252-day windows with a 21-day
rebalance, long/short box [-1.5, 1.5], full investment, and documented
fallbacks (historical-mean returns; global-minimum-variance portfolio).

The optimizer is projected gradient ascent with multi-start; the box
constraint rules out the closed-form tangency solution, and feasibility is
restored by alternating sum-recentering with box clipping.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import TRADING_DAYS_PER_YEAR
from .errors import NumericsError, ValidationError

log = logging.getLogger(__name__)

BOX_BOUNDS = (-1.5, 1.5)
ESTIMATION_WINDOW = 252
REBALANCE_DAYS = 21
N_STARTS = 16
MAX_ITER = 800
FEAS_TOL = 1e-9
VAR_FLOOR = 1e-18


# ---------------------------------------------------------------------------
# equal weight
# ---------------------------------------------------------------------------

def equal_weight(n_assets: int, n_days: int) -> np.ndarray:
    """1/n every day (rebalanced daily)."""
    if n_assets < 1 or n_days < 1:
        raise ValidationError("equal_weight needs positive dimensions")
    return np.full((n_days, n_assets), 1.0 / n_assets)


# ---------------------------------------------------------------------------
# CAPM estimation
# ---------------------------------------------------------------------------

def estimate_beta(asset_excess: np.ndarray, market_excess: np.ndarray,
                  window: int = ESTIMATION_WINDOW, end: int | None = None) -> float:
    """OLS slope of daily asset excess returns on market excess returns over
    the trailing window ending at `end` (inclusive)."""
    a = np.asarray(asset_excess, dtype=np.float64)
    m = np.asarray(market_excess, dtype=np.float64)
    if end is None:
        end = a.shape[0] - 1
    start = end - window + 1
    if start < 0:
        raise ValidationError(f"beta estimation needs {window} observations ending at {end}")
    wa, wm = a[start:end + 1], m[start:end + 1]
    dm = wm - wm.mean()
    var_m = (dm ** 2).sum()
    if var_m <= 0.0:
        raise NumericsError("zero market variance in beta window")
    return float(((wa - wa.mean()) * dm).sum() / var_m)


def capm_expected_returns(betas: np.ndarray, rf: float, market_return: float) -> np.ndarray:
    """E[R_i] = R_f + beta_i * (E[R_m] - R_f), annualized."""
    betas = np.asarray(betas, dtype=np.float64)
    out = rf + betas * (market_return - rf)
    if not np.all(np.isfinite(out)):
        raise NumericsError("non-finite CAPM expected returns")
    return out


# ---------------------------------------------------------------------------
# constrained solvers
# ---------------------------------------------------------------------------

@dataclass
class MvoSolution:
    weights: np.ndarray
    objective: float          # in-sample Sharpe (max-sharpe) or variance (gmv)
    status: str               # "max-sharpe" | "gmv-fallback" | "historical-mean-fallback"
    converged: bool = True


def project_feasible(w: np.ndarray, bounds: tuple[float, float] = BOX_BOUNDS,
                     max_iter: int = 400) -> np.ndarray:
    """Map points onto {sum w = 1, lo <= w <= hi} by alternating the
    hyperplane recentering w += (1 - sum w)/n with box clipping.

    Works on a single vector or a (rows, n) batch.
    """
    lo, hi = bounds
    w = np.array(w, dtype=np.float64)
    single = w.ndim == 1
    if single:
        w = w[None, :]
    n = w.shape[1]
    if not lo <= 1.0 / n <= hi:
        raise ValidationError(f"equal weights infeasible for bounds {bounds}")
    for _ in range(max_iter):
        w += (1.0 - w.sum(axis=1, keepdims=True)) / n
        np.clip(w, lo, hi, out=w)
        if np.abs(w.sum(axis=1) - 1.0).max() <= 1e-13:
            break
    w += (1.0 - w.sum(axis=1, keepdims=True)) / n
    np.clip(w, lo, hi, out=w)
    w += (1.0 - w.sum(axis=1, keepdims=True)) / n
    return w[0] if single else w


def _ensure_psd(sigma: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    n = sigma.shape[0]
    sym = (sigma + sigma.T) / 2.0
    min_eig = float(np.linalg.eigvalsh(sym).min())
    if min_eig < 0.0:
        sym = sym + (1e-8 * np.trace(sym) / n - min_eig) * np.eye(n)
    return sym


def _line_search_ascent(objective, gradient, w0: np.ndarray,
                        bounds: tuple[float, float], max_iter: int) -> tuple[np.ndarray, bool]:
    """Projected gradient ascent with a doubling/halving step search."""
    w = project_feasible(w0, bounds)
    f = objective(w)
    step = 1.0
    converged = False
    for _ in range(max_iter):
        g = gradient(w)
        improved = False
        for _ in range(40):
            cand = project_feasible(w + step * g, bounds)
            fc = objective(cand)
            if fc > f + 1e-14:
                w, f = cand, fc
                step *= 1.6
                improved = True
                break
            step *= 0.5
            if step < 1e-14:
                break
        if not improved:
            converged = True
            break
    return w, converged


def max_sharpe(mu: np.ndarray, sigma: np.ndarray, rf: float = 0.0,
               bounds: tuple[float, float] = BOX_BOUNDS, seed: int = 0,
               n_starts: int = N_STARTS, max_iter: int = MAX_ITER) -> MvoSolution:
    """Maximize (w.mu - rf) / sqrt(w.Sigma.w) over the sum-one box set.

    Multi-start projected gradient ascent; starts are equal weights, the GMV
    point, and seeded random feasible portfolios.
    """
    mu = np.asarray(mu, dtype=np.float64)
    n = mu.shape[0]
    if n == 1:
        return MvoSolution(weights=np.array([1.0]), objective=float("nan"), status="max-sharpe")
    sigma = _ensure_psd(sigma)

    def objective(w):
        var = float(w @ sigma @ w)
        return float((w @ mu - rf) / np.sqrt(max(var, VAR_FLOOR)))

    def gradient(w):
        var = max(float(w @ sigma @ w), VAR_FLOOR)
        sp = np.sqrt(var)
        excess = float(w @ mu - rf)
        return mu / sp - excess * (sigma @ w) / (sp * var)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A1]))
    starts = [np.full(n, 1.0 / n), gmv(sigma, bounds, seed=seed).weights]
    while len(starts) < n_starts:
        starts.append(project_feasible(rng.normal(scale=0.8, size=n), bounds))

    best_w, best_f, best_conv = None, -np.inf, False
    for w0 in starts:
        w, conv = _line_search_ascent(objective, gradient, w0, bounds, max_iter)
        f = objective(w)
        if f > best_f:
            best_w, best_f, best_conv = w, f, conv
    if best_w is None or not np.all(np.isfinite(best_w)):
        raise NumericsError("max_sharpe failed to produce finite weights")
    if not best_conv:
        log.warning("max_sharpe hit the iteration cap; returning best iterate")
    return MvoSolution(weights=best_w, objective=best_f, status="max-sharpe", converged=best_conv)


def gmv(sigma: np.ndarray, bounds: tuple[float, float] = BOX_BOUNDS,
        seed: int = 0, max_iter: int = MAX_ITER) -> MvoSolution:
    """Global minimum variance portfolio over the same feasible set."""
    sigma = _ensure_psd(sigma)
    n = sigma.shape[0]
    if n == 1:
        return MvoSolution(weights=np.array([1.0]), objective=float(sigma[0, 0]),
                           status="gmv-fallback")

    def objective(w):
        return -float(w @ sigma @ w)  # ascent on the negative variance

    def gradient(w):
        return -2.0 * (sigma @ w)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6A2]))
    starts = [np.full(n, 1.0 / n)]
    while len(starts) < 8:
        starts.append(project_feasible(rng.normal(scale=0.6, size=n), bounds))
    best_w, best_f, best_conv = None, -np.inf, False
    for w0 in starts:
        w, conv = _line_search_ascent(objective, gradient, w0, bounds, max_iter)
        f = objective(w)
        if f > best_f:
            best_w, best_f, best_conv = w, f, conv
    return MvoSolution(weights=best_w, objective=-best_f, status="gmv-fallback",
                       converged=best_conv)


# ---------------------------------------------------------------------------
# rolling CAPM-MVO backtest
# ---------------------------------------------------------------------------

@dataclass
class RebalanceRecord:
    day: int
    status: str
    mu_source: str       # "capm" | "historical-mean"
    solver: str          # "max-sharpe" | "gmv"
    weights: np.ndarray = field(repr=False)


def capm_mvo_backtest(asset_returns: np.ndarray, market_returns: np.ndarray,
                      rf_annual: np.ndarray, eval_days, window: int = ESTIMATION_WINDOW,
                      rebalance: int = REBALANCE_DAYS, bounds: tuple[float, float] = BOX_BOUNDS,
                      seed: int = 0) -> tuple[np.ndarray, list[RebalanceRecord]]:
    """Weights for each day of `eval_days`, re-solved every `rebalance` days
    from trailing-window CAPM estimates and held constant in between.

    asset_returns/market_returns are full-panel daily simple returns (row 0
    NaN); rf_annual is the annualized risk-free level per day.
    """
    days = [int(d) for d in eval_days]
    if not days:
        raise ValidationError("empty evaluation range")
    n = asset_returns.shape[1]
    first = days[0]
    if first - window + 1 < 1:
        raise ValidationError(
            f"CAPM-MVO needs {window} days of history before day {first}")

    weights = np.empty((len(days), n))
    records: list[RebalanceRecord] = []
    current = np.full(n, 1.0 / n)
    for k, t in enumerate(days):
        if k % rebalance == 0:
            current, record = _solve_rebalance(asset_returns, market_returns, rf_annual,
                                               t, window, bounds, seed)
            records.append(record)
        weights[k] = current
    return weights, records


def _solve_rebalance(asset_returns, market_returns, rf_annual, t, window, bounds, seed):
    start = t - window + 1
    block = asset_returns[start:t + 1]
    market = market_returns[start:t + 1]
    if not (np.all(np.isfinite(block)) and np.all(np.isfinite(market))):
        raise ValidationError(f"non-finite returns in estimation window ending at {t}")
    rf = float(rf_annual[t])
    rf_daily = rf_annual[start:t + 1] / TRADING_DAYS_PER_YEAR
    market_excess = market - rf_daily

    betas = np.array([estimate_beta(block[:, j] - rf_daily, market_excess, window,
                                    end=window - 1) for j in range(block.shape[1])])
    exp_market = float(market.mean()) * TRADING_DAYS_PER_YEAR
    mu = capm_expected_returns(betas, rf, exp_market)
    mu_source = "capm"
    if mu.max() <= rf:
        mu = block.mean(axis=0) * TRADING_DAYS_PER_YEAR
        mu_source = "historical-mean"
        log.info("day %d: all CAPM expectations at or below the risk-free rate; "
                 "using historical mean returns", t)

    sigma = np.cov(block, rowvar=False, ddof=1) * TRADING_DAYS_PER_YEAR
    solver = "max-sharpe"
    try:
        solution = max_sharpe(mu, sigma, rf, bounds, seed=seed)
        if not np.all(np.isfinite(solution.weights)):
            raise NumericsError("non-finite solution")
    except NumericsError:
        log.warning("day %d: max-sharpe solve failed; defaulting to GMV", t)
        solution = gmv(sigma, bounds, seed=seed)
        solver = "gmv"

    if mu_source == "historical-mean":
        status = "historical-mean-fallback"
    elif solver == "gmv":
        status = "gmv-fallback"
    else:
        status = "max-sharpe"
    record = RebalanceRecord(day=t, status=status, mu_source=mu_source,
                             solver=solver, weights=solution.weights.copy())
    return solution.weights, record
