"""Training loop (Adam on the negative risk-adjusted loss), weight
prediction over date ranges, and checkpoint I/O.

Mini-batches are trading dates; all assets of every date in a batch run
through the shared LSTM as one stacked matrix, then each date's asset block
goes through its own attention pass and loss.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..data import MergedPanel, SplitRanges, TRADING_DAYS_PER_YEAR
from ..errors import DegenerateWeightsError, NumericsError, ValidationError
from ..features import (FeatureTransforms, PanelFeatures, Standardizer, PcaTransform,
                        apply_feature_transforms, fit_feature_transforms, uses_dynamic_graph)
from ..graphs import AssetGraph, dynamic_graph, refresh_schedule, static_graph
from .config import ModelConfig
from .loss import LossInputs, next_day_returns, sharpe_loss, trailing_covariance
from .network import (ModelParams, forward, gat_stack, head_scores, init_params,
                      lstm_forward, normalize_weights, raw_score_sum)

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

EVAL_CHUNK = 96  # dates per stacked LSTM pass during evaluation


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState,
              config: ModelConfig) -> ModelParams:
    """One Adam update with per-group L2 decay added to the gradient.

    Returns a fresh ModelParams; tensors are never mutated in place.
    """
    decay = {"lstm": config.lstm_weight_decay, "gat": config.gat_weight_decay,
             "final": config.final_weight_decay}
    state.step += 1
    t = state.step
    new_tensors: dict[str, Tensor] = {}
    clip_scale = 1.0
    if config.grad_clip is not None:
        total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if total > config.grad_clip:
            clip_scale = config.grad_clip / total
    for name, tensor in params.tensors.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {name}")
        g = g * clip_scale + decay[params.groups[name]] * tensor.data
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - ADAM_BETA1) * g if m is None else ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = (1 - ADAM_BETA2) * g * g if v is None else ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        new_data = tensor.data - config.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        new_tensors[name] = Tensor(new_data, requires_grad=True)
    return ModelParams(tensors=new_tensors, groups=dict(params.groups))


# ---------------------------------------------------------------------------
# graph providers
# ---------------------------------------------------------------------------

class GraphProvider:
    """Per-date graph lookup: a fixed training-period graph for static
    versions, or schedule-cached dynamic graphs for v4/v5."""

    def __init__(self, config: ModelConfig, panel: MergedPanel,
                 static: AssetGraph | None):
        self.config = config
        self.panel = panel
        self.static = static
        self.dynamic = uses_dynamic_graph(config.version)
        if self.dynamic:
            self._log_returns = panel.log_returns()
            self._sentiment = panel.avg_sentiment
        self._schedule: dict[int, int] = {}
        self._cache: dict[int, AssetGraph] = {}

    def prepare_range(self, day_indices) -> None:
        if self.dynamic:
            self._schedule.update(refresh_schedule(day_indices))

    def graph_at(self, t: int) -> AssetGraph:
        if not self.dynamic:
            assert self.static is not None
            return self.static
        build = self._schedule.get(t)
        if build is None:
            self._schedule.update(refresh_schedule([t]))
            build = t
        if build not in self._cache:
            self._cache[build] = dynamic_graph(build, self.panel.tickers, self.panel.sectors,
                                               self._log_returns, self._sentiment)
        return self._cache[build]


# ---------------------------------------------------------------------------
# batched forward
# ---------------------------------------------------------------------------

def _scores_for_dates(dates, feats: PanelFeatures, provider: GraphProvider,
                      params: ModelParams, config: ModelConfig,
                      training: bool, rng: np.random.Generator | None) -> list[Tensor]:
    """Raw (n, 1) score tensors for each date; one shared stacked LSTM pass."""
    windows = [feats.window(t).values for t in dates]
    n = windows[0].shape[0]
    stacked = Tensor(np.concatenate(windows, axis=0))
    h_all = lstm_forward(stacked, params, config, training, rng)
    scores = []
    for k, t in enumerate(dates):
        h = h_all[k * n:(k + 1) * n, :]
        z = gat_stack(h, provider.graph_at(t), params, config, training, rng)
        scores.append(head_scores(z, params, config, training, rng))
    return scores


def _eval_weights(dates, feats: PanelFeatures, provider: GraphProvider,
                  params: ModelParams, config: ModelConfig,
                  ) -> tuple[np.ndarray, list[int]]:
    """Deterministic eval-mode weights for a list of dates.

    Degenerate score sums fall back to the previous date's weights (equal
    weights on the first date) and are reported, never silently emitted.
    """
    n = feats.values.shape[1]
    out = np.empty((len(dates), n))
    fallbacks: list[int] = []
    prev = np.full(n, 1.0 / n)
    pos = 0
    for lo in range(0, len(dates), EVAL_CHUNK):
        chunk = list(dates[lo:lo + EVAL_CHUNK])
        scores = _scores_for_dates(chunk, feats, provider, params, config,
                                   training=False, rng=None)
        for t, s in zip(chunk, scores):
            try:
                w = normalize_weights(s).data.reshape(-1)
            except DegenerateWeightsError:
                log.warning("day %d: degenerate raw score sum; falling back to previous weights", t)
                fallbacks.append(t)
                w = prev
            out[pos] = w
            prev = w
            pos += 1
    return out, fallbacks


def _annualized_sharpe(returns: np.ndarray) -> float:
    if returns.size < 2:
        return float("-inf")
    std = returns.std(ddof=1)
    if std <= 0 or not np.isfinite(std):
        return float("-inf")
    return float(returns.mean() / std * np.sqrt(TRADING_DAYS_PER_YEAR))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    train_loss: float        # running mean over the epoch's batches (train mode)
    train_loss_eval: float   # end-of-epoch loss on the training dates (eval mode)
    val_sharpe: float
    skipped_dates: int


@dataclass
class TrainedModel:
    config: ModelConfig
    params: ModelParams
    transforms: FeatureTransforms
    static_graph: AssetGraph | None
    tickers: tuple[str, ...]
    history: list[EpochStats]
    best_epoch: int
    best_val_sharpe: float


def eligible_training_dates(feats: PanelFeatures, config: ModelConfig, train_stop: int) -> list[int]:
    """Dates with a full feature window, a full covariance window, and a
    next-day return inside the training block."""
    start = max(feats.warmup, config.cov_window)
    return list(range(start, train_stop - 1))


def train(panel: MergedPanel, splits: SplitRanges, config: ModelConfig,
          quiet: bool = False) -> TrainedModel:
    """Fit transforms and graphs on the training block, then run seeded
    mini-batch epochs, tracking the snapshot with the best validation Sharpe.

    With an empty validation range the final parameters win (used when
    retraining on train+validation after a search).
    """
    config.validate()
    train_range, val_range = splits.train, splits.val
    transforms = fit_feature_transforms(panel, config.version, train_range, config.lookback)
    feats = apply_feature_transforms(transforms, panel)

    static = None
    if not uses_dynamic_graph(config.version):
        static = static_graph(panel.log_returns()[train_range.start:train_range.stop],
                              panel.tickers)
    provider = GraphProvider(config, panel, static)

    dates = eligible_training_dates(feats, config, train_range.stop)
    if not dates:
        raise ValidationError("no eligible training dates (panel too short for warmup)")
    provider.prepare_range(dates)
    val_decisions = list(val_range)[:-1]  # keep next-day returns inside the block
    if val_decisions:
        provider.prepare_range(val_decisions)

    master = np.random.SeedSequence(config.seed)
    init_ss, loop_ss = master.spawn(2)
    params = init_params(config, transforms.dim, np.random.default_rng(init_ss))
    loop_rng = np.random.default_rng(loop_ss)

    simple = panel.simple_returns()
    r_next = next_day_returns(panel.close)
    cov_cache: dict[int, np.ndarray] = {}

    def cov_at(t: int) -> np.ndarray:
        if t not in cov_cache:
            cov_cache[t] = trailing_covariance(simple, t, config.cov_window)
        return cov_cache[t]

    state = AdamState()
    history: list[EpochStats] = []
    best_epoch = 0
    best_val = float("-inf")
    best_params = params.clone()

    def eval_train_loss(current: ModelParams) -> float:
        weights, _ = _eval_weights(dates, feats, provider, current, config)
        losses = np.empty(len(dates))
        for k, t in enumerate(dates):
            w = weights[k]
            var = float(w @ cov_at(t) @ w)
            losses[k] = -float(w @ r_next[t]) / np.sqrt(max(var, 1e-10))
        return float(losses.mean())

    for epoch in range(1, config.epochs + 1):
        order = np.array(dates)
        loop_rng.shuffle(order)
        epoch_loss = 0.0
        epoch_count = 0
        skipped = 0
        for lo in range(0, len(order), config.batch_size):
            batch = [int(t) for t in order[lo:lo + config.batch_size]]
            with ad.Tape() as tape:
                scores = _scores_for_dates(batch, feats, provider, params, config,
                                           training=True, rng=loop_rng)
                losses = []
                for t, s in zip(batch, scores):
                    if abs(raw_score_sum(s)) < 1e-6:
                        skipped += 1
                        continue
                    w = normalize_weights(s)
                    losses.append(sharpe_loss(LossInputs(w, r_next[t], cov_at(t))))
                if not losses:
                    continue
                batch_loss = ad.mean(ad.concat(losses, axis=0))
                ad.backward(batch_loss, tape)
            epoch_loss += batch_loss.item() * len(losses)
            epoch_count += len(losses)
            params = adam_step(params, params_grads(params), state, config)
        mean_loss = epoch_loss / max(epoch_count, 1)
        eval_loss = eval_train_loss(params)

        val_sharpe = float("nan")
        if val_decisions:
            weights, _ = _eval_weights(val_decisions, feats, provider, params, config)
            realized = np.array([float(weights[k] @ simple[t + 1])
                                 for k, t in enumerate(val_decisions)])
            val_sharpe = _annualized_sharpe(realized)
            if val_sharpe > best_val:
                best_val = val_sharpe
                best_epoch = epoch
                best_params = params.clone()
        history.append(EpochStats(epoch, mean_loss, eval_loss, val_sharpe, skipped))
        if not quiet:
            log.info("epoch %d/%d: train loss %.6f (eval %.6f), val sharpe %s, skipped %d",
                     epoch, config.epochs, mean_loss, eval_loss,
                     f"{val_sharpe:.4f}" if np.isfinite(val_sharpe) else "n/a", skipped)

    if not val_decisions or best_epoch == 0:
        best_params = params
        best_epoch = config.epochs
        best_val = history[-1].val_sharpe if history else float("nan")

    return TrainedModel(config=config, params=best_params, transforms=transforms,
                        static_graph=static, tickers=tuple(panel.tickers),
                        history=history, best_epoch=best_epoch, best_val_sharpe=best_val)


def params_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return params.grads()


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

@dataclass
class PredictResult:
    day_indices: list[int]
    weights: np.ndarray        # (len(day_indices), n), each row sums to 1
    fallback_days: list[int]


def predict_weights(model: TrainedModel, panel: MergedPanel, day_indices) -> PredictResult:
    """Eval-mode daily weights over a range; dynamic graphs follow the
    refresh schedule of that range."""
    if tuple(panel.tickers) != tuple(model.tickers):
        raise ValidationError("panel tickers do not match the trained model")
    feats = apply_feature_transforms(model.transforms, panel)
    provider = GraphProvider(model.config, panel, model.static_graph)
    days = [int(t) for t in day_indices]
    if not days:
        raise ValidationError("empty prediction range")
    if days[0] < feats.warmup:
        raise ValidationError(f"day {days[0]} lacks warmup (first valid: {feats.warmup})")
    provider.prepare_range(days)
    weights, fallbacks = _eval_weights(days, feats, provider, model.params, model.config)
    return PredictResult(day_indices=days, weights=weights, fallback_days=fallbacks)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = 1


def save_checkpoint(model: TrainedModel, path) -> None:
    """Single-file npz: config echo + named tensors + fitted transforms."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "tickers": list(model.tickers),
        "feature_names": list(model.transforms.feature_names),
        "best_epoch": model.best_epoch,
        "best_val_sharpe": model.best_val_sharpe,
        "history": [asdict(h) for h in model.history],
        "groups": model.params.groups,
    }
    arrays = {f"param::{k}": v.data for k, v in model.params.tensors.items()}
    arrays["std::mean"] = model.transforms.standardizer.mean
    arrays["std::std"] = model.transforms.standardizer.std
    if model.transforms.pca is not None:
        arrays["pca::mean"] = model.transforms.pca.mean
        arrays["pca::components"] = model.transforms.pca.components
        arrays["pca::eigenvalues"] = model.transforms.pca.eigenvalues
        arrays["pca::evr"] = model.transforms.pca.explained_variance_ratio
    if model.static_graph is not None:
        arrays["static::adjacency"] = model.static_graph.adjacency
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **arrays)


def load_checkpoint(path) -> TrainedModel:
    with np.load(path, allow_pickle=False) as payload:
        meta = json.loads(str(payload["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValidationError(f"unsupported checkpoint format {meta.get('format')}")
        config = ModelConfig.from_dict(meta["config"])
        tensors = {}
        for key in payload.files:
            if key.startswith("param::"):
                tensors[key[len("param::"):]] = Tensor(payload[key], requires_grad=True)
        params = ModelParams(tensors=tensors, groups=dict(meta["groups"]))
        standardizer = Standardizer(mean=payload["std::mean"], std=payload["std::std"])
        pca = None
        if "pca::mean" in payload.files:
            pca = PcaTransform(mean=payload["pca::mean"], components=payload["pca::components"],
                               eigenvalues=payload["pca::eigenvalues"],
                               explained_variance_ratio=payload["pca::evr"])
        static = None
        if "static::adjacency" in payload.files:
            static = AssetGraph(tickers=tuple(meta["tickers"]),
                                adjacency=payload["static::adjacency"], kind="static")
    transforms = FeatureTransforms(version=config.version,
                                   feature_names=tuple(meta["feature_names"]),
                                   lookback=config.lookback, standardizer=standardizer, pca=pca)
    history = [EpochStats(**h) for h in meta["history"]]
    return TrainedModel(config=config, params=params, transforms=transforms,
                        static_graph=static, tickers=tuple(meta["tickers"]),
                        history=history, best_epoch=meta["best_epoch"],
                        best_val_sharpe=meta["best_val_sharpe"])
