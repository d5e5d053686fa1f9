"""Randomized hyperparameter search over the documented tuning space,
ranked by validation Sharpe, with retraining on the merged train+validation
block using the winner's best epoch count.

Trials are isolated: trial i derives its own RNG streams from
(seed, trial_index), so execution order never changes the results.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import MergedPanel, SplitRanges
from .errors import ValidationError
from .model import ModelConfig, TrainedModel, train

log = logging.getLogger(__name__)

HPARAM_COLUMNS = ("batch_size", "lstm_hidden", "lstm_layers", "lstm_dropout",
                  "gat_hidden", "gat_dropout", "gat_alpha", "final_dropout",
                  "learning_rate", "lstm_weight_decay", "gat_weight_decay",
                  "final_weight_decay")


@dataclass(frozen=True)
class SteppedRange:
    lo: float
    hi: float
    step: float

    def sample(self, rng: np.random.Generator) -> float:
        n_steps = int(round((self.hi - self.lo) / self.step))
        return self.lo + self.step * int(rng.integers(0, n_steps + 1))

    def contains(self, value: float) -> bool:
        if not self.lo - 1e-12 <= value <= self.hi + 1e-12:
            return False
        k = (value - self.lo) / self.step
        return abs(k - round(k)) < 1e-9


@dataclass(frozen=True)
class LogUniform:
    lo: float
    hi: float

    def sample(self, rng: np.random.Generator) -> float:
        return float(np.exp(rng.uniform(np.log(self.lo), np.log(self.hi))))

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


@dataclass(frozen=True)
class SearchSpace:
    """Per-hyperparameter sampling domains; fixed fields are never sampled."""

    batch_size: tuple[int, ...] = (16, 32, 64)
    lstm_hidden: SteppedRange = SteppedRange(32, 128, 16)
    lstm_layers: SteppedRange = SteppedRange(1, 3, 1)
    lstm_dropout: SteppedRange = SteppedRange(0.0, 0.5, 0.05)
    gat_hidden: SteppedRange = SteppedRange(32, 128, 16)
    gat_dropout: SteppedRange = SteppedRange(0.1, 0.5, 0.05)
    gat_alpha: SteppedRange = SteppedRange(0.05, 0.3, 0.05)
    final_dropout: SteppedRange = SteppedRange(0.1, 0.5, 0.05)
    learning_rate: LogUniform = LogUniform(1e-4, 1e-2)
    lstm_weight_decay: LogUniform = LogUniform(1e-6, 1e-2)
    gat_weight_decay: LogUniform = LogUniform(1e-6, 1e-2)
    final_weight_decay: LogUniform = LogUniform(1e-6, 1e-2)

    def contains(self, config: ModelConfig) -> bool:
        if config.batch_size not in self.batch_size:
            return False
        if config.lstm_bidirectional or config.gat_layers != 2 or config.gat_heads != 1:
            return False
        for name in HPARAM_COLUMNS:
            if name == "batch_size":
                continue
            if not getattr(self, name).contains(getattr(config, name)):
                return False
        return True


def sample_config(space: SearchSpace, rng: np.random.Generator, version: str = "v1",
                  epochs: int = 20, seed: int = 42, **fixed) -> ModelConfig:
    """One uniform draw from the space (log-uniform for rate-like fields)."""
    payload = {
        "batch_size": int(space.batch_size[rng.integers(0, len(space.batch_size))]),
        "lstm_hidden": int(space.lstm_hidden.sample(rng)),
        "lstm_layers": int(space.lstm_layers.sample(rng)),
        "lstm_dropout": float(space.lstm_dropout.sample(rng)),
        "gat_hidden": int(space.gat_hidden.sample(rng)),
        "gat_dropout": float(space.gat_dropout.sample(rng)),
        "gat_alpha": float(space.gat_alpha.sample(rng)),
        "final_dropout": float(space.final_dropout.sample(rng)),
        "learning_rate": space.learning_rate.sample(rng),
        "lstm_weight_decay": space.lstm_weight_decay.sample(rng),
        "gat_weight_decay": space.gat_weight_decay.sample(rng),
        "final_weight_decay": space.final_weight_decay.sample(rng),
    }
    payload.update(fixed)
    return ModelConfig(version=version, epochs=epochs, seed=seed, **payload).validate()


@dataclass
class TrialResult:
    trial: int
    seed: int
    config: ModelConfig
    val_sharpe: float
    best_epoch: int
    error: str | None = None


@dataclass
class SearchResult:
    best: TrialResult
    trials: list[TrialResult] = field(default_factory=list)

    def ranked(self) -> list[TrialResult]:
        ok = [t for t in self.trials if t.error is None and np.isfinite(t.val_sharpe)]
        return sorted(ok, key=lambda t: (-t.val_sharpe, t.trial))


def search(panel: MergedPanel, splits: SplitRanges, space: SearchSpace | None = None,
           n_trials: int = 50, seed: int = 42, version: str = "v1", epochs: int = 20,
           **fixed) -> SearchResult:
    """Run seeded random-search trials and rank them by validation Sharpe."""
    if n_trials < 1:
        raise ValidationError("n_trials must be >= 1")
    space = space or SearchSpace()
    trials: list[TrialResult] = []
    for i in range(n_trials):
        ss = np.random.SeedSequence([seed, i])
        sample_ss, train_ss = ss.spawn(2)
        trial_seed = int(np.random.default_rng(train_ss).integers(0, 2**31 - 1))
        config = sample_config(space, np.random.default_rng(sample_ss), version=version,
                               epochs=epochs, seed=trial_seed, **fixed)
        try:
            model = train(panel, splits, config, quiet=True)
            result = TrialResult(trial=i, seed=trial_seed, config=config,
                                 val_sharpe=model.best_val_sharpe, best_epoch=model.best_epoch)
        except Exception as exc:  # a failed trial is recorded, not fatal
            log.warning("trial %d failed: %s", i, exc)
            result = TrialResult(trial=i, seed=trial_seed, config=config,
                                 val_sharpe=float("-inf"), best_epoch=0, error=str(exc))
        trials.append(result)
        log.info("trial %d/%d: val sharpe %s (best epoch %d)", i + 1, n_trials,
                 f"{result.val_sharpe:.4f}" if np.isfinite(result.val_sharpe) else "failed",
                 result.best_epoch)
    ranked = sorted((t for t in trials if t.error is None and np.isfinite(t.val_sharpe)),
                    key=lambda t: (-t.val_sharpe, t.trial))
    if not ranked:
        raise ValidationError("all search trials failed")
    return SearchResult(best=ranked[0], trials=trials)


def retrain_best(panel: MergedPanel, splits: SplitRanges, best: TrialResult) -> TrainedModel:
    """Retrain the winning config on train+validation for the winning trial's
    best epoch count (no validation remains for early stopping)."""
    merged = SplitRanges(train=range(splits.train.start, splits.val.stop),
                         val=range(splits.val.stop, splits.val.stop), test=splits.test)
    config = ModelConfig.from_dict({**best.config.to_dict(),
                                    "epochs": max(best.best_epoch, 1)})
    return train(panel, merged, config)


def write_trial_log(result: SearchResult, path) -> None:
    """CSV: trial, seed, hyperparameters, val_sharpe, best_epoch."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "seed", *HPARAM_COLUMNS, "val_sharpe", "best_epoch"])
        for t in result.trials:
            cfg = t.config.to_dict()
            w.writerow([t.trial, t.seed, *(f"{cfg[c]:.12g}" for c in HPARAM_COLUMNS),
                        "failed" if t.error is not None else f"{t.val_sharpe:.12g}",
                        t.best_epoch])
