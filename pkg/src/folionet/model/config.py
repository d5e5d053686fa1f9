"""Model configuration: every tunable hyperparameter, structural constants,
and the shipped per-version presets."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from importlib import resources

from ..errors import ValidationError
from ..features import VERSIONS

log = logging.getLogger(__name__)

MAX_EPOCHS = 40

# tuning domains; also consulted by the random search
SEARCH_DOMAINS = {
    "batch_size": (16, 32, 64),
    "lstm_hidden": (32, 128, 16),      # lo, hi, step
    "lstm_layers": (1, 3, 1),
    "lstm_dropout": (0.0, 0.5, 0.05),
    "gat_hidden": (32, 128, 16),
    "gat_dropout": (0.1, 0.5, 0.05),
    "gat_alpha": (0.05, 0.3, 0.05),
    "final_dropout": (0.1, 0.5, 0.05),
    "learning_rate": (1e-4, 1e-2),     # log-uniform
    "lstm_weight_decay": (1e-6, 1e-2),
    "gat_weight_decay": (1e-6, 1e-2),
    "final_weight_decay": (1e-6, 1e-2),
}


@dataclass
class ModelConfig:
    version: str = "v1"
    batch_size: int = 32
    lstm_hidden: int = 64
    lstm_layers: int = 1
    lstm_dropout: float = 0.1
    lstm_bidirectional: bool = False   # fixed off
    gat_hidden: int = 64
    gat_layers: int = 2                # fixed
    gat_heads: int = 1                 # fixed
    gat_dropout: float = 0.2
    gat_alpha: float = 0.2
    final_dropout: float = 0.2
    learning_rate: float = 1e-3
    lstm_weight_decay: float = 1e-4
    gat_weight_decay: float = 1e-4
    final_weight_decay: float = 1e-4
    lookback: int = 30
    epochs: int = 20
    seed: int = 42
    # estimator knobs for the training objective
    cov_window: int = 30
    # On a complete static graph the classic attention logits collapse to a
    # row-constant softmax (shift invariance in the source term), which erases
    # per-asset signal; adding the signed correlation weights to the logits
    # breaks that symmetry, so it is on by default. No effect on dynamic graphs.
    static_weight_bias: bool = True
    grad_clip: float | None = None

    def validate(self) -> "ModelConfig":
        if self.version not in VERSIONS:
            raise ValidationError(f"unknown version {self.version!r}; expected one of {VERSIONS}")
        if self.lstm_bidirectional:
            raise ValidationError("lstm_bidirectional is fixed False")
        if self.gat_layers != 2:
            raise ValidationError("gat_layers is fixed at 2")
        if self.gat_heads != 1:
            raise ValidationError("gat_heads is fixed at 1")
        if self.epochs < 0 or self.epochs > MAX_EPOCHS:
            raise ValidationError(f"epochs {self.epochs} outside [0, {MAX_EPOCHS}]")
        for name in ("lstm_hidden", "gat_hidden", "batch_size", "lstm_layers", "lookback", "cov_window"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        for name in ("lstm_dropout", "gat_dropout", "final_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValidationError(f"{name}={rate} outside [0, 1)")
        for name in ("learning_rate", "gat_alpha"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("lstm_weight_decay", "gat_weight_decay", "final_weight_decay"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        self._warn_outside_search_domain()
        return self

    def _warn_outside_search_domain(self) -> None:
        # the shipped v5 preset carries gat_alpha above the tuning range, so
        # out-of-domain values warn rather than error
        outside = []
        for name, domain in SEARCH_DOMAINS.items():
            value = getattr(self, name)
            if name == "batch_size":
                if value not in domain:
                    outside.append(name)
            elif len(domain) == 2:
                if not domain[0] <= value <= domain[1]:
                    outside.append(name)
            else:
                if not domain[0] <= value <= domain[1]:
                    outside.append(name)
        if outside:
            log.warning("config values outside the tuning domain: %s", ", ".join(outside))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**payload).validate()


def load_preset(version: str, **overrides) -> ModelConfig:
    """Shipped per-version hyperparameters (presets/*.json in the package)."""
    if version not in VERSIONS:
        raise ValidationError(f"unknown version {version!r}; expected one of {VERSIONS}")
    payload = json.loads(resources.files("folionet.presets").joinpath(f"{version}.json").read_text())
    payload.update(overrides)
    return ModelConfig.from_dict(payload)
