"""The allocation network: shared LSTM encoder, two graph-attention layers,
tanh scoring head, and sum-to-one weight normalization.

All assets share every parameter; the LSTM runs the assets (and any number of
stacked evaluation dates) as independent rows, and the attention layers mix
rows within each date's asset block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DegenerateWeightsError, ValidationError
from ..graphs import AssetGraph
from .config import ModelConfig

NORMALIZE_EPS = 1e-6

# gate slices within the fused 4H layout
GATE_ORDER = ("input", "forget", "cell", "output")


@dataclass
class ModelParams:
    """Named parameter tensors with their weight-decay group."""

    tensors: dict[str, Tensor]
    groups: dict[str, str]  # name -> "lstm" | "gat" | "final"

    def names(self) -> list[str]:
        return list(self.tensors)

    def clone(self) -> "ModelParams":
        return ModelParams(
            tensors={k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.tensors.items()},
            groups=dict(self.groups))

    def grads(self) -> dict[str, np.ndarray]:
        return {k: v.grad_or_zeros() for k, v in self.tensors.items()}


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, feature_dim: int, rng: np.random.Generator) -> ModelParams:
    """LSTM weights uniform(+-1/sqrt(H)) with forget-gate bias +1; GAT and
    head layers Glorot-uniform."""
    h = config.lstm_hidden
    d = config.gat_hidden
    tensors: dict[str, Tensor] = {}
    groups: dict[str, str] = {}

    def put(name, array, group):
        tensors[name] = Tensor(array, requires_grad=True)
        groups[name] = group

    bound = 1.0 / np.sqrt(h)
    in_dim = feature_dim
    for layer in range(config.lstm_layers):
        put(f"lstm.{layer}.W", rng.uniform(-bound, bound, size=(in_dim, 4 * h)), "lstm")
        put(f"lstm.{layer}.U", rng.uniform(-bound, bound, size=(h, 4 * h)), "lstm")
        bias = np.zeros((1, 4 * h))
        bias[0, h:2 * h] = 1.0  # forget gate starts open
        put(f"lstm.{layer}.b", bias, "lstm")
        in_dim = h

    gat_in = h
    for layer in range(config.gat_layers):
        put(f"gat.{layer}.W", _glorot(rng, gat_in, d, (gat_in, d)), "gat")
        put(f"gat.{layer}.a", _glorot(rng, 2 * d, 1, (2 * d, 1)), "gat")
        gat_in = d

    put("head.W", _glorot(rng, d, 1, (d, 1)), "final")
    put("head.b", np.zeros((1, 1)), "final")
    return ModelParams(tensors=tensors, groups=groups)


def lstm_forward(window: Tensor, params: ModelParams, config: ModelConfig,
                 training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Run the stacked LSTM over a (rows, steps, features) tensor and return
    the top layer's last hidden state (rows, H).

    Rows are independent sequences; inter-layer dropout applies to each
    non-final layer's outputs in training mode.
    """
    if window.ndim != 3:
        raise ValidationError(f"lstm_forward expects rank-3 input, got shape {window.shape}")
    rows, steps, feat = window.shape
    h_size = config.lstm_hidden
    if params.tensors["lstm.0.W"].shape[0] != feat:
        raise ValidationError(
            f"feature count {feat} does not match LSTM input dim "
            f"{params.tensors['lstm.0.W'].shape[0]}")

    inputs = [window[:, t, :] for t in range(steps)]
    for layer in range(config.lstm_layers):
        W = params.tensors[f"lstm.{layer}.W"]
        U = params.tensors[f"lstm.{layer}.U"]
        b = params.tensors[f"lstm.{layer}.b"]
        h = Tensor(np.zeros((rows, h_size)))
        c = Tensor(np.zeros((rows, h_size)))
        outputs = []
        for x_t in inputs:
            z = ad.add(ad.add(ad.matmul(x_t, W), ad.matmul(h, U)), b)
            i_gate = ad.sigmoid(z[:, 0 * h_size:1 * h_size])
            f_gate = ad.sigmoid(z[:, 1 * h_size:2 * h_size])
            g_cell = ad.tanh(z[:, 2 * h_size:3 * h_size])
            o_gate = ad.sigmoid(z[:, 3 * h_size:4 * h_size])
            c = ad.add(ad.mul(f_gate, c), ad.mul(i_gate, g_cell))
            h = ad.mul(o_gate, ad.tanh(c))
            outputs.append(h)
        if layer < config.lstm_layers - 1:
            outputs = [ad.dropout(o, config.lstm_dropout, training, rng) for o in outputs]
        inputs = outputs
    return inputs[-1]


def gat_layer(h: Tensor, mask: np.ndarray, W: Tensor, a: Tensor,
              negative_slope: float, dropout_rate: float, final_layer: bool,
              training: bool = False, rng: np.random.Generator | None = None,
              logit_bias: np.ndarray | None = None) -> Tensor:
    """One attention layer over an asset block.

    Pairwise logits come from a learned vector split across source/target
    roles; masked softmax restricts attention to graph neighbors. Hidden
    layers apply an exponential-linear nonlinearity, the final layer is
    linear on the aggregated messages.
    """
    n = h.shape[0]
    if mask.shape != (n, n):
        raise ValidationError(f"graph mask shape {mask.shape} does not match {n} assets")
    out_dim = W.shape[1]
    wh = ad.matmul(h, W)
    a_src = a[0:out_dim, :]
    a_dst = a[out_dim:2 * out_dim, :]
    src = ad.matmul(wh, a_src)                       # (n, 1)
    dst = ad.transpose(ad.matmul(wh, a_dst))         # (1, n)
    logits = ad.leaky_relu(ad.add(src, dst), negative_slope)
    if logit_bias is not None:
        logits = ad.add(logits, Tensor(logit_bias))
    attention = ad.masked_softmax(logits, mask, axis=1)
    attention = ad.dropout(attention, dropout_rate, training, rng)
    out = ad.matmul(attention, wh)
    return out if final_layer else ad.elu(out)


def gat_stack(h: Tensor, graph: AssetGraph, params: ModelParams, config: ModelConfig,
              training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Apply the fixed two-layer attention stack using the graph's mask (and,
    optionally, its signed weights as a logit bias)."""
    mask = graph.mask
    bias = None
    if config.static_weight_bias and graph.kind == "static":
        bias = graph.adjacency
    z = h
    for layer in range(config.gat_layers):
        z = gat_layer(z, mask,
                      params.tensors[f"gat.{layer}.W"], params.tensors[f"gat.{layer}.a"],
                      negative_slope=config.gat_alpha, dropout_rate=config.gat_dropout,
                      final_layer=(layer == config.gat_layers - 1),
                      training=training, rng=rng, logit_bias=bias)
    return z


def head_scores(z: Tensor, params: ModelParams, config: ModelConfig,
                training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Shared linear + tanh scoring head: (n, D) -> raw scores (n, 1) in (-1, 1)."""
    z = ad.dropout(z, config.final_dropout, training, rng)
    return ad.tanh(ad.add(ad.matmul(z, params.tensors["head.W"]), params.tensors["head.b"]))


def raw_score_sum(scores: Tensor) -> float:
    return float(scores.data.sum())


def normalize_weights(scores: Tensor) -> Tensor:
    """Scale raw scores to sum to one: w_i = W_i / sum_j W_j.

    Raises DegenerateWeightsError when |sum| < 1e-6; callers decide whether to
    skip (training) or fall back (inference).
    """
    total = raw_score_sum(scores)
    if abs(total) < NORMALIZE_EPS:
        raise DegenerateWeightsError(f"raw score sum {total:.3e} below {NORMALIZE_EPS:.0e}")
    return ad.div(scores, ad.sum_(scores))


def forward(window_values: np.ndarray, graph: AssetGraph, params: ModelParams,
            config: ModelConfig, training: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Full single-date pass: window -> LSTM -> attention stack -> head ->
    normalized weights (n, 1)."""
    x = Tensor(np.asarray(window_values, dtype=np.float64))
    h = lstm_forward(x, params, config, training, rng)
    z = gat_stack(h, graph, params, config, training, rng)
    scores = head_scores(z, params, config, training, rng)
    return normalize_weights(scores)
