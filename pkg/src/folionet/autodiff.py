"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape-based engine: every operation executed while a Tape is active
records a backward rule, and backward() replays the tape in exact reverse
execution order, accumulating gradients by summation across fan-out.

Tensors wrap numpy arrays of rank <= 3. Every op validates that its output
is finite and raises NumericsError otherwise, so NaN/Inf surface at the op
that produced them instead of three layers downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericsError, ValidationError

MAX_RANK = 3

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Execution-ordered record of op backward rules.

    Use as a context manager around the forward pass; backward() walks the
    entries in reverse. Independent tapes may coexist on the stack (the
    innermost one records).
    """

    def __init__(self) -> None:
        self._entries: list = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self._entries)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense float64 array plus an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ValidationError(f"tensor rank {arr.ndim} exceeds max rank {MAX_RANK}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        self.grad = g.copy() if self.grad is None else self.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar over the module-level primitives
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return slice_(self, key)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"op '{op}' produced non-finite values")


def _record(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    """Finalize an op: finiteness check, output tensor, tape entry.

    `backward(out_grad)` must accumulate into each grad-requiring input.
    """
    _check_finite(out_data, op)
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        def entry():
            if out.grad is not None:
                backward(out.grad)

        tape._entries.append(entry)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Seed d(loss)/d(loss) = 1 and replay the tape in reverse."""
    if loss.data.size != 1:
        raise ValidationError(f"backward requires a scalar loss, got shape {loss.shape}")
    loss._accumulate(np.ones_like(loss.data))
    for entry in reversed(tape._entries):
        entry()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that were expanded by numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValidationError(f"op '{op}': incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "add")
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _record("add", out_data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "sub")
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _record("sub", out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "mul")
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _record("mul", out_data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _record("div", out_data, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValidationError(f"op 'matmul': incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _record("matmul", out_data, (a, b), bwd)


def transpose(a) -> Tensor:
    a = _lift(a)
    if a.ndim != 2:
        raise ValidationError(f"op 'transpose': expected rank 2, got shape {a.shape}")
    out_data = a.data.T.copy()

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _record("transpose", out_data, (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ValidationError("op 'concat': empty input list")
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _record("concat", out_data, tuple(ts), bwd)


def slice_(a, key) -> Tensor:
    a = _lift(a)
    out_data = np.array(a.data[key])

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] += g
            a._accumulate(full)

    return _record("slice", out_data, (a,), bwd)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out_data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).copy())

    return _record("sum", out_data, (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out_data = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.size if axis is None else a.shape[axis]

    def bwd(g):
        if a.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.shape) / count)

    return _record("mean", out_data, (a,), bwd)


def broadcast_to(a, shape) -> Tensor:
    a = _lift(a)
    try:
        out_data = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ValidationError(f"op 'broadcast_to': cannot broadcast {a.shape} to {tuple(shape)}") from None

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))

    return _record("broadcast_to", out_data, (a,), bwd)


def exp(a) -> Tensor:
    a = _lift(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _record("exp", out_data, (a,), bwd)


def log(a) -> Tensor:
    a = _lift(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _record("log", out_data, (a,), bwd)


def sqrt(a) -> Tensor:
    a = _lift(a)
    with np.errstate(invalid="ignore"):
        out_data = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out_data)

    return _record("sqrt", out_data, (a,), bwd)


def tanh(a) -> Tensor:
    a = _lift(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_data * out_data))

    return _record("tanh", out_data, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = _lift(a)
    # numerically stable two-sided form
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                        np.exp(a.data) / (1.0 + np.exp(a.data)))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return _record("sigmoid", out_data, (a,), bwd)


def leaky_relu(a, negative_slope: float = 0.2) -> Tensor:
    a = _lift(a)
    pos = a.data > 0
    out_data = np.where(pos, a.data, negative_slope * a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * np.where(pos, 1.0, negative_slope))

    return _record("leaky_relu", out_data, (a,), bwd)


def elu(a, alpha: float = 1.0) -> Tensor:
    a = _lift(a)
    pos = a.data > 0
    expm1 = alpha * np.expm1(np.minimum(a.data, 0.0))
    out_data = np.where(pos, a.data, expm1)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * np.where(pos, 1.0, expm1 + alpha))

    return _record("elu", out_data, (a,), bwd)


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor) elementwise; gradient flows only where a >= floor."""
    a = _lift(a)
    keep = a.data >= floor
    out_data = np.where(keep, a.data, floor)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return _record("clamp_min", out_data, (a,), bwd)


def _softmax_backward(a: Tensor, out_data: np.ndarray, axis: int):
    def bwd(g):
        if a.requires_grad:
            inner = np.sum(g * out_data, axis=axis, keepdims=True)
            a._accumulate(out_data * (g - inner))

    return bwd


def softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=axis, keepdims=True)
    return _record("softmax", out_data, (a,), _softmax_backward(a, out_data, axis))


def masked_softmax(a, mask, axis: int = -1) -> Tensor:
    """Softmax over the entries where mask is true; masked entries get weight 0.

    Raises ValidationError if any row along `axis` is fully masked out.
    """
    a = _lift(a)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if not m.any(axis=axis).all():
        raise ValidationError("op 'masked_softmax': fully-masked row")
    low = np.where(m, a.data, -np.inf)
    shifted = a.data - np.max(low, axis=axis, keepdims=True)
    e = np.where(m, np.exp(shifted), 0.0)
    out_data = e / np.sum(e, axis=axis, keepdims=True)
    return _record("masked_softmax", out_data, (a,), _softmax_backward(a, out_data, axis))


def dropout(a, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train outputs are scaled by 1/(1-rate); eval is identity."""
    a = _lift(a)
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"op 'dropout': rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValidationError("op 'dropout': training mode requires an rng")
    scale = (rng.random(a.shape) >= rate) / (1.0 - rate)
    out_data = a.data * scale

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * scale)

    return _record("dropout", out_data, (a,), bwd)


@dataclass
class GradCheckResult:
    """Finite-difference agreement report for one checked function."""

    name: str
    tol: float
    max_rel_error: float = 0.0
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(fn, inputs: list[Tensor], eps: float = 1e-5, tol: float = 1e-4,
               name: str = "fn") -> GradCheckResult:
    """Compare tape gradients of a scalar-valued fn against central differences.

    Error metric per element: |g_ad - g_fd| / max(1, |g_fd|).
    """
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        out = fn(inputs)
        if out.data.size != 1:
            raise ValidationError("grad_check requires a scalar-valued function")
        backward(out, tape)
    analytic = [t.grad_or_zeros().copy() for t in inputs]

    result = GradCheckResult(name=name, tol=tol)
    for idx, t in enumerate(inputs):
        fd = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = fn(inputs).item()
            flat[k] = orig - eps
            f_minus = fn(inputs).item()
            flat[k] = orig
            fd_flat[k] = (f_plus - f_minus) / (2.0 * eps)
        err = np.abs(analytic[idx] - fd) / np.maximum(1.0, np.abs(fd))
        worst = float(err.max()) if err.size else 0.0
        result.per_input.append(worst)
        result.max_rel_error = max(result.max_rel_error, worst)
    return result
