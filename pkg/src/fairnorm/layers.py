"""Dense building blocks with hand-written backward passes.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the cache and the upstream gradient. :class:`ForwardTape` collects
caches so a model can unwind them in reverse order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import AggregationOperator, spmm

ACTIVATIONS = ("relu", "sigmoid")
LIPSCHITZ = {"relu": 1.0, "sigmoid": 1.0, "identity": 1.0}


@dataclass
class DenseParam:
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


class TapeError(RuntimeError):
    pass


class ForwardTape:
    """LIFO record of forward caches."""

    def __init__(self):
        self._entries: list[tuple[str, object]] = []

    def push(self, tag: str, cache) -> None:
        self._entries.append((tag, cache))

    def pop(self, tag: str | None = None):
        if not self._entries:
            raise TapeError("tape is empty or already consumed")
        got, cache = self._entries.pop()
        if tag is not None and got != tag:
            raise TapeError(f"expected {tag!r} on tape, found {got!r}")
        return cache

    def clear(self) -> None:
        self._entries.clear()

    def __len__(self):
        return len(self._entries)


def glorot_init(shape, rng_seed) -> np.ndarray:
    """Uniform Glorot/Xavier init for a ``fan_out x fan_in`` weight."""
    fan_out, fan_in = shape
    if fan_out < 1 or fan_in < 1:
        raise ValueError("dimensions must be positive")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def linear_forward(w: DenseParam, h: np.ndarray):
    if w.value.shape[1] != h.shape[0]:
        raise ValueError(f"shape mismatch: W {w.value.shape} vs h {h.shape}")
    return w.value @ h, h


def linear_backward(w: DenseParam, cache, grad_out: np.ndarray, need_input_grad=True):
    h = cache
    w.grad += grad_out @ h.T
    return w.value.T @ grad_out if need_input_grad else None


def gcn_layer_forward(w: DenseParam, h: np.ndarray, op: AggregationOperator):
    """Pre-normalization, pre-activation ``W H Q``. Aggregating first keeps the
    sparse product on the narrower side when ``F_in <= F_out``."""
    if w.value.shape[1] != h.shape[0]:
        raise ValueError(f"shape mismatch: W {w.value.shape} vs h {h.shape}")
    agg = spmm(op, h)
    return w.value @ agg, (agg, op)


def gcn_layer_backward(w: DenseParam, cache, grad_out: np.ndarray, need_input_grad=True):
    agg, op = cache
    w.grad += grad_out @ agg.T
    if not need_input_grad:
        return None
    return spmm(op, w.value.T @ grad_out)


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0:
        return float(_sigmoid(z.reshape(1))[0])
    return _sigmoid(z)


def activation_forward(kind: str, z: np.ndarray):
    z = np.asarray(z, dtype=np.float64)
    if kind == "relu":
        return np.maximum(z, 0.0), (kind, z > 0)
    if kind == "sigmoid":
        out = sigmoid(z)
        return out, (kind, out)
    if kind == "identity":
        return z.copy(), (kind, None)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(cache, grad_out):
    kind, saved = cache
    if kind == "relu":
        # subgradient 0 at z == 0
        return grad_out * saved
    if kind == "sigmoid":
        return grad_out * saved * (1.0 - saved)
    return grad_out
