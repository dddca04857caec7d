"""Taped multi-head attention built on the selected kernel backend."""

import numpy as np

from ..errors import ShapeError
from ..numerics.autodiff import DualTensor, _out
from . import attention_backward, attention_forward


class FlopCounter:
    """Accumulates matmul multiply-add counts (2 flops each), optionally
    bucketed per decoder layer."""

    def __init__(self):
        self.total = 0
        self.per_layer = {}
        self._layer = None

    def enter_layer(self, index: int) -> None:
        self._layer = index
        self.per_layer.setdefault(index, 0)

    def add(self, flops: int) -> None:
        self.total += flops
        if self._layer is not None:
            self.per_layer[self._layer] += flops


def count_matmul(counter, m: int, n: int, k: int) -> None:
    if counter is not None:
        counter.add(2 * m * n * k)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    t, d = x.shape
    a = d // n_heads
    return np.ascontiguousarray(x.reshape(t, n_heads, a).transpose(1, 0, 2))


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, a = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * a)


def attention(tape, q: DualTensor, k: DualTensor, v: DualTensor,
              n_heads: int, counter: FlopCounter | None = None) -> DualTensor:
    """Multi-head scaled dot-product attention over (tokens, d_model)
    projections; softmax scale is 1/sqrt(head_dim)."""
    t, d = q.value.shape
    if d % n_heads != 0:
        raise ShapeError(f"d_model {d} not divisible by {n_heads} heads")
    a = d // n_heads
    scale = 1.0 / np.sqrt(a)
    q3 = _split_heads(q.value, n_heads)
    k3 = _split_heads(k.value, n_heads)
    v3 = _split_heads(v.value, n_heads)
    out3, probs = attention_forward(q3, k3, v3, scale, need_probs=tape is not None)
    # QK^T and PV per head
    count_matmul(counter, n_heads * t, t, a)
    count_matmul(counter, n_heads * t, a, t)
    out = _out(_merge_heads(out3), "attention")
    if tape is not None:
        def bwd():
            dout3 = _split_heads(out.grad, n_heads)
            dq3, dk3, dv3 = attention_backward(q3, k3, v3, probs, dout3, scale)
            q.grad += _merge_heads(dq3)
            k.grad += _merge_heads(dk3)
            v.grad += _merge_heads(dv3)
        tape.record(bwd)
    return out
