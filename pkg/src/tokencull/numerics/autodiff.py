"""Reverse-order tape over a fixed operator set with hand-written backward
rules.

There is no general graph autodiff here: each operation both computes its
forward value and, when a tape is supplied, records a closure that pulls
the output gradient and accumulates into its inputs' gradients. Running
``Tape.backward`` replays the closures in reverse order.

Scalars are shape-() arrays so they can carry gradients like everything
else. Passing ``tape=None`` to any op gives a plain forward evaluation.
"""

import numpy as np

from ..errors import NumericsError, ShapeError
from . import functional as F

# Set to False to skip per-op finiteness validation (forward-only benchmarks).
FINITE_CHECKS = True


class DualTensor:
    """A value together with its accumulated gradient.

    The gradient buffer is allocated lazily on first access and is zeroed
    (fresh) at that point; ``zero_grad`` resets it between optimizer steps.
    """

    __slots__ = ("value", "_grad")

    def __init__(self, value, grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        if grad is not None:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.value.shape:
                raise ShapeError("grad shape must match value shape")
        self._grad = grad

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        if self._grad is not None:
            self._grad.fill(0.0)

    def __repr__(self):
        return f"DualTensor(shape={self.value.shape})"


def dual(value) -> DualTensor:
    return DualTensor(value)


class Tape:
    """Records backward closures in forward order; replays them reversed.

    A tape instance is single-threaded. One forward pass builds one tape;
    ``backward`` seeds the loss gradient and propagates to every recorded
    input.
    """

    def __init__(self):
        self._ops = []

    def record(self, backward_fn) -> None:
        self._ops.append(backward_fn)

    def __len__(self):
        return len(self._ops)

    def backward(self, loss: DualTensor, seed: float = 1.0) -> None:
        if loss.value.shape != ():
            raise ShapeError("backward seeds a scalar loss")
        loss.grad[()] = seed
        for fn in reversed(self._ops):
            fn()


def _out(value, name: str) -> DualTensor:
    value = np.asarray(value, dtype=np.float64)
    if FINITE_CHECKS and not np.all(np.isfinite(value)):
        raise NumericsError(f"{name} produced non-finite values")
    return DualTensor(value)


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(tape, a: DualTensor, b: DualTensor) -> DualTensor:
    out = _out(a.value + b.value, "add")
    if tape is not None:
        def bwd():
            a.grad += out.grad
            b.grad += out.grad
        tape.record(bwd)
    return out


def add_bias(tape, x: DualTensor, b: DualTensor) -> DualTensor:
    """Add a length-d bias vector to every row of a (T, d) array."""
    out = _out(x.value + b.value[None, :], "add_bias")
    if tape is not None:
        def bwd():
            x.grad += out.grad
            b.grad += out.grad.sum(axis=0)
        tape.record(bwd)
    return out


def mul(tape, a: DualTensor, b: DualTensor) -> DualTensor:
    out = _out(a.value * b.value, "mul")
    if tape is not None:
        def bwd():
            a.grad += out.grad * b.value
            b.grad += out.grad * a.value
        tape.record(bwd)
    return out


def scale(tape, x: DualTensor, c: float) -> DualTensor:
    out = _out(x.value * c, "scale")
    if tape is not None:
        def bwd():
            x.grad += out.grad * c
        tape.record(bwd)
    return out


def mul_const(tape, x: DualTensor, c: np.ndarray) -> DualTensor:
    """Elementwise product with a constant (non-differentiated) array."""
    out = _out(x.value * c, "mul_const")
    if tape is not None:
        def bwd():
            x.grad += out.grad * c
        tape.record(bwd)
    return out


def relu(tape, x: DualTensor) -> DualTensor:
    out = _out(np.maximum(x.value, 0.0), "relu")
    if tape is not None:
        mask = (x.value > 0.0).astype(np.float64)
        def bwd():
            x.grad += out.grad * mask
        tape.record(bwd)
    return out


def gelu(tape, x: DualTensor) -> DualTensor:
    out = _out(F.gelu(x.value), "gelu")
    if tape is not None:
        def bwd():
            x.grad += out.grad * F.gelu_grad(x.value)
        tape.record(bwd)
    return out


def sigmoid(tape, x: DualTensor) -> DualTensor:
    s = F.sigmoid(x.value)
    out = _out(s, "sigmoid")
    if tape is not None:
        def bwd():
            x.grad += out.grad * out.value * (1.0 - out.value)
        tape.record(bwd)
    return out


def slog(tape, x: DualTensor) -> DualTensor:
    out = _out(F.slog(x.value), "slog")
    if tape is not None:
        # d/dx sign(x) log(1+|x|) = 1/(1+|x|)
        deriv = 1.0 / (1.0 + np.abs(x.value))
        def bwd():
            x.grad += out.grad * deriv
        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(tape, a: DualTensor, b: DualTensor) -> DualTensor:
    out = _out(a.value @ b.value, "matmul")
    if tape is not None:
        def bwd():
            a.grad += out.grad @ b.value.T
            b.grad += a.value.T @ out.grad
        tape.record(bwd)
    return out


def matvec(tape, m: DualTensor, v: DualTensor) -> DualTensor:
    out = _out(m.value @ v.value, "matvec")
    if tape is not None:
        def bwd():
            m.grad += np.outer(out.grad, v.value)
            v.grad += m.value.T @ out.grad
        tape.record(bwd)
    return out


def vecmat(tape, v: DualTensor, m: DualTensor) -> DualTensor:
    out = _out(v.value @ m.value, "vecmat")
    if tape is not None:
        def bwd():
            v.grad += m.value @ out.grad
            m.grad += np.outer(v.value, out.grad)
        tape.record(bwd)
    return out


def dot(tape, a: DualTensor, b: DualTensor) -> DualTensor:
    out = _out(np.array(a.value @ b.value), "dot")
    if tape is not None:
        def bwd():
            g = out.grad[()]
            a.grad += g * b.value
            b.grad += g * a.value
        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# slicing / assembly


def slice_rows(tape, x: DualTensor, r0: int, r1: int) -> DualTensor:
    out = _out(x.value[r0:r1].copy(), "slice_rows")
    if tape is not None:
        def bwd():
            x.grad[r0:r1] += out.grad
        tape.record(bwd)
    return out


def slice_cols(tape, x: DualTensor, c0: int, c1: int) -> DualTensor:
    out = _out(x.value[:, c0:c1].copy(), "slice_cols")
    if tape is not None:
        def bwd():
            x.grad[:, c0:c1] += out.grad
        tape.record(bwd)
    return out


def concat_rows(tape, a: DualTensor, b: DualTensor) -> DualTensor:
    out = _out(np.concatenate([a.value, b.value], axis=0), "concat_rows")
    if tape is not None:
        na = a.value.shape[0]
        def bwd():
            a.grad += out.grad[:na]
            b.grad += out.grad[na:]
        tape.record(bwd)
    return out


def gather_rows(tape, x: DualTensor, idx) -> DualTensor:
    """Select rows by index; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.value.shape[0]):
        raise ShapeError("gather_rows index out of range")
    out = _out(x.value[idx], "gather_rows")
    if tape is not None:
        def bwd():
            np.add.at(x.grad, idx, out.grad)
        tape.record(bwd)
    return out


def scale_rows(tape, x: DualTensor, weights: np.ndarray) -> DualTensor:
    """Scale each row by a constant weight (weights are not differentiated)."""
    w = np.asarray(weights, dtype=np.float64)
    out = _out(x.value * w[:, None], "scale_rows")
    if tape is not None:
        def bwd():
            x.grad += out.grad * w[:, None]
        tape.record(bwd)
    return out


def stack_scalars(tape, scalars) -> DualTensor:
    """Pack shape-() duals into one vector."""
    scalars = list(scalars)
    out = _out(np.array([s.value[()] for s in scalars]), "stack_scalars")
    if tape is not None:
        def bwd():
            for i, s in enumerate(scalars):
                s.grad[()] += out.grad[i]
        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# normalizations and reductions


def row_softmax(tape, x: DualTensor) -> DualTensor:
    p = F.row_softmax(x.value)
    out = _out(p, "row_softmax")
    if tape is not None:
        def bwd():
            g = out.grad
            inner = (g * out.value).sum(axis=1, keepdims=True)
            x.grad += out.value * (g - inner)
        tape.record(bwd)
    return out


def layer_norm(tape, x: DualTensor, g: DualTensor, b: DualTensor,
               eps: float = 1e-5) -> DualTensor:
    mu = x.value.mean(axis=1, keepdims=True)
    var = x.value.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv
    out = _out(xhat * g.value[None, :] + b.value[None, :], "layer_norm")
    if tape is not None:
        def bwd():
            go = out.grad
            dxhat = go * g.value[None, :]
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            x.grad += (dxhat - m1 - xhat * m2) * inv
            g.grad += (go * xhat).sum(axis=0)
            b.grad += go.sum(axis=0)
        tape.record(bwd)
    return out


def row_sum(tape, x: DualTensor) -> DualTensor:
    out = _out(x.value.sum(axis=1), "row_sum")
    if tape is not None:
        def bwd():
            x.grad += out.grad[:, None]
        tape.record(bwd)
    return out


def mean(tape, x: DualTensor) -> DualTensor:
    out = _out(np.array(x.value.mean()), "mean")
    if tape is not None:
        n = x.value.size
        def bwd():
            x.grad += out.grad[()] / n
        tape.record(bwd)
    return out


def std(tape, x: DualTensor) -> DualTensor:
    """Population standard deviation of all elements."""
    mu = x.value.mean()
    s = float(np.sqrt(((x.value - mu) ** 2).mean()))
    out = _out(np.array(s), "std")
    if tape is not None:
        n = x.value.size
        def bwd():
            if s > 1e-30:
                x.grad += out.grad[()] * (x.value - mu) / (n * s)
        tape.record(bwd)
    return out


def vmin(tape, x: DualTensor) -> DualTensor:
    i = int(np.argmin(x.value))
    out = _out(np.array(x.value.flat[i]), "vmin")
    if tape is not None:
        def bwd():
            x.grad.flat[i] += out.grad[()]
        tape.record(bwd)
    return out


def vmax(tape, x: DualTensor) -> DualTensor:
    i = int(np.argmax(x.value))
    out = _out(np.array(x.value.flat[i]), "vmax")
    if tape is not None:
        def bwd():
            x.grad.flat[i] += out.grad[()]
        tape.record(bwd)
    return out


def quantile(tape, x: DualTensor, p: float) -> DualTensor:
    """Linear-interpolation quantile of a vector (inclusive convention):
    position p*(n-1) between sorted order statistics."""
    v = x.value
    if v.ndim != 1 or v.size < 1:
        raise ShapeError("quantile needs a non-empty vector")
    order = np.argsort(v, kind="stable")
    pos = p * (v.size - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, v.size - 1)
    frac = pos - lo
    value = (1.0 - frac) * v[order[lo]] + frac * v[order[hi]]
    out = _out(np.array(value), "quantile")
    if tape is not None:
        def bwd():
            g = out.grad[()]
            x.grad[order[lo]] += (1.0 - frac) * g
            x.grad[order[hi]] += frac * g
        tape.record(bwd)
    return out


def minmax_norm(tape, x: DualTensor, eps: float = F.EPS_NORM) -> DualTensor:
    """Taped (x - min) / (max - min + eps); argmin/argmax take the first
    occurrence on ties."""
    v = x.value
    imin = int(np.argmin(v))
    imax = int(np.argmax(v))
    denom = v[imax] - v[imin] + eps
    out = _out((v - v[imin]) / denom, "minmax_norm")
    if tape is not None:
        def bwd():
            g = out.grad
            gsum = g.sum()
            x.grad += g / denom
            x.grad[imin] -= gsum / denom
            coeff = (g * out.value).sum() / denom
            x.grad[imax] -= coeff
            x.grad[imin] += coeff
        tape.record(bwd)
    return out


def zero_diag(tape, x: DualTensor) -> DualTensor:
    """Zero the diagonal of a square matrix."""
    n = x.value.shape[0]
    mask = 1.0 - np.eye(n)
    return mul_const(tape, x, mask)


def normalize_sum(tape, c: DualTensor) -> DualTensor:
    """w = c / sum(c); a zero total falls back to uniform weights (with no
    gradient, since the fallback is constant)."""
    total = float(c.value.sum())
    n = c.value.size
    if total == 0.0:
        return _out(np.full(n, 1.0 / n), "normalize_sum")
    out = _out(c.value / total, "normalize_sum")
    if tape is not None:
        def bwd():
            g = out.grad
            c.grad += (g - (g * out.value).sum()) / total
        tape.record(bwd)
    return out
