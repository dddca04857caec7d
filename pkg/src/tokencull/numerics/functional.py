"""Pure forward primitives (and the closed-form derivatives the tape reuses).

All functions take and return float64 numpy arrays or Python floats and
never mutate their inputs.
"""

import numpy as np

from ..errors import ShapeError

# Denominator guard for min-max normalization of a constant vector.
EPS_NORM = 1e-6


def sigmoid(x):
    """Logistic function, stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    """GELU, tanh approximation: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    x = np.asarray(x, dtype=np.float64)
    inner = _GELU_C * (x + 0.044715 * x**3)
    out = 0.5 * x * (1.0 + np.tanh(inner))
    if out.ndim == 0:
        return float(out)
    return out


def gelu_grad(x):
    """Derivative of the tanh-approximation GELU."""
    x = np.asarray(x, dtype=np.float64)
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * x**2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner


def row_softmax(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis of a 2-D array, with max-subtraction.

    Each output row sums to 1 within 1e-12 for inputs of magnitude up to
    about 1e4.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"row_softmax needs a (rows, cols>=1) array, got {x.shape}")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def minmax_norm(x: np.ndarray, eps: float = EPS_NORM) -> np.ndarray:
    """Rescale a vector to [0, 1] via (x - min) / (max - min + eps).

    Order-preserving; a constant vector maps to all-zeros instead of
    raising.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ShapeError(f"minmax_norm needs a non-empty vector, got shape {x.shape}")
    lo = x.min()
    hi = x.max()
    return (x - lo) / (hi - lo + eps)


def slog(x):
    """Signed logarithm sign(x) * log(1 + |x|).

    Odd, monotone increasing, compresses large magnitudes while keeping
    the sign.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.log1p(np.abs(x))
    if out.ndim == 0:
        return float(out)
    return out


def masked_stats(x: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """Mask-weighted mean and population standard deviation.

    ``mask`` holds weights in [0, 1]; a zero total weight returns (0, 0).
    """
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if x.shape != m.shape:
        raise ShapeError(f"masked_stats shape mismatch: {x.shape} vs {m.shape}")
    total = m.sum()
    if total == 0.0:
        return 0.0, 0.0
    mean = float((m * x).sum() / total)
    var = float((m * (x - mean) ** 2).sum() / total)
    return mean, float(np.sqrt(var))
