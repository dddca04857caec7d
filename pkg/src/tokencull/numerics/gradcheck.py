"""Finite-difference verification of hand-written backward rules."""

import numpy as np

from ..errors import NumericsError
from .autodiff import DualTensor, Tape, dual

# Absolute floor used in the relative-error denominator.
DENOM_FLOOR = 1e-8


def finite_diff_check(f, x: np.ndarray, h: float) -> float:
    """Compare an analytic gradient against central differences.

    ``f(tape, xd)`` must build a scalar DualTensor from the DualTensor
    ``xd``; with ``tape=None`` it is a plain forward evaluation. Returns
    the maximum over coordinates of

        |g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, 1e-8)

    where g_numeric_i = (f(x + h e_i) - f(x - h e_i)) / (2h).
    """
    x = np.asarray(x, dtype=np.float64)

    def value_at(pt: np.ndarray) -> float:
        out = f(None, dual(pt))
        v = float(out.value[()])
        if not np.isfinite(v):
            raise NumericsError("objective is non-finite at evaluation point")
        return v

    value_at(x)

    tape = Tape()
    xd = dual(x)
    loss = f(tape, xd)
    tape.backward(loss)
    analytic = xd.grad.copy()

    numeric = np.zeros_like(x)
    flat = x.ravel()
    nflat = numeric.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = value_at(x)
        flat[i] = orig - h
        down = value_at(x)
        flat[i] = orig
        nflat[i] = (up - down) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOM_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def taped_scalar(build):
    """Adapt ``build(tape, xd) -> scalar DualTensor`` into a function
    returning ``(value, grad)`` in one taped pass. Convenience for tests."""

    def run(x: np.ndarray):
        tape = Tape()
        xd = dual(np.asarray(x, dtype=np.float64))
        loss = build(tape, xd)
        tape.backward(loss)
        return float(loss.value[()]), xd.grad.copy()

    return run
