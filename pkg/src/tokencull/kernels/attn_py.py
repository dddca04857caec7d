"""Pure-numpy attention kernels (fallback backend).

Shapes: q, k, v are (heads, tokens, head_dim) float64 C-contiguous.
"""

import numpy as np


def attention_forward(q, k, v, scale: float, need_probs: bool = True):
    """Scaled dot-product attention per head.

    Returns (out, probs); probs is None when ``need_probs`` is False.
    """
    h, t, a = q.shape
    out = np.empty((h, t, a))
    probs = np.empty((h, t, t)) if need_probs else None
    for i in range(h):
        s = (q[i] @ k[i].T) * scale
        s -= s.max(axis=1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=1, keepdims=True)
        out[i] = s @ v[i]
        if need_probs:
            probs[i] = s
    return out, probs


def attention_backward(q, k, v, probs, dout, scale: float):
    """Gradients of attention_forward w.r.t. q, k, v given saved probs."""
    h = q.shape[0]
    dq = np.empty_like(q)
    dk = np.empty_like(k)
    dv = np.empty_like(v)
    for i in range(h):
        p = probs[i]
        dv[i] = p.T @ dout[i]
        dp = dout[i] @ v[i].T
        ds = p * (dp - (dp * p).sum(axis=1, keepdims=True))
        dq[i] = (ds @ k[i]) * scale
        dk[i] = (ds.T @ q[i]) * scale
    return dq, dk, dv
