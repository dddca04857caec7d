"""Attention kernel backends.

A compiled extension (``_attn_ext``, Cython over BLAS) is preferred when it
imported cleanly; otherwise the pure-numpy fallback is used. Selection
happens once at import and can be pinned with the ``TOKENCULL_KERNELS``
environment variable (``auto`` | ``ext`` | ``py``) or switched at runtime
with :func:`set_backend` (used by the backend-comparison benchmark).
"""

import os
from contextlib import contextmanager

from . import attn_py

try:
    from . import _attn_ext
except ImportError:
    _attn_ext = None

_BACKENDS = {"py": attn_py}
if _attn_ext is not None:
    _BACKENDS["ext"] = _attn_ext


def available_backends():
    return sorted(_BACKENDS)


def _resolve(name: str):
    if name == "auto":
        name = "ext" if "ext" in _BACKENDS else "py"
    if name not in _BACKENDS:
        raise ValueError(
            f"kernel backend {name!r} not available (have {available_backends()})"
        )
    return name


_active = _resolve(os.environ.get("TOKENCULL_KERNELS", "auto"))


def backend_name() -> str:
    return _active


def set_backend(name: str) -> str:
    """Select the kernel backend; returns the previously active name."""
    global _active
    previous = _active
    _active = _resolve(name)
    return previous


@contextmanager
def use_backend(name: str):
    previous = set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def attention_forward(q, k, v, scale, need_probs=True):
    return _BACKENDS[_active].attention_forward(q, k, v, scale, need_probs)


def attention_backward(q, k, v, probs, dout, scale):
    return _BACKENDS[_active].attention_backward(q, k, v, probs, dout, scale)
