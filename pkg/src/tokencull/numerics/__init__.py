"""Dense float64 tensor plumbing: primitives, a reverse-order tape, and
finite-difference verification.

Everything downstream (the toy decoder, the scheduling pipeline, the
surrogate-gradient machinery) composes the small operator set defined here.
"""

from .functional import (
    EPS_NORM,
    gelu,
    gelu_grad,
    masked_stats,
    minmax_norm,
    row_softmax,
    sigmoid,
    slog,
)
from .tensor import (
    as_tensor,
    check_finite,
    load_tensor,
    load_tensor_map,
    read_tensor,
    save_tensor,
    save_tensor_map,
    write_tensor,
)
from .autodiff import DualTensor, Tape, dual
from .gradcheck import finite_diff_check, taped_scalar

__all__ = [
    "EPS_NORM",
    "DualTensor",
    "Tape",
    "as_tensor",
    "check_finite",
    "dual",
    "finite_diff_check",
    "gelu",
    "gelu_grad",
    "load_tensor",
    "load_tensor_map",
    "masked_stats",
    "minmax_norm",
    "read_tensor",
    "row_softmax",
    "save_tensor",
    "save_tensor_map",
    "sigmoid",
    "slog",
    "taped_scalar",
    "write_tensor",
]
