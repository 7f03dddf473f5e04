"""Small dense-tensor kernels used by the encoder.

All public functions take and return float32 ``numpy`` arrays and are
deterministic for a fixed input.  Reductions run in float64 registers where
that matters for stability (softmax, layer norm, gelu) and the result is
rounded back to float32 storage.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ShapeError

_SQRT2 = float(np.sqrt(2.0))


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a 2-D float32 array, raising ShapeError otherwise."""
    m = np.asarray(a, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got {m.ndim}-D with shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` with float32 storage.

    Inner dimensions must agree; the contraction itself is delegated to the
    platform BLAS, which accumulates in at-least-float32 registers and is
    deterministic for a fixed thread count.
    """
    a = as_matrix(a, "matmul lhs")
    b = as_matrix(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} vs {b.shape}"
        )
    return np.matmul(a, b)


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with max-subtraction for overflow safety.

    Accepts a 2-D float32 array and returns one of the same shape whose rows
    are nonnegative and sum to 1 within float32 rounding.  Internally the
    exponentials and the row sums are evaluated in float64 so that extreme
    input magnitudes neither overflow nor lose the normalization.
    """
    m = as_matrix(m, "softmax input")
    x = m.astype(np.float64)
    x -= x.max(axis=1, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=1, keepdims=True)
    return x.astype(np.float32)


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> np.ndarray:
    """Layer normalization over the last axis.

    out = gamma * (x - mean) / sqrt(var + eps) + beta

    with the population variance (divide by n, not n-1).  ``x`` may be a
    single vector or a batch of row vectors; ``gamma`` and ``beta`` must
    match the last axis.  Moments are computed in float64.
    """
    x = np.asarray(x, dtype=np.float32)
    gamma = np.asarray(gamma, dtype=np.float32)
    beta = np.asarray(beta, dtype=np.float32)
    if x.ndim not in (1, 2):
        raise ShapeError(f"layer_norm input must be 1-D or 2-D, got shape {x.shape}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm gamma/beta must have shape ({d},), got {gamma.shape} and {beta.shape}"
        )
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    out = (x64 - mean) / np.sqrt(var + eps)
    out = out * gamma.astype(np.float64) + beta.astype(np.float64)
    return out.astype(np.float32)


def gelu(x) -> np.ndarray:
    """Exact Gaussian error linear unit, x * Phi(x).

    Phi is the standard normal CDF evaluated through ``erf`` (no tanh
    approximation).  Elementwise over any shape; float32 in, float32 out.
    """
    x = np.asarray(x, dtype=np.float32)
    x64 = x.astype(np.float64)
    out = x64 * 0.5 * (1.0 + erf(x64 / _SQRT2))
    return out.astype(np.float32)
