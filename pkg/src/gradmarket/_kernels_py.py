"""Reference dense-layer kernels (pure numpy).

These four operations are the hot path of MBR training.  A compiled twin
lives in ``gradmarket._kernels`` with identical signatures and semantics;
``gradmarket.backend`` picks one at import time.  All arrays must be float64
and C-contiguous; outputs are written in place and nothing is returned.
"""
from __future__ import annotations

import numpy as np


def linear_forward(X: np.ndarray, W: np.ndarray, b: np.ndarray, out: np.ndarray) -> None:
    """out = X @ W + b, bias broadcast over rows."""
    np.matmul(X, W, out=out)
    out += b


def tanh_forward(Z: np.ndarray, out: np.ndarray) -> None:
    """out = tanh(Z); out may alias Z."""
    np.tanh(Z, out=out)


def tanh_backward(dA: np.ndarray, A: np.ndarray, out: np.ndarray) -> None:
    """out = dA * (1 - A**2), where A = tanh(Z) from the forward pass.

    out may alias dA or A (the callers reuse buffers)."""
    np.multiply(dA, 1.0 - A * A, out=out)


def linear_backward(
    dY: np.ndarray,
    X: np.ndarray,
    W: np.ndarray,
    dW: np.ndarray,
    db: np.ndarray,
    dX: np.ndarray | None = None,
) -> None:
    """Gradients of Y = X @ W + b: dW = X.T @ dY, db = column sums of dY,
    and (when dX is given) dX = dY @ W.T."""
    np.matmul(X.T, dY, out=dW)
    np.sum(dY, axis=0, out=db)
    if dX is not None:
        np.matmul(dY, W.T, out=dX)


def linear_backward_input(dY: np.ndarray, W: np.ndarray, dX: np.ndarray) -> None:
    """Input gradient only: dX = dY @ W.T (skips the parameter gradients)."""
    np.matmul(dY, W.T, out=dX)
