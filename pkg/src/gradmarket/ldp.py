"""Local differential privacy primitives: L1 clipping and the Laplace mechanism.

An owner clips its gradient to L1 norm at most L, then adds independent
Laplace(0, 2L/eps) noise per coordinate, which gives eps-LDP for the clipped
vector.  Owners granted eps = 0 must never be perturbed; exclude them upstream.
"""
from __future__ import annotations

import numpy as np


def clip_gradient(g: np.ndarray, L: float) -> np.ndarray:
    """Rescale g so its L1 norm is at most L: g * min(1, L / ||g||_1)."""
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient must be finite")
    _check_clip_bound(L)
    norm = float(np.abs(g).sum())
    if norm <= L:
        return g.copy()
    return g * (L / norm)


def laplace_perturb(g: np.ndarray, eps: float, L: float, rng: np.random.Generator) -> np.ndarray:
    """Add independent Laplace(0, b = 2L/eps) noise to each coordinate.

    The caller must have clipped g to L1 norm <= L already; this function only
    adds the noise.  Deterministic given the rng state.
    """
    g = np.asarray(g, dtype=np.float64)
    _check_epsilon(eps)
    _check_clip_bound(L)
    b = 2.0 * L / eps
    return g + _laplace_noise(b, g.shape, rng)


def per_coordinate_variance(eps: float, L: float) -> float:
    """Variance of each noisy coordinate: 2 * (2L / eps)^2."""
    _check_epsilon(eps)
    _check_clip_bound(L)
    return 2.0 * (2.0 * L / eps) ** 2


def _laplace_noise(b: float, shape, rng: np.random.Generator) -> np.ndarray:
    # Inverse-CDF sampling from a single uniform draw per coordinate: exact,
    # portable, and seedable without assuming any library distribution.
    u = rng.random(shape)
    z = np.empty(shape)
    upper = u >= 0.5
    z[upper] = -b * np.log(2.0 * (1.0 - u[upper]))
    lower = ~upper
    # u = 0.0 is a legal draw; floor it to avoid log(0).
    z[lower] = b * np.log(2.0 * np.maximum(u[lower], np.finfo(np.float64).tiny))
    return z


def _check_epsilon(eps: float) -> None:
    if not (eps > 0.0 and np.isfinite(eps)):
        raise ValueError("privacy loss eps must be positive and finite")


def _check_clip_bound(L: float) -> None:
    if not (L > 0.0 and np.isfinite(L)):
        raise ValueError("clip bound L must be positive and finite")
