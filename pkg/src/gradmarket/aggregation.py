"""Aggregation-weight mechanisms and error bounds for noisy gradient fusion.

The broker combines perturbed gradients as g = sum_i lambda_i * g_i with
simplex weights lambda.  Two mechanisms pick the weights from the purchased
privacy losses:

  bias_opt  minimizes the worst-case bias bound   sum_i |lambda_i - 1/n| * L
  var_opt   minimizes the variance bound          sum_i 8 * (lambda_i * L / eps_i)^2

Closed forms for both bounds, their sum (the error bound), and a brute-force
grid oracle for cross-checking optimality live here too.  Equal local dataset
sizes are assumed throughout; unequal-size weighting is a documented extension
point, not implemented.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from gradmarket.market import EmptyWinnerSet


def _as_eps(epsilons) -> np.ndarray:
    eps = np.asarray(epsilons, dtype=np.float64)
    if eps.ndim != 1 or eps.size == 0:
        raise ValueError("epsilons must be a non-empty 1-d vector")
    if not np.all(np.isfinite(eps)) or np.any(eps < 0.0):
        raise ValueError("epsilons must be finite and >= 0")
    return eps


def bias_opt(epsilons) -> np.ndarray:
    """Bias-minimizing weights.

    Every winner (eps > 0) gets 1/n except the highest-eps winner, which
    absorbs the weight the zero-eps owners cannot carry: 1 - (|W| - 1)/n.
    Ties on the maximum broken by lowest owner index.
    """
    eps = _as_eps(epsilons)
    winners = np.flatnonzero(eps > 0.0)
    if winners.size == 0:
        raise EmptyWinnerSet("bias_opt needs at least one owner with eps > 0")
    n = eps.size
    lam = np.zeros(n)
    lam[winners] = 1.0 / n
    top = winners[int(np.argmax(eps[winners]))]
    lam[top] = 1.0 - (winners.size - 1) / n
    return lam


def var_opt(epsilons) -> np.ndarray:
    """Variance-minimizing weights: lambda_i proportional to eps_i^2 on winners.

    Each winner's noisy-gradient variance is 2(2L/eps_i)^2 per coordinate, so
    inverse-variance weighting reduces to eps_i^2 / sum eps_j^2 (L cancels).
    """
    eps = _as_eps(epsilons)
    winners = np.flatnonzero(eps > 0.0)
    if winners.size == 0:
        raise EmptyWinnerSet("var_opt needs at least one owner with eps > 0")
    lam = np.zeros(eps.size)
    e2 = eps[winners] ** 2
    lam[winners] = e2 / e2.sum()
    return lam


def inverse_variance_weights(variances) -> np.ndarray:
    """Normalized inverse-variance weights, the minimizer of sum lambda_i^2 v_i."""
    v = np.asarray(variances, dtype=np.float64)
    if np.any(v <= 0.0) or not np.all(np.isfinite(v)):
        raise ValueError("variances must be positive and finite")
    inv = 1.0 / v
    return inv / inv.sum()


def bias_bound(lambdas, L: float) -> float:
    """Worst-case aggregation bias: sum_i |lambda_i - 1/n| * L."""
    lam = np.asarray(lambdas, dtype=np.float64)
    return float(np.abs(lam - 1.0 / lam.size).sum() * L)


def var_bound(lambdas, epsilons, L: float) -> float:
    """Aggregation variance bound: sum over lambda_i > 0 of 8 (lambda_i L / eps_i)^2.

    +inf when any positive weight sits on a zero-eps owner; zero-weight owners
    never contribute, whatever their eps.
    """
    lam = np.asarray(lambdas, dtype=np.float64)
    eps = np.asarray(epsilons, dtype=np.float64)
    if lam.shape != eps.shape:
        raise ValueError("weights and epsilons must have the same length")
    pos = lam > 0.0
    if np.any(eps[pos] == 0.0):
        return float("inf")
    return float(np.sum(8.0 * (lam[pos] * L / eps[pos]) ** 2))


def err_bound(lambdas, epsilons, L: float) -> float:
    """Error bound: variance bound plus squared bias bound."""
    return var_bound(lambdas, epsilons, L) + bias_bound(lambdas, L) ** 2


def aggregate(lambdas, noisy_gradients) -> np.ndarray:
    """Weighted sum of the owners' noisy gradients: sum_i lambda_i * g_i."""
    lam = np.asarray(lambdas, dtype=np.float64)
    grads = np.asarray(noisy_gradients, dtype=np.float64)
    if grads.ndim != 2 or grads.shape[0] != lam.size:
        raise ValueError("need one gradient per weight, all of equal dimension")
    return lam @ grads


@lru_cache(maxsize=32)
def _simplex_grid(n: int, resolution: int) -> np.ndarray:
    """All weight vectors on the n-simplex with coordinates k/resolution."""

    def compositions(parts: int, total: int):
        if parts == 1:
            yield (total,)
            return
        for head in range(total + 1):
            for rest in compositions(parts - 1, total - head):
                yield (head, *rest)

    grid = np.array(list(compositions(n, resolution)), dtype=np.float64)
    grid /= resolution
    grid.setflags(write=False)
    return grid


def brute_force_min_variance(epsilons, L: float, grid_step: float) -> tuple[np.ndarray, float]:
    """Exhaustive grid search for the variance-minimizing weights.

    Only intended as a small-n oracle for checking var_opt; refuses n > 4.
    """
    eps = _as_eps(epsilons)
    if eps.size > 4:
        raise ValueError("brute force oracle is limited to n <= 4")
    resolution = round(1.0 / grid_step)
    if resolution < 1 or abs(resolution * grid_step - 1.0) > 1e-9:
        raise ValueError("grid_step must divide 1")
    grid = _simplex_grid(eps.size, resolution)
    values = np.zeros(len(grid))
    pos = eps > 0.0
    values += np.sum(8.0 * (grid[:, pos] * L / eps[pos]) ** 2, axis=1)
    if not pos.all():
        values[np.any(grid[:, ~pos] > 0.0, axis=1)] = float("inf")
    best = int(np.argmin(values))
    return grid[best].copy(), float(values[best])
