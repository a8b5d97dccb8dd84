"""Domain types for the gradient market.

Owners hold local gradients and sell differential-privacy budget; the broker
buys privacy with a fixed monetary budget.  This module defines the valuation
functions owners use to price privacy loss, bid/profile containers, auction
outcomes, and the synthetic profile generator used by training and simulation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Utility of an infeasible outcome (privacy loss above the owner's budget).
NEGATIVE_INFINITY = float("-inf")

# Continuous valuation families eligible for the synthetic generator.  "step"
# is reserved for single-minded (all-or-nothing) bids and never generated.
CONTINUOUS_FAMILIES = ("linear", "quadratic", "sqrt", "exp")
ALL_FAMILIES = CONTINUOUS_FAMILIES + ("step",)

# Privacy-budget scenarios: upper end of the per-owner budget draw.
SCENARIO_SENSITIVITY = {"low": 5.0, "high": 2.0}


@dataclass(frozen=True)
class Valuation:
    """Monotone valuation v(eps): money an owner demands for privacy loss eps.

    Families (base form, scaled by ``scale``):
      linear     2 * eps
      quadratic  eps ** 2
      sqrt       2 * sqrt(eps)
      exp        exp(eps) - 1
      step       0 at eps = 0, else scale (all-or-nothing; step_threshold
                 records the intended full-budget point)

    ``scale`` may be zero only in the degenerate case of an identically-zero
    valuation (e.g. a single-minded bid built from a zero privacy budget);
    auctions reject such bids at their own boundary.
    """

    family: str
    scale: float
    step_threshold: float = 0.0

    def __post_init__(self):
        if self.family not in ALL_FAMILIES:
            raise ValueError(f"unknown valuation family {self.family!r}")
        if not (self.scale >= 0.0 and math.isfinite(self.scale)):
            raise ValueError("valuation scale must be finite and >= 0")
        if self.family == "step":
            if not (self.step_threshold >= 0.0 and math.isfinite(self.step_threshold)):
                raise ValueError("step threshold must be finite and >= 0")
        elif self.step_threshold != 0.0:
            raise ValueError("step_threshold is only meaningful for step valuations")

    def __call__(self, eps: float) -> float:
        return eval_valuation(self, eps)

    def derivative(self, eps: float) -> float:
        """d v / d eps.  For step valuations this is 0 almost everywhere."""
        if eps < 0.0:
            raise ValueError("privacy loss must be >= 0")
        if self.family == "linear":
            return 2.0 * self.scale
        if self.family == "quadratic":
            return 2.0 * self.scale * eps
        if self.family == "sqrt":
            return self.scale / math.sqrt(max(eps, 1e-12))
        if self.family == "exp":
            return self.scale * math.exp(eps)
        return 0.0


def eval_valuation(valuation: Valuation, eps: float) -> float:
    """Evaluate a valuation at privacy loss eps >= 0."""
    if eps < 0.0:
        raise ValueError("privacy loss must be >= 0")
    a = valuation.scale
    if valuation.family == "linear":
        return a * 2.0 * eps
    if valuation.family == "quadratic":
        return a * eps * eps
    if valuation.family == "sqrt":
        return a * 2.0 * math.sqrt(eps)
    if valuation.family == "exp":
        return a * (math.exp(eps) - 1.0)
    # step: all-or-nothing, zero only at eps = 0 (step_threshold records the
    # intended all-or-nothing point but does not change evaluation)
    return a if eps > 0.0 else 0.0


@dataclass(frozen=True)
class Bid:
    """An owner's reported valuation function and privacy budget."""

    valuation: Valuation
    privacy_budget: float

    def __post_init__(self):
        if not (self.privacy_budget >= 0.0 and math.isfinite(self.privacy_budget)):
            raise ValueError("privacy budget must be finite and >= 0")

    def value_at_budget(self) -> float:
        """The owner's price for giving up all of its privacy budget."""
        return eval_valuation(self.valuation, self.privacy_budget)

    def to_single_minded(self) -> "Bid":
        """Collapse to an all-or-nothing bid: pay v(budget) for the full budget.

        Step valuations pass through unchanged.
        """
        if self.valuation.family == "step":
            return self
        return Bid(
            Valuation("step", self.value_at_budget(), step_threshold=self.privacy_budget),
            self.privacy_budget,
        )


@dataclass(frozen=True)
class BidProfile:
    """One bid per owner, indexed 0..n-1."""

    bids: tuple[Bid, ...]

    def __post_init__(self):
        if len(self.bids) == 0:
            raise ValueError("a bid profile needs at least one owner")

    def __len__(self) -> int:
        return len(self.bids)

    def __iter__(self):
        return iter(self.bids)

    def __getitem__(self, i: int) -> Bid:
        return self.bids[i]

    def privacy_budgets(self) -> np.ndarray:
        return np.array([b.privacy_budget for b in self.bids], dtype=np.float64)

    def replace_bid(self, i: int, bid: Bid) -> "BidProfile":
        bids = list(self.bids)
        bids[i] = bid
        return BidProfile(tuple(bids))


def profile_from_bids(bids: Iterable[Bid]) -> BidProfile:
    return BidProfile(tuple(bids))


def owner_utility(true_bid: Bid, eps: float, payment: float) -> float:
    """Quasi-linear utility: payment minus true cost, -inf if eps exceeds the budget."""
    if eps < 0.0:
        raise ValueError("privacy loss must be >= 0")
    if not math.isfinite(payment):
        raise ValueError("payment must be finite")
    if eps > true_bid.privacy_budget:
        return NEGATIVE_INFINITY
    return payment - eval_valuation(true_bid.valuation, eps)


@dataclass(frozen=True)
class AuctionOutcome:
    """Per-owner privacy losses and payments chosen by an auction."""

    epsilons: np.ndarray
    payments: np.ndarray

    def __post_init__(self):
        eps = np.asarray(self.epsilons, dtype=np.float64)
        pay = np.asarray(self.payments, dtype=np.float64)
        if eps.shape != pay.shape or eps.ndim != 1:
            raise ValueError("epsilons and payments must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(eps)) and np.all(np.isfinite(pay))):
            raise ValueError("auction outcome must be finite")
        if np.any(eps < 0.0) or np.any(pay < 0.0):
            raise ValueError("privacy losses and payments must be >= 0")
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "payments", pay)

    @property
    def winners(self) -> np.ndarray:
        return np.flatnonzero(self.epsilons > 0.0)

    def total_payment(self) -> float:
        return float(self.payments.sum())


class EmptyWinnerSet(Exception):
    """Raised when an operation needs at least one owner with positive privacy loss."""


@dataclass(frozen=True)
class MarketConfig:
    """Synthetic market setup shared by training and simulation.

    ``sensitivity`` is the upper end of the per-owner privacy-budget draw
    (5.0 for the low privacy-sensitivity scenario, 2.0 for high).
    """

    n_owners: int
    budget: float
    sensitivity: float = 5.0
    alpha_range: tuple[float, float] = (0.5, 1.5)
    budget_low: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_owners < 1:
            raise ValueError("need at least one owner")
        if not (self.budget > 0.0 and math.isfinite(self.budget)):
            raise ValueError("monetary budget must be positive and finite")
        if not (0.0 < self.budget_low < self.sensitivity):
            raise ValueError("privacy-budget range must satisfy 0 < low < sensitivity")
        lo, hi = self.alpha_range
        if not (0.0 < lo <= hi):
            raise ValueError("alpha_range must be positive with lo <= hi")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def scenario_config(scenario: str, n_owners: int, budget: float, seed: int = 0) -> MarketConfig:
    """Config for a named privacy-sensitivity scenario ("low" or "high")."""
    try:
        sens = SCENARIO_SENSITIVITY[scenario]
    except KeyError:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {sorted(SCENARIO_SENSITIVITY)}")
    return MarketConfig(n_owners=n_owners, budget=budget, sensitivity=sens, seed=seed)


def generate_bid_profile(config: MarketConfig, rng: np.random.Generator) -> BidProfile:
    """Draw one synthetic bid profile.

    Per owner, in order: a continuous valuation family (uniform over the four),
    a scale alpha ~ U(alpha_range), and a privacy budget ~ U(budget_low,
    sensitivity).  The draw order is part of the determinism contract.
    """
    bids = []
    lo, hi = config.alpha_range
    for _ in range(config.n_owners):
        family = CONTINUOUS_FAMILIES[rng.integers(0, len(CONTINUOUS_FAMILIES))]
        alpha = rng.uniform(lo, hi)
        budget = rng.uniform(config.budget_low, config.sensitivity)
        bids.append(Bid(Valuation(family, alpha), budget))
    return BidProfile(tuple(bids))


@dataclass(frozen=True)
class ProfileBatch:
    """Array-of-struct view of many profiles for batched computation.

    ``families`` holds indices into CONTINUOUS_FAMILIES.
    """

    families: np.ndarray  # (K, n) int64
    scales: np.ndarray  # (K, n) float64
    budgets: np.ndarray  # (K, n) float64

    def __post_init__(self):
        if not (self.families.shape == self.scales.shape == self.budgets.shape):
            raise ValueError("batch arrays must share a (K, n) shape")

    def __len__(self) -> int:
        return self.families.shape[0]

    @property
    def n_owners(self) -> int:
        return self.families.shape[1]

    @classmethod
    def from_profiles(cls, profiles: Sequence[BidProfile]) -> "ProfileBatch":
        fam_index = {name: i for i, name in enumerate(CONTINUOUS_FAMILIES)}
        fams = np.array([[fam_index[b.valuation.family] for b in p] for p in profiles])
        scales = np.array([[b.valuation.scale for b in p] for p in profiles])
        budgets = np.array([[b.privacy_budget for b in p] for p in profiles])
        return cls(fams, scales, budgets)

    def profile(self, k: int) -> BidProfile:
        bids = tuple(
            Bid(Valuation(CONTINUOUS_FAMILIES[f], a), e)
            for f, a, e in zip(self.families[k], self.scales[k], self.budgets[k])
        )
        return BidProfile(bids)


def generate_profile_batch(config: MarketConfig, rng: np.random.Generator, count: int) -> ProfileBatch:
    """``count`` draws of generate_bid_profile, packed into arrays."""
    return ProfileBatch.from_profiles([generate_bid_profile(config, rng) for _ in range(count)])


def batch_valuations(batch: ProfileBatch, eps: np.ndarray) -> np.ndarray:
    """Evaluate every owner's valuation at the matching entry of ``eps`` (K, n)."""
    return _family_eval(batch.families, batch.scales, eps)


def batch_valuation_derivatives(batch: ProfileBatch, eps: np.ndarray) -> np.ndarray:
    """d v / d eps for every owner at the matching entry of ``eps`` (K, n)."""
    f, a = batch.families, batch.scales
    out = np.empty_like(a)
    np.copyto(out, 2.0 * a, where=f == 0)
    np.copyto(out, 2.0 * a * eps, where=f == 1)
    np.copyto(out, a / np.sqrt(np.maximum(eps, 1e-12)), where=f == 2)
    np.copyto(out, a * np.exp(eps), where=f == 3)
    return out


def _family_eval(families: np.ndarray, scales: np.ndarray, eps: np.ndarray) -> np.ndarray:
    out = np.empty_like(scales)
    np.copyto(out, scales * 2.0 * eps, where=families == 0)
    np.copyto(out, scales * eps * eps, where=families == 1)
    np.copyto(out, scales * 2.0 * np.sqrt(np.maximum(eps, 0.0)), where=families == 2)
    np.copyto(out, scales * np.expm1(eps), where=families == 3)
    return out
