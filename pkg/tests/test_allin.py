import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradmarket.allin import all_in
from gradmarket.market import (
    Bid,
    BidProfile,
    Valuation,
    generate_bid_profile,
    owner_utility,
    scenario_config,
)


def step_profile(pairs):
    """pairs = [(V, eps_bar), ...] -> a single-minded profile."""
    return BidProfile(
        tuple(Bid(Valuation("step", v, step_threshold=e), e) for v, e in pairs)
    )


def test_hand_trace_three_owners():
    out = all_in(step_profile([(1.0, 2.0), (3.0, 2.0), (4.0, 1.0)]), 6.0)
    # units 0.5, 1.5, 4.0; owner 2 rejected at 6/5=1.2; unit price 6/4=1.5
    np.testing.assert_allclose(out.epsilons, [2.0, 2.0, 0.0])
    np.testing.assert_allclose(out.payments, [3.0, 3.0, 0.0])
    assert out.total_payment() == pytest.approx(6.0)


def test_single_bid_wins_at_budget():
    out = all_in(step_profile([(2.0, 1.0)]), 2.0)
    np.testing.assert_allclose(out.epsilons, [1.0])
    np.testing.assert_allclose(out.payments, [2.0])


def test_single_bid_priced_out():
    out = all_in(step_profile([(5.0, 1.0)]), 2.0)
    np.testing.assert_allclose(out.epsilons, [0.0])
    np.testing.assert_allclose(out.payments, [0.0])
    assert out.total_payment() == 0.0


def test_validation():
    with pytest.raises(ValueError):
        all_in(step_profile([(1.0, 1.0)]), 0.0)
    with pytest.raises(ValueError):
        all_in(BidProfile(()), 1.0)
    with pytest.raises(ValueError):
        all_in(step_profile([(1.0, 0.0)]), 1.0)  # zero budget: unit undefined
    with pytest.raises(ValueError):
        # continuous bids must be collapsed first
        all_in(BidProfile((Bid(Valuation("linear", 1.0), 1.0),)), 1.0)


def test_unit_ties_broken_by_index():
    # identical bids: both fit at B=4 (unit 1 <= 4/4), and at B=2 only the
    # first survives the greedy scan
    out = all_in(step_profile([(2.0, 2.0), (2.0, 2.0)]), 2.0)
    np.testing.assert_allclose(out.epsilons, [2.0, 0.0])


def test_deterministic():
    cfg = scenario_config("low", n_owners=12, budget=9.0, seed=31)
    profile = generate_bid_profile(cfg, cfg.rng())
    single = BidProfile(tuple(b.to_single_minded() for b in profile))
    a = all_in(single, 9.0)
    b = all_in(single, 9.0)
    np.testing.assert_array_equal(a.epsilons, b.epsilons)
    np.testing.assert_array_equal(a.payments, b.payments)


def _random_single_minded(rng, n, scenario="low"):
    cfg = scenario_config(scenario, n_owners=n, budget=10.0, seed=int(rng.integers(1 << 31)))
    profile = generate_bid_profile(cfg, np.random.default_rng(cfg.seed))
    return BidProfile(tuple(b.to_single_minded() for b in profile))


def test_individual_rationality_and_budget_feasibility():
    rng = np.random.default_rng(7)
    for _ in range(300):
        profile = _random_single_minded(rng, int(rng.integers(2, 12)))
        budget = float(rng.uniform(0.5, 30.0))
        out = all_in(profile, budget)
        assert out.total_payment() <= budget + 1e-9
        for i, bid in enumerate(profile):
            if out.epsilons[i] > 0.0:
                # winners sell the whole budget and never take a loss
                assert out.epsilons[i] == bid.privacy_budget
                assert out.payments[i] >= bid.valuation.scale - 1e-9
            else:
                assert out.payments[i] == 0.0


def _misreport_utility(profile, i, new_bid, budget):
    bids = list(profile)
    true_bid = bids[i]
    bids[i] = new_bid
    out = all_in(BidProfile(tuple(bids)), budget)
    if out.epsilons[i] > true_bid.privacy_budget:
        return float("-inf")
    return owner_utility(true_bid, out.epsilons[i], out.payments[i])


def test_truthfulness_misreport_sweep():
    rng = np.random.default_rng(13)
    violations = 0
    for _ in range(60):
        profile = _random_single_minded(rng, 8)
        budget = float(rng.uniform(2.0, 25.0))
        out = all_in(profile, budget)
        for i, bid in enumerate(profile):
            truthful = owner_utility(bid, out.epsilons[i], out.payments[i])
            for kappa in (0.25, 0.5, 0.8, 1.25, 2.0, 4.0):
                lie = Bid(
                    Valuation("step", kappa * bid.valuation.scale, step_threshold=bid.privacy_budget),
                    bid.privacy_budget,
                )
                if _misreport_utility(profile, i, lie, budget) > truthful + 1e-9:
                    violations += 1
            for kappa in (0.25, 0.5, 0.8):
                eb = kappa * bid.privacy_budget
                lie = Bid(Valuation("step", bid.valuation.scale, step_threshold=eb), eb)
                if _misreport_utility(profile, i, lie, budget) > truthful + 1e-9:
                    violations += 1
    assert violations == 0


def test_overreporting_budget_risks_infeasible_loss():
    # an owner granted more privacy loss than it can tolerate scores -inf,
    # so over-reports can never beat truth
    rng = np.random.default_rng(5)
    profile = _random_single_minded(rng, 6)
    budget = 15.0
    out = all_in(profile, budget)
    for i, bid in enumerate(profile):
        truthful = owner_utility(bid, out.epsilons[i], out.payments[i])
        for kappa in (1.25, 2.0):
            eb = kappa * bid.privacy_budget
            lie = Bid(Valuation("step", bid.valuation.scale, step_threshold=eb), eb)
            assert _misreport_utility(profile, i, lie, budget) <= max(truthful, 0.0)


def test_winner_monotonicity():
    # lowering the ask or raising the budget (within truth) keeps a winner winning
    rng = np.random.default_rng(23)
    checked = 0
    for _ in range(80):
        profile = _random_single_minded(rng, 6)
        budget = float(rng.uniform(2.0, 20.0))
        out = all_in(profile, budget)
        for i, bid in enumerate(profile):
            if out.epsilons[i] == 0.0:
                continue
            cheaper = Bid(
                Valuation("step", 0.5 * bid.valuation.scale, step_threshold=bid.privacy_budget),
                bid.privacy_budget,
            )
            bids = list(profile)
            bids[i] = cheaper
            out2 = all_in(BidProfile(tuple(bids)), budget)
            assert out2.epsilons[i] > 0.0
            checked += 1
    assert checked > 50


@given(st.integers(0, 10**6), st.floats(1.0, 40.0))
@settings(max_examples=50, deadline=None)
def test_payments_never_exceed_budget(seed, budget):
    rng = np.random.default_rng(seed)
    profile = _random_single_minded(rng, int(rng.integers(1, 10)))
    out = all_in(profile, float(budget))
    assert out.total_payment() <= budget + 1e-9
    # winners form a prefix of the unit-valuation order
    units = np.array([b.valuation.scale / b.privacy_budget for b in profile])
    order = np.lexsort((np.arange(len(units)), units))
    flags = out.epsilons[order] > 0.0
    if flags.any():
        last = np.max(np.flatnonzero(flags))
        assert flags[: last + 1].all()


def test_large_auction_speed():
    n = 10**5
    rng = np.random.default_rng(0)
    scales = rng.uniform(0.5, 10.0, n)
    budgets = rng.uniform(0.5, 5.0, n)
    profile = BidProfile(
        tuple(
            Bid(Valuation("step", float(v), step_threshold=float(e)), float(e))
            for v, e in zip(scales, budgets)
        )
    )
    start = time.perf_counter()
    out = all_in(profile, 500.0)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    assert out.total_payment() <= 500.0 + 1e-9
