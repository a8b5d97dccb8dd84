import math

import numpy as np
import pytest

from gradmarket.market import (
    Bid,
    BidProfile,
    MarketConfig,
    ProfileBatch,
    Valuation,
    batch_valuation_derivatives,
    batch_valuations,
    eval_valuation,
    generate_bid_profile,
    generate_profile_batch,
    owner_utility,
    scenario_config,
)


def test_valuation_families_at_sample_points():
    # base forms 2*eps, eps^2, 2*sqrt(eps), exp(eps)-1, multiplied by scale
    assert eval_valuation(Valuation("linear", 2.0), 3.0) == pytest.approx(12.0)
    assert eval_valuation(Valuation("quadratic", 1.5), 2.0) == pytest.approx(6.0)
    assert eval_valuation(Valuation("sqrt", 3.0), 4.0) == pytest.approx(12.0)
    assert eval_valuation(Valuation("exp", 1.0), 1.0) == pytest.approx(math.e - 1)
    assert eval_valuation(Valuation("exp", 2.0), 0.0) == 0.0


def test_all_families_vanish_at_zero_and_increase():
    for family in ("linear", "quadratic", "sqrt", "exp"):
        v = Valuation(family, 1.3)
        assert eval_valuation(v, 0.0) == 0.0
        samples = [eval_valuation(v, e) for e in (0.5, 1.0, 2.0, 4.0)]
        assert all(b > a for a, b in zip(samples, samples[1:]))


def test_step_valuation_all_or_nothing():
    v = Valuation("step", 5.0, step_threshold=2.0)
    assert eval_valuation(v, 0.0) == 0.0
    # any positive loss incurs the full cost
    assert eval_valuation(v, 0.5) == 5.0
    assert eval_valuation(v, 2.0) == 5.0


def test_unknown_family_rejected():
    with pytest.raises(ValueError):
        Valuation("cubic", 1.0)
    with pytest.raises(ValueError):
        Valuation("linear", -1.0)


def test_bid_value_at_budget():
    b = Bid(Valuation("quadratic", 2.0), 3.0)
    assert b.value_at_budget() == pytest.approx(18.0)
    s = b.to_single_minded()
    assert s.valuation.family == "step"
    assert s.valuation.scale == pytest.approx(18.0)
    assert s.privacy_budget == 3.0


def test_owner_utility_cases():
    bid = Bid(Valuation("linear", 2.0), 3.0)
    # paid 5 for eps=1 costing 2*2*1=4: utility 1
    assert owner_utility(bid, 1.0, 5.0) == pytest.approx(1.0)
    # granting more than the tolerable budget is unboundedly bad
    assert owner_utility(bid, 3.5, 100.0) == -math.inf
    # exactly at the budget is allowed; cost there is 2*2*3=12
    assert owner_utility(bid, 3.0, 12.0) == pytest.approx(0.0)


def test_generate_profile_deterministic():
    cfg = MarketConfig(n_owners=6, budget=10.0, seed=5)
    a = generate_bid_profile(cfg, cfg.rng())
    b = generate_bid_profile(cfg, cfg.rng())
    assert a == b
    c = generate_bid_profile(MarketConfig(n_owners=6, budget=10.0, seed=6), np.random.default_rng(6))
    assert a != c


def test_generated_budgets_respect_scenario():
    for scenario, cap in (("low", 5.0), ("high", 2.0)):
        cfg = scenario_config(scenario, n_owners=50, budget=10.0, seed=1)
        assert cfg.sensitivity == cap
        profile = generate_bid_profile(cfg, cfg.rng())
        budgets = profile.privacy_budgets()
        assert np.all(budgets >= cfg.budget_low)
        assert np.all(budgets <= cap)


def test_scenario_config_rejects_unknown():
    with pytest.raises(ValueError):
        scenario_config("medium", n_owners=2, budget=1.0)


def test_profile_batch_matches_scalar_eval():
    cfg = scenario_config("low", n_owners=4, budget=8.0, seed=9)
    rng = cfg.rng()
    batch = generate_profile_batch(cfg, rng, 16)
    eps = np.abs(np.random.default_rng(0).normal(size=(16, 4))) + 0.1
    vals = batch_valuations(batch, eps)
    assert vals.shape == (16, 4)
    for k in (0, 7, 15):
        profile = batch.profile(k)
        for i, bid in enumerate(profile):
            expected = eval_valuation(bid.valuation, eps[k, i])
            assert vals[k, i] == pytest.approx(expected, rel=1e-12)


def test_batch_derivatives_match_finite_differences():
    cfg = scenario_config("high", n_owners=3, budget=5.0, seed=2)
    batch = generate_profile_batch(cfg, cfg.rng(), 8)
    eps = np.abs(np.random.default_rng(1).normal(size=(8, 3))) + 0.2
    der = batch_valuation_derivatives(batch, eps)
    h = 1e-7
    fd = (batch_valuations(batch, eps + h) - batch_valuations(batch, eps - h)) / (2 * h)
    np.testing.assert_allclose(der, fd, rtol=1e-5, atol=1e-7)


def test_batch_round_trip():
    cfg = scenario_config("low", n_owners=3, budget=4.0, seed=3)
    profiles = [generate_bid_profile(cfg, cfg.rng()) for _ in range(2)]
    batch = ProfileBatch.from_profiles(profiles)
    assert batch.profile(0) == profiles[0]
    assert batch.profile(1) == profiles[1]


def test_profile_generation_draw_order_is_per_owner():
    # owner draws happen owner by owner, so a prefix of owners is unchanged
    # when n grows with the same seed
    cfg_small = MarketConfig(n_owners=3, budget=5.0, seed=4)
    cfg_big = MarketConfig(n_owners=5, budget=5.0, seed=4)
    small = generate_bid_profile(cfg_small, cfg_small.rng())
    big = generate_bid_profile(cfg_big, cfg_big.rng())
    assert tuple(small) == tuple(big)[:3]
