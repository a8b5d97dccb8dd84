"""All-in: a truthful, budget-feasible auction for single-minded privacy bids.

Each owner offers its entire privacy budget eps_bar at an all-or-nothing price
V.  Owners are scanned in ascending order of unit valuation V / eps_bar and
greedily accepted while the next owner's unit valuation stays within the
budget-per-unit the enlarged winner set would allow.  The scan stops at the
first rejection; every winner is then paid a common critical unit price

    p_unit = min(B / sum_W eps_bar, unit valuation of the first rejected owner)

times its privacy budget.  The cap by the first rejected owner's unit
valuation is what makes under-reporting unprofitable: without it, an owner
could shrink the winner set by misreporting and capture the whole budget.
When every owner wins, the budget term is the only binding one and payments
exhaust B exactly; otherwise the total payment can stay below B.
"""
from __future__ import annotations

import numpy as np

from gradmarket.market import AuctionOutcome, BidProfile


def all_in(profile: BidProfile, budget: float) -> AuctionOutcome:
    """Run the auction.  Returns an all-zero outcome when nobody is affordable."""
    if not (budget > 0.0 and np.isfinite(budget)):
        raise ValueError("monetary budget must be positive and finite")
    n = len(profile)
    values = np.empty(n)
    eps_bar = np.empty(n)
    for i, bid in enumerate(profile):
        if bid.valuation.family != "step":
            raise ValueError("all_in requires single-minded (step) bids; convert first")
        if not bid.privacy_budget > 0.0:
            raise ValueError("all_in bids need a positive privacy budget")
        if not bid.valuation.scale > 0.0:
            raise ValueError("all_in bids need a positive price")
        values[i] = bid.valuation.scale
        eps_bar[i] = bid.privacy_budget

    units = values / eps_bar
    order = np.lexsort((np.arange(n), units))  # ascending units, ties by index
    running = np.cumsum(eps_bar[order])
    accepted = units[order] <= budget / running

    first_reject = int(np.argmin(accepted)) if not accepted.all() else n
    winners = order[:first_reject]

    epsilons = np.zeros(n)
    payments = np.zeros(n)
    if winners.size > 0:
        p_unit = budget / float(running[first_reject - 1])
        if first_reject < n:
            p_unit = min(p_unit, float(units[order[first_reject]]))
        epsilons[winners] = eps_bar[winners]
        payments[winners] = eps_bar[winners] * p_unit
    return AuctionOutcome(epsilons, payments)
