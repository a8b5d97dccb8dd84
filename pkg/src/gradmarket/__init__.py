"""gradmarket: privacy auctions and LDP gradient aggregation for federated learning.

The broker buys privacy losses from data owners under a hard budget (the
All-in fixed-price auction or a trained regret-minimizing one), owners hand
over clipped Laplace-perturbed gradients, and an error-bound-optimal
aggregator fuses them for descent.
"""

from gradmarket.aggregation import (
    EmptyWinnerSet,
    aggregate,
    bias_bound,
    bias_opt,
    err_bound,
    var_bound,
    var_opt,
)
from gradmarket.allin import all_in
from gradmarket.backend import get_backend_name
from gradmarket.ldp import clip_gradient, laplace_perturb, per_coordinate_variance
from gradmarket.market import (
    AuctionOutcome,
    Bid,
    BidProfile,
    MarketConfig,
    Valuation,
    generate_bid_profile,
    generate_profile_batch,
    owner_utility,
    scenario_config,
)
from gradmarket.murba import (
    MbrModel,
    TrainConfig,
    TrainingDiverged,
    best_response,
    empirical_ir,
    empirical_regret,
    load_checkpoint,
    murba_auction,
    save_checkpoint,
    train_mbr,
    transform_bids,
)
from gradmarket.simulate import (
    Dataset,
    NoWinners,
    SimConfig,
    accuracy,
    load_csv_dataset,
    logistic_gradient,
    run_fl,
    run_trading_round,
    synthetic_blobs,
)

__version__ = "0.1.0"

__all__ = [
    "AuctionOutcome",
    "Bid",
    "BidProfile",
    "Dataset",
    "EmptyWinnerSet",
    "MarketConfig",
    "MbrModel",
    "NoWinners",
    "SimConfig",
    "TrainConfig",
    "TrainingDiverged",
    "Valuation",
    "accuracy",
    "aggregate",
    "all_in",
    "best_response",
    "bias_bound",
    "bias_opt",
    "clip_gradient",
    "empirical_ir",
    "empirical_regret",
    "err_bound",
    "generate_bid_profile",
    "generate_profile_batch",
    "get_backend_name",
    "laplace_perturb",
    "load_checkpoint",
    "load_csv_dataset",
    "logistic_gradient",
    "murba_auction",
    "owner_utility",
    "per_coordinate_variance",
    "run_fl",
    "run_trading_round",
    "save_checkpoint",
    "scenario_config",
    "synthetic_blobs",
    "train_mbr",
    "transform_bids",
    "var_bound",
    "var_opt",
    "__version__",
]
