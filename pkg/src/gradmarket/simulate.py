"""Multi-round gradient trading: auction, perturb, aggregate, descend.

Each round the broker buys privacy losses from the configured auction, every
winning owner submits its clipped, Laplace-perturbed logistic-regression
gradient, the aggregator fuses them with its weight mechanism, and the global
model takes one descent step.  Accuracy is tracked on a held-out split carved
off before partitioning.  Datasets come from a CSV file or the built-in
synthetic two-blob generator.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from gradmarket.aggregation import aggregate, bias_opt, err_bound, var_opt
from gradmarket.allin import all_in
from gradmarket.ldp import clip_gradient, laplace_perturb
from gradmarket.market import (
    AuctionOutcome,
    BidProfile,
    MarketConfig,
    generate_bid_profile,
)
from gradmarket.murba import MbrModel, murba_auction

MECHANISMS = ("allin", "murba")
AGGREGATORS = ("biasopt", "varopt")


class NoWinners(Exception):
    """Signal that this round's auction bought nothing; the round is skipped."""


@dataclass
class Dataset:
    """Equal-size per-owner partitions plus a held-out evaluation split."""

    parts_x: list[np.ndarray]
    parts_y: list[np.ndarray]
    test_x: np.ndarray
    test_y: np.ndarray

    def __post_init__(self):
        if not self.parts_x or len(self.parts_x) != len(self.parts_y):
            raise ValueError("need matching, non-empty feature/label partitions")
        rows = {x.shape[0] for x in self.parts_x}
        if len(rows) != 1:
            raise ValueError("partitions must have equal sizes")
        dims = {x.shape[1] for x in self.parts_x} | {self.test_x.shape[1]}
        if len(dims) != 1:
            raise ValueError("feature dimensions must agree")
        for y in list(self.parts_y) + [self.test_y]:
            if not np.isin(y, (0.0, 1.0)).all():
                raise ValueError("labels must be 0/1")

    @property
    def n_owners(self) -> int:
        return len(self.parts_x)

    @property
    def dim(self) -> int:
        return self.parts_x[0].shape[1]


def synthetic_blobs(
    n_rows: int,
    n_owners: int,
    dim: int = 8,
    seed: int = 0,
    test_frac: float = 0.2,
    spread: float = 0.15,
) -> Dataset:
    """Two Gaussian blobs at +-u/2 for a random unit direction u (unit
    separation between centers), split and partitioned like the CSV loader."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    y = (rng.random(n_rows) < 0.5).astype(np.float64)
    x = (y[:, None] - 0.5) * u + rng.normal(0.0, spread, size=(n_rows, dim))
    return _split_dataset(x, y, n_owners, rng, test_frac)


def load_csv_dataset(
    path, label_column: str, n_owners: int, seed: int = 0, test_frac: float = 0.2
) -> Dataset:
    """Load a headered CSV: min-max scale numeric columns to [0, 1] (constant
    columns become zeros), one-hot encode the rest, shuffle with the seed,
    carve off the test fraction, then truncate to a multiple of n_owners and
    partition equally.

    The label column must be binary: numeric 0/1, or exactly two distinct
    values mapped to 0/1 in sorted order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if label_column not in header:
            raise ValueError(f"{path}: no column named {label_column!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: no data rows")

    label_idx = header.index(label_column)
    columns = list(zip(*rows))
    y = _parse_labels(columns[label_idx], path)

    features = []
    for ci, name in enumerate(header):
        if ci == label_idx:
            continue
        col = columns[ci]
        numeric = _try_float(col)
        if numeric is not None:
            lo, hi = numeric.min(), numeric.max()
            scaled = np.zeros_like(numeric) if hi == lo else (numeric - lo) / (hi - lo)
            features.append(scaled[:, None])
        else:
            values = sorted(set(col))
            onehot = np.zeros((len(col), len(values)))
            index = {v: j for j, v in enumerate(values)}
            for r, v in enumerate(col):
                onehot[r, index[v]] = 1.0
            features.append(onehot)
    x = np.hstack(features)
    return _split_dataset(x, y, n_owners, np.random.default_rng(seed), test_frac)


def _parse_labels(col, path) -> np.ndarray:
    numeric = _try_float(col)
    if numeric is not None:
        if not np.isin(numeric, (0.0, 1.0)).all():
            raise ValueError(f"{path}: numeric labels must be 0/1")
        return numeric
    values = sorted(set(col))
    if len(values) != 2:
        raise ValueError(f"{path}: label column must be binary, found {len(values)} values")
    return np.array([values.index(v) for v in col], dtype=np.float64)


def _try_float(col):
    try:
        return np.array([float(v) for v in col])
    except ValueError:
        return None


def _split_dataset(
    x: np.ndarray, y: np.ndarray, n_owners: int, rng: np.random.Generator, test_frac: float
) -> Dataset:
    if not 0.0 <= test_frac < 1.0:
        raise ValueError("test_frac must be in [0, 1)")
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    n_test = round(test_frac * len(x))
    test_x, test_y = x[:n_test], y[:n_test]
    train_x, train_y = x[n_test:], y[n_test:]
    per_owner = len(train_x) // n_owners
    if per_owner == 0:
        raise ValueError("not enough rows to give every owner at least one")
    kept = per_owner * n_owners
    parts_x = [train_x[i * per_owner : (i + 1) * per_owner] for i in range(n_owners)]
    parts_y = [train_y[i * per_owner : (i + 1) * per_owner] for i in range(n_owners)]
    return Dataset(parts_x, parts_y, test_x, test_y)


# ---------------------------------------------------------------------------
# logistic model


def logistic_gradient(w: np.ndarray, x: np.ndarray, y: np.ndarray, clip_bound: float | None = None) -> np.ndarray:
    """Mean log-loss gradient over the rows, optionally L1-clipped."""
    if x.shape[0] == 0:
        raise ValueError("cannot take a gradient over an empty partition")
    p = expit(x @ w)
    g = x.T @ (p - y) / x.shape[0]
    return g if clip_bound is None else clip_gradient(g, clip_bound)


def accuracy(w: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of rows classified correctly; a score of exactly 0.5 counts as
    the positive class."""
    if x.shape[0] == 0:
        raise ValueError("cannot score an empty dataset")
    preds = (x @ w >= 0.0).astype(np.float64)  # sigmoid(s) >= 0.5 iff s >= 0
    return float((preds == y).mean())


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class SimConfig:
    """One simulation run: mechanism pair, market, and descent settings."""

    market: MarketConfig
    rounds: int = 10
    learning_rate: float = 0.01
    clip_bound: float = 1.0
    mechanism: str = "allin"
    aggregator: str = "varopt"
    checkpoint: str | None = None  # trained model path, murba only
    noiseless: bool = False  # ablation: skip the market, average clipped gradients

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("need at least one round")
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if not (self.learning_rate > 0.0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class RoundRecord:
    round: int
    accuracy: float
    err_bound: float  # NaN for skipped rounds, 0.0 under the noiseless ablation
    total_payment: float


@dataclass(frozen=True)
class RunMetrics:
    rounds: list[RoundRecord]
    final_accuracy: float
    weights: np.ndarray


def run_trading_round(
    w: np.ndarray,
    data: Dataset,
    profile: BidProfile,
    cfg: SimConfig,
    rng: np.random.Generator,
    model: MbrModel | None = None,
) -> tuple[np.ndarray, AuctionOutcome, float]:
    """One market round: auction, clip+perturb the winners' gradients (owners
    granted eps = 0 are never perturbed), aggregate.  Raises NoWinners when the
    auction buys nothing."""
    budget = cfg.market.budget
    if cfg.mechanism == "allin":
        outcome = all_in(BidProfile(tuple(b.to_single_minded() for b in profile)), budget)
    else:
        if model is None:
            raise ValueError("murba rounds need a trained model")
        outcome = murba_auction(model, profile, budget)
    eps = outcome.epsilons
    winners = np.flatnonzero(eps > 0.0)
    if winners.size == 0:
        raise NoWinners
    lam = (bias_opt if cfg.aggregator == "biasopt" else var_opt)(eps)
    grads = np.zeros((data.n_owners, w.size))
    for i in winners:  # ascending owner order keeps the rng stream deterministic
        local = logistic_gradient(w, data.parts_x[i], data.parts_y[i], cfg.clip_bound)
        grads[i] = laplace_perturb(local, eps[i], cfg.clip_bound, rng)
    fused = aggregate(lam, grads)
    return fused, outcome, err_bound(lam, eps, cfg.clip_bound)


def run_fl(cfg: SimConfig, data: Dataset, model: MbrModel | None = None) -> RunMetrics:
    """Multi-round descent on the traded gradients.

    A single bid profile is drawn from the market config and reused every
    round; the same generator then drives the per-round noise, so a config is
    fully deterministic.  Features get a trailing intercept column.  Rounds
    with no winners leave the weights unchanged and log err_bound = NaN.
    """
    if data.n_owners != cfg.market.n_owners:
        raise ValueError("dataset partitions must match the market's owner count")
    if cfg.mechanism == "murba" and model is None and not cfg.noiseless:
        if cfg.checkpoint is None:
            raise ValueError("murba simulation needs a checkpoint or model")
        from gradmarket.murba import load_checkpoint

        model, _ = load_checkpoint(cfg.checkpoint)

    aug = Dataset(
        [_with_intercept(x) for x in data.parts_x],
        data.parts_y,
        _with_intercept(data.test_x),
        data.test_y,
    )
    rng = np.random.default_rng(cfg.market.seed)
    profile = generate_bid_profile(cfg.market, rng)
    w = np.zeros(aug.dim)
    records = []
    for r in range(cfg.rounds):
        if cfg.noiseless:
            grads = [
                logistic_gradient(w, x, y, cfg.clip_bound)
                for x, y in zip(aug.parts_x, aug.parts_y)
            ]
            fused = np.mean(grads, axis=0)
            err_value, payment = 0.0, 0.0
            w = w - cfg.learning_rate * fused
        else:
            try:
                fused, outcome, err_value = run_trading_round(w, aug, profile, cfg, rng, model)
            except NoWinners:
                records.append(RoundRecord(r, accuracy(w, aug.test_x, aug.test_y), float("nan"), 0.0))
                continue
            payment = outcome.total_payment()
            w = w - cfg.learning_rate * fused
        records.append(RoundRecord(r, accuracy(w, aug.test_x, aug.test_y), err_value, payment))
    return RunMetrics(records, records[-1].accuracy, w)


def _with_intercept(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


METRICS_COLUMNS = (
    "run_id",
    "round",
    "budget",
    "mechanism",
    "aggregator",
    "err_bound",
    "total_payment",
    "accuracy",
    "seed",
)


def write_metrics_csv(path, run_id: str, cfg: SimConfig, metrics: RunMetrics) -> None:
    """Append-free write of one run's per-round metrics in the fixed schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for rec in metrics.rounds:
            writer.writerow(
                [
                    run_id,
                    rec.round,
                    cfg.market.budget,
                    cfg.mechanism,
                    cfg.aggregator,
                    rec.err_bound,
                    rec.total_payment,
                    rec.accuracy,
                    cfg.market.seed,
                ]
            )
