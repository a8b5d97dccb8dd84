"""Learned multi-unit privacy auction (MURBA): networks, metrics, training.

Each owner's bid is transformed into M sub-bids offering eps_bar/m at price
v(eps_bar/m).  Two dense networks read the flattened reported profile
[per owner: M sub-bid prices, eps_bar; then the money budget B]:

  allocation net  n*(M+1) logits, per-owner softmax over M sub-bid slots plus
                  one dummy slot, so every owner's allocation mass is <= 1
  payment net     n logits, softmax over owners; owner i receives fraction
                  p_i of B, so total payment equals B structurally

The realized privacy loss is the expectation eps_i = sum_m z_im * eps_bar_i/m,
which never exceeds eps_bar_i.  Training minimizes the empirical aggregation
error bound (variance-optimal weights) subject to empirical regret and
individual-rationality constraints, enforced with an augmented Lagrangian;
misreports are found by projected gradient ascent in the network's own input
space and are held fixed while differentiating the objective.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gradmarket import nn
from gradmarket.market import (
    AuctionOutcome,
    BidProfile,
    MarketConfig,
    ProfileBatch,
    batch_valuation_derivatives,
    batch_valuations,
    eval_valuation,
    generate_profile_batch,
)

# Profiles whose every allocated eps falls below this floor hit the finite
# error cap instead of the 1/eps^2 singularity.
ERR_EPS_FLOOR = 1e-6


def err_cap(clip_bound: float) -> float:
    """Finite stand-in for the error bound when no meaningful eps is bought."""
    return 8.0 * clip_bound * clip_bound / ERR_EPS_FLOOR**2


class TrainingDiverged(RuntimeError):
    """Raised when the training objective stops being finite."""


def transform_bids(profile: BidProfile, M: int) -> list[list[tuple[float, float]]]:
    """Split each bid into M sub-bids (v(eps_bar/m), eps_bar/m) for m = 1..M."""
    if M < 1:
        raise ValueError("need at least one sub-bid per owner")
    out = []
    for bid in profile:
        if not bid.privacy_budget > 0.0:
            raise ValueError("sub-bid transformation needs positive privacy budgets")
        out.append(
            [
                (eval_valuation(bid.valuation, bid.privacy_budget / m), bid.privacy_budget / m)
                for m in range(1, M + 1)
            ]
        )
    return out


def input_scales(
    n_owners: int, M: int, sensitivity: float, alpha_max: float, budget_max: float
) -> np.ndarray:
    """Per-slot min-max scale for the flattened input vector.

    Price slots are scaled by the largest valuation any generated owner could
    report at eps = sensitivity/m (max over the four continuous families),
    eps_bar slots by the sensitivity, and the budget slot by budget_max.
    """
    x = sensitivity / np.arange(1, M + 1)
    base = np.maximum.reduce([2.0 * x, x**2, 2.0 * np.sqrt(x), np.expm1(x)])
    per_owner = np.concatenate([alpha_max * base, [sensitivity]])
    return np.concatenate([np.tile(per_owner, n_owners), [budget_max]])


@dataclass
class MbrModel:
    """Allocation/payment network pair for a fixed (n_owners, M) market size.

    payment_offset shifts every payment by a constant after the softmax; the
    default 0.0 preserves the structural total-payment-equals-budget property,
    and nonzero values exist only for diagnostic invariance checks.
    """

    allocation_net: nn.DenseNetwork
    payment_net: nn.DenseNetwork
    n_owners: int
    M: int
    budget_max: float
    input_scale: np.ndarray
    payment_offset: float = 0.0

    def __post_init__(self):
        D = self.n_owners * (self.M + 1) + 1
        if self.allocation_net.input_dim != D or self.payment_net.input_dim != D:
            raise ValueError("network input dims must be n*(M+1)+1")
        if self.allocation_net.output_dim != self.n_owners * (self.M + 1):
            raise ValueError("allocation net must emit (M+1) logits per owner")
        if self.allocation_net.row_group != self.M + 1:
            raise ValueError("allocation softmax groups must span M sub-bids plus a dummy")
        if self.payment_net.output_dim != self.n_owners:
            raise ValueError("payment net must emit one logit per owner")
        if self.input_scale.shape != (D,):
            raise ValueError("input_scale length must match the input dim")

    @property
    def input_dim(self) -> int:
        return self.n_owners * (self.M + 1) + 1

    def owner_slice(self, i: int) -> slice:
        start = i * (self.M + 1)
        return slice(start, start + self.M + 1)


def init_mbr_model(
    n_owners: int,
    M: int,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (128, 128),
    sensitivity: float = 5.0,
    alpha_max: float = 1.5,
    budget_max: float = 10.0,
) -> MbrModel:
    """Fresh model; the allocation net is drawn before the payment net."""
    D = n_owners * (M + 1) + 1
    alloc = nn.init_network(
        [D, *hidden, n_owners * (M + 1)], "softmax_rows", rng, row_group=M + 1
    )
    pay = nn.init_network([D, *hidden, n_owners], "softmax_vector", rng)
    scale = input_scales(n_owners, M, sensitivity, alpha_max, budget_max)
    return MbrModel(alloc, pay, n_owners, M, budget_max, scale)


# ---------------------------------------------------------------------------
# input construction


def truthful_inputs(model: MbrModel, batch: ProfileBatch, budget: float) -> np.ndarray:
    """Scaled (K, D) input matrix for truthfully reported profiles."""
    if batch.n_owners != model.n_owners:
        raise ValueError("profile width does not match the model")
    K, n, M = len(batch), model.n_owners, model.M
    X = np.empty((K, model.input_dim))
    # per owner: M sub-bid prices v_i(eps_bar_i/m), then eps_bar_i; budget last
    vals = np.stack(
        [batch_valuations(batch, batch.budgets / m) for m in range(1, M + 1)], axis=2
    )  # (K, n, M)
    X[:, : n * (M + 1)] = np.concatenate([vals, batch.budgets[:, :, None]], axis=2).reshape(K, -1)
    X[:, -1] = budget
    return X / model.input_scale


def _forward_pair(model: MbrModel, X: np.ndarray, want_tapes: bool):
    z_flat, tape_a = nn.forward(model.allocation_net, X)
    p_frac, tape_p = nn.forward(model.payment_net, X)
    K = X.shape[0]
    z = z_flat.reshape(K, model.n_owners, model.M + 1)
    if not want_tapes:
        return z, p_frac, None, None
    return z, p_frac, tape_a, tape_p


def _eps_from_alloc(z: np.ndarray, eps_bar: np.ndarray, M: int) -> np.ndarray:
    """eps_i = sum_m z[..., m] * eps_bar_i / m over the M real slots."""
    inv_m = 1.0 / np.arange(1.0, M + 1.0)
    return (z[:, :, :M] * inv_m).sum(axis=2) * eps_bar


def mbr_forward(model: MbrModel, mbr_input: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate one unscaled input vector -> (allocation probs (n, M), payments).

    The budget is read from the input's last slot; payments are its softmax
    shares plus the model's payment_offset (zero by default).
    """
    x = np.asarray(mbr_input, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise ValueError(f"input must have shape ({model.input_dim},)")
    z, p_frac, _, _ = _forward_pair(model, (x / model.input_scale)[None, :], False)
    payments = p_frac[0] * x[-1] + model.payment_offset
    return z[0, :, : model.M].copy(), payments


def murba_auction(model: MbrModel, profile: BidProfile, budget: float) -> AuctionOutcome:
    """Run the learned auction on a (truthfully reported) profile."""
    if len(profile) != model.n_owners:
        raise ValueError("profile size does not match the model")
    if not (budget > 0.0 and np.isfinite(budget)):
        raise ValueError("monetary budget must be positive and finite")
    batch = ProfileBatch.from_profiles([profile])
    X = truthful_inputs(model, batch, budget)
    z, p_frac, _, _ = _forward_pair(model, X, False)
    eps = _eps_from_alloc(z, batch.budgets, model.M)[0]
    payments = p_frac[0] * budget + model.payment_offset
    return AuctionOutcome(eps, payments)


# ---------------------------------------------------------------------------
# misreport search


def _project_misreports(model: MbrModel, mis: np.ndarray, true_budgets: np.ndarray) -> None:
    """Clamp misreports (in place) to the reportable cone, in unscaled terms:
    prices non-negative and non-increasing in m (a price at a smaller privacy
    slice can never exceed the price at a larger one), reported budget within
    [0, true eps_bar].  true_budgets is (K, n_active); mis is (n_active, K, M+1)
    in scaled space."""
    M = model.M
    slot_scale = model.input_scale[model.owner_slice(0)]  # identical for every owner
    vals = mis[:, :, :M] * slot_scale[:M]
    np.maximum(vals, 0.0, out=vals)
    np.minimum.accumulate(vals, axis=2, out=vals)
    mis[:, :, :M] = vals / slot_scale[:M]
    eb = mis[:, :, M] * slot_scale[M]
    np.clip(eb, 0.0, true_budgets.T, out=eb)
    mis[:, :, M] = eb / slot_scale[M]


def _owner_sections(K: int, n_active: int):
    return [slice(j * K, (j + 1) * K) for j in range(n_active)]


def _misreport_utilities(
    model: MbrModel,
    batch: ProfileBatch,
    X_stack: np.ndarray,
    owners: np.ndarray,
    budget: float,
    want_grads: bool,
):
    """Utilities (and optionally input gradients) of each active owner at its
    misreported input section of X_stack."""
    K, n, M = len(batch), model.n_owners, model.M
    slot_scale = model.input_scale[model.owner_slice(0)]
    z, p_frac, tape_a, tape_p = _forward_pair(model, X_stack, want_grads)
    sections = _owner_sections(K, owners.size)

    u = np.empty((owners.size, K))
    eps_all = np.empty((owners.size, K))
    vprime_all = np.empty((owners.size, K))
    rep_eb_all = np.empty((owners.size, K))
    inv_m = 1.0 / np.arange(1.0, M + 1.0)
    for j, i in enumerate(owners):
        rows = sections[j]
        rep_eb = X_stack[rows, i * (M + 1) + M] * slot_scale[M]
        eps_i = (z[rows, i, :M] * inv_m).sum(axis=1) * rep_eb
        v = batch_valuations(
            ProfileBatch(
                batch.families[:, i : i + 1], batch.scales[:, i : i + 1], batch.budgets[:, i : i + 1]
            ),
            eps_i[:, None],
        )[:, 0]
        u[j] = p_frac[rows, i] * budget + model.payment_offset - v
        eps_all[j] = eps_i
        rep_eb_all[j] = rep_eb
        if want_grads:
            vprime_all[j] = batch_valuation_derivatives(
                ProfileBatch(
                    batch.families[:, i : i + 1],
                    batch.scales[:, i : i + 1],
                    batch.budgets[:, i : i + 1],
                ),
                eps_i[:, None],
            )[:, 0]

    if not want_grads:
        return u, eps_all, None

    # assemble upstream gradients of sum_j sum_k u[j,k] over the stacked rows
    U_z = np.zeros((X_stack.shape[0], n * (M + 1)))
    U_p = np.zeros((X_stack.shape[0], n))
    for j, i in enumerate(owners):
        rows = sections[j]
        U_p[rows, i] = budget
        coeff = -vprime_all[j][:, None] * rep_eb_all[j][:, None] * inv_m
        U_z[rows, i * (M + 1) : i * (M + 1) + M] = coeff
    _, gx_a = nn.backward(tape_a, U_z, need_params=False)
    _, gx_p = nn.backward(tape_p, U_p, need_params=False)
    G = gx_a + gx_p
    # eps_i also depends directly on the reported eps_bar slot
    for j, i in enumerate(owners):
        rows = sections[j]
        zsum = (z[rows, i, :M] * inv_m).sum(axis=1)
        G[rows, i * (M + 1) + M] += -vprime_all[j] * zsum * slot_scale[M]
    return u, eps_all, G


def _best_response_search(
    model: MbrModel,
    batch: ProfileBatch,
    X_true: np.ndarray,
    budget: float,
    iters: int,
    step: float,
    owners: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Projected gradient ascent on each active owner's utility over its own
    input slots, all owners and profiles batched together.

    Returns (best misreports (n_active, K, M+1) in scaled space, best utilities
    (n_active, K), truthful utilities (n_active, K)); best-iterate tracking
    starts from the truthful point, so best utility never falls below it.
    """
    K, n, M = len(batch), model.n_owners, model.M
    if owners is None:
        owners = np.arange(n)
    owners = np.asarray(owners, dtype=np.int64)

    X_stack = np.ascontiguousarray(np.tile(X_true, (owners.size, 1)))
    sections = _owner_sections(K, owners.size)
    slot_cols = [np.arange(i * (M + 1), (i + 1) * (M + 1)) for i in owners]

    mis = np.stack([X_true[:, cols] for cols in slot_cols])  # (n_active, K, M+1)
    u_truth, _, _ = _misreport_utilities(model, batch, X_stack, owners, budget, False)
    best_u = u_truth.copy()
    best_mis = mis.copy()

    for _ in range(iters):
        u, _, G = _misreport_utilities(model, batch, X_stack, owners, budget, True)
        improved = u > best_u
        if improved.any():
            best_u[improved] = u[improved]
            best_mis[improved] = mis[improved]
        for j, cols in enumerate(slot_cols):
            mis[j] += step * G[sections[j]][:, cols]
        _project_misreports(model, mis, batch.budgets[:, owners])
        for j, cols in enumerate(slot_cols):
            X_stack[sections[j], cols[0] : cols[-1] + 1] = mis[j]

    if iters > 0:
        u, _, _ = _misreport_utilities(model, batch, X_stack, owners, budget, False)
        improved = u > best_u
        if improved.any():
            best_u[improved] = u[improved]
            best_mis[improved] = mis[improved]
    return best_mis, best_u, u_truth


def best_response(
    model: MbrModel,
    profile: BidProfile,
    owner: int,
    budget: float,
    iters: int = 25,
    step: float = 0.1,
) -> np.ndarray:
    """Best misreport found for one owner, as the unscaled (M+1,) input slice
    (M sub-bid prices then the reported privacy budget)."""
    if not 0 <= owner < model.n_owners:
        raise ValueError("owner index out of range")
    batch = ProfileBatch.from_profiles([profile])
    X = truthful_inputs(model, batch, budget)
    mis, _, _ = _best_response_search(
        model, batch, X, budget, iters, step, owners=np.array([owner])
    )
    return mis[0, 0] * model.input_scale[model.owner_slice(owner)]


# ---------------------------------------------------------------------------
# empirical metrics


def empirical_regret(
    model: MbrModel,
    batch: ProfileBatch,
    budget: float,
    iters: int = 25,
    step: float = 0.1,
) -> np.ndarray:
    """Per-owner mean clipped utility gain from searched misreports."""
    X = truthful_inputs(model, batch, budget)
    _, best_u, u_truth = _best_response_search(model, batch, X, budget, iters, step)
    return np.maximum(0.0, best_u - u_truth).mean(axis=1)


def empirical_ir(model: MbrModel, batch: ProfileBatch, budget: float) -> np.ndarray:
    """Per-owner mean clipped negative utility under truthful reporting."""
    X = truthful_inputs(model, batch, budget)
    z, p_frac, _, _ = _forward_pair(model, X, False)
    eps = _eps_from_alloc(z, batch.budgets, model.M)
    u = p_frac * budget + model.payment_offset - batch_valuations(batch, eps)
    return np.maximum(0.0, -u).mean(axis=0)


def _capped_err_terms(eps: np.ndarray, clip_bound: float, with_grad: bool):
    """Error bound per profile under variance-optimal weights, with the
    all-eps-tiny singularity replaced by the finite cap; optionally also the
    gradient with respect to each eps."""
    L = clip_bound
    K, n = eps.shape
    S = (eps**2).sum(axis=1)
    capped = (eps < ERR_EPS_FLOOR).all(axis=1)
    S_safe = S + 1e-12
    a = eps**2 / S_safe[:, None]
    dev = a - 1.0 / n
    bias = np.abs(dev).sum(axis=1) * L
    err = 8.0 * L * L / S_safe + bias**2
    err[capped] = err_cap(L)
    if not with_grad:
        return err, None
    sgn = np.sign(dev)
    d_bias = (2.0 * L * eps / S_safe[:, None]) * (sgn - (sgn * a).sum(axis=1)[:, None])
    d_err = -16.0 * L * L * eps / (S_safe**2)[:, None] + 2.0 * bias[:, None] * d_bias
    d_err[capped] = 0.0
    return err, d_err


def empirical_err(model: MbrModel, batch: ProfileBatch, budget: float, clip_bound: float) -> float:
    """Mean error bound of variance-optimal aggregation over the batch's
    allocated eps; all-tiny allocations contribute err_cap instead of +inf."""
    X = truthful_inputs(model, batch, budget)
    z, _, _, _ = _forward_pair(model, X, False)
    eps = _eps_from_alloc(z, batch.budgets, model.M)
    err, _ = _capped_err_terms(eps, clip_bound, False)
    return float(err.mean())


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for constrained auction training.

    market.budget is the fixed training budget B; market.seed drives
    initialization and profile sampling.  The same batches_per_epoch x
    batch_size sample is revisited every epoch in fixed order.
    """

    market: MarketConfig
    M: int = 5
    hidden: tuple[int, ...] = (128, 128)
    epochs: int = 100
    batches_per_epoch: int = 100
    batch_size: int = 1000
    response_iters: int = 25
    response_step: float = 0.1
    learning_rate: float = 0.001
    multiplier_every: int = 10
    phi_init: float = 1.0
    rho_regret: float = 1.0
    rho_ir: float = 4.0
    rho_regret_inc: float = 1.0
    rho_ir_inc: float = 3.0
    rho_every_epochs: int = 2
    clip_bound: float = 1.0
    budget_max: float | None = None

    def resolved_budget_max(self) -> float:
        return self.market.budget if self.budget_max is None else self.budget_max


@dataclass
class TrainState:
    """Augmented-Lagrangian multipliers and penalty coefficients."""

    phi_regret: np.ndarray
    phi_ir: np.ndarray
    rho_regret: float
    rho_ir: float
    epoch: int = 0
    iteration: int = 0

    @classmethod
    def initial(cls, cfg: TrainConfig) -> "TrainState":
        n = cfg.market.n_owners
        return cls(
            np.full(n, cfg.phi_init), np.full(n, cfg.phi_init), cfg.rho_regret, cfg.rho_ir
        )


def apply_multiplier_update(state: TrainState, regret_violation, ir_violation) -> TrainState:
    """phi += rho * violation, the standard augmented-Lagrangian dual step."""
    state.phi_regret = state.phi_regret + state.rho_regret * np.asarray(regret_violation)
    state.phi_ir = state.phi_ir + state.rho_ir * np.asarray(ir_violation)
    return state


@dataclass(frozen=True)
class IterationStats:
    lagrangian: float
    err_hat: float
    regret_violation: np.ndarray  # (n,)
    ir_violation: np.ndarray  # (n,)


@dataclass(frozen=True)
class TrainLogRow:
    epoch: int
    lagrangian: float
    err_hat: float
    regret_mean: float
    regret_max: float
    ir_mean: float
    ir_max: float


TRAIN_LOG_COLUMNS = (
    "epoch",
    "lagrangian",
    "err_hat",
    "regret_mean",
    "regret_max",
    "ir_mean",
    "ir_max",
)


def lagrangian(
    model: MbrModel,
    batch: ProfileBatch,
    misreports: np.ndarray,
    state: TrainState,
    budget: float,
    clip_bound: float,
    with_grads: bool = False,
):
    """Augmented Lagrangian of one batch at fixed misreports.

    misreports is the (n, K, M+1) scaled array produced by the best-response
    search; it is treated as a constant, so the returned gradients are the
    partial derivatives used by the training step (envelope-style).  Returns
    (stats, alloc_param_grads, payment_param_grads); the gradient entries are
    None unless with_grads.
    """
    K, n, M = len(batch), model.n_owners, model.M
    X_true = truthful_inputs(model, batch, budget)
    X_all = np.ascontiguousarray(np.vstack([X_true] + [X_true] * n))
    for i in range(n):
        X_all[(i + 1) * K : (i + 2) * K, model.owner_slice(i)] = misreports[i]

    z, p_frac, tape_a, tape_p = _forward_pair(model, X_all, with_grads)
    slot_scale = model.input_scale[model.owner_slice(0)]
    inv_m = 1.0 / np.arange(1.0, M + 1.0)

    # truthful section
    eps_t = _eps_from_alloc(z[:K], batch.budgets, M)
    v_t = batch_valuations(batch, eps_t)
    u_true = p_frac[:K] * budget + model.payment_offset - v_t

    # misreport sections: owner i's utility with true valuation at reported eps
    u_mis = np.empty((K, n))
    rep_eb = np.empty((K, n))
    for i in range(n):
        rows = slice((i + 1) * K, (i + 2) * K)
        rep_eb[:, i] = X_all[rows, i * (M + 1) + M] * slot_scale[M]
        eps_i = (z[rows, i, :M] * inv_m).sum(axis=1) * rep_eb[:, i]
        sub = ProfileBatch(
            batch.families[:, i : i + 1], batch.scales[:, i : i + 1], batch.budgets[:, i : i + 1]
        )
        u_mis[:, i] = (
            p_frac[rows, i] * budget + model.payment_offset - batch_valuations(sub, eps_i[:, None])[:, 0]
        )

    gain = u_mis - u_true
    rgv = np.maximum(0.0, gain).mean(axis=0)
    irv = np.maximum(0.0, -u_true).mean(axis=0)
    err, d_err = _capped_err_terms(eps_t, clip_bound, with_grads)
    err_hat = float(err.mean())

    C = (
        err_hat
        + float(state.phi_regret @ rgv)
        + 0.5 * state.rho_regret * float(rgv.sum()) ** 2
        + float(state.phi_ir @ irv)
        + 0.5 * state.rho_ir * float(irv.sum()) ** 2
    )
    stats = IterationStats(C, err_hat, rgv, irv)
    if not with_grads:
        return stats, None, None

    a_r = state.phi_regret + state.rho_regret * rgv.sum()  # dC/d rgv_i
    a_ir = state.phi_ir + state.rho_ir * irv.sum()  # dC/d irv_i
    active_gain = (gain > 0.0).astype(np.float64)
    active_ir = (u_true < 0.0).astype(np.float64)

    dU_true = (-a_r * active_gain - a_ir * active_ir) / K  # (K, n)
    dU_mis = (a_r * active_gain) / K

    U_z = np.zeros((X_all.shape[0], n * (M + 1)))
    U_p = np.zeros((X_all.shape[0], n))

    # truthful rows: utility chain plus the error objective through eps
    vprime_t = batch_valuation_derivatives(batch, eps_t)
    d_eps_t = dU_true * (-vprime_t) + d_err / K
    U_p[:K] = dU_true * budget
    # expand the per-owner eps gradient into the owner's M real allocation slots
    tmp = np.zeros((K, n, M + 1))
    tmp[:, :, :M] = d_eps_t[:, :, None] * (inv_m * batch.budgets[:, :, None])
    U_z[:K] = tmp.reshape(K, -1)

    for i in range(n):
        rows = slice((i + 1) * K, (i + 2) * K)
        U_p[rows, i] = dU_mis[:, i] * budget
        eps_i = (z[rows, i, :M] * inv_m).sum(axis=1) * rep_eb[:, i]
        sub = ProfileBatch(
            batch.families[:, i : i + 1], batch.scales[:, i : i + 1], batch.budgets[:, i : i + 1]
        )
        vprime_i = batch_valuation_derivatives(sub, eps_i[:, None])[:, 0]
        block = np.zeros((K, M + 1))
        block[:, :M] = (dU_mis[:, i] * (-vprime_i))[:, None] * (inv_m * rep_eb[:, i][:, None])
        U_z[rows, i * (M + 1) : (i + 1) * (M + 1)] = block

    grads_a, _ = nn.backward(tape_a, U_z, need_input=False)
    grads_p, _ = nn.backward(tape_p, U_p, need_input=False)
    return stats, grads_a, grads_p


def train_mbr(cfg: TrainConfig, progress=None) -> tuple[MbrModel, list[TrainLogRow]]:
    """Train an auction model per the augmented-Lagrangian schedule.

    Returns the trained model and one log row per epoch (lagrangian and
    err_hat are epoch means over batches; regret/IR stats aggregate the
    per-owner means and maxima across the epoch's batches).  Raises
    TrainingDiverged as soon as the objective goes non-finite; the partially
    built log is attached to the exception as ``exc.log``.
    """
    market = cfg.market
    rng = market.rng()
    model = init_mbr_model(
        market.n_owners,
        cfg.M,
        rng,
        hidden=cfg.hidden,
        sensitivity=market.sensitivity,
        alpha_max=market.alpha_range[1],
        budget_max=cfg.resolved_budget_max(),
    )
    total = cfg.batches_per_epoch * cfg.batch_size
    sample = generate_profile_batch(market, rng, total)
    batches = [
        ProfileBatch(
            sample.families[t * cfg.batch_size : (t + 1) * cfg.batch_size],
            sample.scales[t * cfg.batch_size : (t + 1) * cfg.batch_size],
            sample.budgets[t * cfg.batch_size : (t + 1) * cfg.batch_size],
        )
        for t in range(cfg.batches_per_epoch)
    ]
    inputs = [truthful_inputs(model, b, market.budget) for b in batches]

    state = TrainState.initial(cfg)
    log: list[TrainLogRow] = []
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        c_sum = err_sum = 0.0
        rgv_mean_sum = irv_mean_sum = 0.0
        rgv_max = irv_max = 0.0
        for t, (batch, X_true) in enumerate(zip(batches, inputs)):
            mis, _, _ = _best_response_search(
                model, batch, X_true, market.budget, cfg.response_iters, cfg.response_step
            )
            stats, grads_a, grads_p = lagrangian(
                model, batch, mis, state, market.budget, cfg.clip_bound, with_grads=True
            )
            if not math.isfinite(stats.lagrangian):
                exc = TrainingDiverged(
                    f"objective became non-finite at epoch {epoch}, batch {t}"
                )
                exc.log = log
                raise exc
            nn.sgd_step(model.allocation_net, grads_a, cfg.learning_rate)
            nn.sgd_step(model.payment_net, grads_p, cfg.learning_rate)
            state.iteration += 1
            if state.iteration % cfg.multiplier_every == 0:
                apply_multiplier_update(state, stats.regret_violation, stats.ir_violation)

            c_sum += stats.lagrangian
            err_sum += stats.err_hat
            rgv_mean_sum += float(stats.regret_violation.mean())
            irv_mean_sum += float(stats.ir_violation.mean())
            rgv_max = max(rgv_max, float(stats.regret_violation.max()))
            irv_max = max(irv_max, float(stats.ir_violation.max()))
        T = cfg.batches_per_epoch
        row = TrainLogRow(
            epoch,
            c_sum / T,
            err_sum / T,
            rgv_mean_sum / T,
            rgv_max,
            irv_mean_sum / T,
            irv_max,
        )
        log.append(row)
        if progress is not None:
            progress(row)
        if (epoch + 1) % cfg.rho_every_epochs == 0:
            state.rho_regret += cfg.rho_regret_inc
            state.rho_ir += cfg.rho_ir_inc
    return model, log


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: MbrModel, path, metadata: dict | None = None) -> None:
    """Write the model as an MBRv1 file plus a JSON sidecar ``<path>.meta.json``."""
    header = {
        "kind": "mbr-model",
        "n_owners": model.n_owners,
        "M": model.M,
        "budget_max": model.budget_max,
        "payment_offset": model.payment_offset,
        "input_scale": model.input_scale.tolist(),
        "allocation": nn.network_header(model.allocation_net),
        "payment": nn.network_header(model.payment_net),
        "metadata": metadata or {},
    }
    arrays = nn.network_arrays(model.allocation_net) + nn.network_arrays(model.payment_net)
    nn.write_mbr_file(path, header, arrays)
    sidecar = {
        "n_owners": model.n_owners,
        "M": model.M,
        "budget_max": model.budget_max,
        **(metadata or {}),
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_checkpoint(path) -> tuple[MbrModel, dict]:
    """Read an MBRv1 checkpoint back into a model and its stored metadata."""
    header, arrays = nn.read_mbr_file(path)
    if header.get("kind") != "mbr-model":
        raise ValueError(f"{path}: not an auction model checkpoint")
    n_alloc = 2 * (len(header["allocation"]["layer_sizes"]) - 1)
    alloc = nn.network_from_parts(header["allocation"], arrays[:n_alloc])
    pay = nn.network_from_parts(header["payment"], arrays[n_alloc:])
    model = MbrModel(
        alloc,
        pay,
        header["n_owners"],
        header["M"],
        header["budget_max"],
        np.asarray(header["input_scale"], dtype=np.float64),
        header.get("payment_offset", 0.0),
    )
    return model, header.get("metadata", {})
