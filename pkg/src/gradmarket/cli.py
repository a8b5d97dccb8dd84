"""Command-line front end.

Subcommands: auction (one-shot auction on a generated profile), aggregate
(weights for a given epsilon vector), train-mbr (regret-minimizing auction
training), simulate (multi-round trading run), sweep (grids over budget,
owner count, sub-bid count, or accuracy-vs-budget with mean/std summary
rows).  All CSV schemas are fixed and spelled out in each subcommand's
--help.  Exit codes: 0 success, 2 usage problems, 3 runtime failures.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import contextlib
import csv
import math
import sys
from pathlib import Path

import numpy as np

from gradmarket.aggregation import bias_bound, bias_opt, err_bound, var_bound, var_opt
from gradmarket.allin import all_in
from gradmarket.market import (
    SCENARIO_SENSITIVITY,
    BidProfile,
    MarketConfig,
    generate_bid_profile,
    generate_profile_batch,
    scenario_config,
)
from gradmarket.murba import (
    TRAIN_LOG_COLUMNS,
    TrainConfig,
    TrainingDiverged,
    empirical_err,
    empirical_ir,
    empirical_regret,
    load_checkpoint,
    murba_auction,
    save_checkpoint,
    train_mbr,
)
from gradmarket.simulate import (
    METRICS_COLUMNS,
    SimConfig,
    load_csv_dataset,
    run_fl,
    synthetic_blobs,
    write_metrics_csv,
)

SWEEP_METRICS = (
    "err_bound",
    "total_payment",
    "accuracy",
    "regret_mean",
    "regret_max",
    "ir_mean",
    "ir_max",
)
SWEEP_COLUMNS = (
    "row_type",
    "param",
    "param_value",
    "mechanism",
    "aggregator",
    "seed",
    *SWEEP_METRICS,
    *(m + "_std" for m in SWEEP_METRICS),
)


class UsageError(Exception):
    """Bad flag combinations detected after argparse."""


def _config_file(path: str) -> configparser.ConfigParser:
    if not Path(path).is_file():
        raise argparse.ArgumentTypeError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    return cp


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _resolve(flag_value, cp, section: str, key: str, cast, default):
    """Flag wins over config file wins over the built-in default."""
    if flag_value is not None:
        return flag_value
    if cp is not None and cp.has_option(section, key):
        raw = cp.get(section, key)
        return cast(raw)
    return default


def _market_from(args) -> MarketConfig:
    cp = args.config
    scenario = _resolve(args.scenario, cp, "market", "scenario", str, "low")
    if scenario not in SCENARIO_SENSITIVITY:
        raise UsageError(f"unknown scenario {scenario!r}")
    return scenario_config(
        scenario,
        n_owners=_resolve(args.n, cp, "market", "n", int, 10),
        budget=_resolve(args.budget, cp, "market", "budget", float, 10.0),
        seed=_resolve(args.seed, cp, "market", "seed", int, 0),
    )


@contextlib.contextmanager
def _open_out(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _checkpoint_name(n: int, m: int) -> str:
    return f"mbr_n{n}_m{m}.mbr"


# ---------------------------------------------------------------------------
# auction


def cmd_auction(args) -> int:
    market = _market_from(args)
    rng = market.rng()
    profile = generate_bid_profile(market, rng)
    if args.mech == "murba":
        if args.checkpoint is None:
            raise UsageError("--mech murba needs --checkpoint")
        model, _ = load_checkpoint(args.checkpoint)
        outcome = murba_auction(model, profile, market.budget)
    else:
        single = BidProfile(tuple(b.to_single_minded() for b in profile))
        outcome = all_in(single, market.budget)
    eps = outcome.epsilons
    winners = int((eps > 0.0).sum())
    bounds = {}
    for name, mech in (("varopt", var_opt), ("biasopt", bias_opt)):
        if winners:
            bounds[name] = err_bound(mech(eps), eps, args.clip)
        else:
            bounds[name] = math.inf
    with _open_out(args.out) as fh:
        writer = csv.writer(fh)
        writer.writerow(["owner", "eps", "payment"])
        for i in range(market.n_owners):
            writer.writerow([i, repr(float(eps[i])), repr(float(outcome.payments[i]))])
        fh.write(f"# total_payment,{outcome.total_payment()!r}\n")
        fh.write(f"# err_bound_varopt,{bounds['varopt']!r}\n")
        fh.write(f"# err_bound_biasopt,{bounds['biasopt']!r}\n")
        fh.write(f"# winners,{winners}\n")
    return 0


# ---------------------------------------------------------------------------
# aggregate


def cmd_aggregate(args) -> int:
    eps = np.asarray(args.eps, dtype=np.float64)
    mech = var_opt if args.aggr == "varopt" else bias_opt
    lam = mech(eps)
    with _open_out(args.out) as fh:
        writer = csv.writer(fh)
        writer.writerow(["owner", "weight"])
        for i, w in enumerate(lam):
            writer.writerow([i, repr(float(w))])
        fh.write(f"# bias_bound,{bias_bound(lam, args.clip)!r}\n")
        fh.write(f"# var_bound,{var_bound(lam, eps, args.clip)!r}\n")
        fh.write(f"# err_bound,{err_bound(lam, eps, args.clip)!r}\n")
    return 0


# ---------------------------------------------------------------------------
# train-mbr


def _train_config(args) -> TrainConfig:
    cp = args.config
    market = _market_from(args)
    return TrainConfig(
        market=market,
        M=_resolve(args.m, cp, "train", "m", int, 5),
        hidden=_resolve(args.hidden, cp, "train", "hidden", _int_tuple, (64, 64)),
        epochs=_resolve(args.epochs, cp, "train", "epochs", int, 20),
        batches_per_epoch=_resolve(args.batches, cp, "train", "batches_per_epoch", int, 100),
        batch_size=_resolve(args.batch_size, cp, "train", "batch_size", int, 100),
        response_iters=_resolve(args.response_iters, cp, "train", "response_iters", int, 25),
        response_step=_resolve(args.response_step, cp, "train", "response_step", float, 0.1),
        learning_rate=_resolve(args.lr, cp, "train", "learning_rate", float, 0.001),
        multiplier_every=_resolve(None, cp, "train", "multiplier_every", int, 10),
        phi_init=_resolve(None, cp, "train", "phi_init", float, 1.0),
        rho_regret=_resolve(None, cp, "train", "rho_regret", float, 1.0),
        rho_ir=_resolve(None, cp, "train", "rho_ir", float, 4.0),
        rho_regret_inc=_resolve(None, cp, "train", "rho_regret_inc", float, 1.0),
        rho_ir_inc=_resolve(None, cp, "train", "rho_ir_inc", float, 3.0),
        rho_every_epochs=_resolve(None, cp, "train", "rho_every_epochs", int, 2),
        clip_bound=_resolve(args.clip, cp, "train", "clip", float, 1.0),
        budget_max=_resolve(None, cp, "train", "budget_max", float, None),
    )


def _write_train_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAIN_LOG_COLUMNS)
        for row in rows:
            writer.writerow([getattr(row, c) for c in TRAIN_LOG_COLUMNS])


def cmd_train_mbr(args) -> int:
    cfg = _train_config(args)
    out = args.out or _checkpoint_name(cfg.market.n_owners, cfg.M)
    log_path = args.log or out + ".log.csv"

    def progress(row):
        print(
            "epoch %d  lagrangian %.4f  regret %.4f/%.4f  ir %.4f/%.4f"
            % (row.epoch, row.lagrangian, row.regret_mean, row.regret_max, row.ir_mean, row.ir_max),
            file=sys.stderr,
        )

    try:
        model, log = train_mbr(cfg, progress=progress if args.verbose else None)
    except TrainingDiverged as exc:
        _write_train_log(log_path, exc.log)
        print(f"error: {exc} (partial log in {log_path})", file=sys.stderr)
        return 3
    metadata = {
        "n": cfg.market.n_owners,
        "m": cfg.M,
        "budget": cfg.market.budget,
        "sensitivity": cfg.market.sensitivity,
        "seed": cfg.market.seed,
        "epochs": cfg.epochs,
        "hidden": list(cfg.hidden),
    }
    save_checkpoint(model, out, metadata=metadata)
    _write_train_log(log_path, log)
    print(f"wrote {out} and {log_path}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    cp = args.config
    market = _market_from(args)
    if args.mech == "murba" and args.checkpoint is None and not args.noiseless:
        raise UsageError("--mech murba needs --checkpoint")
    cfg = SimConfig(
        market=market,
        rounds=_resolve(args.rounds, cp, "simulate", "rounds", int, 10),
        learning_rate=_resolve(args.lr, cp, "simulate", "learning_rate", float, 0.01),
        clip_bound=_resolve(args.clip, cp, "simulate", "clip", float, 1.0),
        mechanism=args.mech,
        aggregator=args.aggr,
        checkpoint=args.checkpoint,
        noiseless=args.noiseless,
    )
    if args.data is not None:
        if args.label is None:
            raise UsageError("--data needs --label")
        data = load_csv_dataset(args.data, args.label, market.n_owners, seed=market.seed)
    else:
        rows = _resolve(args.rows, cp, "simulate", "rows", int, 2000)
        data = synthetic_blobs(rows, market.n_owners, seed=market.seed)
    metrics = run_fl(cfg, data)
    run_id = f"{cfg.mechanism}-{cfg.aggregator}-b{market.budget:g}-s{market.seed}"
    out = args.out or "metrics.csv"
    write_metrics_csv(out, run_id, cfg, metrics)
    print(f"final accuracy {metrics.final_accuracy:.4f}; metrics in {out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# sweep


def _sweep_task(spec: dict) -> dict:
    """One grid point: returns the metric cells for a single data row."""
    param, value, seed = spec["param"], spec["value"], spec["seed"]
    mech, aggr = spec["mech"], spec["aggr"]
    n = int(value) if param == "owners" else spec["n"]
    budget = value if param in ("budget", "accuracy") else spec["budget"]
    market = scenario_config(spec["scenario"], n_owners=n, budget=budget, seed=seed)
    clip = spec["clip"]
    out = {m: None for m in SWEEP_METRICS}

    if param == "accuracy":
        cfg = SimConfig(
            market=market,
            rounds=spec["rounds"],
            learning_rate=spec["lr"],
            clip_bound=clip,
            mechanism=mech,
            aggregator=aggr,
            checkpoint=spec["checkpoint"],
        )
        data = synthetic_blobs(spec["rows"], n, seed=seed)
        metrics = run_fl(cfg, data)
        errs = [r.err_bound for r in metrics.rounds if not math.isnan(r.err_bound)]
        out["accuracy"] = metrics.final_accuracy
        out["err_bound"] = float(np.mean(errs)) if errs else None
        out["total_payment"] = float(np.mean([r.total_payment for r in metrics.rounds]))
        return out

    if param == "subbids":
        model, _ = load_checkpoint(spec["checkpoint"])
        rng = market.rng()
        batch = generate_profile_batch(market, rng, spec["profiles"])
        regret = empirical_regret(model, batch, market.budget)
        ir = empirical_ir(model, batch, market.budget)
        out["regret_mean"] = float(regret.mean())
        out["regret_max"] = float(regret.max())
        out["ir_mean"] = float(ir.mean())
        out["ir_max"] = float(ir.max())
        out["err_bound"] = empirical_err(model, batch, market.budget, clip)
        return out

    # budget / owners: a single auction's realized error bound
    rng = market.rng()
    profile = generate_bid_profile(market, rng)
    if mech == "murba":
        model, _ = load_checkpoint(spec["checkpoint"])
        outcome = murba_auction(model, profile, market.budget)
    else:
        outcome = all_in(
            BidProfile(tuple(b.to_single_minded() for b in profile)), market.budget
        )
    eps = outcome.epsilons
    out["total_payment"] = outcome.total_payment()
    if (eps > 0.0).any():
        lam = (var_opt if aggr == "varopt" else bias_opt)(eps)
        out["err_bound"] = err_bound(lam, eps, clip)
    return out


def _fmt_cell(v) -> str:
    return "" if v is None else repr(float(v))


def cmd_sweep(args) -> int:
    defaults = {
        "budget": [5.0, 10.0, 20.0, 40.0],
        "owners": [5.0, 10.0, 20.0, 40.0],
        "subbids": [5.0, 10.0],
        "accuracy": [5.0, 10.0, 20.0, 40.0],
    }
    grid = args.grid if args.grid is not None else defaults[args.param]
    base_seed = args.seed if args.seed is not None else 0
    seeds = [base_seed + k for k in range(args.seeds)]
    if args.param == "subbids" and args.mech != "murba":
        raise UsageError("--param subbids requires --mech murba")
    needs_model = args.mech == "murba"
    n_default = args.n if args.n is not None else 10
    budget_default = args.budget if args.budget is not None else 10.0

    specs = []
    for value in grid:
        checkpoint = None
        if needs_model:
            m = int(value) if args.param == "subbids" else args.m
            n = int(value) if args.param == "owners" else n_default
            checkpoint = str(Path(args.checkpoint_dir) / _checkpoint_name(n, m))
            if not Path(checkpoint).is_file():
                raise FileNotFoundError(f"missing checkpoint {checkpoint}")
        for seed in seeds:
            specs.append(
                {
                    "param": args.param,
                    "value": value,
                    "seed": seed,
                    "mech": args.mech,
                    "aggr": args.aggr,
                    "scenario": args.scenario or "low",
                    "n": n_default,
                    "budget": budget_default,
                    "clip": args.clip,
                    "rounds": args.rounds,
                    "lr": args.lr if args.lr is not None else 0.01,
                    "rows": args.rows,
                    "profiles": args.profiles,
                    "checkpoint": checkpoint,
                }
            )

    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_task, specs))
    else:
        results = [_sweep_task(s) for s in specs]

    with _open_out(args.out) as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for spec, res in zip(specs, results):
            writer.writerow(
                ["data", args.param, spec["value"], args.mech, args.aggr, spec["seed"]]
                + [_fmt_cell(res[m]) for m in SWEEP_METRICS]
                + [""] * len(SWEEP_METRICS)
            )
        for value in grid:
            chunk = [r for s, r in zip(specs, results) if s["value"] == value]
            means, stds = [], []
            for m in SWEEP_METRICS:
                vals = [r[m] for r in chunk if r[m] is not None]
                if vals:
                    means.append(_fmt_cell(np.mean(vals)))
                    stds.append(_fmt_cell(np.std(vals)))
                else:
                    means.append("")
                    stds.append("")
            writer.writerow(
                ["aggregate", args.param, value, args.mech, args.aggr, ""] + means + stds
            )
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradmarket",
        description="Privacy auction and gradient trading experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, budget=True):
        p.add_argument("--n", type=int, default=None, help="number of data owners (default 10)")
        if budget:
            p.add_argument("--budget", type=float, default=None, help="broker budget B (default 10)")
        p.add_argument(
            "--scenario",
            choices=sorted(SCENARIO_SENSITIVITY),
            default=None,
            help="privacy-budget scenario: expected cap 5.0 (low) or 2.0 (high)",
        )
        p.add_argument("--seed", type=int, default=None, help="base RNG seed (default 0)")
        p.add_argument("--config", type=_config_file, default=None, help="INI config file")
        p.add_argument("--out", default=None, help="output path ('-' for stdout)")
        p.add_argument("--clip", type=float, default=None, help="gradient clip bound L (default 1)")

    p = sub.add_parser(
        "auction",
        help="run one auction on a generated profile",
        description="Runs a single auction and prints a CSV: columns owner,eps,payment, "
        "followed by '# total_payment', '# err_bound_varopt', '# err_bound_biasopt', "
        "'# winners' comment rows.",
    )
    p.add_argument("--mech", choices=("allin", "murba"), required=True)
    p.add_argument("--checkpoint", default=None, help="trained model file (murba)")
    common(p)
    p.set_defaults(func=cmd_auction, clip=1.0)

    p = sub.add_parser(
        "aggregate",
        help="aggregation weights for an epsilon vector",
        description="Prints a CSV with columns owner,weight followed by '# bias_bound', "
        "'# var_bound', '# err_bound' comment rows.",
    )
    p.add_argument("--aggr", choices=("biasopt", "varopt"), required=True)
    p.add_argument("--eps", type=_float_list, required=True, help="comma-separated epsilons")
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_aggregate, config=None)

    p = sub.add_parser(
        "train-mbr",
        help="train a regret-minimizing auction model",
        description="Writes an MBRv1 checkpoint (default mbr_n<N>_m<M>.mbr) plus a training "
        "log CSV with columns " + ",".join(TRAIN_LOG_COLUMNS) + ".",
    )
    common(p)
    p.add_argument("--m", type=int, default=None, help="sub-bids per owner (default 5)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--hidden", type=_int_tuple, default=None, help="hidden sizes, e.g. 64,64")
    p.add_argument("--batches", type=int, default=None, help="batches per epoch")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--response-iters", type=int, default=None)
    p.add_argument("--response-step", type=float, default=None)
    p.add_argument("--log", default=None, help="training log path (default <out>.log.csv)")
    p.add_argument("--verbose", action="store_true", help="print per-epoch stats to stderr")
    p.set_defaults(func=cmd_train_mbr)

    p = sub.add_parser(
        "simulate",
        help="multi-round gradient trading run",
        description="Writes per-round metrics CSV with columns " + ",".join(METRICS_COLUMNS) + ".",
    )
    p.add_argument("--mech", choices=("allin", "murba"), default="allin")
    p.add_argument("--aggr", choices=("biasopt", "varopt"), default="varopt")
    p.add_argument("--checkpoint", default=None, help="trained model file (murba)")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--lr", type=float, default=None, help="descent step (default 0.01)")
    p.add_argument("--data", default=None, help="CSV dataset (default: synthetic blobs)")
    p.add_argument("--label", default=None, help="label column name for --data")
    p.add_argument("--rows", type=int, default=None, help="synthetic dataset size (default 2000)")
    p.add_argument("--noiseless", action="store_true", help="skip the market and average clipped gradients")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "sweep",
        help="grid experiments with aggregate rows",
        description="Writes a CSV with columns " + ",".join(SWEEP_COLUMNS) + ". One 'data' row "
        "per (grid value, seed); one 'aggregate' row per grid value carrying means in the "
        "metric columns and standard deviations in the *_std columns.  Params: budget/owners "
        "(single-auction err_bound), accuracy (multi-round final accuracy vs budget), subbids "
        "(regret/IR of per-M checkpoints named mbr_n<N>_m<M>.mbr in --checkpoint-dir).",
    )
    p.add_argument("--param", choices=("budget", "owners", "subbids", "accuracy"), required=True)
    p.add_argument("--grid", type=_float_list, default=None, help="comma-separated grid values")
    p.add_argument("--seeds", type=int, default=10, help="seeds per grid value (base --seed)")
    p.add_argument("--mech", choices=("allin", "murba"), default="allin")
    p.add_argument("--aggr", choices=("biasopt", "varopt"), default="varopt")
    p.add_argument("--m", type=int, default=5, help="sub-bids for murba checkpoints")
    p.add_argument("--checkpoint-dir", default=".", help="directory holding mbr_n<N>_m<M>.mbr files")
    p.add_argument("--rounds", type=int, default=10, help="rounds for --param accuracy")
    p.add_argument("--rows", type=int, default=2000, help="dataset size for --param accuracy")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--profiles", type=int, default=200, help="evaluation profiles for --param subbids")
    p.add_argument("--workers", type=int, default=1, help="parallel grid workers")
    common(p)
    p.set_defaults(func=cmd_sweep, clip=1.0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surface runtime failures as exit code 3
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
