import csv

import numpy as np
import pytest

import gradmarket.cli as cli
from gradmarket.murba import TrainingDiverged, TrainLogRow


def run_cli(args):
    return cli.main(args)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------------------
# auction


def test_auction_deterministic_output(tmp_path, capsys):
    argv = ["auction", "--mech", "allin", "--n", "10", "--budget", "20", "--seed", "7", "--scenario", "low"]
    assert run_cli(argv) == 0
    first = capsys.readouterr().out
    assert run_cli(argv) == 0
    assert capsys.readouterr().out == first
    lines = first.strip().splitlines()
    assert lines[0] == "owner,eps,payment"
    assert len([l for l in lines if not l.startswith("#")]) == 11  # header + 10 owners
    assert any(l.startswith("# err_bound_varopt,") for l in lines)
    assert any(l.startswith("# err_bound_biasopt,") for l in lines)
    payments = [float(l.split(",")[2]) for l in lines[1:11]]
    assert sum(payments) <= 20.0 + 1e-9


def test_auction_tiny_budget_empty_winner_set(capsys):
    rc = run_cli(["auction", "--mech", "allin", "--n", "6", "--budget", "0.0001", "--seed", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "# winners,0" in out
    assert "# err_bound_varopt,inf" in out


def test_auction_missing_mech_is_usage_error():
    with pytest.raises(SystemExit) as exc_info:
        run_cli(["auction"])
    assert exc_info.value.code == 2


def test_auction_murba_needs_checkpoint(capsys):
    rc = run_cli(["auction", "--mech", "murba", "--n", "2"])
    assert rc == 2
    assert "checkpoint" in capsys.readouterr().err


def test_auction_out_file(tmp_path):
    out = tmp_path / "a.csv"
    rc = run_cli(["auction", "--mech", "allin", "--n", "4", "--budget", "8", "--out", str(out)])
    assert rc == 0
    assert out.read_text().startswith("owner,eps,payment")


# ---------------------------------------------------------------------------
# aggregate


def test_aggregate_output(capsys):
    rc = run_cli(["aggregate", "--aggr", "varopt", "--eps", "1,2"])
    assert rc == 0
    out = capsys.readouterr().out
    rows = [l.split(",") for l in out.strip().splitlines() if not l.startswith("#")]
    assert rows[0] == ["owner", "weight"]
    assert float(rows[1][1]) == pytest.approx(0.2)
    assert float(rows[2][1]) == pytest.approx(0.8)
    assert "# err_bound,1.96" in out


def test_aggregate_all_zero_eps_is_runtime_error(capsys):
    rc = run_cli(["aggregate", "--aggr", "biasopt", "--eps", "0,0"])
    assert rc == 3
    assert "error" in capsys.readouterr().err


def test_aggregate_bad_eps_is_usage_error():
    with pytest.raises(SystemExit) as exc_info:
        run_cli(["aggregate", "--aggr", "varopt", "--eps", "one,two"])
    assert exc_info.value.code == 2


# ---------------------------------------------------------------------------
# train-mbr


TRAIN_ARGS = [
    "train-mbr",
    "--n", "2", "--m", "2", "--budget", "5", "--seed", "3",
    "--epochs", "1", "--batches", "2", "--batch-size", "8",
    "--hidden", "6", "--response-iters", "3",
]


def test_train_mbr_writes_checkpoint_and_log(tmp_path):
    out = tmp_path / "model.mbr"
    rc = run_cli(TRAIN_ARGS + ["--out", str(out)])
    assert rc == 0
    assert out.is_file()
    assert (tmp_path / "model.mbr.meta.json").is_file()
    log = read_csv(tmp_path / "model.mbr.log.csv")
    assert log[0] == ["epoch", "lagrangian", "err_hat", "regret_mean", "regret_max", "ir_mean", "ir_max"]
    assert len(log) == 2


def test_train_mbr_epoch_zero_log_reproducible(tmp_path):
    a = tmp_path / "a.mbr"
    b = tmp_path / "b.mbr"
    assert run_cli(TRAIN_ARGS + ["--out", str(a)]) == 0
    assert run_cli(TRAIN_ARGS + ["--out", str(b)]) == 0
    assert read_csv(tmp_path / "a.mbr.log.csv")[1] == read_csv(tmp_path / "b.mbr.log.csv")[1]


def test_train_mbr_zero_epochs_equals_initialization(tmp_path):
    from gradmarket.market import scenario_config
    from gradmarket.murba import init_mbr_model, load_checkpoint

    out = tmp_path / "init.mbr"
    args = [a for a in TRAIN_ARGS]
    args[args.index("--epochs") + 1] = "0"
    assert run_cli(args + ["--out", str(out)]) == 0
    model, _ = load_checkpoint(out)
    market = scenario_config("low", n_owners=2, budget=5.0, seed=3)
    reference = init_mbr_model(2, 2, market.rng(), hidden=(6,), budget_max=5.0)
    for Wa, Wb in zip(model.allocation_net.weights, reference.allocation_net.weights):
        np.testing.assert_array_equal(Wa, Wb)
    assert len(read_csv(tmp_path / "init.mbr.log.csv")) == 1  # header only


def test_train_mbr_divergence_keeps_partial_log(tmp_path, monkeypatch, capsys):
    def exploding(cfg, progress=None):
        exc = TrainingDiverged("objective became non-finite")
        exc.log = [TrainLogRow(0, 1.0, 1.0, 0.1, 0.2, 0.0, 0.0)]
        raise exc

    monkeypatch.setattr(cli, "train_mbr", exploding)
    out = tmp_path / "bad.mbr"
    rc = run_cli(TRAIN_ARGS + ["--out", str(out)])
    assert rc == 3
    assert not out.is_file()
    log = read_csv(tmp_path / "bad.mbr.log.csv")
    assert len(log) == 2  # header + the partial epoch row


def test_train_mbr_config_file(tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text(
        "[market]\nn = 2\nbudget = 5\nseed = 3\n\n"
        "[train]\nm = 2\nepochs = 0\nhidden = 6\nbatches_per_epoch = 2\nbatch_size = 8\n"
    )
    out = tmp_path / "cfg.mbr"
    rc = run_cli(["train-mbr", "--config", str(ini), "--out", str(out)])
    assert rc == 0
    import json

    meta = json.loads((tmp_path / "cfg.mbr.meta.json").read_text())
    assert meta["n"] == 2 and meta["m"] == 2 and meta["epochs"] == 0


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_metrics(tmp_path):
    out = tmp_path / "metrics.csv"
    rc = run_cli(
        [
            "simulate", "--mech", "allin", "--aggr", "varopt",
            "--n", "5", "--budget", "10", "--seed", "4",
            "--rounds", "3", "--rows", "500", "--lr", "0.5",
            "--out", str(out),
        ]
    )
    assert rc == 0
    rows = read_csv(out)
    assert rows[0][0] == "run_id"
    assert len(rows) == 4
    assert rows[1][0] == "allin-varopt-b10-s4"
    assert rows[1][3] == "allin" and rows[1][4] == "varopt"


def test_simulate_csv_dataset(tmp_path):
    data = tmp_path / "toy.csv"
    lines = ["f1,f2,label"]
    rng = np.random.default_rng(0)
    for i in range(220):
        y = i % 2
        lines.append(f"{y + rng.normal(0, 0.1):.4f},{rng.normal(0, 0.1):.4f},{y}")
    data.write_text("\n".join(lines) + "\n")
    out = tmp_path / "m.csv"
    rc = run_cli(
        [
            "simulate", "--n", "4", "--budget", "10", "--rounds", "2",
            "--data", str(data), "--label", "label", "--out", str(out),
        ]
    )
    assert rc == 0
    assert len(read_csv(out)) == 3

    rc2 = run_cli(["simulate", "--data", str(data), "--out", str(out)])
    assert rc2 == 2  # --label missing


def test_simulate_murba_without_checkpoint_is_usage_error(capsys):
    assert run_cli(["simulate", "--mech", "murba", "--n", "2"]) == 2


# ---------------------------------------------------------------------------
# sweep


def test_sweep_row_count_contract(tmp_path):
    out = tmp_path / "sweep.csv"
    rc = run_cli(
        [
            "sweep", "--param", "budget", "--grid", "5,10,20,40",
            "--seeds", "10", "--mech", "allin", "--aggr", "varopt",
            "--n", "8", "--out", str(out),
        ]
    )
    assert rc == 0
    rows = read_csv(out)
    assert rows[0] == list(cli.SWEEP_COLUMNS)
    data_rows = [r for r in rows[1:] if r[0] == "data"]
    agg_rows = [r for r in rows[1:] if r[0] == "aggregate"]
    assert len(data_rows) == 40
    assert len(agg_rows) == 4
    # aggregate rows carry a mean and a std for err_bound
    for r in agg_rows:
        assert r[6] != "" and r[13] != ""
        assert r[5] == ""  # no seed on aggregate rows


def test_sweep_missing_checkpoint_names_file(tmp_path, capsys):
    rc = run_cli(
        [
            "sweep", "--param", "subbids", "--mech", "murba", "--grid", "2",
            "--n", "2", "--checkpoint-dir", str(tmp_path), "--seeds", "1",
        ]
    )
    assert rc == 3
    err = capsys.readouterr().err
    assert "mbr_n2_m2.mbr" in err


def test_sweep_subbids_requires_murba(capsys):
    rc = run_cli(["sweep", "--param", "subbids", "--mech", "allin"])
    assert rc == 2


def test_sweep_subbids_emits_regret_columns(tmp_path):
    ckpt = tmp_path / "mbr_n2_m2.mbr"
    assert run_cli(TRAIN_ARGS + ["--out", str(ckpt)]) == 0
    out = tmp_path / "sweep.csv"
    rc = run_cli(
        [
            "sweep", "--param", "subbids", "--mech", "murba", "--grid", "2",
            "--n", "2", "--budget", "5", "--seeds", "2", "--profiles", "20",
            "--checkpoint-dir", str(tmp_path), "--out", str(out),
        ]
    )
    assert rc == 0
    rows = read_csv(out)
    header = rows[0]
    idx = {name: header.index(name) for name in ("regret_mean", "regret_max", "ir_mean", "ir_max")}
    data = [r for r in rows[1:] if r[0] == "data"]
    assert len(data) == 2
    for r in data:
        for col in idx.values():
            assert r[col] != ""
            assert float(r[col]) >= 0.0


def test_sweep_deterministic(tmp_path):
    argv = [
        "sweep", "--param", "budget", "--grid", "5,10", "--seeds", "2",
        "--n", "6",
    ]
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    assert run_cli(argv + ["--out", str(a)]) == 0
    assert run_cli(argv + ["--out", str(b)]) == 0
    assert a.read_text() == b.read_text()
