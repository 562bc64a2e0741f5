import json

import numpy as np
import pandas as pd
import pytest

from src.cli import main, parse_args
from src.model.edmd import accumulate_gram, relative_frobenius, solve_robust
from src.simulation.dynamics import pairs_from_trajectory
from src.utils.checkpoint import load_checkpoint
from src.utils.config import manifest_path
from src.utils.data_loader import CsvStreamConfig, read_trajectory, write_csv


@pytest.fixture(scope="module")
def vdp_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "vdp.csv"
    assert main(["simulate", "--system", "vdp", "--seed", "3", "--samples", "2001", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def vdp_ckpt(vdp_csv):
    out = vdp_csv.with_name("vdp.ckpt")
    assert main(["learn", "--input", str(vdp_csv), "--lambda", "0.1", "--out", str(out)]) == 0
    return out


def test_simulate_writes_trajectory_and_manifest(vdp_csv):
    frame = pd.read_csv(vdp_csv)
    assert list(frame.columns) == ["t", "x", "v"]
    assert len(frame) == 2001
    assert frame.iloc[0]["x"] == 2.0
    manifest = json.loads(manifest_path(vdp_csv).read_text(encoding="utf-8"))
    assert manifest["subcommand"] == "simulate"
    assert manifest["seed"] == 3
    assert manifest["config"]["samples"] == 2001


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert main(["simulate", "--system", "ring", "--n-osc", "3", "--samples", "50", "--seed", "9", "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert list(pd.read_csv(a).columns) == ["t", "x1", "v1", "x2", "v2", "x3", "v3"]


def test_simulate_rejects_zero_samples(tmp_path, capsys):
    assert main(["simulate", "--samples", "0", "--out", str(tmp_path / "x.csv")]) == 2
    assert "samples" in capsys.readouterr().err


def test_simulate_without_out_is_a_usage_error():
    assert main(["simulate", "--samples", "10"]) == 2


def test_learn_matches_the_closed_form(vdp_csv, vdp_ckpt, capsys):
    ckpt = load_checkpoint(vdp_ckpt)
    assert ckpt.model.M == 2000
    assert ckpt.dictionary.total_dim == 43
    traj = read_trajectory(CsvStreamConfig(vdp_csv))
    oracle = solve_robust(accumulate_gram(ckpt.dictionary, pairs_from_trajectory(traj)), 0.1)
    assert relative_frobenius(ckpt.model.operator(), oracle) <= 1e-8
    manifest = json.loads(manifest_path(vdp_ckpt).read_text(encoding="utf-8"))
    assert manifest["subcommand"] == "learn"
    assert manifest["config"]["lam"] == 0.1


@pytest.mark.parametrize("lam", ["0", "-1"])
def test_learn_rejects_non_positive_lambda(vdp_csv, tmp_path, lam):
    assert main(["learn", "--input", str(vdp_csv), "--lambda", lam, "--out", str(tmp_path / "x.ckpt")]) == 2
    assert not (tmp_path / "x.ckpt").exists()


def test_learn_with_missing_column_fails_early(vdp_csv, tmp_path):
    code = main(["learn", "--input", str(vdp_csv), "--columns", "nope", "--lambda", "0.1", "--out", str(tmp_path / "x.ckpt")])
    assert code == 2


def test_learn_writes_spectrum_snapshots(vdp_csv, tmp_path):
    out = tmp_path / "run.ckpt"
    code = main([
        "learn", "--input", str(vdp_csv), "--lambda", "0.1", "--spectrum-every", "500",
        "--plot", str(tmp_path / "stability.png"), "--out", str(out),
    ])
    assert code == 0
    assert (tmp_path / "stability.png").exists()
    for m in (500, 1000, 1500, 2000):
        frame = pd.read_csv(tmp_path / f"run_spectrum_{m}.csv")
        assert list(frame.columns) == ["re", "im", "modulus"]
        assert len(frame) == 43
        assert frame["modulus"].is_monotonic_decreasing
    stability = pd.read_csv(tmp_path / "run_spectrum_stability.csv")
    assert list(stability["M"]) == [500, 1000, 1500, 2000]


def test_learn_aborts_on_a_bad_stream(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    rows = ["t,x,v"] + [f"{i},{'abc' if i % 3 == 0 else np.sin(i / 10)},{np.cos(i / 10)}" for i in range(300)]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    code = main(["learn", "--input", str(path), "--lambda", "0.1", "--rbf", "5", "--out", str(tmp_path / "x.ckpt")])
    assert code == 3
    assert "StreamQualityError" in capsys.readouterr().err


def test_resume_continues_an_interrupted_run(vdp_csv, vdp_ckpt, tmp_path):
    traj = read_trajectory(CsvStreamConfig(vdp_csv))
    first_half = write_csv(traj[:1001], tmp_path / "half.csv", columns=["x", "v"], dt=0.01)
    partial = tmp_path / "partial.ckpt"
    assert main(["learn", "--input", str(first_half), "--lambda", "0.1", "--out", str(partial)]) == 0
    assert load_checkpoint(partial).model.M == 1000

    resumed = tmp_path / "resumed.ckpt"
    assert main(["learn", "--input", str(vdp_csv), "--lambda", "0.1", "--resume", str(partial), "--out", str(resumed)]) == 0
    a, b = load_checkpoint(resumed).model, load_checkpoint(vdp_ckpt).model
    assert a.M == b.M == 2000
    assert relative_frobenius(a.operator(), b.operator()) <= 1e-10


def test_resume_takes_lambda_from_the_checkpoint(vdp_csv, vdp_ckpt, tmp_path):
    out = tmp_path / "more.ckpt"
    assert main(["learn", "--input", str(vdp_csv), "--resume", str(vdp_ckpt), "--out", str(out)]) == 0
    restored = load_checkpoint(out).model
    assert restored.lam == 0.1
    assert restored.M == 2000


def test_resume_rejects_a_different_lambda(vdp_csv, vdp_ckpt, tmp_path, capsys):
    out = tmp_path / "more.ckpt"
    code = main(["learn", "--input", str(vdp_csv), "--lambda", "0.5", "--resume", str(vdp_ckpt), "--out", str(out)])
    assert code == 2
    assert "differs from the checkpoint" in capsys.readouterr().err
    assert not out.exists()


def test_dictionary_flags_reach_the_checkpoint(vdp_csv, tmp_path):
    out = tmp_path / "small.ckpt"
    args = ["learn", "--input", str(vdp_csv), "--lambda", "0.1", "--rbf", "7", "--no-constant", "--dict-seed", "4"]
    assert main(args + ["--out", str(out)]) == 0
    d = load_checkpoint(out).dictionary
    assert d.total_dim == 9
    assert not d.include_constant and d.include_identity


def test_linear_system_operator_is_recovered(tmp_path):
    data = tmp_path / "lin.csv"
    ckpt = tmp_path / "lin.ckpt"
    assert main(["simulate", "--system", "linear", "--theta", "0.1", "--samples", "501", "--x0", "1", "0", "--out", str(data)]) == 0
    code = main([
        "learn", "--input", str(data), "--rbf", "0", "--no-constant",
        "--lambda", "1e-8", "--refresh-period", "250", "--out", str(ckpt),
    ])
    assert code == 0
    K = load_checkpoint(ckpt).model.operator()
    c, s = np.cos(0.1), np.sin(0.1)
    np.testing.assert_allclose(K, np.array([[c, -s], [s, c]]).T, atol=1e-6)

    out = tmp_path / "pred.csv"
    assert main(["predict", "--checkpoint", str(ckpt), "--x0", "1", "0", "--steps", "5", "--out", str(out)]) == 0
    pred = pd.read_csv(out)
    assert len(pred) == 6
    np.testing.assert_allclose(pred.iloc[5][["x1", "x2"]], [np.cos(0.5), np.sin(0.5)], atol=1e-5)


def test_spectrum_table_and_eigenfunction(vdp_ckpt, tmp_path, capsys):
    out = tmp_path / "spec.csv"
    field = tmp_path / "field.csv"
    code = main([
        "spectrum", "--checkpoint", str(vdp_ckpt), "--out", str(out),
        "--grid", "-3", "3", "-3.5", "3.5", "--resolution", "31", "41",
        "--field-out", str(field), "--reference-mu", "0.8", "--plot", str(tmp_path / "eig.png"),
    ])
    assert code == 0
    spec = pd.read_csv(out)
    assert len(spec) == 43
    nearest = spec.iloc[((spec["re"] - 1) ** 2 + spec["im"] ** 2).idxmin()]
    assert 0.99 <= nearest["modulus"] <= 1.01
    assert len(pd.read_csv(field)) == 31 * 41
    assert (tmp_path / "eig.png").exists()
    assert "coverage" in capsys.readouterr().out


def test_predict_zero_steps(vdp_ckpt, tmp_path):
    out = tmp_path / "p.csv"
    assert main(["predict", "--checkpoint", str(vdp_ckpt), "--x0", "2", "0", "--steps", "0", "--out", str(out)]) == 0
    frame = pd.read_csv(out)
    assert len(frame) == 1
    np.testing.assert_array_equal(frame[["x1", "x2"]].to_numpy(), [[2.0, 0.0]])


def test_unreadable_checkpoint_exits_4(tmp_path):
    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"definitely not a checkpoint" * 3)
    assert main(["spectrum", "--checkpoint", str(bogus), "--out", str(tmp_path / "s.csv")]) == 4
    assert main(["predict", "--checkpoint", str(bogus), "--x0", "0", "0", "--out", str(tmp_path / "p.csv")]) == 4


def test_missing_checkpoint_exits_2(tmp_path):
    assert main(["spectrum", "--checkpoint", str(tmp_path / "none.ckpt"), "--out", str(tmp_path / "s.csv")]) == 2


def test_config_file_sits_between_defaults_and_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lambda": 0.5, "refresh-period": 64, "unknown-key": 1}), encoding="utf-8")
    args = parse_args(["--config", str(cfg), "learn", "--input", "x.csv", "--out", "y.ckpt"])
    assert args.lam == 0.5 and args.refresh_period == 64
    args = parse_args(["--config", str(cfg), "learn", "--lambda", "0.2", "--out", "y.ckpt"])
    assert args.lam == 0.2 and args.refresh_period == 64


def test_manifest_replays_the_run(vdp_csv, tmp_path):
    out = tmp_path / "op.ckpt"
    assert main(["learn", "--input", str(vdp_csv), "--lambda", "0.3", "--rbf", "10", "--out", str(out)]) == 0
    first = out.read_bytes()
    out.unlink()
    assert main(["--config", str(manifest_path(out)), "learn"]) == 0
    assert out.read_bytes() == first


def test_select_lambda(tmp_path, capsys):
    data = tmp_path / "rot.csv"
    assert main(["simulate", "--system", "linear", "--samples", "201", "--x0", "1", "0", "--out", str(data)]) == 0
    out = tmp_path / "lam.csv"
    code = main([
        "select-lambda", "--input", str(data), "--rbf", "0", "--no-constant",
        "--grid", "1", "1e-2", "1e-4", "--out", str(out),
    ])
    assert code == 0
    table = pd.read_csv(out)
    assert list(table["lam"]) == [1e-4, 1e-2, 1.0]
    assert "best lambda = 0.0001" in capsys.readouterr().out


def test_small_benchmarks(tmp_path):
    out = tmp_path / "cmp.csv"
    code = main(["bench", "compare", "--samples", "100", "--rbf", "5", "--warmup", "50", "--no-pin", "--out", str(out)])
    assert code == 0
    frame = pd.read_csv(out)
    assert set(frame["method"]) == {"rr-edmd", "edmd-recompute", "rr-edmd-operator"}
    assert len(frame) == 300
    summary = json.loads(out.with_suffix(".json").read_text(encoding="utf-8"))
    assert summary["max_discrepancy"] <= 1e-8

    out = tmp_path / "scale.csv"
    code = main(["bench", "scaling", "--sizes", "2", "3", "--rbf-per-osc", "2", "--samples", "30", "--out", str(out)])
    assert code == 0
    assert sorted(set(pd.read_csv(out)["K"])) == [4, 6]
    assert manifest_path(out).exists()


def test_bench_compare_rejects_short_runs(tmp_path):
    assert main(["bench", "compare", "--samples", "50", "--out", str(tmp_path / "c.csv")]) == 2
