import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from trustkit.cli import main


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


def _gen(runner, out, extra=()):
    args = ["gen-data", "--out", str(out), "--image-size", "8",
            "--train", "16", "--val", "4", "--test", "4", "--seed", "7", *extra]
    res = runner.invoke(main, args, catch_exceptions=False)
    assert res.exit_code == 0, res.output
    return out


@pytest.fixture(scope="module")
def small_dataset(runner, tmp_path_factory):
    return _gen(runner, tmp_path_factory.mktemp("data") / "ds")


def test_gen_data_writes_everything(small_dataset):
    manifest = json.loads((small_dataset / "manifest.json").read_text())
    assert manifest["splits"]["train"]["count"] == 16
    for split in ("train", "val", "test"):
        assert (small_dataset / f"{split}.pairs.f32").exists()
        assert (small_dataset / f"{split}.norm.f64").exists()
    record = json.loads((small_dataset / "run_record.json").read_text())
    assert record["command"] == "gen-data"
    assert record["exit_status"] == 0
    assert record["config"]["seed"] == 7


def test_gen_data_deterministic(runner, tmp_path):
    a = _gen(runner, tmp_path / "a")
    b = _gen(runner, tmp_path / "b")
    for name in ("manifest.json", "train.pairs.f32", "test.norm.f64"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_gen_data_fourier_records_keep(runner, tmp_path):
    out = _gen(runner, tmp_path / "f", extra=["--operator", "fourier", "--keep", "0.25"])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["operator"]["kind"] == "fourier_masked"
    assert manifest["operator"]["keep"] == 0.25


def test_gen_data_invalid_spec_exits_2(runner, tmp_path):
    res = runner.invoke(main, ["gen-data", "--out", str(tmp_path / "x"), "--train", "0"])
    assert res.exit_code == 2


def test_config_file_with_flag_override(runner, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": 5, "seed": 3, "image_size": 8, "val": 2, "test": 2}))
    out = tmp_path / "ds"
    res = runner.invoke(main, ["gen-data", "--config", str(cfg), "--out", str(out),
                               "--seed", "9"], catch_exceptions=False)
    assert res.exit_code == 0
    record = json.loads((out / "run_record.json").read_text())
    assert record["config"]["train"] == 5  # from config file
    assert record["config"]["seed"] == 9  # flag wins


def test_verify_bound_orthonormal_exit_0(runner, tmp_path):
    out = tmp_path / "vb"
    res = runner.invoke(main, [
        "verify-bound", "--out", str(out), "--kinds", "orthonormal_square",
        "--m", "12", "--n", "12", "--k", "2,3", "--trials", "40",
    ], catch_exceptions=False)
    assert res.exit_code == 0, res.output
    text = (out / "sweep.csv").read_text()
    header, *lines = text.strip().splitlines()
    assert header.startswith("kind,m,n,k,mean_dev,max_dev,delta")
    assert len(lines) == 2
    for line in lines:
        assert float(line.split(",")[4]) < 1e-10


def test_verify_bound_exact_small_grid(runner, tmp_path):
    res = runner.invoke(main, [
        "verify-bound", "--out", str(tmp_path / "vb"), "--kinds", "gaussian_fat",
        "--m", "8", "--n", "12", "--k", "2", "--trials", "200",
    ], catch_exceptions=False)
    assert res.exit_code == 0, res.output
    csv = (tmp_path / "vb" / "sweep.csv").read_text().strip().splitlines()
    assert "exact_enumeration" in csv[1]


def test_verify_bound_deterministic_csv(runner, tmp_path):
    args = ["--kinds", "gaussian_fat", "--m", "8,10", "--n", "12", "--k", "2",
            "--trials", "30", "--seed", "5"]
    runner.invoke(main, ["verify-bound", "--out", str(tmp_path / "a"), *args],
                  catch_exceptions=False)
    runner.invoke(main, ["verify-bound", "--out", str(tmp_path / "b"), *args],
                  catch_exceptions=False)
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_verify_bound_malformed_grid_exit_2(runner, tmp_path):
    res = runner.invoke(main, ["verify-bound", "--out", str(tmp_path / "x"),
                               "--m", "8;9"])
    assert res.exit_code == 2


def test_verify_bound_matrix_output(runner, tmp_path):
    out = tmp_path / "vb"
    res = runner.invoke(main, [
        "verify-bound", "--out", str(out), "--kinds", "gaussian_fat",
        "--m", "8,10", "--n", "12", "--k", "2", "--trials", "10", "--matrix",
    ], catch_exceptions=False)
    assert res.exit_code == 0
    assert (out / "matrix_gaussian_fat.txt").exists()


def test_solve_identity_omp_psnr_capped(runner, tmp_path):
    data = _gen(runner, tmp_path / "ds", extra=["--operator", "identity"])
    out = tmp_path / "run"
    res = runner.invoke(main, [
        "solve", "--dataset", str(data), "--out", str(out), "--method", "omp",
        "--sparsity", "64", "--tol", "0",
    ], catch_exceptions=False)
    assert res.exit_code == 0, res.output
    agg = json.loads((out / "metrics_aggregate.json").read_text())["aggregate"]
    assert agg["psnr"]["mean"] == pytest.approx(240.0)
    assert agg["psnr"]["std"] == pytest.approx(0.0)


def test_solve_missing_dataset_exit_2(runner, tmp_path):
    res = runner.invoke(main, ["solve", "--dataset", str(tmp_path / "nope"),
                               "--out", str(tmp_path / "r")])
    assert res.exit_code == 2


def test_solve_estimated_matches_known_on_f64_data(runner, tmp_path):
    # exactly determined least squares: >= n noiseless f64 pairs
    data = tmp_path / "ds"
    res = runner.invoke(main, [
        "gen-data", "--out", str(data), "--image-size", "8", "--train", "96",
        "--val", "2", "--test", "6", "--seed", "3", "--dtype", "f64",
    ], catch_exceptions=False)
    assert res.exit_code == 0, res.output
    outs = {}
    for mode in ("known", "estimated"):
        out = tmp_path / mode
        res = runner.invoke(main, [
            "solve", "--dataset", str(data), "--out", str(out), "--method", "omp",
            "--operator", mode, "--sparsity", "24", "--ridge", "0",
        ], catch_exceptions=False)
        assert res.exit_code == 0, res.output
        outs[mode] = (out / "metrics_per_image.csv").read_text().strip().splitlines()[1:]
    for row_known, row_est in zip(outs["known"], outs["estimated"]):
        vals_known = [float(v) for v in row_known.split(",")[1:]]
        vals_est = [float(v) for v in row_est.split(",")[1:]]
        for a, b in zip(vals_known, vals_est):
            assert abs(a - b) < 1e-6


def _train_args(data, out, extra=()):
    return ["train", "--dataset", str(data), "--out", str(out), "--model", "trust",
            "--loss", "l2", "--epochs", "2", "--lr", "1e-3", "--batch", "4",
            "--embed-dim", "8", "--depth", "1", "--heads", "2", "--limit", "8", *extra]


def test_train_writes_outputs_and_log(runner, small_dataset, tmp_path):
    out = tmp_path / "tr"
    res = runner.invoke(main, _train_args(small_dataset, out), catch_exceptions=False)
    assert res.exit_code == 0, res.output
    log = (out / "epochs.csv").read_text().strip().splitlines()
    assert log[0] == "epoch,train_loss,val_loss,val_ssim,val_psnr,val_fpr"
    assert len(log) == 3
    assert (out / "ckpt_best.json").exists() and (out / "ckpt_last.json.bin").exists()
    record = json.loads((out / "run_record.json").read_text())
    assert record["config"]["param_count"] > 0


def test_train_zero_lr_flat_log(runner, small_dataset, tmp_path):
    out = tmp_path / "tr0"
    res = runner.invoke(main, _train_args(small_dataset, out, ["--lr", "0"]),
                        catch_exceptions=False)
    assert res.exit_code == 0, res.output
    rows = (out / "epochs.csv").read_text().strip().splitlines()[1:]
    losses = {row.split(",")[1] for row in rows}
    assert len(losses) == 1  # identical formatted train loss every epoch


def test_train_skips_none_runs(runner, small_dataset, tmp_path):
    out = tmp_path / "trn"
    res = runner.invoke(main, _train_args(small_dataset, out, ["--skips", "none"]),
                        catch_exceptions=False)
    assert res.exit_code == 0, res.output


def test_train_reproducible_log_bytes(runner, small_dataset, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        res = runner.invoke(main, _train_args(small_dataset, out), catch_exceptions=False)
        assert res.exit_code == 0
        outs.append(out)
    assert (outs[0] / "epochs.csv").read_bytes() == (outs[1] / "epochs.csv").read_bytes()
    assert (outs[0] / "ckpt_last.json.bin").read_bytes() == (outs[1] / "ckpt_last.json.bin").read_bytes()


def test_eval_identical_reports_and_images(runner, small_dataset, tmp_path):
    ckpt_dir = tmp_path / "tr"
    res = runner.invoke(main, _train_args(small_dataset, ckpt_dir), catch_exceptions=False)
    assert res.exit_code == 0
    reports = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        res = runner.invoke(main, [
            "eval", "--checkpoint", str(ckpt_dir / "ckpt_best.json"),
            "--dataset", str(small_dataset), "--out", str(out),
            "--emit-images", str(out / "img"),
        ], catch_exceptions=False)
        assert res.exit_code == 0, res.output
        reports.append(out)
    assert (reports[0] / "metrics_per_image.csv").read_bytes() == \
        (reports[1] / "metrics_per_image.csv").read_bytes()
    imgs = sorted(p.name for p in (reports[0] / "img").iterdir())
    assert imgs[:3] == ["0000_x.pgm", "0000_xhat.pgm", "0000_y.pgm"]
    assert len(imgs) == 3 * 4  # test split has 4 samples


def test_eval_aggregate_matches_rows(runner, small_dataset, tmp_path):
    ckpt_dir = tmp_path / "tr"
    runner.invoke(main, _train_args(small_dataset, ckpt_dir), catch_exceptions=False)
    out = tmp_path / "ev"
    runner.invoke(main, ["eval", "--checkpoint", str(ckpt_dir / "ckpt_best.json"),
                         "--dataset", str(small_dataset), "--out", str(out)],
                  catch_exceptions=False)
    rows = (out / "metrics_per_image.csv").read_text().strip().splitlines()[1:]
    ssims = [float(r.split(",")[5]) for r in rows]
    agg = json.loads((out / "metrics_aggregate.json").read_text())["aggregate"]
    assert abs(agg["ssim"]["mean"] - sum(ssims) / len(ssims)) < 1e-12


def test_report_over_runs(runner, small_dataset, tmp_path):
    runs = tmp_path / "runs"
    ckpt_dir = tmp_path / "tr"
    runner.invoke(main, _train_args(small_dataset, ckpt_dir), catch_exceptions=False)
    runner.invoke(main, ["eval", "--checkpoint", str(ckpt_dir / "ckpt_best.json"),
                         "--dataset", str(small_dataset), "--out", str(runs / "eval_trust")],
                  catch_exceptions=False)
    runner.invoke(main, ["solve", "--dataset", str(small_dataset),
                         "--out", str(runs / "solve_omp"), "--sparsity", "16"],
                  catch_exceptions=False)
    res = runner.invoke(main, ["report", "--runs", str(runs)], catch_exceptions=False)
    assert res.exit_code == 0, res.output
    md = (runs / "report.md").read_text()
    assert "eval_trust" in md and "solve_omp" in md
    csv = (runs / "report.csv").read_text().strip().splitlines()
    assert csv[0].startswith("run,command,kind,param_count,mse_mean")
    assert len(csv) == 3
    # param_count column present for the model run
    eval_row = [r for r in csv[1:] if r.startswith("eval_trust")][0]
    assert eval_row.split(",")[3] != ""


def test_report_empty_dir_exit_1(runner, tmp_path):
    (tmp_path / "runs").mkdir()
    res = runner.invoke(main, ["report", "--runs", str(tmp_path / "runs")])
    assert res.exit_code == 1
