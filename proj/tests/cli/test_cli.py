"""End-to-end checks of the command-line interface: exit codes, file outputs,
and determinism. The binary path comes from the FLASHDET_CLI environment
variable (set by ctest)."""

import csv
import filecmp
import os
import subprocess
from pathlib import Path

import pytest

CLI = os.environ.get("FLASHDET_CLI", "flashdet")


def run(*args, **kwargs):
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, **kwargs)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cores = root / "cores"
    r = run("generate", "--seed", 5, "--cores", 2, "--size", 128,
            "--tumor-fraction", 0.4, "--out", cores)
    assert r.returncode == 0, r.stderr
    regions = root / "regions"
    r = run("generate-train", "--seed", 6, "--regions-tumor", 2,
            "--regions-normal", 2, "--out", regions)
    assert r.returncode == 0, r.stderr
    model = root / "model.flsh"
    r = run("train", "--data", regions, "--epochs", 3, "--batch", 32,
            "--seed", 7, "--out", model, "--history", root / "history.csv")
    assert r.returncode == 0, r.stderr
    return root


def test_generate_outputs_and_determinism(workdir, tmp_path):
    cores = workdir / "cores"
    names = {p.name for p in cores.iterdir()}
    assert {"core_000.png", "core_000_mask.png", "core_001.png",
            "core_001_mask.png", "manifest.csv"} <= names
    with open(cores / "manifest.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["file", "tumor_fraction", "seed"]
    assert len(rows) == 3

    again = tmp_path / "again"
    r = run("generate", "--seed", 5, "--cores", 2, "--size", 128,
            "--tumor-fraction", 0.4, "--out", again)
    assert r.returncode == 0
    for name in ["core_000.png", "core_001_mask.png", "manifest.csv"]:
        assert filecmp.cmp(cores / name, again / name, shallow=False)


def test_generate_rejects_bad_fraction(tmp_path):
    r = run("generate", "--seed", 1, "--cores", 1, "--size", 128,
            "--tumor-fraction", 1.5, "--out", tmp_path / "x")
    assert r.returncode == 2
    assert "Usage" in r.stderr or "tumor-fraction" in r.stderr


def test_train_defaults_echo_and_history(workdir):
    history = workdir / "history.csv"
    with open(history) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["epoch", "mean_loss", "train_acc", "val_acc"]
    assert len(rows) == 1 + 3  # header + one row per epoch

    r = run("train", "--data", workdir / "regions", "--epochs", 1, "--batch", 32,
            "--seed", 7, "--out", workdir / "m1.flsh")
    assert r.returncode == 0
    assert "lr=0.002" in r.stdout
    assert "momentum=0.9" in r.stdout


def test_train_missing_data_dir(tmp_path):
    r = run("train", "--data", tmp_path / "nope", "--epochs", 1,
            "--out", tmp_path / "m.flsh")
    assert r.returncode == 2


def test_infer_engines_and_flags(workdir):
    image = workdir / "cores" / "core_000.png"
    model = workdir / "model.flsh"

    r = run("infer", "--model", model, "--image", image, "--engine", "flash",
            "--out-mask", workdir / "fm.png", "--out-prob", workdir / "fp.fprb")
    assert r.returncode == 0, r.stderr
    assert "conv_stack_invocations=16" in r.stdout  # floor(128/32)^2
    assert (workdir / "fm.png").exists()
    assert (workdir / "fp.fprb").exists()

    r = run("infer", "--model", model, "--image", image, "--engine", "dense",
            "--stride", 16, "--out-mask", workdir / "dm.png",
            "--out-prob", workdir / "dp.fprb")
    assert r.returncode == 0, r.stderr

    r = run("infer", "--model", model, "--image", image, "--engine", "flash",
            "--stride", 2, "--out-mask", workdir / "x.png", "--out-prob", workdir / "x.fprb")
    assert r.returncode == 2
    assert "stride" in r.stderr

    r = run("infer", "--model", model, "--image", image, "--engine", "warp",
            "--out-mask", workdir / "x.png", "--out-prob", workdir / "x.fprb")
    assert r.returncode == 2


def test_infer_small_image_counts_and_defaults(workdir, tmp_path):
    r = run("generate", "--seed", 60, "--cores", 1, "--size", 64,
            "--tumor-fraction", 0.5, "--out", tmp_path)
    assert r.returncode == 0
    image = tmp_path / "core_000.png"
    model = workdir / "model.flsh"

    r = run("infer", "--model", model, "--image", image, "--engine", "flash",
            "--out-mask", tmp_path / "m.png", "--out-prob", tmp_path / "p.fprb")
    assert r.returncode == 0, r.stderr
    assert "conv_stack_invocations=4" in r.stdout  # floor(64/32)^2

    # Omitted stride defaults to 1 for the dense engine.
    r = run("infer", "--model", model, "--image", image, "--engine", "dense",
            "--out-mask", tmp_path / "m2.png", "--out-prob", tmp_path / "p2.fprb")
    assert r.returncode == 0, r.stderr
    assert "stride=1" in r.stdout
    assert "conv_stack_invocations=1089" in r.stdout  # (64-31)^2

    # FLASH_THREADS is the fallback when --threads is omitted.
    env = dict(os.environ, FLASH_THREADS="1")
    r = subprocess.run([CLI, "infer", "--model", str(model), "--image", str(image),
                        "--engine", "flash", "--out-mask", str(tmp_path / "m3.png"),
                        "--out-prob", str(tmp_path / "p3.fprb")],
                       capture_output=True, text=True, env=env)
    assert r.returncode == 0, r.stderr
    assert "threads=1" in r.stdout


def test_eval_metrics_and_roc(workdir):
    gt = workdir / "cores" / "core_000_mask.png"
    r = run("eval", "--pred", gt, "--gt", gt, "--prob", workdir / "fp.fprb",
            "--out", workdir / "metrics.csv", "--roc", workdir / "roc.csv")
    assert r.returncode == 0, r.stderr
    with open(workdir / "metrics.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0][:6] == ["core_id", "sensitivity", "precision", "f1",
                           "specificity", "auc"]
    assert float(rows[1][1]) == 1.0  # pred == gt
    assert float(rows[1][4]) == 1.0
    with open(workdir / "roc.csv") as f:
        roc_rows = list(csv.reader(f))
    assert len(roc_rows) == 1 + 103  # header + 101 thresholds + 2 anchors


def test_eval_dimension_mismatch(workdir, tmp_path):
    r = run("generate", "--seed", 50, "--cores", 1, "--size", 64,
            "--tumor-fraction", 0.4, "--out", tmp_path)
    assert r.returncode == 0
    r = run("eval", "--pred", tmp_path / "core_000_mask.png",
            "--gt", workdir / "cores" / "core_000_mask.png",
            "--prob", workdir / "fp.fprb",
            "--out", tmp_path / "m.csv")
    assert r.returncode == 2
    assert "64x64" in r.stderr and "128x128" in r.stderr


def test_bench_report(workdir):
    r = run("bench", "--model", workdir / "model.flsh", "--sizes", "64",
            "--engines", "dense,flash", "--repeats", 3, "--threads", 2,
            "--out", workdir / "bench.csv")
    assert r.returncode == 0, r.stderr
    lines = Path(workdir / "bench.csv").read_text().splitlines()
    assert lines[0].startswith("engine,image_side,repeats,mean_seconds,std_seconds,"
                               "conv_stack_invocations,classifier_head_invocations,"
                               "speedup_vs_dense")
    data = [line.split(",") for line in lines[1:] if not line.startswith("#")]
    assert [d[0] for d in data] == ["dense", "flash"]
    assert int(data[0][5]) == 33 * 33
    assert int(data[1][5]) == 4
    assert float(data[1][3]) < float(data[0][3])  # flash mean below dense mean
    assert float(data[1][7]) > 1.0  # speedup_vs_dense
    assert any(line.startswith("# threads=") for line in lines)

    r = run("bench", "--model", workdir / "model.flsh", "--sizes", "64",
            "--engines", "dense", "--repeats", 2, "--out", workdir / "b2.csv")
    assert r.returncode == 2  # repeats must be >= 3

    r = run("bench", "--model", workdir / "model.flsh", "--sizes", "64",
            "--engines", "turbo", "--repeats", 3, "--out", workdir / "b3.csv")
    assert r.returncode == 2
