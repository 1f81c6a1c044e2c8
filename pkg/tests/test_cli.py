import json
import subprocess
import sys

import numpy as np
import pytest

from macarm.cli import run_command
from macarm.harness import load_dataset, load_masked
from macarm.model import load_checkpoint


@pytest.fixture
def data(tmp_path):
    train, test = tmp_path / "train.csv", tmp_path / "test.csv"
    code = run_command(["gen-data", "--n", "4", "--k", "3", "--components", "2", "--count", "300",
                        "--test-count", "50", "--seed", "1", "--out", str(train), "--test-out", str(test)])
    assert code == 0
    return train, test


@pytest.fixture
def ckpt(tmp_path, data):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"version": 1, "steps": 20, "batch": 16, "hidden_sizes": [6], "outer_factor": 4}))
    out = tmp_path / "ckpt.json"
    code = run_command(["train", "--objective", "mac-cr", "--data", str(data[0]), "--config", str(cfg),
                        "--out", str(out), "--log", str(tmp_path / "log.tsv"), "--deterministic"])
    assert code == 0
    return out


def test_dist_exact_writes_table(tmp_path, capsys):
    out = tmp_path / "t.tsv"
    assert run_command(["dist", "--n", "12", "--protocols", "mac,rnd", "--exact", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "mask\tM\tmac\trnd\tmac-cr"
    assert len(lines) == 1 + 4096
    assert "entropy_nats" in capsys.readouterr().out


def test_dist_stdout(capsys):
    assert run_command(["dist", "--n", "2", "--exact"]) == 0
    assert capsys.readouterr().out.splitlines()[1] == "00\t0\t0.666666667\t0.666666667\t0.5"


def test_dist_mc(capsys):
    assert run_command(["dist", "--n", "3", "--samples", "1000"]) == 0
    assert capsys.readouterr().out.startswith("mask\tM\trnd\tmac\tmac-cr")


@pytest.mark.parametrize("kind", ["test", "train", "train-cr", "baseline"])
def test_sample_masks(kind, capsys):
    assert run_command(["sample-masks", "--n", "5", "--kind", kind, "--batch", "7", "--seed", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 7
    for line in lines:
        bits = line.split("\t")[0]
        assert len(bits) == 5 and set(bits) <= {"0", "1"}
        if kind != "test":
            assert bits != "11111"


def test_gen_data_files(data):
    train, test = load_dataset(data[0]), load_dataset(data[1])
    assert train.instances.shape == (300, 4) and test.instances.shape == (50, 4)
    assert train.spec.alphabet_size == 3


def test_train_writes_checkpoint_and_log(tmp_path, ckpt):
    params = load_checkpoint(ckpt)
    assert params.hidden_sizes == (6,) and params.step == 20
    log = (tmp_path / "log.tsv").read_text().splitlines()
    assert len(log) == 21


def test_train_is_reproducible(tmp_path, data, ckpt):
    again = tmp_path / "again.json"
    cfg = tmp_path / "c.json"
    run_command(["train", "--objective", "mac-cr", "--data", str(data[0]), "--config", str(cfg),
                 "--out", str(again), "--deterministic"])
    assert again.read_text() == ckpt.read_text()


def test_eval_prints_nll(data, ckpt, capsys):
    assert run_command(["eval", "--ckpt", str(ckpt), "--data", str(data[1]), "--metric", "marginal", "--seed", "7"]) == 0
    fields = capsys.readouterr().out.split("\t")
    assert fields[0] == "marginal_nll" and float(fields[1]) > 0
    assert run_command(["eval", "--ckpt", str(ckpt), "--data", str(data[1]), "--metric", "joint", "--protocol", "rnd"]) == 0
    assert capsys.readouterr().out.startswith("joint_nll\t")


def test_complete(tmp_path, ckpt, capsys):
    masked = tmp_path / "m.csv"
    masked.write_text("n_vars=4,alphabet=3\n2,?,?,1\n?,?,?,?\n")
    out = tmp_path / "filled.csv"
    assert run_command(["complete", "--ckpt", str(ckpt), "--data", str(masked), "--out", str(out)]) == 0
    spec, X, masks = load_masked(out)
    assert masks.all()
    assert X[0, 0] == 2 and X[0, 3] == 1
    assert run_command(["complete", "--ckpt", str(ckpt), "--data", str(masked)]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 2


def test_ablate(tmp_path, capsys):
    cfg = tmp_path / "a.json"
    cfg.write_text(json.dumps({"n_vars": 3, "alphabet_size": 2, "n_components": 2, "n_train": 50,
                               "n_test": 20, "seeds": [0], "steps": 2, "batch": 8, "hidden_sizes": [3],
                               "outer_factor": 2}))
    out = tmp_path / "r.json"
    assert run_command(["ablate", "--config", str(cfg), "--out", str(out), "--deterministic"]) == 0
    doc = json.loads(out.read_text())
    assert sorted(a["objective"] for a in doc["arms"]) == sorted(["ardm", "rnd-nocr", "rnd-cr", "mac-nocr", "mac-cr"])
    assert len(capsys.readouterr().out.splitlines()) == 5


def test_usage_errors(capsys):
    assert run_command([]) == 1
    assert run_command(["frobnicate"]) == 1
    assert run_command(["dist", "--n", "3", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_validation_errors(tmp_path, data, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("n_vars=3,alphabet=2\n1,2,1\n")
    assert run_command(["eval", "--ckpt", "missing.json", "--data", str(bad)]) == 1
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"objective": "mac-cr", "typo": 1}))
    assert run_command(["train", "--data", str(data[0]), "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
    assert run_command(["train", "--data", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_runtime_error_exit_code(capsys):
    assert run_command(["dist", "--n", "21", "--exact"]) == 2


def test_checkpoint_dataset_mismatch(tmp_path, ckpt):
    other = tmp_path / "o.csv"
    other.write_text("n_vars=3,alphabet=3\n0,1,2\n")
    assert run_command(["eval", "--ckpt", str(ckpt), "--data", str(other)]) == 1


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "macarm.cli", "dist", "--n", "1", "--exact"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.splitlines() == ["mask\tM\trnd\tmac\tmac-cr", "0\t0\t1\t1\t1", "1\t1\t0\t0\t0"]
