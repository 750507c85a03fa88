from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from mongoose.checkpoint import load_checkpoint
from mongoose.cli import resolve_seed, run_command

TINY = """
dimension = 2
hidden_size = 6
batch_size = 3
horizon_schedule = 4, 6
steps_per_phase = 2
alpha = 0.01
"""


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


@pytest.fixture
def trained(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)
    out = tmp_path / "run"
    assert run_command(["train", "--config", str(cfg), "--out", str(out), "--no-timing"]) == 0
    return out


def test_train_outputs(trained):
    assert {p.name for p in trained.iterdir()} == {"config.cfg", "metrics.csv", "phase0.ckpt",
                                                   "phase1.ckpt", "final.ckpt"}
    rows = read_rows(trained / "metrics.csv")
    assert len(rows) == 1 + 4
    assert all(r[rows[0].index("wall_time")] == "0.0" for r in rows[1:])
    ck = load_checkpoint(trained / "final.ckpt")
    assert ck.step == 4 and ck.config.alpha == 0.01


def test_resume_appends_metrics(tmp_path, trained):
    out = tmp_path / "resumed"
    out.mkdir()
    (out / "metrics.csv").write_text((trained / "metrics.csv").read_text())
    assert run_command(["train", "--config", str(trained / "config.cfg"), "--out", str(out),
                        "--resume", str(trained / "phase0.ckpt"), "--no-timing"]) == 0
    assert (out / "final.ckpt").read_bytes() == (trained / "final.ckpt").read_bytes()
    assert len(read_rows(out / "metrics.csv")) == 1 + 4 + 2


def test_bench_end_to_end(tmp_path, trained):
    out = tmp_path / "bench"
    code = run_command(["bench", "--actor", f"checkpoint:{trained / 'final.ckpt'}",
                        "--actor", "random", "--actor", "eipu", "--gamma", "0.1", "1",
                        "--fn", "sphere", "--fn", "branin", "--dim", "2", "--horizon", "3",
                        "--seeds", "2", "--probes", "2000", "--out", str(out), "--svg"])
    assert code == 0
    rows = read_rows(out / "report.csv")
    assert rows[0] == ["actor", "fn", "seed", "step", "regret", "cum_cost", "wall_time"]
    actors = {r[0] for r in rows[1:]}
    assert actors == {"policy", "random", "eipu(gamma=0.1)", "eipu(gamma=1)"}
    assert len(rows) == 1 + 4 * 2 * 2 * 4
    assert (out / "summary.csv").exists() and (out / "tables.csv").exists()
    assert (out / "regret_vs_cost.svg").read_text().lstrip().startswith("<?xml")


def test_bench_dimension_mismatch(tmp_path, trained, capsys):
    code = run_command(["bench", "--actor", f"checkpoint:{trained / 'final.ckpt'}", "--dim", "3",
                        "--out", str(tmp_path / "b")])
    assert code == 1
    assert "d=2" in capsys.readouterr().err


def test_malformed_input_exits_2(tmp_path):
    for argv in (["frobnicate"], [], ["bench", "--actor", "ei", "--dim", "abc"],
                 ["bench", "--actor", "ei", "--fn", "nosuchfn"],
                 ["grad-check", "--horizon", "0"]):
        assert run_command(argv) == 2


def test_expected_errors_exit_1(tmp_path, capsys):
    assert run_command(["train", "--config", str(tmp_path / "missing.cfg"),
                        "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("alpha = -1\n")
    assert run_command(["train", "--config", str(bad), "--out", str(tmp_path)]) == 1
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"nope")
    assert run_command(["rollout", "--checkpoint", str(junk), "--out", str(tmp_path)]) == 1
    assert "mongoose" in capsys.readouterr().err


def test_grad_check_exit_codes(capsys):
    assert run_command(["grad-check"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "max_rel_err" in out
    assert run_command(["grad-check", "--coords", "5", "--threshold", "1e-14"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_seed_environment_fallback(tmp_path, monkeypatch):
    monkeypatch.delenv("MONGOOSE_SEED", raising=False)
    assert resolve_seed(None) == 0 and resolve_seed(4) == 4
    monkeypatch.setenv("MONGOOSE_SEED", "5")
    assert resolve_seed(None) == 5 and resolve_seed(4) == 4
    assert run_command(["sample-prior", "--out", str(tmp_path / "env"), "--grid", "8"]) == 0
    monkeypatch.delenv("MONGOOSE_SEED")
    assert run_command(["sample-prior", "--seed", "5", "--out", str(tmp_path / "flag"),
                        "--grid", "8"]) == 0
    assert (tmp_path / "env" / "grid.csv").read_bytes() == \
        (tmp_path / "flag" / "grid.csv").read_bytes()
    monkeypatch.setenv("MONGOOSE_SEED", "five")
    assert run_command(["sample-prior", "--out", str(tmp_path / "x")]) == 1


def test_sample_prior_outputs(tmp_path):
    out = tmp_path / "s"
    assert run_command(["sample-prior", "--dim", "2", "--grid", "5", "--svg",
                        "--out", str(out)]) == 0
    info = json.loads((out / "sample.json").read_text())
    assert len(info["lengthscales"]) == 2 and info["bowl"] is not None
    rows = read_rows(out / "grid.csv")
    assert rows[0] == ["x1", "x2", "value"] and len(rows) == 1 + 25
    assert (out / "sample.svg").exists()
    assert run_command(["sample-prior", "--dim", "3", "--no-bowl", "--out",
                        str(tmp_path / "d3")]) == 0
    assert json.loads((tmp_path / "d3" / "sample.json").read_text())["bowl"] is None
    assert not (tmp_path / "d3" / "grid.csv").exists()


def test_rollout_outputs(tmp_path, trained):
    out = tmp_path / "r"
    ck = str(trained / "final.ckpt")
    assert run_command(["rollout", "--checkpoint", ck, "--horizon", "7", "--svg",
                        "--out", str(out)]) == 0
    rows = read_rows(out / "trajectory.csv")
    assert rows[0] == ["t", "x1", "x2", "value", "observed", "step_cost"]
    assert len(rows) == 1 + 8
    assert rows[1][1:3] == ["0.0", "0.0"]
    assert (out / "trajectory.svg").exists()
    assert run_command(["rollout", "--checkpoint", ck, "--prior", "--out", str(out)]) == 0
    assert run_command(["rollout", "--checkpoint", ck, "--dim", "3", "--out", str(out)]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mongoose", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    for cmd in ("train", "bench", "rollout", "sample-prior", "grad-check"):
        assert cmd in res.stdout
