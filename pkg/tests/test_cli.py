"""End-to-end CLI behavior on a tiny run."""

import json
import os

import numpy as np
import pytest

from insgen.cli import main
from insgen.config import ConfigError, load_config
from insgen.decoding import read_trace

TINY_OVERRIDES = [
    "model.d_model=16",
    "model.num_layers=1",
    "model.num_heads=2",
    "model.d_ff=32",
    "task.content_vocab_size=6",
    "task.max_length=5",
    "task.num_train=40",
    "task.num_dev=12",
    "train.steps=8",
    "train.batch_size=8",
    "train.checkpoint_interval=0",
    "decode.max_output_length=12",
]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    run_dir = str(tmp_path_factory.mktemp("run"))
    argv = ["train", "--run-dir", run_dir]
    for o in TINY_OVERRIDES:
        argv += ["--set", o]
    assert main(argv) == 0
    return run_dir


def test_train_writes_run_directory(tiny_run):
    names = set(os.listdir(tiny_run))
    assert {"config.effective", "metrics.log", "dev.tsv", "ckpt-8.insr"} <= names
    effective = json.load(open(os.path.join(tiny_run, "config.effective")))
    assert effective["model"]["d_model"] == 16
    lines = open(os.path.join(tiny_run, "metrics.log")).read().splitlines()
    assert len(lines) == 8
    assert lines[0].startswith("step=1\tloss=")


def test_config_round_trip_reruns_identically(tiny_run, tmp_path):
    run2 = str(tmp_path / "run2")
    assert main(["train", "--config", os.path.join(tiny_run, "config.effective"), "--run-dir", run2]) == 0
    losses1 = [l.split("\t")[1] for l in open(os.path.join(tiny_run, "metrics.log")).read().splitlines()]
    losses2 = [l.split("\t")[1] for l in open(os.path.join(run2, "metrics.log")).read().splitlines()]
    assert losses1 == losses2


def test_override_applies():
    cfg = load_config(None, ["loss.temperature=2.0"])
    assert cfg.loss.temperature == 2.0


def test_invalid_override_key_named():
    with pytest.raises(ConfigError, match="loss.tmperature"):
        load_config(None, ["loss.tmperature=1"])


def test_unknown_key_exit_code(tmp_path):
    assert main(["train", "--run-dir", str(tmp_path / "x"), "--set", "loss.tmperature=1"]) == 1


def test_decode_inline_tokens(tiny_run, capsys):
    ckpt = os.path.join(tiny_run, "ckpt-8.insr")
    assert main(["decode", "--checkpoint", ckpt, "--tokens", "w0 w1 w2", "--mode", "greedy"]) == 0
    out = capsys.readouterr().out.strip()
    vocab_tokens = {"<pad>", "<eos>", "<eoslot>", "<left>", "<right>", "<unk>"} | {f"w{i}" for i in range(6)}
    assert all(tok in vocab_tokens for tok in out.split())


def test_decode_vocab_mismatch_errors(tiny_run, capsys):
    ckpt = os.path.join(tiny_run, "ckpt-8.insr")
    assert main(["decode", "--checkpoint", ckpt, "--tokens", "w0 zebra"]) == 1
    assert "zebra" in capsys.readouterr().err


def test_decode_trace_round_trip(tiny_run, tmp_path, capsys):
    ckpt = os.path.join(tiny_run, "ckpt-8.insr")
    trace_path = str(tmp_path / "out.trace")
    assert main(["decode", "--checkpoint", ckpt, "--tokens", "w0 w1", "--trace", trace_path]) == 0
    capsys.readouterr()
    with open(trace_path) as f:
        trace, meta = read_trace(f)
    assert meta["source"] == [6, 7]
    assert main(["trace-render", trace_path]) == 0
    rendered = capsys.readouterr().out
    assert rendered.splitlines()[0].startswith("iterations=")
    # deterministic render
    main(["trace-render", trace_path])
    assert capsys.readouterr().out == rendered


def test_eval_writes_report(tiny_run, tmp_path, capsys):
    ckpt = os.path.join(tiny_run, "ckpt-8.insr")
    out_dir = str(tmp_path / "eval")
    assert main([
        "eval", "--checkpoint", ckpt, "--data", os.path.join(tiny_run, "dev.tsv"),
        "--out-dir", out_dir, "--mode", "greedy",
    ]) == 0
    report = open(os.path.join(out_dir, "report.txt")).read()
    assert "sequence_accuracy" in report
    table = open(os.path.join(out_dir, "iterations.tsv")).read().splitlines()
    assert table[0] == "length\titerations\tlower_bound\tupper_bound"
    for line in table[1:]:
        n, iters, lo, hi = (int(v) for v in line.split("\t"))
        assert lo <= max(iters, lo) and lo == n.bit_length() and hi == n


def test_eval_sweep_row_count_and_best(tiny_run, tmp_path, capsys):
    ckpt = os.path.join(tiny_run, "ckpt-8.insr")
    out_dir = str(tmp_path / "sweep")
    assert main([
        "eval", "--checkpoint", ckpt, "--out-dir", out_dir,
        "--sweep-beta", "0:7:0.5", "--mode", "greedy", "--limit", "6",
    ]) == 0
    capsys.readouterr()
    rows = open(os.path.join(out_dir, "sweep.tsv")).read().splitlines()
    assert len(rows) == 16  # header + 15 betas
    data = [r.split("\t") for r in rows[1:]]
    assert [d[0] for d in data][:3] == ["0", "0.5", "1"]
    best_rows = [d for d in data if d[5] == "*"]
    assert len(best_rows) == 1
    # best-beta BLEU is at least the beta=0 BLEU (max over a set including 0)
    beta0 = next(d for d in data if d[0] == "0")
    assert float(best_rows[0][2]) >= float(beta0[2])


def test_trace_render_malformed_reports_offset(tmp_path, capsys):
    bad = tmp_path / "bad.trace"
    bad.write_text('{"type": "trace", "version": 1, "final": [], "truncated": false}\n{broken\n')
    assert main(["trace-render", str(bad)]) == 1
    assert "byte offset" in capsys.readouterr().err


def test_missing_file_exit_code(capsys):
    assert main(["trace-render", "/nonexistent/file.trace"]) == 1
    assert main(["train", "--config", "/nonexistent/cfg.json", "--run-dir", "/tmp/x"]) == 1


def test_usage_error_exit_code(capsys):
    assert main(["decode", "--checkpoint", "x"]) == 1  # missing input source
    assert main([]) == 1
