import json
import os

import numpy as np
import pytest

from graphtrans.checkpoint import load_checkpoint
from graphtrans.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from graphtrans.data import encode_pairs, read_corpus
from graphtrans.model import EOS, greedy_decode
from graphtrans.train import translate

CONFIG = """preset=desk
task=copy
n_pairs=80
max_len=5
vocab_size=10
max_steps=30
eval_interval=10
log_interval=5
d_model=16
d_ff=32
warmup=50
fusion=weight_gate
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(CONFIG)
    return path


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("trained")
    cfg = d / "run.cfg"
    cfg.write_text(CONFIG)
    assert main(["train", "--config", str(cfg), "--out", str(d / "run")]) == EXIT_OK
    return d / "run"


class TestTrain:
    def test_zero_steps_saves_initial_checkpoint(self, cfg, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "train", "--config", cfg, "--out", tmp_path / "r", "--set", "max_steps=0")
        assert code == EXIT_OK
        assert json.loads(out)["steps"] == 0
        assert (tmp_path / "r" / "best.ckpt").exists()

    def test_metrics_are_json_lines(self, trained_dir):
        lines = (trained_dir / "metrics.jsonl").read_text().splitlines()
        records = [json.loads(line) for line in lines]
        assert {"metric", "split", "value", "step"} <= set(records[0])
        assert {r["metric"] for r in records} >= {"loss", "token_accuracy", "lr"}
        assert not (trained_dir / ".lock").exists()

    def test_same_seed_same_metrics(self, cfg, tmp_path, capsys):
        for name in ("a", "b"):
            assert run_cli(capsys, "train", "--config", cfg, "--out", tmp_path / name, "--seed", 4)[0] == EXIT_OK
        assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
        assert (tmp_path / "a" / "last.ckpt").read_bytes() == (tmp_path / "b" / "last.ckpt").read_bytes()

    def test_invalid_config_names_field(self, cfg, tmp_path, capsys):
        code, _, err = run_cli(capsys, "train", "--config", cfg, "--out", tmp_path / "r", "--set", "n_heads=3")
        assert code == EXIT_USAGE
        assert "d_model" in err

    def test_unknown_key(self, cfg, tmp_path, capsys):
        code, _, err = run_cli(capsys, "train", "--config", cfg, "--out", tmp_path / "r", "--set", "speed=11")
        assert code == EXIT_USAGE and "speed" in err

    def test_numeric_failure_exit_code(self, cfg, tmp_path, capsys):
        with np.errstate(all="ignore"):
            code, _, err = run_cli(capsys, "train", "--config", cfg, "--out", tmp_path / "r", "--set", "lr_scale=1e12")
        assert code == EXIT_NUMERIC and "non-finite" in err

    def test_locked_directory(self, cfg, tmp_path, capsys):
        out = tmp_path / "r"
        out.mkdir()
        (out / ".lock").write_text("1")
        code, _, err = run_cli(capsys, "train", "--config", cfg, "--out", out)
        assert code != EXIT_OK and "lock" in err.lower()

    def test_usage_error(self, capsys):
        assert run_cli(capsys, "train")[0] == EXIT_USAGE
        assert run_cli(capsys, "frobnicate")[0] == EXIT_USAGE


class TestEvaluate:
    def test_bypass_is_100(self, trained_dir, capsys):
        code, out, _ = run_cli(capsys, "evaluate", "--checkpoint", trained_dir / "best.ckpt",
                               "--corpus", trained_dir / "test.tsv", "--bypass")
        assert code == EXIT_OK and json.loads(out)["bleu"] == pytest.approx(100.0)

    def test_report_fields(self, trained_dir, tmp_path, capsys):
        report_path = tmp_path / "rep.json"
        code, out, _ = run_cli(capsys, "evaluate", "--checkpoint", trained_dir / "best.ckpt", "--corpus",
                               trained_dir / "test.tsv", "--by-length", "--beam", "2", "--out", report_path)
        rep = json.loads(out)
        assert code == EXIT_OK and json.loads(report_path.read_text()) == rep
        assert 0.0 <= rep["bleu"] <= 100.0 and rep["beam"] == 2
        assert set(rep["by_length"]) == {"0-10"}
        assert len(rep["samples"]) == 5

    def test_beam_one_is_greedy(self, trained_dir):
        model, _, vocab, _ = load_checkpoint(trained_dir / "best.ckpt")
        pairs = read_corpus(trained_dir / "test.tsv")
        enc = [s for s, _ in encode_pairs(pairs, vocab)]
        batched = translate(model, enc, beam=1)
        for src, out in zip(enc, batched):
            assert greedy_decode(model, np.array([src + [EOS]]))[0] == out

    def test_vocab_mismatch(self, trained_dir, tmp_path, capsys):
        bad = tmp_path / "bad.tsv"
        bad.write_text("xyz\txyz\n")
        code, _, err = run_cli(capsys, "evaluate", "--checkpoint", trained_dir / "best.ckpt", "--corpus", bad)
        assert code == EXIT_DATA and "vocabulary" in err

    def test_missing_checkpoint(self, tmp_path, capsys):
        code, _, _ = run_cli(capsys, "evaluate", "--checkpoint", tmp_path / "none.ckpt", "--corpus", tmp_path / "x")
        assert code == EXIT_DATA


class TestInspectGates:
    def test_untrained_gate_near_half(self, cfg, tmp_path, capsys):
        run_cli(capsys, "train", "--config", cfg, "--out", tmp_path / "r", "--set", "max_steps=0")
        code, out, _ = run_cli(capsys, "inspect-gates", "--checkpoint", tmp_path / "r" / "best.ckpt",
                               "--corpus", tmp_path / "r" / "test.tsv")
        rep = json.loads(out)
        assert code == EXIT_OK
        assert len(rep["mean_gate"]) == 2 and all(len(row) == len(rep["buckets"]) == 4 for row in rep["mean_gate"])
        for row in rep["mean_gate"]:
            assert row[0] == pytest.approx(0.5, abs=0.1)
            assert row[1:] == [None, None, None]

    def test_trained_reports_spearman(self, trained_dir, capsys):
        code, out, _ = run_cli(capsys, "inspect-gates", "--checkpoint", trained_dir / "best.ckpt",
                               "--corpus", trained_dir / "valid.tsv")
        rep = json.loads(out)
        assert code == EXIT_OK
        assert len(rep["spearman_gate_vs_length"]) == 2
        assert all(r is None or -1.0 <= r <= 1.0 for r in rep["spearman_gate_vs_length"])
        assert all(row[0] == 0.0 for row in rep["relative_to_first_bucket"])

    def test_rejects_non_gate_checkpoint(self, cfg, tmp_path, capsys):
        run_cli(capsys, "train", "--config", cfg, "--out", tmp_path / "r", "--set", "max_steps=0",
                "--set", "fusion=sum")
        code, _, err = run_cli(capsys, "inspect-gates", "--checkpoint", tmp_path / "r" / "best.ckpt",
                               "--corpus", tmp_path / "r" / "test.tsv")
        assert code == EXIT_USAGE and "weight_gate" in err


class TestInspectOrders:
    def test_six_layers(self, capsys):
        code, out, _ = run_cli(capsys, "inspect-orders", "--layers", 6)
        rep = json.loads(out)
        assert code == EXIT_OK and rep["max_order"] == 64

    def test_three_layer_bands(self, capsys):
        rep = json.loads(run_cli(capsys, "inspect-orders", "--layers", 3)[1])
        assert rep["group_bands"]["3"] == {"low": [1, 2], "middle": [2, 4], "high": [4, 8]}
        assert {"per_layer", "stack"} <= set(rep["readings"][0])

    def test_vanilla_hull_matches_split_trace(self, capsys):
        rep = json.loads(run_cli(capsys, "inspect-orders", "--layers", 8)[1])
        for van, split in zip(rep["vanilla_trace"], rep["split_trace"]):
            assert van["hull"] == split["full"]
        # the previous stream lags the vanilla hull by one layer
        for van, split in zip(rep["vanilla_trace"], rep["split_trace"][1:]):
            assert van["hull"] == split["prev_out"]

    def test_invalid_layers(self, capsys):
        assert run_cli(capsys, "inspect-orders", "--layers", 0)[0] == EXIT_USAGE


class TestSweep:
    def test_single_layer_count(self, cfg, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "sweep-layers", "--config", cfg, "--layers", "1", "--workdir",
                               tmp_path / "sw", "--beam", "1", "--set", "max_steps=10")
        rep = json.loads(out)
        assert code == EXIT_OK
        assert len(rep["runs"]) == 2 and len(rep["rows"]) == 2
        assert {r["variant"] for r in rep["rows"]} == {"baseline", "graph"}

    def test_rows_reproducible_by_train_and_evaluate(self, cfg, tmp_path, capsys):
        _, out, _ = run_cli(capsys, "sweep-layers", "--config", cfg, "--layers", "1", "--workdir",
                            tmp_path / "sw", "--beam", "1", "--set", "max_steps=10")
        graph = next(r for r in json.loads(out)["runs"] if r["variant"] == "graph")
        run_cli(capsys, "train", "--config", cfg, "--out", tmp_path / "solo", "--seed", graph["seed"],
                "--set", "max_steps=10", "--set", "n_layers=1", "--set", "arch=graph")
        _, out, _ = run_cli(capsys, "evaluate", "--checkpoint", tmp_path / "solo" / "best.ckpt",
                            "--corpus", tmp_path / "solo" / "test.tsv", "--beam", "1")
        assert json.loads(out)["bleu"] == pytest.approx(graph["bleu"], abs=1e-9)

    def test_empty_layer_list(self, cfg, tmp_path, capsys):
        assert run_cli(capsys, "sweep-layers", "--config", cfg, "--layers", ",", "--workdir", tmp_path)[0] == EXIT_USAGE


def test_console_script_installed():
    import shutil
    assert shutil.which("graphtrans") or os.environ.get("CI_NO_SCRIPTS")
