import json
import subprocess
import sys

import pytest

from multirm.checkpoint import file_sha256
from multirm.cli import main

GEN = {"n_samples": 12, "n_eval": 6, "context_len": [8, 16], "response_len": [2, 5],
       "judgments": {"n_annotators": 3, "flip_prob": 0.0}}
MODEL = {"model": {"vocab_size": 512, "d": 16, "n_layers": 1, "n_heads": 2, "max_seq_len": 128},
         "head": {"hidden": 8}}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def artifacts(d):
    """Every output except the manifest, whose timing field varies run to run."""
    return {p.name: file_sha256(p) for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def run_all(root, tmp):
    g = write(tmp / "gen.json", GEN)
    t = write(tmp / "train.json", {**MODEL, "epochs": 1, "batch_size": 4, "seed": 3})
    assert main(["gen", "--config", g, "--out", str(root / "data"), "--seed", "5"]) == 0
    assert main(["train", "--config", t, "--data", str(root / "data"), "--out", str(root / "model")]) == 0
    assert main(["score", "--checkpoint", str(root / "model/model.ckpt"), "--data", str(root / "data/eval.jsonl"),
                 "--out", str(root / "scores")]) == 0
    assert main(["eval", "--scores", str(root / "scores/scores.jsonl"), "--truth", str(root / "data/eval.jsonl"),
                 "--out", str(root / "eval")]) == 0
    assert main(["pged", "--judgments", str(root / "data/judgments.jsonl"), "--out", str(root / "pged")]) == 0
    assert main(["bench", "--out", str(root / "bench"), "--P", "1000", "--R", "10", "--N", "4"]) == 0


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    run_all(tmp / "a", tmp)
    run_all(tmp / "b", tmp)
    return tmp


@pytest.mark.parametrize("stage", ["data", "model", "scores", "eval", "pged", "bench"])
def test_rerun_byte_identical(two_runs, stage):
    a, b = artifacts(two_runs / "a" / stage), artifacts(two_runs / "b" / stage)
    assert a and a == b


def test_manifest_contents(two_runs):
    m = json.loads((two_runs / "a/model/manifest.json").read_text())
    assert m["command"] == "train" and m["seed"] == 3
    assert m["outputs"]["model.ckpt"] == file_sha256(two_runs / "a/model/model.ckpt")
    assert any(k.endswith("train.jsonl") for k in m["inputs"])


def test_pged_flip_zero_removes_nothing(two_runs):
    for line in (two_runs / "a/pged/pged.jsonl").read_text().splitlines():
        assert json.loads(line)["removed_edges"] == 0


def test_bench_reports_reference_speedup(two_runs):
    rep = json.loads((two_runs / "a/bench/cost_report.json").read_text())
    assert rep["speedup_tokens"] == pytest.approx(3.87, abs=0.005)


def test_eval_of_oracle_scores(two_runs, tmp_path):
    truth = two_runs / "a/data/eval.jsonl"
    with open(tmp_path / "s.jsonl", "w") as fh:
        for line in truth.read_text().splitlines():
            rec = json.loads(line)
            n = len(rec["responses"])
            fh.write(json.dumps({"id": rec["id"], "scores": [float(n - rec["ranking"].index(k)) for k in range(n)]}) + "\n")
    assert main(["eval", "--scores", str(tmp_path / "s.jsonl"), "--truth", str(truth), "--out", str(tmp_path / "e")]) == 0
    summary = json.loads((tmp_path / "e/eval.json").read_text())
    assert summary["best_of_n"] == 1.0 and summary["kendall_tau"] == 1.0


def test_default_gen_sizes(tmp_path):
    assert main(["gen", "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "train.jsonl").read_text().splitlines()) == 2048
    assert len((tmp_path / "eval.jsonl").read_text().splitlines()) == 256


def test_lr_zero_final_equals_initial(tmp_path):
    g = write(tmp_path / "g.json", GEN)
    t = write(tmp_path / "t.json", {**MODEL, "epochs": 1, "batch_size": 4, "lr": 0.0})
    main(["gen", "--config", g, "--out", str(tmp_path / "d")])
    assert main(["train", "--config", t, "--data", str(tmp_path / "d"), "--out", str(tmp_path / "m")]) == 0
    assert file_sha256(tmp_path / "m/init.ckpt") == file_sha256(tmp_path / "m/model.ckpt")


def test_malformed_json_exit_2(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{nope")
    assert main(["gen", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == 2
    assert "malformed JSON" in capsys.readouterr().err


def test_invalid_spec_exit_2(tmp_path):
    assert main(["gen", "--config", write(tmp_path / "s.json", {"strength": 3}), "--out", str(tmp_path)]) == 2
    assert main(["train", "--config", write(tmp_path / "t.json", {"epochs": 0}), "--data", str(tmp_path),
                 "--out", str(tmp_path / "m")]) == 2


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


def test_head_representation_mismatch_rejected(two_runs, tmp_path):
    rc = main(["score", "--checkpoint", str(two_runs / "a/model/model.ckpt"), "--data",
               str(two_runs / "a/data/eval.jsonl"), "--representation", "first-last-concat", "--out", str(tmp_path)])
    assert rc == 2


def test_runtime_failure_exit_1(tmp_path):
    (tmp_path / "broken.ckpt").write_bytes(b"\x00" * 4)
    (tmp_path / "d.jsonl").write_text("")
    rc = main(["score", "--checkpoint", str(tmp_path / "broken.ckpt"), "--data", str(tmp_path / "d.jsonl"),
               "--out", str(tmp_path / "o")])
    assert rc == 1


def test_text_scoring_with_byte_tokenizer(two_runs, tmp_path):
    (tmp_path / "p.txt").write_text("what is 2+2?")
    (tmp_path / "a.txt").write_text("4")
    (tmp_path / "b.txt").write_text("five")
    rc = main(["score", "--checkpoint", str(two_runs / "a/model/model.ckpt"), "--text-context", str(tmp_path / "p.txt"),
               "--text-response", str(tmp_path / "a.txt"), "--text-response", str(tmp_path / "b.txt"),
               "--out", str(tmp_path / "o")])
    assert rc == 0
    assert len(json.loads((tmp_path / "o/scores.jsonl").read_text())["scores"]) == 2


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "multirm", "bench", "--out", str(tmp_path), "--N", "2"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "speedup" in out.stdout
