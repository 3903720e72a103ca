"""End-to-end runs of the ``lasr`` command line on a small synthetic corpus."""
import json
import subprocess
import sys
from pathlib import Path

import pytest

from lasr.cli import run

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "tiny.ini"


def _ok(*argv):
    rc = run([str(a) for a in argv])
    assert rc == 0, argv
    return rc


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("e2e")
    cfg = d / "tiny.ini"
    cfg.write_text(CONFIG.read_text().replace("epochs = 30", "epochs = 12"))
    man = d / "corpus" / "manifest.jsonl"
    lex = d / "corpus" / "lexicon.tsv"
    _ok("synth", "--n", 16, "--seed", 3, "--out", d / "corpus")
    _ok("featurize", "--config", cfg, "--manifest", man, "--out", d / "train.feats")
    _ok("tokenizer-train", "--manifest", man, "--vocab-size", 40, "--out", d / "tok.tsv")
    _ok("lm-train", "--manifest", man, "--order", 3, "--out", d / "lm.arpa")
    _ok("train", "--config", cfg, "--tokenizer", d / "tok.tsv", "--lexicon", lex,
        "--phone-epochs", 2, "--out", d / "model")
    _ok("decode", "--model", d / "model", "--manifest", d / "train.feats", "--out", d / "nbest.jsonl")
    _ok("rescore", "--nbest", d / "nbest.jsonl", "--model", d / "model", "--manifest", d / "train.feats",
        "--lm", d / "lm.arpa", "--lexicon", lex, "--tune", "--grid-step", 0.25,
        "--out", d / "hyp.jsonl")
    _ok("evaluate", "--hyp", d / "hyp.jsonl", "--ref", man, "--baseline", "ref=50",
        "--out", d / "report.json")
    return d


def test_pipeline_artifacts(pipeline):
    d = pipeline
    for name in ["train.feats", "tok.tsv", "lm.arpa", "model/model.ckpt", "model/tokenizer.tsv",
                 "model/phone.ckpt", "model/train_log.jsonl", "nbest.jsonl", "hyp.jsonl",
                 "report.json"]:
        assert (d / name).exists(), name
    rep = json.loads((d / "report.json").read_text())
    assert set(rep["wer"]) >= {"all"}
    assert "ref" in rep["relative_improvement"]
    log_lines = (d / "model" / "train_log.jsonl").read_text().splitlines()
    assert len(log_lines) == 13
    assert not list((d / "model").glob(".*partial"))
    n = len((d / "corpus" / "manifest.jsonl").read_text().splitlines())
    assert len((d / "hyp.jsonl").read_text().splitlines()) == n


def test_train_and_decode_are_idempotent(pipeline):
    d = pipeline
    _ok("train", "--config", d / "tiny.ini", "--tokenizer", d / "tok.tsv",
        "--lexicon", d / "corpus" / "lexicon.tsv", "--phone-epochs", 2, "--out", d / "model2")
    for name in ["model.ckpt", "phone.ckpt", "tokenizer.tsv", "train_log.jsonl"]:
        assert (d / "model" / name).read_bytes() == (d / "model2" / name).read_bytes(), name
    _ok("decode", "--model", d / "model2", "--manifest", d / "train.feats", "--out", d / "nb2.jsonl")
    assert (d / "nbest.jsonl").read_bytes() == (d / "nb2.jsonl").read_bytes()


def test_decode_worker_count_keeps_order(pipeline):
    d = pipeline
    _ok("decode", "--model", d / "model", "--manifest", d / "train.feats", "--workers", 3,
        "--out", d / "nb3.jsonl")
    assert (d / "nbest.jsonl").read_bytes() == (d / "nb3.jsonl").read_bytes()


def test_decode_from_manifest_matches_features(pipeline):
    d = pipeline
    _ok("decode", "--model", d / "model", "--manifest", d / "corpus" / "manifest.jsonl",
        "--out", d / "nbm.jsonl")
    assert (d / "nbest.jsonl").read_bytes() == (d / "nbm.jsonl").read_bytes()


def test_fixed_weights_and_lm_round_trip(pipeline):
    d = pipeline
    _ok("rescore", "--nbest", d / "nbest.jsonl", "--alpha", 1.0, "--out", d / "las_only.jsonl")
    best = {}
    for line in (d / "nbest.jsonl").read_text().splitlines():
        row = json.loads(line)
        if row["rank"] == 0:
            best[row["utt_id"]] = row["text"]
    got = {json.loads(l)["utt_id"]: json.loads(l)["text"]
           for l in (d / "las_only.jsonl").read_text().splitlines()}
    assert got == best
    from lasr.ngram import NGramLM
    text = (d / "lm.arpa").read_text()
    assert NGramLM.from_arpa(text).to_arpa() == text


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run(["decode", "--manifest", "x"]) == 2              # --model is required
    assert run(["train", "--bogus"]) == 2
    assert run(["nosuchcommand"]) == 2
    assert run(["featurize", "--out", str(tmp_path / "f")]) == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_failures_exit_1(tmp_path, capsys):
    assert run(["decode", "--model", str(tmp_path / "nope"), "--manifest", "m",
                "--out", str(tmp_path / "o")]) == 1
    (tmp_path / "c.ini").write_text("[model]\nno_such_key = 1\n")
    assert run(["featurize", "--config", str(tmp_path / "c.ini"), "--manifest", "m",
                "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "lasr decode" in err and "lasr featurize" in err
    assert not (tmp_path / "o").exists()


def test_console_entry_point_exit_codes(tmp_path):
    r = subprocess.run([sys.executable, "-m", "lasr.cli", "decode"], capture_output=True, text=True)
    assert r.returncode == 2 and "usage" in r.stderr
    r = subprocess.run([sys.executable, "-m", "lasr.cli", "evaluate", "--hyp", str(tmp_path / "h"),
                        "--ref", str(tmp_path / "r")], capture_output=True, text=True)
    assert r.returncode == 1
