from __future__ import annotations

import json

import pytest

from reasondrive.cli import main
from reasondrive.ingest import load_dataset

REPLY = "<think>The road ahead is clear. Keep a steady speed.</think><answer>ignored</answer>"


@pytest.fixture
def pipeline(fixture_root, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    ds = ["--dataset", str(fixture_root)]
    llm = ["--transport", "mock", "--mock-response", REPLY, "--cache-dir", str(tmp_path / "cache")]
    return ds, llm


def test_ingest_ok(pipeline, capsys):
    ds, _ = pipeline
    assert main(["ingest", *ds, "--format", "json", "--out", "report.json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["manifest"]["qa_total"] == 12
    assert json.loads(open("report.json").read())["manifest"]["frames"] == 3


def test_ingest_missing_image_exits_one(pipeline, fixture_root, capsys):
    ds, _ = pipeline
    next((fixture_root / "samples" / "CAM_BACK").iterdir()).unlink()
    assert main(["ingest", *ds]) == 1
    assert "FILE_NOT_FOUND" in capsys.readouterr().out


def test_usage_errors_exit_two(pipeline, capsys):
    ds, _ = pipeline
    assert main([]) == 2
    assert main(["export", *ds, "--variant", "fancy", "--out", "x.jsonl"]) == 2
    assert main(["split", *ds, "--train-fraction", "0"]) == 2
    assert main(["gen-reason", *ds, "--transport", "replay"]) == 2
    capsys.readouterr()


def test_runtime_errors_exit_one(pipeline, tmp_path, capsys):
    ds, _ = pipeline
    assert main(["export", *ds, "--variant", "reason", "--out", "r.jsonl"]) == 1
    assert "MISSING_CHAIN" in capsys.readouterr().err
    assert main(["ingest", "--dataset", str(tmp_path / "nowhere")]) == 1
    assert main(["report", "--run-dir", str(tmp_path / "nowhere")]) == 1


def test_split_writes_ids(pipeline, capsys):
    ds, _ = pipeline
    assert main(["split", *ds, "--train-fraction", "0.67", "--seed", "7", "--out", "split.json"]) == 0
    data = json.load(open("split.json"))
    assert len(data["train"]) == 8 and len(data["eval"]) == 4
    capsys.readouterr()


def test_full_pipeline(pipeline, fixture_root, capsys):
    ds, llm = pipeline
    assert main(["gen-reason", *ds, *llm, "--out", "chains.jsonl"]) == 0
    summary = json.load(open("chains.summary.json"))
    assert summary["counts"] == {"ok": 12, "retried": 0, "failed": 0}
    # resuming skips everything already generated
    assert main(["gen-reason", *ds, "--transport", "mock", "--mock-response", "bad", "--no-cache",
                 "--out", "chains.jsonl"]) == 0
    assert json.load(open("chains.summary.json"))["resumed"] == 12

    assert main(["export", *ds, "--variant", "reason", "--chains", "chains.jsonl", "--out", "reason.jsonl"]) == 0
    assert main(["export", *ds, "--variant", "simple", "--out", "simple.jsonl"]) == 0
    assert len(open("reason.jsonl").readlines()) == len(open("simple.jsonl").readlines()) == 12

    records = load_dataset(fixture_root).records
    with open("preds.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.qa_id, "output": f"<answer>{r.gt_answer}</answer>"}) + "\n")
    assert main(["eval", *ds, "--predictions", "preds.jsonl", "--run-dir", "run1"]) == 0
    scores = json.load(open("run1/scores.json"))
    assert scores["overall"]["accuracy"] == 1.0 and scores["final_mode"] == "no-judge"

    assert main(["eval", *ds, *llm, "--predictions", "preds.jsonl", "--judge", "on",
                 "--mock-response", "80", "--weights", "0.4,0.2,0.2,0.2", "--run-dir", "run2"]) == 0
    judged = json.load(open("run2/scores.json"))
    assert judged["final_mode"] == "full"
    capsys.readouterr()
    assert main(["report", "--run-dir", "run2"]) == 0
    assert "Final score mode: full" in capsys.readouterr().out


def test_bad_weights_exit_one(pipeline, fixture_root, capsys):
    ds, _ = pipeline
    records = load_dataset(fixture_root).records
    with open("preds.jsonl", "w") as fh:
        fh.write(json.dumps({"id": records[0].qa_id, "output": "x"}) + "\n")
    assert main(["eval", *ds, "--predictions", "preds.jsonl", "--weights", "1,1,1,1"]) == 1
    assert "WEIGHTS_INVALID" in capsys.readouterr().err
