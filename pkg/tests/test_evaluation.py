from __future__ import annotations

import json

import pytest

from reasondrive.config import JudgeConfig
from reasondrive.core import MetricConfig
from reasondrive.errors import ToolkitError
from reasondrive.evaluation import (
    TABLE_COLUMNS,
    MetricReport,
    check_consistency,
    evaluate,
    judge_pairs,
    load_predictions,
    load_run,
    parse_judge_score,
    render_markdown,
    write_run,
)
from reasondrive.gateway import Gateway, MockTransport
from reasondrive.metrics import EvalPair


def no_sleep(_seconds):
    pass


def write_predictions(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def identity_rows(dataset, wrap=True):
    return [
        {"id": r.qa_id, "output": f"<think>Looked.</think><answer>{r.gt_answer}</answer>" if wrap else r.gt_answer}
        for r in dataset.records
    ]


def test_load_predictions_parse_modes(dataset, tmp_path):
    r0, r1, r2 = dataset.records[:3]
    path = write_predictions(tmp_path / "p.jsonl", [
        {"id": r0.qa_id, "output": "<think>t</think><answer>A</answer>"},
        {"id": r1.qa_id, "output": "plain answer"},
        {"id": r2.qa_id, "output": ""},
        {"id": r0.qa_id, "output": "again"},
        {"id": "nope", "output": "x"},
    ])
    preds = load_predictions(path, dataset.records)
    assert [p.candidate for p in preds.pairs] == ["A", "plain answer", ""]
    assert preds.parse_modes == {"STRICT": 1, "FALLBACK_WHOLE": 2, "FALLBACK_AFTER_THINK": 0}
    assert preds.duplicate_ids == [r0.qa_id] and preds.unknown_ids == ["nope"]
    assert len(preds.missing_ids) == 9
    assert preds.digest.startswith("sha256:")


@pytest.mark.parametrize("content", ["{broken", '{"id": "x"}', '{"id": 3, "output": "y"}'])
def test_malformed_predictions(dataset, tmp_path, content):
    path = tmp_path / "p.jsonl"
    path.write_text(content + "\n")
    with pytest.raises(ToolkitError) as err:
        load_predictions(path, dataset.records)
    assert err.value.code == "MALFORMED_PREDICTIONS"


@pytest.mark.parametrize(
    "reply, score",
    [("85", 85), ("Score: 92/100. Good answer.", 92), ("  100", 100), ("250 then 40", 40), ("no number", None)],
)
def test_parse_judge_score(reply, score):
    assert parse_judge_score(reply) == score


def _pairs(dataset, n=2):
    return [EvalPair.from_record(r, r.gt_answer) for r in dataset.records[:n]]


def test_judge_pairs_scores(dataset):
    gw = Gateway(MockTransport(["Score: 92/100. Good answer."]), sleep=no_sleep)
    verdicts = judge_pairs(_pairs(dataset), gw)
    assert [(v.score, v.attempts) for v in verdicts] == [(92, 1), (92, 1)]


def test_judge_unparseable_after_retries(dataset):
    transport = MockTransport(["I cannot rate this."])
    gw = Gateway(transport, sleep=no_sleep)
    (verdict,) = judge_pairs(_pairs(dataset, 1), gw, JudgeConfig(retries=2))
    assert (verdict.score, verdict.attempts) == (0, 3)
    assert [f.code for f in verdict.findings] == ["JUDGE_UNPARSEABLE"]
    assert transport.call_count == 3


def test_judge_gateway_error_scores_zero(dataset):
    gw = Gateway(MockTransport([401]), sleep=no_sleep)
    (verdict,) = judge_pairs(_pairs(dataset, 1), gw)
    assert verdict.score == 0 and verdict.findings[0].code == "AUTH_FAILED"


def test_identity_evaluation(dataset, tmp_path):
    preds = load_predictions(write_predictions(tmp_path / "p.jsonl", identity_rows(dataset)), dataset.records)
    report = evaluate(preds.pairs, predictions=preds)
    o = report.overall
    assert (o.accuracy, o.match, o.rouge_l, o.bleu[0]) == (1.0, 1.0, 1.0, 1.0)
    assert set(report.per_category) == {"perception", "prediction", "planning", "behavior"}
    assert o.final_mode == "no-judge" and check_consistency(report)
    assert report.parse_modes["STRICT"] == 12


def test_empty_predictions_score_zero(dataset, tmp_path):
    rows = [{"id": r.qa_id, "output": ""} for r in dataset.records]
    preds = load_predictions(write_predictions(tmp_path / "p.jsonl", rows), dataset.records)
    o = evaluate(preds.pairs, predictions=preds).overall
    assert (o.accuracy, o.match, o.rouge_l, o.bleu[0], o.cider) == (0.0, 0.0, 0.0, 0.0, 0.0)


def test_evaluate_with_judge_and_custom_weights(dataset):
    pairs = _pairs(dataset, 4)
    gw = Gateway(MockTransport(["50"]), sleep=no_sleep)
    verdicts = judge_pairs(pairs, gw)
    cfg = MetricConfig(final_weights={"judge": 0.25, "language": 0.25, "match": 0.25, "accuracy": 0.25})
    report = evaluate(pairs, cfg, verdicts)
    assert report.overall.judge == 50 and report.overall.final_mode == "full"
    assert check_consistency(report)
    tampered = MetricReport.from_dict(json.loads(report.to_json()))
    tampered.overall = type(tampered.overall).from_dict({**tampered.overall.to_dict(), "final": 0.0})
    assert not check_consistency(tampered)


def test_evaluate_empty_raises():
    with pytest.raises(ToolkitError) as err:
        evaluate([])
    assert err.value.code == "EMPTY_EVAL_SET"


def test_markdown_and_run_round_trip(dataset, tmp_path):
    pairs = _pairs(dataset, 12)
    report = evaluate(pairs)
    md = render_markdown(report)
    header = md.splitlines()[0]
    assert [c.strip() for c in header.strip("|").split("|")][1:] == list(TABLE_COLUMNS)
    assert "Final score mode: no-judge" in md
    run = write_run(tmp_path / "run", report)
    assert sorted(p.name for p in run.iterdir()) == ["report.md", "scores.json"]
    assert load_run(run).to_json() == report.to_json()
    with pytest.raises(ToolkitError) as err:
        load_run(tmp_path / "nowhere")
    assert err.value.code == "MALFORMED_RUN"
