"""Prediction loading, LLM judging, per-category scoring and report rendering."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .config import JudgeConfig
from .core import Finding, MetricConfig, QaRecord, TaskCategory
from .errors import ToolkitError
from .gateway import CompletionRequest, Gateway
from .metrics import CorpusScores, EvalPair, final_score, score_corpus
from .prompts import DEFAULT_PROMPTS, PromptSet, build_judge_prompt
from .tags import ParseMode, parse_structured

TABLE_COLUMNS = (
    "Accuracy", "ChatGPT", "Match", "Bleu_1", "Bleu_2", "Bleu_3", "Bleu_4", "ROUGE_L", "CIDEr", "Final Score",
)


@dataclass
class PredictionSet:
    pairs: list[EvalPair]
    parse_modes: dict[str, int]
    unknown_ids: list[str] = field(default_factory=list)
    duplicate_ids: list[str] = field(default_factory=list)
    missing_ids: list[str] = field(default_factory=list)
    digest: str = ""


def load_predictions(path: str | Path, records: Sequence[QaRecord]) -> PredictionSet:
    """Read ``{"id", "output"}`` JSONL and parse each output into an EvalPair.

    Unknown and duplicate ids are collected rather than raised; later
    duplicates are ignored.
    """
    by_id = {r.qa_id: r for r in records}
    try:
        raw_bytes = Path(path).read_bytes()
        lines = raw_bytes.decode("utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise ToolkitError("MALFORMED_PREDICTIONS", f"cannot read {path}: {exc}", path=str(path)) from exc

    pairs: list[EvalPair] = []
    modes: Counter[str] = Counter()
    seen: set[str] = set()
    unknown, duplicates = [], []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            qa_id, output = entry["id"], entry["output"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ToolkitError("MALFORMED_PREDICTIONS", f"line {lineno}: {exc}", line=lineno) from exc
        if not isinstance(qa_id, str) or not isinstance(output, str):
            raise ToolkitError("MALFORMED_PREDICTIONS", f"line {lineno}: id and output must be strings", line=lineno)
        if qa_id not in by_id:
            unknown.append(qa_id)
            continue
        if qa_id in seen:
            duplicates.append(qa_id)
            continue
        seen.add(qa_id)
        if output:
            parsed = parse_structured(output)
            mode, candidate = parsed.parse_mode, parsed.answer
        else:
            mode, candidate = ParseMode.FALLBACK_WHOLE, ""
        modes[mode.value] += 1
        pairs.append(EvalPair.from_record(by_id[qa_id], candidate))

    return PredictionSet(
        pairs=pairs,
        parse_modes={m.value: modes.get(m.value, 0) for m in ParseMode},
        unknown_ids=unknown,
        duplicate_ids=duplicates,
        missing_ids=[r.qa_id for r in records if r.qa_id not in seen],
        digest="sha256:" + hashlib.sha256(raw_bytes).hexdigest(),
    )


@dataclass(frozen=True)
class JudgeVerdict:
    qa_id: str
    score: int
    attempts: int
    rationale: str | None = None
    findings: tuple[Finding, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.score <= 100:
            raise ValueError(f"judge score {self.score} outside 0..100")

    def to_dict(self) -> dict[str, Any]:
        return {
            "qa_id": self.qa_id,
            "score": self.score,
            "attempts": self.attempts,
            "rationale": self.rationale,
            "findings": [f.to_dict() for f in self.findings],
        }


_INTEGER = re.compile(r"\d+")


def parse_judge_score(text: str) -> int | None:
    """First integer in 0..100 appearing in the judge's reply."""
    for m in _INTEGER.finditer(text):
        value = int(m.group())
        if value <= 100:
            return value
    return None


def judge_pairs(
    pairs: Sequence[EvalPair],
    gateway: Gateway,
    settings: JudgeConfig = JudgeConfig(),
    prompts: PromptSet = DEFAULT_PROMPTS,
) -> list[JudgeVerdict]:
    """Score each candidate 0-100 with an LLM judge.

    Unparseable replies are re-sampled ``settings.retries`` times and then
    recorded as 0 with a JUDGE_UNPARSEABLE finding. Gateway failures are
    recorded per pair as 0 with the gateway's error code.
    """
    requests = {
        p.qa_id: CompletionRequest(
            settings.model,
            tuple(build_judge_prompt(p.question, p.references[0], p.candidate, prompts)),
            settings.temperature,
            settings.max_tokens,
        )
        for p in pairs
    }
    verdicts: dict[str, JudgeVerdict] = {}
    pending = list(pairs)
    for attempt in range(settings.retries + 1):
        if not pending:
            break
        results = gateway.complete_batch(
            [requests[p.qa_id].resample(attempt) for p in pending], settings.max_in_flight
        )
        still = []
        for pair, result in zip(pending, results):
            if isinstance(result, ToolkitError):
                verdicts[pair.qa_id] = JudgeVerdict(
                    pair.qa_id, 0, attempt + 1, None, (Finding("error", result.code, result.message, pair.qa_id),)
                )
                continue
            score = parse_judge_score(result.text)
            if score is None:
                still.append(pair)
            else:
                verdicts[pair.qa_id] = JudgeVerdict(pair.qa_id, score, attempt + 1, result.text.strip() or None)
        pending = still
    for pair in pending:
        verdicts[pair.qa_id] = JudgeVerdict(
            pair.qa_id, 0, settings.retries + 1, None,
            (Finding("warning", "JUDGE_UNPARSEABLE", "no integer in 0..100 in judge reply", pair.qa_id),),
        )
    return [verdicts[p.qa_id] for p in pairs]


@dataclass
class MetricReport:
    overall: CorpusScores
    per_category: dict[str, CorpusScores]
    config: dict[str, Any]
    parse_modes: dict[str, int]
    failures: dict[str, list[str]]
    judge_enabled: bool
    inputs_digest: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "final_mode": self.overall.final_mode,
            "judge_enabled": self.judge_enabled,
            "overall": self.overall.to_dict(),
            "per_category": {k: v.to_dict() for k, v in self.per_category.items()},
            "config": self.config,
            "parse_modes": dict(self.parse_modes),
            "failures": {k: list(v) for k, v in self.failures.items()},
            "inputs_digest": self.inputs_digest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MetricReport":
        return cls(
            overall=CorpusScores.from_dict(data["overall"]),
            per_category={k: CorpusScores.from_dict(v) for k, v in data["per_category"].items()},
            config=dict(data["config"]),
            parse_modes=dict(data["parse_modes"]),
            failures={k: list(v) for k, v in data["failures"].items()},
            judge_enabled=bool(data["judge_enabled"]),
            inputs_digest=data.get("inputs_digest", ""),
        )


def evaluate(
    pairs: Sequence[EvalPair],
    config: MetricConfig | None = None,
    verdicts: Sequence[JudgeVerdict] | None = None,
    predictions: PredictionSet | None = None,
) -> MetricReport:
    """Score a prediction set overall and per task category."""
    if not pairs:
        raise ToolkitError("EMPTY_EVAL_SET", "no predictions matched the dataset")
    cfg = config or MetricConfig()
    judge_by_id = {v.qa_id: v.score for v in verdicts} if verdicts is not None else None

    def scores_for(subset: Sequence[EvalPair]) -> CorpusScores:
        judge = [judge_by_id[p.qa_id] for p in subset] if judge_by_id is not None else None
        return score_corpus(subset, cfg, judge)

    per_category = {}
    for category in TaskCategory:
        subset = [p for p in pairs if p.category is category]
        if subset:
            per_category[category.value] = scores_for(subset)

    failures: dict[str, list[str]] = {
        "unknown_qa_ids": list(predictions.unknown_ids) if predictions else [],
        "duplicate_qa_ids": list(predictions.duplicate_ids) if predictions else [],
        "missing_predictions": list(predictions.missing_ids) if predictions else [],
        "judge": sorted(
            f"{v.qa_id}:{f.code}" for v in verdicts or () for f in v.findings
        ),
    }
    return MetricReport(
        overall=scores_for(pairs),
        per_category=per_category,
        config=cfg.to_dict(),
        parse_modes=dict(predictions.parse_modes) if predictions else {},
        failures=failures,
        judge_enabled=verdicts is not None,
        inputs_digest=predictions.digest if predictions else "",
    )


def check_consistency(report: MetricReport, tol: float = 1e-9) -> bool:
    """The reported final score equals the weight formula over reported components."""
    for scores in [report.overall, *report.per_category.values()]:
        expected = final_score(
            scores.accuracy, scores.match, scores.language, scores.judge, report.config["final_weights"]
        )
        if abs(expected - scores.final) > tol:
            return False
    return True


def _row(label: str, s: CorpusScores) -> str:
    judge = f"{s.judge / 100:.4f}" if s.judge is not None else "n/a"
    cells = [f"{s.accuracy:.4f}", judge, f"{s.match:.4f}", *(f"{b:.4f}" for b in s.bleu[:4]),
             f"{s.rouge_l:.4f}", f"{s.cider:.4f}", f"{s.final:.4f}"]
    return "| " + " | ".join([label, *cells]) + " |"


def render_markdown(report: MetricReport) -> str:
    header = "| Split | " + " | ".join(TABLE_COLUMNS) + " |"
    sep = "|" + "---|" * (len(TABLE_COLUMNS) + 1)
    lines = [header, sep, _row(f"overall (n={report.overall.n_pairs})", report.overall)]
    for name, scores in report.per_category.items():
        lines.append(_row(f"{name} (n={scores.n_pairs})", scores))
    weights = report.overall.weights_used
    lines += [
        "",
        f"Final score mode: {report.overall.final_mode}",
        "Weights used: " + ", ".join(f"{k}={weights[k]:.4f}" for k in ("judge", "language", "match", "accuracy")),
    ]
    if report.overall.closed_form_accuracy is not None:
        lines.append(
            f"Closed-form accuracy: {report.overall.closed_form_accuracy:.4f} "
            f"(n={report.overall.closed_form_pairs})"
        )
    if report.parse_modes:
        lines.append("Parse modes: " + ", ".join(f"{k}={v}" for k, v in report.parse_modes.items()))
    for key, items in report.failures.items():
        if items:
            lines.append(f"{key}: {len(items)} ({', '.join(items[:10])}{' ...' if len(items) > 10 else ''})")
    return "\n".join(lines) + "\n"


def write_run(run_dir: str | Path, report: MetricReport, verdicts: Sequence[JudgeVerdict] | None = None) -> Path:
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    (run / "scores.json").write_text(report.to_json(), encoding="utf-8", newline="\n")
    (run / "report.md").write_text(render_markdown(report), encoding="utf-8", newline="\n")
    if verdicts is not None:
        with open(run / "verdicts.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for v in verdicts:
                fh.write(json.dumps(v.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    return run


def load_run(run_dir: str | Path) -> MetricReport:
    path = Path(run_dir) / "scores.json"
    try:
        return MetricReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ToolkitError("MALFORMED_RUN", f"cannot read {path}: {exc}", path=str(path)) from exc
