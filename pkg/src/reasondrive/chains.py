"""Reasoning-chain generation, training-example assembly and JSONL export."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .core import Finding, Frame, QaRecord, ReasoningChain, TrainingExample, count_sentences
from .errors import ToolkitError
from .gateway import CompletionRequest, Gateway
from .prompts import DEFAULT_PROMPTS, PromptSet, Variant, build_reasoning_prompt
from .tags import ParseMode, emit_structured, parse_structured

logger = logging.getLogger(__name__)

DEFAULT_RETRIES = 2


class GenerationStatus(enum.Enum):
    OK = "OK"
    RETRIED_OK = "RETRIED_OK"
    FAILED = "FAILED"


@dataclass(frozen=True)
class GenerationOutcome:
    qa_id: str
    status: GenerationStatus
    chain: ReasoningChain | None
    attempts: int
    findings: tuple[Finding, ...] = ()
    tokens: int = 0

    def __post_init__(self) -> None:
        if (self.status is GenerationStatus.FAILED) != (self.chain is None):
            raise ValueError("FAILED outcomes carry no chain; successful ones must")

    @property
    def ok(self) -> bool:
        return self.status is not GenerationStatus.FAILED

    def to_dict(self) -> dict[str, Any]:
        return {
            "qa_id": self.qa_id,
            "status": self.status.value,
            "chain": self.chain.to_dict() if self.chain else None,
            "attempts": self.attempts,
            "findings": [f.to_dict() for f in self.findings],
            "tokens": self.tokens,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GenerationOutcome":
        return cls(
            qa_id=data["qa_id"],
            status=GenerationStatus(data["status"]),
            chain=ReasoningChain.from_dict(data["chain"]) if data.get("chain") else None,
            attempts=int(data["attempts"]),
            findings=tuple(Finding.from_dict(f) for f in data.get("findings", [])),
            tokens=int(data.get("tokens", 0)),
        )


@dataclass(frozen=True)
class GenerationSettings:
    model: str = "gpt-4o"
    temperature: float = 0.7
    max_tokens: int = 512
    retries: int = DEFAULT_RETRIES
    max_in_flight: int = 4


def _chain_from_response(text: str, record: QaRecord, model: str) -> ReasoningChain | None:
    if not text.strip():
        return None
    parsed = parse_structured(text)
    if parsed.parse_mode is ParseMode.FALLBACK_WHOLE or not parsed.think:
        return None
    if count_sentences(parsed.think) == 0:
        return None
    return ReasoningChain.from_text(parsed.think, record.category, model)


def _budget_findings(chain: ReasoningChain, prompts: PromptSet, qa_id: str) -> list[Finding]:
    low, high = prompts.templates[chain.category].sentence_budget
    n = chain.sentence_count
    if n > high:
        return [Finding("warning", "SENTENCE_BUDGET_EXCEEDED", f"{n} sentences, budget {low}-{high}", qa_id)]
    if n < low:
        return [Finding("warning", "SENTENCE_BUDGET_SHORT", f"{n} sentences, budget {low}-{high}", qa_id)]
    return []


def _reasoning_request(
    record: QaRecord, frame: Frame, settings: GenerationSettings, root: str | Path | None, prompts: PromptSet
) -> CompletionRequest:
    messages = build_reasoning_prompt(record, frame, root, prompts)
    return CompletionRequest(settings.model, tuple(messages), settings.temperature, settings.max_tokens)


def generate_chain(
    record: QaRecord,
    frame: Frame,
    gateway: Gateway,
    settings: GenerationSettings = GenerationSettings(),
    root: str | Path | None = None,
    prompts: PromptSet = DEFAULT_PROMPTS,
) -> GenerationOutcome:
    """Generate and validate one chain; gateway errors propagate."""
    return generate_chains([record], {frame.key: frame}, gateway, settings, root, prompts, raise_errors=True)[0]


def generate_chains(
    records: Sequence[QaRecord],
    frames: Mapping[tuple[str, str], Frame],
    gateway: Gateway,
    settings: GenerationSettings = GenerationSettings(),
    root: str | Path | None = None,
    prompts: PromptSet = DEFAULT_PROMPTS,
    raise_errors: bool = False,
) -> list[GenerationOutcome]:
    """Generate chains for many records through the gateway's batch API.

    Responses without a usable think segment are re-sampled up to
    ``settings.retries`` times. Each re-sample is a distinct cache entry, so a
    warm cache reproduces the same outcomes.
    """
    base = {r.qa_id: _reasoning_request(r, frames[r.frame_key], settings, root, prompts) for r in records}
    outcomes: dict[str, GenerationOutcome] = {}
    tokens: Counter[str] = Counter()
    pending = list(records)
    for attempt in range(settings.retries + 1):
        if not pending:
            break
        reqs = [base[r.qa_id].resample(attempt) for r in pending]
        results = gateway.complete_batch(reqs, settings.max_in_flight)
        still_pending = []
        for record, result in zip(pending, results):
            if isinstance(result, ToolkitError):
                if raise_errors:
                    raise result
                outcomes[record.qa_id] = GenerationOutcome(
                    record.qa_id, GenerationStatus.FAILED, None, attempt + 1,
                    (Finding("error", result.code, result.message, record.qa_id),), tokens[record.qa_id],
                )
                continue
            tokens[record.qa_id] += result.total_tokens
            chain = _chain_from_response(result.text, record, settings.model)
            if chain is None:
                still_pending.append(record)
                continue
            status = GenerationStatus.OK if attempt == 0 else GenerationStatus.RETRIED_OK
            outcomes[record.qa_id] = GenerationOutcome(
                record.qa_id, status, chain, attempt + 1,
                tuple(_budget_findings(chain, prompts, record.qa_id)), tokens[record.qa_id],
            )
        pending = still_pending
    for record in pending:
        finding = Finding("error", "GENERATION_FAILED", "no think segment after all attempts", record.qa_id)
        if raise_errors:
            raise ToolkitError("GENERATION_FAILED", finding.message, qa_id=record.qa_id)
        outcomes[record.qa_id] = GenerationOutcome(
            record.qa_id, GenerationStatus.FAILED, None, settings.retries + 1, (finding,), tokens[record.qa_id]
        )
    return [outcomes[r.qa_id] for r in records]


def generation_summary(records: Sequence[QaRecord], outcomes: Sequence[GenerationOutcome]) -> dict[str, Any]:
    by_id = {o.qa_id: o for o in outcomes}
    counts = {"ok": 0, "retried": 0, "failed": 0}
    per_category: dict[str, dict[str, int]] = {}
    warnings: Counter[str] = Counter()
    key = {GenerationStatus.OK: "ok", GenerationStatus.RETRIED_OK: "retried", GenerationStatus.FAILED: "failed"}
    for record in records:
        outcome = by_id.get(record.qa_id)
        if outcome is None:
            continue
        bucket = per_category.setdefault(record.category.value, {"ok": 0, "retried": 0, "failed": 0})
        counts[key[outcome.status]] += 1
        bucket[key[outcome.status]] += 1
        warnings.update(f.code for f in outcome.findings if f.severity == "warning")
    return {
        "counts": counts,
        "per_category": per_category,
        "warnings": dict(sorted(warnings.items())),
        "failed_ids": sorted(o.qa_id for o in outcomes if not o.ok),
        "total_tokens": sum(o.tokens for o in outcomes),
    }


def save_outcomes(outcomes: Iterable[GenerationOutcome], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.to_dict(), ensure_ascii=False) + "\n")


def load_outcomes(path: str | Path) -> list[GenerationOutcome]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(GenerationOutcome.from_dict(json.loads(line)))
    return out


def assemble_examples(
    records: Sequence[QaRecord],
    frames: Mapping[tuple[str, str], Frame],
    outcomes: Sequence[GenerationOutcome] | None,
    variant: Variant,
    system_prompt: str = DEFAULT_PROMPTS.system_prompt,
    drop_failed: bool = False,
) -> list[TrainingExample]:
    """Build training examples; the two variants differ only in ``reasoning``.

    For REASON, records without a successful outcome raise MISSING_CHAIN,
    unless ``drop_failed`` is set, in which case records whose generation
    FAILED are left out (records with no outcome at all still raise).
    """
    by_id = {o.qa_id: o for o in outcomes or ()}
    if variant is Variant.REASON:
        missing = [
            r.qa_id for r in records
            if r.qa_id not in by_id or (not by_id[r.qa_id].ok and not drop_failed)
        ]
        if missing:
            raise ToolkitError("MISSING_CHAIN", f"{len(missing)} record(s) lack a reasoning chain", qa_ids=missing)

    examples = []
    for record in records:
        chain = None
        if variant is Variant.REASON:
            outcome = by_id[record.qa_id]
            if not outcome.ok:
                continue
            chain = outcome.chain
        frame = frames[record.frame_key]
        examples.append(
            TrainingExample(
                system_prompt=system_prompt,
                question=record.question,
                answer=record.gt_answer,
                image_paths=tuple(frame.image_paths()),
                meta={
                    "qa_id": record.qa_id,
                    "scene_id": record.scene_id,
                    "frame_id": record.frame_id,
                    "category": record.category.value,
                    "original_question": record.question,
                    "original_answer": record.gt_answer,
                },
                reasoning=chain,
            )
        )
    return examples


def training_target(example: TrainingExample) -> str:
    think = example.reasoning.text if example.reasoning is not None else None
    return emit_structured(think, example.answer)


def example_record(example: TrainingExample) -> dict[str, Any]:
    return {
        "id": example.qa_id,
        "images": list(example.image_paths),
        "conversations": [
            {"role": "system", "text": example.system_prompt},
            {"role": "user", "text": example.question},
            {"role": "assistant", "text": training_target(example)},
        ],
        "meta": dict(example.meta),
    }


@dataclass(frozen=True)
class ExportSummary:
    path: str
    variant: str
    lines: int
    digest: str
    excluded: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict[str, Any]:
        return {
            "path": self.path,
            "variant": self.variant,
            "lines": self.lines,
            "digest": self.digest,
            "excluded": list(self.excluded),
        }


def export_training_file(
    examples: Sequence[TrainingExample],
    variant: Variant,
    out: str | Path,
    excluded: Sequence[str] = (),
) -> ExportSummary:
    for ex in examples:
        if (ex.reasoning is not None) != (variant is Variant.REASON):
            raise ToolkitError("VARIANT_MISMATCH", f"example {ex.qa_id} does not belong to the {variant.value} variant")
    lines = [json.dumps(example_record(ex), ensure_ascii=False) + "\n" for ex in examples]
    payload = "".join(lines).encode("utf-8")
    try:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_bytes(payload)
    except OSError as exc:
        raise ToolkitError("IO_ERROR", f"cannot write {out}: {exc}", path=str(out)) from exc
    return ExportSummary(
        path=str(out),
        variant=variant.value,
        lines=len(lines),
        digest="sha256:" + hashlib.sha256(payload).hexdigest(),
        excluded=tuple(excluded),
    )
