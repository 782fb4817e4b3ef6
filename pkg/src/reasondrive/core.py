"""Domain types shared by the whole toolkit.

Everything here is an immutable value object. Image paths are kept relative
to a dataset root and are only resolved on demand; image bytes are never
decoded.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ToolkitError


class CameraView(enum.Enum):
    FRONT = "CAM_FRONT"
    FRONT_LEFT = "CAM_FRONT_LEFT"
    FRONT_RIGHT = "CAM_FRONT_RIGHT"
    BACK = "CAM_BACK"
    BACK_LEFT = "CAM_BACK_LEFT"
    BACK_RIGHT = "CAM_BACK_RIGHT"

    @classmethod
    def parse(cls, name: str) -> "CameraView":
        """Accept ``CAM_FRONT_LEFT``, ``FRONT_LEFT``, ``front-left`` and similar spellings."""
        key = name.strip().upper().replace("-", "_").replace(" ", "_")
        if key.startswith("CAM_"):
            key = key[4:]
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown camera view {name!r}") from None


_CANONICAL_ORDER = (
    CameraView.FRONT,
    CameraView.FRONT_LEFT,
    CameraView.FRONT_RIGHT,
    CameraView.BACK,
    CameraView.BACK_LEFT,
    CameraView.BACK_RIGHT,
)


def canonical_view_order() -> list[CameraView]:
    return list(_CANONICAL_ORDER)


class TaskCategory(enum.Enum):
    PERCEPTION = "perception"
    PREDICTION = "prediction"
    PLANNING = "planning"
    BEHAVIOR = "behavior"

    @classmethod
    def parse(cls, name: str) -> "TaskCategory":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ToolkitError(
                "UNKNOWN_CATEGORY", f"unknown task category {name!r}", category=name
            ) from None

    @property
    def label(self) -> str:
        return self.value.capitalize()


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "warning"
    code: str
    message: str = ""
    subject: str = ""

    def to_dict(self) -> dict[str, str]:
        return {
            "severity": self.severity,
            "code": self.code,
            "message": self.message,
            "subject": self.subject,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Finding":
        return cls(data["severity"], data["code"], data.get("message", ""), data.get("subject", ""))


@dataclass(frozen=True)
class Frame:
    scene_id: str
    frame_id: str
    views: Mapping[CameraView, str]

    @property
    def key(self) -> tuple[str, str]:
        return (self.scene_id, self.frame_id)

    def image_paths(self) -> list[str]:
        """Relative image paths in canonical view order (missing views are skipped)."""
        return [self.views[v] for v in _CANONICAL_ORDER if v in self.views]

    def resolved_paths(self, root: str | Path) -> list[Path]:
        return [Path(root) / p for p in self.image_paths()]

    def to_dict(self) -> dict[str, Any]:
        return {
            "scene_id": self.scene_id,
            "frame_id": self.frame_id,
            "views": {v.value: self.views[v] for v in _CANONICAL_ORDER if v in self.views},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Frame":
        views = {CameraView.parse(k): str(p) for k, p in data["views"].items()}
        return cls(str(data["scene_id"]), str(data["frame_id"]), views)


def validate_frame(frame: Frame, dataset_root: str | Path) -> list[Finding]:
    """Check a frame against its invariants and the files under ``dataset_root``.

    Problems are returned as findings; nothing is raised.
    """
    findings: list[Finding] = []
    subject = f"{frame.scene_id}/{frame.frame_id}"
    if not frame.scene_id or not frame.frame_id:
        findings.append(Finding("error", "EMPTY_ID", "scene_id and frame_id must be non-empty", subject))
    root = Path(dataset_root)
    for view in _CANONICAL_ORDER:
        if view not in frame.views:
            findings.append(Finding("error", "MISSING_VIEW", f"missing view {view.name}", subject))
            continue
        path = frame.views[view]
        if not (root / path).is_file():
            findings.append(Finding("error", "FILE_NOT_FOUND", f"{view.name}: {path}", subject))
    return findings


_TAG_ID = re.compile(r"c[1-9][0-9]*")


@dataclass(frozen=True)
class ObjectTag:
    id: str
    camera: CameraView | None = None
    coords: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not _TAG_ID.fullmatch(self.id):
            raise ValueError(f"invalid object tag id {self.id!r}")
        if self.coords is not None and self.camera is None:
            raise ValueError("tag coordinates require a camera")

    def __str__(self) -> str:
        parts = [self.id]
        if self.camera is not None:
            parts.append(self.camera.value)
        if self.coords is not None:
            parts.extend(_fmt_coord(c) for c in self.coords)
        return "<" + ",".join(parts) + ">"


def _fmt_coord(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(value)


@dataclass(frozen=True)
class QaRecord:
    """One question-answer pair. ``gt_tags`` is derived from ``gt_answer``."""

    qa_id: str
    scene_id: str
    frame_id: str
    category: TaskCategory
    question: str
    gt_answer: str
    gt_tags: tuple[ObjectTag, ...] = field(init=False)

    def __post_init__(self) -> None:
        from .tags import extract_tags

        question = self.question.strip()
        answer = self.gt_answer.strip()
        if not question or not answer:
            raise ToolkitError(
                "MISSING_FIELD", "question and answer must be non-empty", qa_id=self.qa_id
            )
        object.__setattr__(self, "question", question)
        object.__setattr__(self, "gt_answer", answer)
        object.__setattr__(self, "gt_tags", tuple(extract_tags(answer)))

    @property
    def frame_key(self) -> tuple[str, str]:
        return (self.scene_id, self.frame_id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "qa_id": self.qa_id,
            "scene_id": self.scene_id,
            "frame_id": self.frame_id,
            "category": self.category.value,
            "question": self.question,
            "gt_answer": self.gt_answer,
            "gt_tags": [str(t) for t in self.gt_tags],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QaRecord":
        return cls(
            qa_id=data["qa_id"],
            scene_id=data["scene_id"],
            frame_id=data["frame_id"],
            category=TaskCategory.parse(data["category"]),
            question=data["question"],
            gt_answer=data["gt_answer"],
        )


# A terminator is a run of . ! ? followed by whitespace or end of text.
_TERMINATOR = re.compile(r"[.!?]+(?=\s|$)")
# "1." / "(2)" / "3)" enumeration markers do not end a sentence.
_ENUM_TOKEN = re.compile(r"\(?\d{1,3}[.)]+")


def split_sentences(text: str) -> list[str]:
    """Split text into sentences.

    Sentences end at '.', '!' or '?' followed by whitespace or the end of
    the text. Decimal points never qualify (no trailing whitespace), and a
    numeric enumeration marker such as ``1.`` or ``2)`` opening a sentence
    is not a sentence of its own.
    """
    sentences: list[str] = []
    start = 0
    for m in _TERMINATOR.finditer(text):
        token_start = max(text.rfind(" ", 0, m.start()), text.rfind("\n", 0, m.start())) + 1
        leads_segment = not text[start:token_start].strip()
        if leads_segment and _ENUM_TOKEN.fullmatch(text[token_start:m.end()]):
            continue
        sentences.append(text[start:m.end()])
        start = m.end()
    sentences.append(text[start:])
    return [s.strip() for s in sentences if any(ch.isalnum() for ch in s)]


def count_sentences(text: str) -> int:
    return len(split_sentences(text))


@dataclass(frozen=True)
class ReasoningChain:
    text: str
    sentence_count: int
    category: TaskCategory
    source_model: str = ""

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("reasoning chain text is empty")
        expected = count_sentences(self.text)
        if self.sentence_count != expected or self.sentence_count < 1:
            raise ValueError(
                f"sentence_count {self.sentence_count} does not match text ({expected})"
            )

    @classmethod
    def from_text(cls, text: str, category: TaskCategory, source_model: str = "") -> "ReasoningChain":
        text = text.strip()
        return cls(text, count_sentences(text), category, source_model)

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "sentence_count": self.sentence_count,
            "category": self.category.value,
            "source_model": self.source_model,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ReasoningChain":
        return cls(
            data["text"],
            int(data["sentence_count"]),
            TaskCategory.parse(data["category"]),
            data.get("source_model", ""),
        )


@dataclass(frozen=True)
class TrainingExample:
    system_prompt: str
    question: str
    answer: str
    image_paths: tuple[str, ...]
    meta: Mapping[str, Any]
    reasoning: ReasoningChain | None = None

    def __post_init__(self) -> None:
        if len(self.image_paths) != len(_CANONICAL_ORDER):
            raise ValueError(f"expected 6 image paths, got {len(self.image_paths)}")

    @property
    def qa_id(self) -> str:
        return self.meta["qa_id"]


WEIGHT_KEYS = ("judge", "language", "match", "accuracy")


@dataclass(frozen=True)
class MetricConfig:
    bleu_max_order: int = 4
    bleu_smoothing: float = 0.0
    rouge_beta: float = 1.2
    cider_max_order: int = 4
    cider_sigma: float = 6.0
    cider_scale: float = 10.0
    final_weights: Mapping[str, float] = field(
        default_factory=lambda: {"judge": 0.4, "language": 0.2, "match": 0.2, "accuracy": 0.2}
    )
    lowercase: bool = True
    strip_punctuation: bool = True

    def __post_init__(self) -> None:
        validate_weights(self.final_weights)
        if self.bleu_max_order < 1 or self.cider_max_order < 1:
            raise ToolkitError("CONFIG_INVALID", "n-gram orders must be >= 1")
        if not self.rouge_beta > 0 or not self.cider_sigma > 0 or not self.cider_scale > 0:
            raise ToolkitError("CONFIG_INVALID", "beta, sigma and scale must be > 0")
        if self.bleu_smoothing < 0:
            raise ToolkitError("CONFIG_INVALID", "bleu_smoothing must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "bleu_max_order": self.bleu_max_order,
            "bleu_smoothing": self.bleu_smoothing,
            "rouge_beta": self.rouge_beta,
            "cider_max_order": self.cider_max_order,
            "cider_sigma": self.cider_sigma,
            "cider_scale": self.cider_scale,
            "final_weights": {k: self.final_weights[k] for k in WEIGHT_KEYS},
            "lowercase": self.lowercase,
            "strip_punctuation": self.strip_punctuation,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MetricConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if "final_weights" in known:
            known["final_weights"] = dict(known["final_weights"])
        return cls(**known)


def validate_weights(weights: Mapping[str, float]) -> None:
    if set(weights) != set(WEIGHT_KEYS):
        raise ToolkitError("WEIGHTS_INVALID", f"weights must have keys {WEIGHT_KEYS}", weights=dict(weights))
    values = [float(weights[k]) for k in WEIGHT_KEYS]
    if any(v < 0 or math.isnan(v) for v in values) or abs(sum(values) - 1.0) > 1e-9:
        raise ToolkitError(
            "WEIGHTS_INVALID", "weights must be non-negative and sum to 1", weights=dict(weights)
        )
