"""The ``<think>``/``<answer>`` output protocol and ``<cN>`` object tags."""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field

from .core import CameraView, Finding, ObjectTag
from .errors import ToolkitError

logger = logging.getLogger(__name__)

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
MARKERS = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)


class ParseMode(enum.Enum):
    STRICT = "STRICT"
    FALLBACK_WHOLE = "FALLBACK_WHOLE"
    FALLBACK_AFTER_THINK = "FALLBACK_AFTER_THINK"


@dataclass(frozen=True)
class ParsedOutput:
    think: str | None
    answer: str
    parse_mode: ParseMode
    tags_in_answer: tuple[ObjectTag, ...] = ()
    findings: tuple[Finding, ...] = field(default=(), compare=False)


def _block(raw: str, open_: str, close: str, start: int = 0) -> tuple[int, int, int] | None:
    """Locate the first ``open_ ... close`` block at or after ``start``.

    Returns (block start, content start, block end) or None.
    """
    i = raw.find(open_, start)
    if i < 0:
        return None
    j = raw.find(close, i + len(open_))
    if j < 0:
        return None
    return i, i + len(open_), j + len(close)


def _strip_markers(text: str) -> str:
    for marker in MARKERS:
        text = text.replace(marker, "")
    return text.strip()


def parse_structured(raw: str) -> ParsedOutput:
    """Split model output into its think and answer segments.

    Well-formed ``<think>..</think>`` followed by ``<answer>..</answer>`` parses
    STRICT. Otherwise a closed think block makes everything after it the
    answer (FALLBACK_AFTER_THINK), and with no think block the whole string is
    the answer (FALLBACK_WHOLE). In both fallbacks a complete answer block, if
    one exists, supplies the answer instead.
    """
    if not raw:
        raise ToolkitError("EMPTY_INPUT", "cannot parse an empty model output")

    findings: list[Finding] = []
    think_block = _block(raw, THINK_OPEN, THINK_CLOSE)
    answer_after = _block(raw, ANSWER_OPEN, ANSWER_CLOSE, think_block[2]) if think_block else None

    if think_block and answer_after:
        think = raw[think_block[1]:think_block[2] - len(THINK_CLOSE)]
        answer = raw[answer_after[1]:answer_after[2] - len(ANSWER_CLOSE)]
        mode = ParseMode.STRICT
        if raw.find(ANSWER_OPEN, answer_after[2]) >= 0:
            findings.append(Finding("warning", "MULTIPLE_ANSWER_BLOCKS", "later answer blocks ignored"))
    else:
        answer_any = _block(raw, ANSWER_OPEN, ANSWER_CLOSE)
        if think_block:
            mode = ParseMode.FALLBACK_AFTER_THINK
            think = raw[think_block[1]:think_block[2] - len(THINK_CLOSE)]
            answer = raw[think_block[2]:]
        else:
            mode = ParseMode.FALLBACK_WHOLE
            think = None
            answer = raw
        if answer_any:
            answer = raw[answer_any[1]:answer_any[2] - len(ANSWER_CLOSE)]
            findings.append(Finding("warning", "NON_CANONICAL_ORDER", "answer block without preceding think block"))

    answer = _strip_markers(answer)
    if think is not None:
        think = _strip_markers(think)
    return ParsedOutput(
        think=think,
        answer=answer,
        parse_mode=mode,
        tags_in_answer=tuple(extract_tags(answer)),
        findings=tuple(findings),
    )


def emit_structured(think: str | None, answer: str) -> str:
    if not answer:
        raise ToolkitError("EMPTY_INPUT", "answer must be non-empty")
    for segment in (think or "", answer):
        if any(marker in segment for marker in MARKERS):
            raise ToolkitError("NESTED_MARKERS", "segment already contains a think/answer marker")
    if think is None:
        return f"{ANSWER_OPEN}{answer}{ANSWER_CLOSE}"
    return f"{THINK_OPEN}{think}{THINK_CLOSE}\n{ANSWER_OPEN}{answer}{ANSWER_CLOSE}"


_TAG_CANDIDATE = re.compile(r"<(c\d+)((?:,[^<>,]*)*)>")
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


def _parse_tag(ident: str, extra: str) -> ObjectTag:
    parts = [p.strip() for p in extra.split(",")[1:]] if extra else []
    if not parts:
        return ObjectTag(ident)
    camera = CameraView.parse(parts[0])
    if len(parts) == 1:
        return ObjectTag(ident, camera)
    if len(parts) != 3 or not all(_NUMBER.fullmatch(p) for p in parts[1:]):
        raise ValueError(f"bad coordinates in tag {ident}{extra}")
    return ObjectTag(ident, camera, (float(parts[1]), float(parts[2])))


def extract_tags(text: str) -> list[ObjectTag]:
    """Object tags in first-occurrence order, de-duplicated by id.

    Both ``<c3>`` and ``<c3,CAM_FRONT,510.3,402.1>`` are accepted; malformed
    candidates are skipped.
    """
    seen: dict[str, ObjectTag] = {}
    for m in _TAG_CANDIDATE.finditer(text):
        ident, extra = m.group(1), m.group(2)
        if ident in seen:
            continue
        try:
            seen[ident] = _parse_tag(ident, extra)
        except ValueError as exc:
            logger.debug("skipping tag %r: %s", m.group(0), exc)
    return list(seen.values())
