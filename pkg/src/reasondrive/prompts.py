"""Category-specific prompts for reasoning generation, inference and judging."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .core import Frame, QaRecord, TaskCategory, canonical_view_order
from .gateway import Message

PREAMBLE = (
    "You are assisting in developing a reasoning system for an autonomous driving AI. "
    "Below is a question and answer pair from the '{category}' category. "
    "Your task is to generate a structured, step-by-step reasoning process that "
    "logically leads to the provided answer."
)

FOCUS_LINES: dict[TaskCategory, tuple[str, ...]] = {
    TaskCategory.PERCEPTION: (
        "Quickly summarize the observed scene",
        "Identify key objects and their positions",
        "Note immediate visual cues and statuses",
        "Format response within <think> tags using 1 concise sentence",
    ),
    TaskCategory.PREDICTION: (
        "Concisely forecast future states based on current data",
        "Consider object motion, momentum, and interactions",
        "Apply basic traffic rules and driver behavior",
        "Format response within <think> tags using 1-2 sentences",
    ),
    TaskCategory.PLANNING: (
        "Assess safety and prioritize actions",
        "Evaluate decision options and trade-offs",
        "Consider alternative actions and consequences",
        "Format response within <think> tags using 2-3 sentences",
    ),
    TaskCategory.BEHAVIOR: (
        "Analyze motion patterns, speed, and trajectories",
        "Consider environmental factors and multi-view observations",
        "Determine the underlying intent based on dynamic context",
        "Format response within <think> tags using 1-2 concise sentences",
    ),
}

DRIVING_SYSTEM_PROMPT = (
    "You are a driving assistant. Analyze the six camera views and answer the question."
)
REASON_INSTRUCTION = (
    "First reason about the camera views and write that reasoning inside <think></think>. "
    "Then give the final answer inside <answer></answer>."
)
SIMPLE_INSTRUCTION = "Give only the final answer, without explanation, inside <answer></answer>."
JUDGE_SYSTEM = (
    "You are an impartial judge grading answers to autonomous driving questions "
    "against a ground-truth answer."
)
JUDGE_USER = (
    "Question: {question}\n"
    "Ground-truth answer: {reference}\n"
    "Model answer: {candidate}\n\n"
    "Rate the model answer from 0 to 100. Reply with the number first."
)

_BUDGET = re.compile(r"using\s+(\d+)(?:\s*-\s*(\d+))?\b[^\n]*sentence", re.IGNORECASE)


def parse_sentence_budget(lines: tuple[str, ...] | list[str]) -> tuple[int, int] | None:
    for line in lines:
        m = _BUDGET.search(line)
        if m:
            low = int(m.group(1))
            return low, int(m.group(2) or low)
    return None


class Variant(enum.Enum):
    REASON = "reason"
    SIMPLE = "simple"


@dataclass(frozen=True)
class PromptTemplate:
    category: TaskCategory
    focus_lines: tuple[str, ...]
    sentence_budget: tuple[int, int]
    system_preamble: str

    def render_system(self) -> str:
        bullets = "\n".join(f"- {line}" for line in self.focus_lines)
        return f"{self.system_preamble}\n\n{bullets}"


def default_template(category: TaskCategory, preamble: str = PREAMBLE) -> PromptTemplate:
    lines = FOCUS_LINES[category]
    budget = parse_sentence_budget(lines)
    assert budget is not None
    return PromptTemplate(category, lines, budget, preamble.format(category=category.value))


@dataclass(frozen=True)
class PromptSet:
    """All prompt wording in one place so it can be overridden from a directory."""

    templates: Mapping[TaskCategory, PromptTemplate] = field(
        default_factory=lambda: {c: default_template(c) for c in TaskCategory}
    )
    system_prompt: str = DRIVING_SYSTEM_PROMPT
    reason_instruction: str = REASON_INSTRUCTION
    simple_instruction: str = SIMPLE_INSTRUCTION
    judge_system: str = JUDGE_SYSTEM
    judge_user: str = JUDGE_USER


def load_prompt_set(directory: str | Path) -> PromptSet:
    """Overlay plain-text overrides onto the defaults.

    Recognized files: ``preamble.txt`` (with a ``{category}`` placeholder),
    ``<category>.txt`` (one focus line per line, optional ``- `` bullets),
    ``system_prompt.txt``, ``reason_instruction.txt``,
    ``simple_instruction.txt``, ``judge_system.txt`` and ``judge_user.txt``.
    """
    root = Path(directory)

    def read(name: str) -> str | None:
        path = root / name
        return path.read_text(encoding="utf-8").strip() if path.is_file() else None

    preamble = read("preamble.txt") or PREAMBLE
    templates = {}
    for category in TaskCategory:
        template = default_template(category, preamble)
        override = read(f"{category.value}.txt")
        if override:
            lines = tuple(
                line.strip().removeprefix("- ").strip()
                for line in override.splitlines()
                if line.strip()
            )
            budget = parse_sentence_budget(lines) or template.sentence_budget
            template = replace(template, focus_lines=lines, sentence_budget=budget)
        templates[category] = template

    defaults = PromptSet()
    return PromptSet(
        templates=templates,
        system_prompt=read("system_prompt.txt") or defaults.system_prompt,
        reason_instruction=read("reason_instruction.txt") or defaults.reason_instruction,
        simple_instruction=read("simple_instruction.txt") or defaults.simple_instruction,
        judge_system=read("judge_system.txt") or defaults.judge_system,
        judge_user=read("judge_user.txt") or defaults.judge_user,
    )


DEFAULT_PROMPTS = PromptSet()


def _attachments(frame: Frame, root: str | Path | None) -> tuple[str, ...]:
    paths = frame.image_paths()
    if root is not None:
        paths = [str(Path(root) / p) for p in paths]
    return tuple(paths)


def _view_line() -> str:
    names = ", ".join(v.value for v in canonical_view_order())
    return f"Attached camera views, in order: {names}."


def build_reasoning_prompt(
    record: QaRecord,
    frame: Frame,
    root: str | Path | None = None,
    prompts: PromptSet = DEFAULT_PROMPTS,
) -> list[Message]:
    template = prompts.templates[record.category]
    user = f"Question: {record.question}\nAnswer: {record.gt_answer}\n{_view_line()}"
    return [
        Message("system", template.render_system()),
        Message("user", user, _attachments(frame, root)),
    ]


def build_inference_prompt(
    record: QaRecord,
    frame: Frame,
    variant: Variant,
    root: str | Path | None = None,
    prompts: PromptSet = DEFAULT_PROMPTS,
) -> list[Message]:
    """Prompt a fine-tuned model would see at inference; never includes the answer."""
    instruction = prompts.reason_instruction if variant is Variant.REASON else prompts.simple_instruction
    return [
        Message("system", f"{prompts.system_prompt}\n{instruction}"),
        Message("user", f"{record.question}\n{_view_line()}", _attachments(frame, root)),
    ]


def build_judge_prompt(
    question: str, reference: str, candidate: str, prompts: PromptSet = DEFAULT_PROMPTS
) -> list[Message]:
    user = prompts.judge_user.format(question=question, reference=reference, candidate=candidate)
    return [Message("system", prompts.judge_system), Message("user", user)]
