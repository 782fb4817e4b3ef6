"""Dataset construction and evaluation toolkit for reasoning-augmented driving VQA."""

from importlib import resources
from pathlib import Path

from .core import (
    CameraView,
    Finding,
    Frame,
    MetricConfig,
    ObjectTag,
    QaRecord,
    ReasoningChain,
    TaskCategory,
    TrainingExample,
    canonical_view_order,
    count_sentences,
    validate_frame,
)
from .errors import ToolkitError

__version__ = "0.1.0"


def mini_fixture_path() -> Path:
    """Directory of the bundled 3-frame, 12-QA sample dataset."""
    return Path(str(resources.files(__package__) / "data" / "mini_fixture"))


__all__ = [
    "CameraView",
    "Finding",
    "Frame",
    "MetricConfig",
    "ObjectTag",
    "QaRecord",
    "ReasoningChain",
    "TaskCategory",
    "ToolkitError",
    "TrainingExample",
    "canonical_view_order",
    "count_sentences",
    "mini_fixture_path",
    "validate_frame",
]
