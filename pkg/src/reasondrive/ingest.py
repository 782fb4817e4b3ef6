"""Loading DriveLM-style index files, splitting and dataset reports.

The index is one JSON file::

    {scene_id: {"key_frames": {frame_id: {
        "image_paths": {"CAM_FRONT": "...", ...},
        "QA": {"perception": [{"Q": "...", "A": "..."}, ...], ...}}}}}
"""

from __future__ import annotations

import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple, Sequence

from .core import CameraView, Finding, Frame, QaRecord, TaskCategory, validate_frame
from .errors import ToolkitError

logger = logging.getLogger(__name__)

INDEX_FILENAME = "index.json"


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    scenes: int
    frames: int
    qa_total: int
    qa_by_category: dict[str, int]
    frames_per_scene: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "root": self.root,
            "scenes": self.scenes,
            "frames": self.frames,
            "qa_total": self.qa_total,
            "qa_by_category": dict(self.qa_by_category),
            "frames_per_scene": dict(self.frames_per_scene),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DatasetManifest":
        return cls(
            root=data["root"],
            scenes=int(data["scenes"]),
            frames=int(data["frames"]),
            qa_total=int(data["qa_total"]),
            qa_by_category={k: int(v) for k, v in data["qa_by_category"].items()},
            frames_per_scene={k: int(v) for k, v in data.get("frames_per_scene", {}).items()},
        )


class Dataset(NamedTuple):
    frames: list[Frame]
    records: list[QaRecord]
    manifest: DatasetManifest

    @property
    def root(self) -> Path:
        return Path(self.manifest.root)

    def frame_index(self) -> dict[tuple[str, str], Frame]:
        return {f.key: f for f in self.frames}

    def record_index(self) -> dict[str, QaRecord]:
        return {r.qa_id: r for r in self.records}


def resolve_index(path: str | Path) -> Path:
    """Accept an index file or a directory holding ``index.json`` (or a single ``*.json``)."""
    path = Path(path)
    if path.is_file():
        return path
    if not path.is_dir():
        raise ToolkitError("MALFORMED_INDEX", f"dataset root {path} does not exist", path=str(path))
    candidate = path / INDEX_FILENAME
    if candidate.is_file():
        return candidate
    jsons = sorted(path.glob("*.json"))
    if len(jsons) == 1:
        return jsons[0]
    raise ToolkitError("MALFORMED_INDEX", f"no {INDEX_FILENAME} in {path}", path=str(path))


def _pairs_hook(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    duplicates = []
    for key, value in pairs:
        if key in out:
            duplicates.append(key)
        out[key] = value
    if duplicates:
        out["__duplicate_keys__"] = duplicates
    return out


def _expect_mapping(value: Any, where: str) -> dict[str, Any]:
    if not isinstance(value, dict):
        raise ToolkitError("MALFORMED_INDEX", f"{where} must be an object")
    dupes = value.pop("__duplicate_keys__", None)
    if dupes:
        raise ToolkitError("MALFORMED_INDEX", f"duplicate keys in {where}: {dupes}", keys=dupes)
    return value


def load_dataset(root: str | Path) -> Dataset:
    index_path = resolve_index(root)
    data_root = index_path.parent
    try:
        raw = json.loads(index_path.read_text(encoding="utf-8"), object_pairs_hook=_pairs_hook)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ToolkitError("MALFORMED_INDEX", f"cannot parse {index_path}: {exc}", path=str(index_path)) from exc

    frames: list[Frame] = []
    records: list[QaRecord] = []
    seen_ids: set[str] = set()
    scenes = _expect_mapping(raw, "index")
    for scene_id, scene in scenes.items():
        scene = _expect_mapping(scene, f"scene {scene_id}")
        key_frames = scene.get("key_frames")
        if isinstance(key_frames, dict) and key_frames.get("__duplicate_keys__"):
            raise ToolkitError(
                "DUPLICATE_FRAME", f"duplicate frame ids in scene {scene_id}",
                scene_id=scene_id, frame_ids=key_frames["__duplicate_keys__"],
            )
        key_frames = _expect_mapping(key_frames, f"{scene_id}.key_frames")
        for frame_id, entry in key_frames.items():
            entry = _expect_mapping(entry, f"{scene_id}/{frame_id}")
            frames.append(_load_frame(scene_id, frame_id, entry))
            qa = _expect_mapping(entry.get("QA", {}), f"{scene_id}/{frame_id}.QA")
            for cat_key, items in qa.items():
                category = TaskCategory.parse(cat_key)
                if not isinstance(items, list):
                    raise ToolkitError("MALFORMED_INDEX", f"QA list expected under {scene_id}/{frame_id}/{cat_key}")
                for ordinal, item in enumerate(items):
                    record = _load_qa(scene_id, frame_id, category, ordinal, item)
                    if record.qa_id in seen_ids:
                        raise ToolkitError("DUPLICATE_QA", f"duplicate qa id {record.qa_id}", qa_id=record.qa_id)
                    seen_ids.add(record.qa_id)
                    records.append(record)

    manifest = build_manifest(data_root, frames, records)
    return Dataset(frames, records, manifest)


def _load_frame(scene_id: str, frame_id: str, entry: dict[str, Any]) -> Frame:
    views: dict[CameraView, str] = {}
    for name, path in _expect_mapping(entry.get("image_paths", {}), f"{scene_id}/{frame_id}.image_paths").items():
        try:
            view = CameraView.parse(name)
        except ValueError:
            logger.warning("%s/%s: ignoring unknown view %r", scene_id, frame_id, name)
            continue
        views[view] = str(path)
    return Frame(str(scene_id), str(frame_id), views)


def _load_qa(scene_id: str, frame_id: str, category: TaskCategory, ordinal: int, item: Any) -> QaRecord:
    if not isinstance(item, dict):
        raise ToolkitError("MALFORMED_INDEX", f"QA entry must be an object in {scene_id}/{frame_id}")
    item.pop("__duplicate_keys__", None)
    qa_id = item.get("id") or item.get("qa_id") or f"{scene_id}/{frame_id}/{category.value}/{ordinal}"
    question, answer = item.get("Q"), item.get("A")
    if not isinstance(question, str) or not isinstance(answer, str):
        raise ToolkitError("MISSING_FIELD", f"QA {qa_id} lacks Q or A", qa_id=qa_id)
    return QaRecord(str(qa_id), str(scene_id), str(frame_id), category, question, answer)


def build_manifest(root: str | Path, frames: Sequence[Frame], records: Sequence[QaRecord]) -> DatasetManifest:
    by_category = Counter(r.category.value for r in records)
    per_scene = Counter(f.scene_id for f in frames)
    return DatasetManifest(
        root=str(root),
        scenes=len(per_scene),
        frames=len(frames),
        qa_total=len(records),
        qa_by_category={c.value: by_category.get(c.value, 0) for c in TaskCategory},
        frames_per_scene=dict(per_scene),
    )


def validate_dataset(dataset: Dataset) -> list[Finding]:
    findings: list[Finding] = []
    for frame in dataset.frames:
        findings.extend(validate_frame(frame, dataset.root))
    frame_keys = {f.key for f in dataset.frames}
    for record in dataset.records:
        if record.frame_key not in frame_keys:
            findings.append(Finding("error", "ORPHAN_QA", "QA refers to an unknown frame", record.qa_id))
    return findings


def split_dataset(
    records: Sequence[QaRecord], train_fraction: float, seed: int
) -> tuple[list[QaRecord], list[QaRecord]]:
    """Split by frame so every frame's QA pairs land on one side."""
    if not 0 < train_fraction < 1:
        raise ToolkitError("USAGE", "train_fraction must be strictly between 0 and 1", train_fraction=train_fraction)
    if not records:
        raise ToolkitError("EMPTY_DATASET", "nothing to split")
    keys = sorted({r.frame_key for r in records})
    random.Random(seed).shuffle(keys)
    n_train = round(train_fraction * len(keys))
    if len(keys) >= 2:
        n_train = min(max(n_train, 1), len(keys) - 1)
    train_keys = set(keys[:n_train])
    train = [r for r in records if r.frame_key in train_keys]
    held_out = [r for r in records if r.frame_key not in train_keys]
    return train, held_out


@dataclass
class DatasetReport:
    manifest: DatasetManifest
    findings: list[Finding]

    def to_dict(self) -> dict[str, Any]:
        return {
            "manifest": self.manifest.to_dict(),
            "errors": sum(f.severity == "error" for f in self.findings),
            "warnings": sum(f.severity == "warning" for f in self.findings),
            "findings": [f.to_dict() for f in self.findings],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetReport":
        data = json.loads(text)
        return cls(DatasetManifest.from_dict(data["manifest"]), [Finding.from_dict(f) for f in data["findings"]])

    def to_text(self) -> str:
        m = self.manifest
        rows = [("root", m.root), ("scenes", m.scenes), ("frames", m.frames), ("qa_total", m.qa_total)]
        rows += [(f"qa[{cat}]", n) for cat, n in m.qa_by_category.items()]
        rows += [(f"frames[{scene}]", n) for scene, n in sorted(m.frames_per_scene.items())]
        width = max(len(k) for k, _ in rows)
        lines = [f"{k:<{width}}  {v}" for k, v in rows]
        if self.findings:
            lines.append("")
            lines.append(f"{len(self.findings)} finding(s):")
            for f in self.findings:
                lines.append(f"  {f.severity:<7}  {f.code:<16}  {f.subject}  {f.message}".rstrip())
        return "\n".join(lines)


def dataset_report(manifest: DatasetManifest, findings: Sequence[Finding]) -> DatasetReport:
    findings = list(findings)
    if manifest.frames == 0:
        findings.append(Finding("warning", "EMPTY_DATASET", "dataset contains no frames", manifest.root))
    return DatasetReport(manifest, findings)
