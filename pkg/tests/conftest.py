from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest

from reasondrive import mini_fixture_path
from reasondrive.ingest import load_dataset

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def fixture_root(tmp_path: Path) -> Path:
    """A private copy of the bundled mini dataset."""
    dest = tmp_path / "mini"
    shutil.copytree(mini_fixture_path(), dest)
    return dest


@pytest.fixture(scope="session")
def dataset():
    return load_dataset(mini_fixture_path())


@pytest.fixture
def write_index(tmp_path: Path):
    def _write(index: dict, name: str = "index.json") -> Path:
        root = tmp_path / "ds"
        root.mkdir(exist_ok=True)
        (root / name).write_text(json.dumps(index), encoding="utf-8")
        return root

    return _write


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
