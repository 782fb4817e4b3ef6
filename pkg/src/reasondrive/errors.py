"""Exception type shared by every module of the toolkit."""

from __future__ import annotations

from typing import Any


class ToolkitError(Exception):
    """An error carrying a machine-readable code such as ``UNKNOWN_CATEGORY``.

    ``details`` holds structured context (offending ids, paths, statuses) so the
    CLI can emit it with ``--format json``.
    """

    def __init__(self, code: str, message: str = "", **details: Any) -> None:
        self.code = code
        self.message = message or code
        self.details = details
        super().__init__(f"{code}: {self.message}")

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "details": self.details}
