"""Run configuration loaded from a JSON file plus the environment.

Sections: ``endpoint``, ``generation``, ``judge``, ``metrics``, ``weights``.
The API key comes from ``REASONDRIVE_API_KEY`` when set, else from the file.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .core import MetricConfig
from .errors import ToolkitError
from .gateway import API_KEY_ENV


@dataclass(frozen=True)
class EndpointConfig:
    url: str = "https://api.openai.com/v1/chat/completions"
    api_key: str | None = None
    timeout: float = 120.0
    rate_limit: float | None = None
    max_retries: int = 4
    token_budget: int | None = None
    cache_dir: str = ".reasondrive_cache"


@dataclass(frozen=True)
class GenerationConfig:
    model: str = "gpt-4o"
    temperature: float = 0.7
    max_tokens: int = 512
    retries: int = 2
    max_in_flight: int = 4


@dataclass(frozen=True)
class JudgeConfig:
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_tokens: int = 64
    retries: int = 2
    max_in_flight: int = 4


@dataclass(frozen=True)
class ToolkitConfig:
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    prompts_dir: str | None = None

    def to_dict(self, redact: bool = True) -> dict[str, Any]:
        endpoint = asdict(self.endpoint)
        if redact and endpoint.get("api_key"):
            endpoint["api_key"] = "***"
        return {
            "endpoint": endpoint,
            "generation": asdict(self.generation),
            "judge": asdict(self.judge),
            "metrics": self.metrics.to_dict(),
            "prompts_dir": self.prompts_dir,
        }


def _section(cls, data: Mapping[str, Any] | None, name: str):
    data = dict(data or {})
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ToolkitError("CONFIG_INVALID", f"unknown keys in [{name}]: {sorted(unknown)}")
    return cls(**data)


def load_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> ToolkitConfig:
    env = os.environ if env is None else env
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ToolkitError("CONFIG_INVALID", f"cannot read config {path}: {exc}") from exc
    endpoint = _section(EndpointConfig, data.get("endpoint"), "endpoint")
    if env.get(API_KEY_ENV):
        endpoint = EndpointConfig(**{**asdict(endpoint), "api_key": env[API_KEY_ENV]})
    metrics = dict(data.get("metrics") or {})
    if "weights" in data:
        metrics["final_weights"] = data["weights"]
    return ToolkitConfig(
        endpoint=endpoint,
        generation=_section(GenerationConfig, data.get("generation"), "generation"),
        judge=_section(JudgeConfig, data.get("judge"), "judge"),
        metrics=MetricConfig.from_dict(metrics),
        prompts_dir=data.get("prompts_dir"),
    )
