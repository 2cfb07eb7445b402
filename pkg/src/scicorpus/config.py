"""Pipeline configuration: strict JSON parsing, unknown keys rejected.

Every run records the resolved configuration alongside its outputs, so a
corpus snapshot is always reproducible from its config file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigurationError

STAGE_NAMES = (
    "dedup",
    "rule_filter",
    "classify",
    "refine",
    "complete",
    "decontam",
    "benchgen",
    "portrait",
)

_STAGE_KEYS: dict[str, set[str]] = {
    "dedup": {"verify_threshold", "shingle_size"},
    "rule_filter": {"min_bytes", "max_garbled_ratio", "target_language", "use_language_detector"},
    "classify": {"blocklist", "book_paper_max_attempts"},
    "refine": {"max_attempts", "max_workers", "repetition_max_run"},
    "complete": {"max_attempts", "max_workers", "repetition_max_run"},
    "decontam": {"benchmark", "ngram"},
    "benchgen": {"window", "output", "sample_size", "sample_seed", "shuffle_seed"},
    "portrait": {"group_by"},
}

_BACKEND_ROLES = (
    "classify",
    "book_paper",
    "refine",
    "complete",
    "mcq_generate",
    "mcq_completeness",
    "mcq_correctness",
    "language",
)

_BACKEND_KEYS = {"type", "path", "endpoint", "model", "auth_token", "timeout", "result", "labels"}


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class StageConfig:
    name: str
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class OrchestratorConfig:
    host: str = "127.0.0.1"
    port: int = 7777
    heartbeat_timeout: float = 60.0
    reap_period: float = 15.0
    max_attempts: int = 3
    heartbeat_interval: float = 5.0


@dataclass
class PipelineConfig:
    input: str
    output_dir: str
    stages: list[StageConfig]
    tokenizer: dict = field(default_factory=lambda: {"name": "whitespace", "kind": "whitespace"})
    seed: int = 0
    backends: dict[str, dict] = field(default_factory=dict)
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "output_dir": self.output_dir,
            "tokenizer": dict(self.tokenizer),
            "seed": self.seed,
            "stages": [{"stage": s.name, **s.params} for s in self.stages],
            "backends": {k: dict(v) for k, v in self.backends.items()},
            "orchestrator": vars(self.orchestrator).copy(),
        }


def parse_config(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be an object")
    _check_keys(
        data,
        {"input", "output_dir", "stages", "tokenizer", "seed", "backends", "orchestrator"},
        "config root",
    )
    for required in ("input", "output_dir", "stages"):
        if required not in data:
            raise ConfigurationError(f"config is missing required key {required!r}")

    stages = []
    if not isinstance(data["stages"], list) or not data["stages"]:
        raise ConfigurationError("stages must be a non-empty list")
    for i, raw in enumerate(data["stages"]):
        if not isinstance(raw, dict) or "stage" not in raw:
            raise ConfigurationError(f"stages[{i}] must be an object with a 'stage' key")
        name = raw["stage"]
        if name not in STAGE_NAMES:
            raise ConfigurationError(f"stages[{i}]: unknown stage {name!r}")
        params = {k: v for k, v in raw.items() if k != "stage"}
        _check_keys(params, _STAGE_KEYS[name], f"stages[{i}] ({name})")
        stages.append(StageConfig(name=name, params=params))

    tokenizer = data.get("tokenizer", {"name": "whitespace", "kind": "whitespace"})
    _check_keys(tokenizer, {"name", "kind"}, "tokenizer")

    backends = data.get("backends", {})
    if not isinstance(backends, dict):
        raise ConfigurationError("backends must be an object")
    for role, spec in backends.items():
        if role not in _BACKEND_ROLES:
            raise ConfigurationError(f"unknown backend role {role!r}")
        if not isinstance(spec, dict) or "type" not in spec:
            raise ConfigurationError(f"backend {role!r} must be an object with a 'type' key")
        _check_keys(spec, _BACKEND_KEYS, f"backend {role!r}")

    orch_raw = data.get("orchestrator", {})
    _check_keys(
        orch_raw,
        {"host", "port", "heartbeat_timeout", "reap_period", "max_attempts", "heartbeat_interval"},
        "orchestrator",
    )
    orchestrator = OrchestratorConfig(**orch_raw)

    return PipelineConfig(
        input=data["input"],
        output_dir=data["output_dir"],
        stages=stages,
        tokenizer=tokenizer,
        seed=int(data.get("seed", 0)),
        backends=backends,
        orchestrator=orchestrator,
    )


def load_config(path: str) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file is not valid JSON: {exc}")
    return parse_config(data)
