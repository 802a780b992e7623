"""Run configuration: one YAML file, strict keys, hashed into artifacts.

Every tunable the pipelines depend on lives here with its default value,
so an ablation is a config edit rather than a code change. Unknown keys
are rejected to catch typos early. ``config_hash`` digests the fully
resolved configuration and is stamped into every output artifact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError


def _from_mapping(cls, data: dict[str, Any], context: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{context}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{context}: unknown key(s) {sorted(unknown)}")
    return cls(**data)


@dataclass(frozen=True)
class BackendSettings:
    """One judge backend endpoint; 'mock' is always available without config."""

    base_url: str = ""
    model: str = ""
    api_key_env: str = "JUDGE_API_KEY"
    timeout: float = 30.0
    retries: int = 2
    concurrency: int = 4
    score_only_max_tokens: int = 8
    reason_max_tokens: int = 512
    seed: int = 0


@dataclass(frozen=True)
class CurationSettings:
    prefix: int = 3000
    generations: int = 3
    top_k: int = 50
    batch_size: int = 64
    provider: str = "token-overlap"
    provider_url: str = ""
    provider_timeout: float = 30.0
    provider_retries: int = 2


@dataclass(frozen=True)
class RewardSettings:
    kind: str = "R_O"
    length_penalty_ratio: float = 3.0
    penalty_value: float | None = None
    group_size_max: int = 16


@dataclass(frozen=True)
class PlateauSettings:
    window: int = 200
    tolerance: float = 0.1


@dataclass(frozen=True)
class SftStopSettings:
    delta: float = 0.01
    run: int = 3


@dataclass(frozen=True)
class ServiceSettings:
    host: str = "127.0.0.1"
    port: int = 8420
    corpus_path: str = ""
    tasks_path: str = ""
    annotations_path: str = "annotations.jsonl"
    trace_path: str = ""
    verdict_cache_path: str = ""
    annotators: tuple[str, ...] = ()
    task_order_seed: int = 17
    backend: str = "mock"
    auth_token_env: str = ""

    def __post_init__(self):
        object.__setattr__(self, "annotators", tuple(self.annotators))


@dataclass(frozen=True)
class RunConfig:
    backends: dict[str, BackendSettings] = field(default_factory=dict)
    curation: CurationSettings = field(default_factory=CurationSettings)
    reward: RewardSettings = field(default_factory=RewardSettings)
    plateau: PlateauSettings = field(default_factory=PlateauSettings)
    sft_stop: SftStopSettings = field(default_factory=SftStopSettings)
    service: ServiceSettings = field(default_factory=ServiceSettings)
    # Optimizer metadata carried through into artifacts; never interpreted.
    training: dict[str, Any] = field(default_factory=lambda: {"group_size": 16})

    def to_payload(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["service"]["annotators"] = list(self.service.annotators)
        return payload

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_payload(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path: str | Path | None) -> RunConfig:
    """Defaults when no path is given; otherwise a strictly validated YAML file."""
    if path is None:
        return RunConfig()
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if raw is None:
        return RunConfig()
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"config: unknown key(s) {sorted(unknown)}")

    backends = {}
    for name, settings in (raw.get("backends") or {}).items():
        backends[str(name)] = _from_mapping(
            BackendSettings, settings or {}, f"backends.{name}"
        )
    training = raw.get("training", {"group_size": 16})
    if not isinstance(training, dict):
        raise ConfigError("training: expected a mapping")
    return RunConfig(
        backends=backends,
        curation=_from_mapping(CurationSettings, raw.get("curation", {}), "curation"),
        reward=_from_mapping(RewardSettings, raw.get("reward", {}), "reward"),
        plateau=_from_mapping(PlateauSettings, raw.get("plateau", {}), "plateau"),
        sft_stop=_from_mapping(SftStopSettings, raw.get("sft_stop", {}), "sft_stop"),
        service=_from_mapping(ServiceSettings, raw.get("service", {}), "service"),
        training=training,
    )
