"""Pipeline configuration: presets, INI files, environment and flag overrides.

Precedence, lowest first: preset < config file < environment < explicit
overrides (CLI flags).
"""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from autopkg.errors import ConfigError
from autopkg.kgd import DEFAULT_THETA_MERGE, PolicyVariant
from autopkg.retrieval import DEFAULT_K

# backbone per role; the type-description helper shares the type model
PRESETS: dict[str, dict[str, str]] = {
    "minimal": {
        "kgd": "Qwen3-30B-A3B-Instruct-2507",
        "type": "Qwen3-4B-Instruct-2507",
        "keys": "Qwen3-30B-A3B-Instruct-2507",
        "values": "Qwen3-VL-8B",
    },
    "balanced": {
        "kgd": "Qwen3-30B-A3B-Instruct-2507",
        "type": "Qwen3-4B-Instruct-2507",
        "keys": "Qwen3-30B-A3B-Instruct-2507",
        "values": "Qwen3-VL-32B",
    },
    "full": {
        "kgd": "Qwen3-Next-80B-A3B-Instruct",
        "type": "Qwen3-4B-Instruct-2507",
        "keys": "Qwen3-235B-A22B-Instruct-2507",
        "values": "Qwen3-VL-32B",
    },
}

KGD_BACKENDS = ("rule", "llm")
AGENT_BACKENDS = ("heuristic", "llm")
EMBEDDERS = ("auto", "fallback", "remote")
CLOCKS = ("logical", "wall")


@dataclass
class PipelineConfig:
    policy: PolicyVariant = PolicyVariant.BASIC
    k: int = DEFAULT_K
    use_retrieval_context: bool = True
    use_images: bool = True
    workers: int = 4
    preset: str = "minimal"
    models: dict[str, str] = field(default_factory=lambda: dict(PRESETS["minimal"]))
    kgd_backend: str = "rule"
    agent_backend: str = "heuristic"
    embedder: str = "auto"
    theta_merge: float = DEFAULT_THETA_MERGE
    rediscover_keys: bool = False
    clock: str = "logical"
    seed: int = 0

    def __post_init__(self) -> None:
        try:
            self.policy = PolicyVariant(self.policy)
        except ValueError:
            raise ConfigError(f"unknown policy {self.policy!r}") from None
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        for name, value, allowed in (
            ("kgd_backend", self.kgd_backend, KGD_BACKENDS),
            ("agent_backend", self.agent_backend, AGENT_BACKENDS),
            ("embedder", self.embedder, EMBEDDERS),
            ("clock", self.clock, CLOCKS),
        ):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        if not 0.0 <= self.theta_merge <= 1.0:
            raise ConfigError("theta_merge must lie in [0, 1]")

    @classmethod
    def from_preset(cls, preset: str = "minimal", **kw: Any) -> PipelineConfig:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        return cls(preset=preset, models=dict(PRESETS[preset]), **kw)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["policy"] = self.policy.value
        return out


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}
_INT_FIELDS = {"k", "workers", "seed"}
_FLOAT_FIELDS = {"theta_merge"}
_BOOL_FIELDS = {"use_retrieval_context", "use_images", "rediscover_keys"}
_PIPELINE_FIELDS = {f.name for f in fields(PipelineConfig)} - {"models", "kgd_backend", "agent_backend", "embedder"}


def _coerce(name: str, raw: str) -> Any:
    raw = raw.strip()
    try:
        if name in _INT_FIELDS:
            return int(raw)
        if name in _FLOAT_FIELDS:
            return float(raw)
        if name in _BOOL_FIELDS:
            return _BOOL[raw.lower()]
    except (ValueError, KeyError):
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Flatten an INI file into PipelineConfig keyword arguments.

    Sections: ``[pipeline]`` (policy, k, use_retrieval_context, use_images,
    workers, preset, theta_merge, rediscover_keys, clock, seed),
    ``[backends]`` (kgd, agents, embedder) and ``[models]`` (kgd, type,
    keys, values).
    """
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out: dict[str, Any] = {}
    known = {"pipeline", "backends", "models"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    if parser.has_section("pipeline"):
        for name, raw in parser.items("pipeline"):
            if name not in _PIPELINE_FIELDS:
                raise ConfigError(f"{path}: unknown pipeline option {name!r}")
            out[name] = _coerce(name, raw)
    if parser.has_section("backends"):
        mapping = {"kgd": "kgd_backend", "agents": "agent_backend", "embedder": "embedder"}
        for name, raw in parser.items("backends"):
            if name not in mapping:
                raise ConfigError(f"{path}: unknown backends option {name!r}")
            out[mapping[name]] = raw.strip()
    if parser.has_section("models"):
        out["models"] = {name: raw.strip() for name, raw in parser.items("models")}
    return out


def load_config(
    path: str | Path | None = None,
    *,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> PipelineConfig:
    file_values = read_config_file(path) if path else {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    preset = overrides.get("preset", file_values.get("preset", "minimal"))
    config = PipelineConfig.from_preset(preset)

    models = dict(config.models)
    models.update(file_values.pop("models", {}))
    env = os.environ if env is None else env
    if env.get("LLM_MODEL"):
        models = {role: env["LLM_MODEL"] for role in models}
    models.update(overrides.pop("models", {}) or {})

    merged = {**file_values, **overrides, "models": models}
    try:
        return replace(config, **merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
