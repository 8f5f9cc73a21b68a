"""Pipeline configuration: one JSON file wires roles, generators, and knobs.

Backends are bound per role id ("schema_analyst", "selector", one role per
generator, plus the embedder). Relative paths inside the file (mock scripts,
demo pools, template overrides) resolve against the config file's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .backends import (
    BackendRegistry,
    HashedNgramEmbedder,
    HttpChatBackend,
    HttpEmbeddingBackend,
    MockChatBackend,
    MockScriptEntry,
    load_mock_script,
)
from .errors import ConfigInvalid
from .generation import GeneratorBinding
from .prompts import PromptLibrary

CONFIG_ENV_VAR = "POLYSQL_CONFIG"

SCHEMA_ANALYST_ROLE = "schema_analyst"
SELECTOR_ROLE = "selector"
EMBEDDER_ROLE = "embedder"


@dataclass
class RoleConfig:
    """One backend binding: a scripted mock, a hash embedder, or an HTTP provider."""

    provider: str  # "mock" | "http" | "hash"
    script: str | None = None
    entries: list[dict] | None = None
    base_url: str = ""
    model: str = ""
    api_key_env: str = ""
    timeout_s: float = 60.0
    retries: int = 2
    dimension: int = 256
    temperature: float | None = None
    max_tokens: int = 1024


@dataclass
class RetrievalConfig:
    top_k_columns: int = 5
    top_k_values: int = 5
    value_cosine_threshold: float = 0.60
    lsh_enabled: bool = True
    lsh_permutations: int = 64
    lsh_bands: int = 16
    lsh_rows_per_band: int = 4
    distance_cap_floor: int = 8


@dataclass
class IclConfig:
    pool_path: str | None = None
    pool_flavor: str = "bird"
    shots: int = 5


@dataclass
class PipelineConfig:
    roles: dict[str, RoleConfig] = field(default_factory=dict)
    generators: list[GeneratorBinding] = field(default_factory=list)
    schema_iterations: int = 2
    sample_cap: int = 3
    equivalence_mode: str = "set"
    exec_timeout_ms: int = 30_000
    selector_policy: str = "model"
    generator_temperature: float = 0.1
    analyst_temperature: float = 0.0
    max_tokens: int = 1024
    seed: int = 0
    workers: int = 4
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    icl: IclConfig = field(default_factory=IclConfig)
    template_dir: str | None = None
    base_dir: Path = field(default_factory=Path)
    emit_timings: bool = False

    def resolve(self, path: str) -> Path:
        candidate = Path(path)
        return candidate if candidate.is_absolute() else self.base_dir / candidate

    def validate(self) -> None:
        if self.schema_iterations < 1:
            raise ConfigInvalid("schema_iterations must be >= 1")
        if self.equivalence_mode not in ("set", "bag", "ordered"):
            raise ConfigInvalid(f"unknown equivalence_mode {self.equivalence_mode!r}")
        if self.selector_policy not in ("model", "majority"):
            raise ConfigInvalid(f"unknown selector_policy {self.selector_policy!r}")
        if not self.generators:
            raise ConfigInvalid("at least one generator binding is required")
        ranks = sorted(b.rank for b in self.generators)
        if ranks != list(range(1, len(self.generators) + 1)):
            raise ConfigInvalid(
                f"generator ranks must be a permutation of 1..{len(self.generators)}, got {ranks}"
            )
        ids = [b.generator_id for b in self.generators]
        if len(ids) != len(set(ids)):
            raise ConfigInvalid("generator ids must be unique")
        retrieval = self.retrieval
        if retrieval.lsh_bands * retrieval.lsh_rows_per_band != retrieval.lsh_permutations:
            raise ConfigInvalid("lsh_bands * lsh_rows_per_band must equal lsh_permutations")

        prompts = self.prompt_library()
        needed = {b.prompt_template_id for b in self.generators}
        needed.update({"keyword_extraction", "column_selection", "refine", "selector"})
        for template_id in sorted(needed):
            if not prompts.has(template_id):
                raise ConfigInvalid(f"missing prompt template {template_id!r}")

        for role in (SCHEMA_ANALYST_ROLE, SELECTOR_ROLE):
            if role not in self.roles:
                raise ConfigInvalid(f"role {role!r} must be configured")
        for binding in self.generators:
            if binding.backend_role not in self.roles:
                raise ConfigInvalid(
                    f"generator {binding.generator_id!r} references unknown role "
                    f"{binding.backend_role!r}"
                )

    def prompt_library(self) -> PromptLibrary:
        override = self.resolve(self.template_dir) if self.template_dir else None
        return PromptLibrary(override)

    def build_registry(self) -> BackendRegistry:
        registry = BackendRegistry()
        for role_id, role in self.roles.items():
            if role_id == EMBEDDER_ROLE:
                continue
            if role.provider == "mock":
                if role.entries is not None:
                    entries = [
                        MockScriptEntry(matcher=e.get("match"), response=str(e["response"]))
                        for e in role.entries
                    ]
                elif role.script:
                    entries = load_mock_script(self.resolve(role.script))
                else:
                    entries = []
                registry.chat_backends[role_id] = MockChatBackend(entries)
            elif role.provider == "http":
                registry.chat_backends[role_id] = HttpChatBackend(
                    base_url=role.base_url,
                    model=role.model,
                    api_key_env=role.api_key_env,
                    timeout_s=role.timeout_s,
                    retries=role.retries,
                )
            else:
                raise ConfigInvalid(f"role {role_id!r}: unknown chat provider {role.provider!r}")

        embedder_cfg = self.roles.get(EMBEDDER_ROLE)
        if embedder_cfg is None or embedder_cfg.provider == "hash":
            dimension = embedder_cfg.dimension if embedder_cfg else 256
            registry.embedder = HashedNgramEmbedder(dimension=dimension)
        elif embedder_cfg.provider == "http":
            registry.embedder = HttpEmbeddingBackend(
                base_url=embedder_cfg.base_url,
                model=embedder_cfg.model,
                dimension=embedder_cfg.dimension,
                api_key_env=embedder_cfg.api_key_env,
                timeout_s=embedder_cfg.timeout_s,
                retries=embedder_cfg.retries,
            )
        else:
            raise ConfigInvalid(f"unknown embedding provider {embedder_cfg.provider!r}")
        return registry


def _role_from_dict(role_id: str, data: dict) -> RoleConfig:
    if not isinstance(data, dict) or "provider" not in data:
        raise ConfigInvalid(f"role {role_id!r} must be an object with a provider")
    known = {
        "provider",
        "script",
        "entries",
        "base_url",
        "model",
        "api_key_env",
        "timeout_s",
        "retries",
        "dimension",
        "temperature",
        "max_tokens",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigInvalid(f"role {role_id!r}: unknown keys {sorted(unknown)}")
    return RoleConfig(**data)


def config_from_dict(data: dict, base_dir: Path) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigInvalid("config root must be an object")
    config = PipelineConfig(base_dir=base_dir)
    roles = data.get("roles", {})
    if not isinstance(roles, dict):
        raise ConfigInvalid("'roles' must be an object")
    for role_id, role_data in roles.items():
        config.roles[role_id] = _role_from_dict(role_id, role_data)

    generators = data.get("generators", [])
    if not isinstance(generators, list):
        raise ConfigInvalid("'generators' must be a list")
    for i, binding in enumerate(generators):
        try:
            config.generators.append(
                GeneratorBinding(
                    generator_id=binding["generator_id"],
                    backend_role=binding["backend_role"],
                    prompt_template_id=binding["prompt_template_id"],
                    rank=int(binding["rank"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"generator {i}: {exc}") from exc

    for key in (
        "schema_iterations",
        "sample_cap",
        "equivalence_mode",
        "exec_timeout_ms",
        "selector_policy",
        "generator_temperature",
        "analyst_temperature",
        "max_tokens",
        "seed",
        "workers",
        "template_dir",
        "emit_timings",
    ):
        if key in data:
            setattr(config, key, data[key])

    if "retrieval" in data:
        if not isinstance(data["retrieval"], dict):
            raise ConfigInvalid("'retrieval' must be an object")
        try:
            config.retrieval = RetrievalConfig(**data["retrieval"])
        except TypeError as exc:
            raise ConfigInvalid(f"retrieval: {exc}") from exc
    if "icl" in data:
        if not isinstance(data["icl"], dict):
            raise ConfigInvalid("'icl' must be an object")
        try:
            config.icl = IclConfig(**data["icl"])
        except TypeError as exc:
            raise ConfigInvalid(f"icl: {exc}") from exc

    config.validate()
    return config


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Load and validate a config file from `path` or $POLYSQL_CONFIG."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR, "")
        if not path:
            raise ConfigInvalid(
                f"no config file given: pass --config or set {CONFIG_ENV_VAR}"
            )
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data, path.parent.absolute())
