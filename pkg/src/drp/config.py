"""Run configuration: a single JSON document, unknown keys rejected."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import InputError
from .gateway import ProviderSpec

ROLE_NAMES = ("extractor", "validator", "summarizer", "generator", "judge")
MODES = ("drp", "rag", "non_p")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RoleConfig(_Strict):
    kind: Literal["remote", "mock"] = "mock"
    model_id: str = "mock-model"
    base_url: Optional[str] = None
    request_timeout_s: float = Field(120.0, gt=0)
    max_retries: int = Field(3, ge=0)
    max_tokens: int = Field(1024, ge=1)

    @model_validator(mode="after")
    def _remote_needs_url(self):
        if self.kind == "remote" and not self.base_url:
            raise ValueError("remote role requires base_url")
        return self


class EmbeddingConfig(_Strict):
    kind: Literal["hash", "remote"] = "hash"
    dim: int = Field(64, ge=1)
    seed: int = 0
    base_url: Optional[str] = None
    model: str = ""
    request_timeout_s: float = Field(60.0, gt=0)


class RunConfig(_Strict):
    """Pipeline and CLI settings.

    ``roles.validator`` defaults to the extractor's settings when omitted.
    """

    # paths
    corpus: Optional[str] = None
    cache_dir: Optional[str] = None
    output_dir: str = "runs"
    prompt_dir: Optional[str] = None
    fixture_dir: Optional[str] = None
    run_name: Optional[str] = None
    # DRP
    mode: Literal["drp", "rag", "non_p"] = "drp"
    M: int = Field(4, ge=1)
    cluster_k: int = Field(5, ge=1)
    cluster_restarts: int = Field(10, ge=1)
    cluster_max_iters: int = Field(100, ge=1)
    cluster_tol: float = Field(1e-8, ge=0)
    retrieval_k: int = Field(4, ge=1)
    retrieval_mode: Literal["similarity", "recency"] = "similarity"
    temperatures: list[float] = Field(default_factory=lambda: [0.0, 0.8])
    seed: int = 0
    max_concurrency: int = Field(4, ge=1)
    uvq_aggregation: Literal["sum", "union"] = "sum"
    embedding: EmbeddingConfig = Field(default_factory=EmbeddingConfig)
    roles: dict[str, RoleConfig] = Field(default_factory=dict)

    @field_validator("temperatures")
    @classmethod
    def _temps(cls, v: list[float]) -> list[float]:
        if not v:
            raise ValueError("temperatures must be nonempty")
        if any(not 0.0 <= t <= 2.0 for t in v):
            raise ValueError("temperatures must lie in [0, 2]")
        return [float(t) for t in v]

    @field_validator("roles")
    @classmethod
    def _roles(cls, v: dict[str, RoleConfig]) -> dict[str, RoleConfig]:
        unknown = sorted(set(v) - set(ROLE_NAMES))
        if unknown:
            raise ValueError(f"unknown roles: {unknown}")
        return v

    def role(self, name: str) -> RoleConfig:
        if name in self.roles:
            return self.roles[name]
        if name == "validator" and "extractor" in self.roles:
            return self.roles["extractor"]
        return RoleConfig()

    def role_spec(self, name: str, force_mock: bool = False) -> ProviderSpec:
        r = self.role(name)
        return ProviderSpec(
            kind="mock" if force_mock else r.kind,
            model_id=r.model_id,
            base_url=r.base_url,
            request_timeout_s=r.request_timeout_s,
            max_retries=r.max_retries,
            max_tokens=r.max_tokens,
            fixture_dir=self.fixture_dir,
        )

    def to_json_dict(self) -> dict:
        return self.model_dump(mode="json")


def load_config(path: str | Path, **overrides) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise InputError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise InputError("config must be a JSON object")
    # relative paths resolve against the config file's directory
    for key in ("corpus", "cache_dir", "output_dir", "prompt_dir", "fixture_dir"):
        if isinstance(raw.get(key), str) and not Path(raw[key]).is_absolute():
            raw[key] = str((path.parent / raw[key]).resolve())
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise InputError(f"invalid config {path}:\n{e}") from e
