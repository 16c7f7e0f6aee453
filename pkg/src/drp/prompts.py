"""Versioned prompt templates (``string.Template`` syntax, ``$name`` placeholders)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from typing import Optional

TEMPLATE_NAMES = (
    "extractor_system", "extractor_user",
    "validator_system", "validator_user",
    "summarizer_system", "summarizer_user",
    "generator_system", "generator_user", "generator_history", "generator_summary",
    "judge_system", "judge_user",
)


@dataclass(frozen=True)
class PromptSet:
    version: str
    texts: dict

    def render(self, name: str, **values: str) -> str:
        return Template(self.texts[name]).substitute(**values).strip("\n")

    def raw(self, name: str) -> str:
        return self.texts[name].strip("\n")

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        for name in TEMPLATE_NAMES:
            h.update(name.encode() + b"\0" + self.texts[name].encode("utf-8") + b"\0")
        return h.hexdigest()


def load_prompts(prompt_dir: Optional[str | Path] = None) -> PromptSet:
    """Load templates from ``prompt_dir``; missing files fall back to the packaged set."""
    packaged = resources.files("drp") / "prompts"
    texts = {}
    for name in TEMPLATE_NAMES + ("VERSION",):
        path = Path(prompt_dir) / f"{name}.txt" if prompt_dir else None
        if path is not None and path.exists():
            texts[name] = path.read_text(encoding="utf-8")
        else:
            texts[name] = (packaged / f"{name}.txt").read_text(encoding="utf-8")
    version = texts.pop("VERSION").strip()
    return PromptSet(version, texts)
