"""Deterministic stand-in for every LLM role, plus a fixture recorder.

The synthetic responder reads the role tag on the system prompt and
answers in that role's grammar using simple statistics of the reviews in
the prompt. Its outputs are not meant to be good reviews, only stable,
grammar-conforming ones for offline runs.
"""

from __future__ import annotations

import json
import re
import threading
from collections import Counter
from pathlib import Path

from .gateway import ChatRequest, canonical_request_hash
from .metrics import tokenize

_ROLE_RE = re.compile(r"^\[role: (\w+)\]")
_REVIEW_RE = re.compile(r"^\s*Review: (.*)$", re.MULTILINE)
_STOP = frozenset(
    "a an and are as at be but by for from had has have i in is it its me my of on or so that the "
    "this to was were with you your not very just all they them their there than too".split()
)


def _section(text: str, header: str) -> str:
    start = text.find(header)
    if start < 0:
        return ""
    rest = text[start + len(header):]
    nxt = rest.find("\n## ")
    return rest if nxt < 0 else rest[:nxt]


def _reviews(section: str) -> list[str]:
    return _REVIEW_RE.findall(section)


def _style(reviews: list[str]) -> dict:
    words = [len(tokenize(r)) for r in reviews] or [0]
    bangs = sum(r.count("!") for r in reviews)
    toks = Counter(t for r in reviews for t in tokenize(r) if t not in _STOP and len(t) > 2)
    top = sorted(toks.items(), key=lambda kv: (-kv[1], kv[0]))
    return {
        "length": sum(words) / len(words),
        "exclaim": bangs / max(1, len(reviews)),
        "topic": top[0][0] if top else "the product",
    }


def _direction(a: float, b: float) -> str:
    if a > b:
        return "target_higher"
    if a < b:
        return "target_lower"
    return "qualitative"


class SyntheticResponder:
    """Role-aware deterministic responder."""

    def __call__(self, request: ChatRequest) -> str:
        system = request.messages[0].content
        user = request.messages[-1].content
        m = _ROLE_RE.match(system)
        role = m.group(1) if m else "generator"
        return getattr(self, f"_{role}", self._generator)(user)

    def _extractor(self, user: str) -> str:
        tgt = _style(_reviews(_section(user, "## Target user reviews")))
        rep = _style(_reviews(_section(user, "## Representative user reviews")))
        length_dir = _direction(tgt["length"], rep["length"])
        excl_dir = _direction(tgt["exclaim"], rep["exclaim"])
        blocks = [
            ("Verbosity", "How many words a review uses.",
             f"The target averages {tgt['length']:.1f} words per review versus {rep['length']:.1f}.",
             length_dir),
            ("Enthusiasm", "How strongly excited the tone is.",
             f"The target uses {tgt['exclaim']:.1f} exclamation marks per review versus {rep['exclaim']:.1f}.",
             excl_dir),
            ("Topical focus", "Which aspect of the item the review dwells on.",
             f"The target keeps returning to '{tgt['topic']}' while the other user focuses on '{rep['topic']}'.",
             "qualitative"),
        ]
        think = (f"<think>Compare lengths {tgt['length']:.1f} vs {rep['length']:.1f}, "
                 f"exclamations {tgt['exclaim']:.1f} vs {rep['exclaim']:.1f}.</think>\n")
        body = "\n\n".join(
            f"[FEATURE]\nDIMENSION: {n}\nDEFINITION: {d}\nDESCRIPTION: {s}\nDIRECTION: {r}\n[/FEATURE]"
            for n, d, s, r in blocks
        )
        return think + body

    def _validator(self, user: str) -> str:
        lines = []
        for m in re.finditer(r"^(\d+)\. \[([^\]]+)\] \((\w+)\)", user, re.MULTILINE):
            idx, direction = m.group(1), m.group(3)
            if direction == "qualitative":
                lines.append(f"VERDICT {idx}: DROP — direction not established by the evidence")
            else:
                lines.append(f"VERDICT {idx}: KEEP — supported by the reviews")
        return "\n".join(lines) or "VERDICT 0: KEEP — default"

    def _summarizer(self, user: str) -> str:
        items = re.findall(r"^- ([^(]+) \((\w+)\): (.*)$", _section(user, "## Validated differences"),
                           re.MULTILINE)
        higher = sorted({n.strip().lower() for n, d, _ in items if d == "target_higher"})
        lower = sorted({n.strip().lower() for n, d, _ in items if d == "target_lower"})
        parts = [f"more {n}" for n in higher] + [f"less {n}" for n in lower]
        return ("Compared with other users, this user shows " + (", ".join(parts) or "a mixed profile")
                + " in their reviews.")

    def _generator(self, user: str) -> str:
        title = re.search(r"^Title: (.*)$", user, re.MULTILINE)
        title = title.group(1).strip() if title else "this item"
        history = _reviews(_section(user, "## User history"))
        summary = _section(user, "## Difference summary")
        if not history:
            return f"This is a review of {title}. It is a good product and I liked it."
        text = f"{history[0]} Now about {title}."
        if "more enthusiasm" in summary:
            text += " Loved it!"
        elif "less enthusiasm" in summary:
            text += " It was fine."
        if "more verbosity" in summary and len(history) > 1:
            text += " " + history[1]
        return text

    def _judge(self, user: str) -> str:
        name = re.search(r"^Feature: \[([^\]]+)\]", user, re.MULTILINE)
        name = (name.group(1) if name else "").lower()
        category = {"verbosity": "Writing", "enthusiasm": "Emotion",
                    "topical focus": "Semantics"}.get(name, "Structure")
        feature_line = user.splitlines()[0] if user else ""
        qualitative = feature_line.rstrip().endswith("(qualitative)")
        return "\n".join([
            "COMPARATIVE: YES",
            "ATOMIC: YES",
            f"CLEAR: {'NO' if qualitative else 'YES'}",
            f"CATEGORY: {category}",
            "CONSISTENT: YES",
        ])


class RecordingResponder:
    """Wrap a responder and store each answer as a ``<digest>.json`` fixture."""

    def __init__(self, inner, fixture_dir: str | Path):
        self.inner = inner
        self.dir = Path(fixture_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.recorded = 0

    def __call__(self, request: ChatRequest) -> str:
        raw = self.inner(request)
        path = self.dir / f"{canonical_request_hash(request)}.json"
        with self._lock:
            path.write_text(json.dumps({"content": raw, "reasoning_trace": None}, ensure_ascii=False),
                            encoding="utf-8")
            self.recorded += 1
        return raw
