"""Review corpus loading and per-user history access."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .errors import CorpusIoError, ParseError, PartitionError, UnknownUser

SPLITS = ("train", "test")


@dataclass(frozen=True)
class ReviewSample:
    user_id: str
    item_id: str
    item_title: str
    review_text: str
    timestamp: int
    item_description: str = ""
    rating: Optional[float] = None

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise ValueError("user_id and item_id must be nonempty")
        if not self.review_text.strip():
            raise ValueError("review_text is empty")
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        if self.rating is not None and not 1 <= self.rating <= 5:
            raise ValueError("rating must be in [1, 5]")

    @property
    def key(self) -> tuple[str, str]:
        return (self.user_id, self.item_id)

    @property
    def sort_key(self) -> tuple[int, str]:
        return (self.timestamp, self.item_id)

    def to_record(self, split: str) -> dict:
        rec = {
            "user_id": self.user_id,
            "item_id": self.item_id,
            "item_title": self.item_title,
            "item_description": self.item_description,
            "review_text": self.review_text,
            "timestamp": self.timestamp,
            "split": split,
        }
        if self.rating is not None:
            rec["rating"] = self.rating
        return rec


@dataclass(frozen=True)
class UserHistory:
    user_id: str
    samples: tuple[ReviewSample, ...]

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


@dataclass(frozen=True)
class Corpus:
    train: frozenset[ReviewSample]
    test: frozenset[ReviewSample]
    dataset_name: str = ""
    _by_user: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        train_keys = {s.key for s in self.train}
        overlap = sorted(train_keys & {s.key for s in self.test})
        if overlap:
            u, i = overlap[0]
            raise PartitionError(f"(user={u!r}, item={i!r}) appears in both train and test")
        train_users = {s.user_id for s in self.train}
        orphans = sorted({s.user_id for s in self.test} - train_users)
        if orphans:
            raise PartitionError(f"test user {orphans[0]!r} has no train history")
        by_user: dict[str, list[ReviewSample]] = {}
        for s in self.train:
            by_user.setdefault(s.user_id, []).append(s)
        object.__setattr__(
            self,
            "_by_user",
            {u: tuple(sorted(v, key=lambda s: s.sort_key)) for u, v in by_user.items()},
        )

    def test_samples(self) -> list[ReviewSample]:
        """Test samples ordered by (user_id, item_id)."""
        return sorted(self.test, key=lambda s: s.key)

    def test_sample(self, user_id: str, item_id: str) -> Optional[ReviewSample]:
        for s in self.test:
            if s.key == (user_id, item_id):
                return s
        return None


def _parse_record(rec: dict, lineno: int) -> tuple[ReviewSample, str]:
    if not isinstance(rec, dict):
        raise ParseError(lineno, "record is not a JSON object")
    for name in ("user_id", "item_id", "item_title", "review_text"):
        if not isinstance(rec.get(name), str):
            raise ParseError(lineno, f"field {name!r} missing or not a string")
    desc = rec.get("item_description", "")
    if not isinstance(desc, str):
        raise ParseError(lineno, "field 'item_description' is not a string")
    ts = rec.get("timestamp")
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise ParseError(lineno, "field 'timestamp' missing or not an integer")
    rating = rec.get("rating")
    if rating is not None and (isinstance(rating, bool) or not isinstance(rating, (int, float))):
        raise ParseError(lineno, "field 'rating' is not a number")
    split = rec.get("split")
    if split not in SPLITS:
        raise ParseError(lineno, f"field 'split' must be one of {SPLITS}, got {split!r}")
    try:
        sample = ReviewSample(
            user_id=rec["user_id"],
            item_id=rec["item_id"],
            item_title=rec["item_title"],
            item_description=desc,
            review_text=rec["review_text"],
            timestamp=ts,
            rating=None if rating is None else float(rating),
        )
    except ValueError as e:
        raise ParseError(lineno, str(e)) from None
    return sample, split


def load_corpus(path: str | Path, format_tag: str = "jsonl") -> Corpus:
    """Load a JSONL review file with an explicit ``split`` field per line.

    Blank lines are skipped. Duplicate (user, item) pairs within one split
    are rejected as parse errors.
    """
    if format_tag != "jsonl":
        raise ValueError(f"unsupported format {format_tag!r}")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CorpusIoError(f"cannot read {path}: {e}") from e
    parts: dict[str, dict[tuple[str, str], ReviewSample]] = {"train": {}, "test": {}}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(lineno, f"invalid JSON: {e.msg}") from None
        sample, split = _parse_record(rec, lineno)
        if sample.key in parts[split]:
            raise ParseError(lineno, f"duplicate (user, item) {sample.key} in {split}")
        parts[split][sample.key] = sample
    return Corpus(
        train=frozenset(parts["train"].values()),
        test=frozenset(parts["test"].values()),
        dataset_name=path.stem,
    )


def dump_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back to JSONL, train then test, each in canonical order."""
    lines = []
    for split, samples in (("train", corpus.train), ("test", corpus.test)):
        for s in sorted(samples, key=lambda s: (s.user_id, s.timestamp, s.item_id)):
            lines.append(json.dumps(s.to_record(split), ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def user_history(corpus: Corpus, user_id: str) -> UserHistory:
    samples = corpus._by_user.get(user_id)
    if not samples:
        raise UnknownUser(f"user {user_id!r} has no train samples")
    return UserHistory(user_id, samples)


def all_users(corpus: Corpus) -> list[str]:
    return sorted(corpus._by_user)


def make_history(samples: Iterable[ReviewSample]) -> UserHistory:
    """Build a canonical UserHistory from loose samples of a single user."""
    samples = sorted(samples, key=lambda s: s.sort_key)
    if not samples:
        raise ValueError("no samples")
    users = {s.user_id for s in samples}
    if len(users) != 1:
        raise ValueError(f"samples span several users: {sorted(users)}")
    return UserHistory(samples[0].user_id, tuple(samples))
