"""Coverage analysis of difference features: validity judging, dedup, UVQ."""

from __future__ import annotations

import math
import re
import statistics
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Literal, Mapping, Optional, Sequence

from .errors import DegenerateInput, JudgeParseError
from .gateway import ChatRequest, Gateway, Message, ProviderSpec
from .metrics import tokenize
from .pipeline import DifferenceFeature
from .prompts import PromptSet, load_prompts


class FeatureCategory(str, Enum):
    WRITING = "Writing"
    EMOTION = "Emotion"
    SEMANTICS = "Semantics"
    STRUCTURE = "Structure"
    PRAGMATICS = "Pragmatics"


CATEGORIES = tuple(FeatureCategory)


@dataclass(frozen=True)
class ValidityVerdict:
    comparative: bool
    atomic: bool
    clear: bool
    category: Optional[FeatureCategory]
    consistent: bool

    @property
    def categorized(self) -> bool:
        return self.category is not None

    def valid(self) -> bool:
        return self.comparative and self.atomic and self.clear and self.categorized and self.consistent


_YESNO = {"YES": True, "NO": False}
_LINE_RE = re.compile(r"^\s*\**(COMPARATIVE|ATOMIC|CLEAR|CATEGORY|CONSISTENT)\**\s*:\s*(.+?)\s*$",
                      re.IGNORECASE | re.MULTILINE)


def parse_verdict(raw: str) -> ValidityVerdict:
    """Read the five-line verdict; the last occurrence of each key wins."""
    found = {m.group(1).upper(): m.group(2).strip().strip("*`.") for m in _LINE_RE.finditer(raw)}
    missing = [k for k in ("COMPARATIVE", "ATOMIC", "CLEAR", "CATEGORY", "CONSISTENT") if k not in found]
    if missing:
        raise JudgeParseError(f"judge verdict missing {missing}: {raw[:200]!r}")
    flags = {}
    for key in ("COMPARATIVE", "ATOMIC", "CLEAR", "CONSISTENT"):
        value = found[key].upper()
        if value not in _YESNO:
            raise JudgeParseError(f"{key} must be YES or NO, got {found[key]!r}")
        flags[key.lower()] = _YESNO[value]
    cat = found["CATEGORY"]
    if cat.upper() == "NONE":
        category = None
    else:
        matches = [c for c in CATEGORIES if c.value.lower() == cat.lower()]
        if not matches:
            raise JudgeParseError(f"unknown category {cat!r}")
        category = matches[0]
    return ValidityVerdict(category=category, **flags)


def describe_feature(f: DifferenceFeature) -> str:
    return f"[{f.dimension.name}] {f.description} ({f.direction})"


def judge_request(feature: DifferenceFeature, judge: ProviderSpec, siblings: Sequence[DifferenceFeature] = (),
                  prompts: PromptSet | None = None) -> ChatRequest:
    prompts = prompts or load_prompts()
    sib = "; ".join(describe_feature(s) for s in siblings) or "none"
    user = prompts.render("judge_user", feature=describe_feature(feature), siblings=sib)
    return ChatRequest(judge.model_id, (Message("system", prompts.raw("judge_system")), Message("user", user)),
                       0.0, judge.max_tokens)


def judge_feature(feature: DifferenceFeature, judge: ProviderSpec, gateway: Gateway | None = None,
                  siblings: Sequence[DifferenceFeature] = (), prompts: PromptSet | None = None) -> ValidityVerdict:
    """One judge call; unparseable answers raise rather than pass."""
    gateway = gateway or Gateway()
    req = judge_request(feature, judge, siblings, prompts)
    return parse_verdict(gateway.cached_complete(req, judge, label="judge").content)


def canonical_name(name: str) -> str:
    return " ".join(sorted(tokenize(name)))


FeatureKey = tuple[FeatureCategory, str, str]


def canonical_feature_key(feature: DifferenceFeature, verdict: ValidityVerdict) -> FeatureKey:
    return (verdict.category, canonical_name(feature.dimension.name), feature.direction)


def dedup_and_resolve(user_features: Iterable[tuple[DifferenceFeature, ValidityVerdict]]) -> set[FeatureKey]:
    """Unique valid feature keys for one user.

    Invalid features are discarded and duplicates collapse by key. When the
    same (category, name) occurs with both target_higher and target_lower,
    every feature of that (category, name) is removed; qualitative features
    never conflict with anything.
    """
    keys = {canonical_feature_key(f, v) for f, v in user_features if v.valid()}
    directions: dict[tuple, set[str]] = {}
    for cat, name, direction in keys:
        directions.setdefault((cat, name), set()).add(direction)
    conflicted = {cn for cn, ds in directions.items() if {"target_higher", "target_lower"} <= ds}
    return {k for k in keys if (k[0], k[1]) not in conflicted}


@dataclass
class UvqReport:
    per_user: dict[str, int]
    dataset_uvq: int
    category_proportions: dict[str, float]
    judged_total: int
    aggregation: str = "sum"

    def to_dict(self) -> dict:
        return {
            "per_user": dict(sorted(self.per_user.items())),
            "dataset_uvq": self.dataset_uvq,
            "category_proportions": self.category_proportions,
            "judged_total": self.judged_total,
            "aggregation": self.aggregation,
        }


def compute_uvq(per_user_sets: Mapping[str, set[FeatureKey]],
                aggregation: Literal["sum", "union"] = "sum") -> UvqReport:
    """Sum (default) or union of per-user unique valid features.

    ``judged_total`` is the number of features the category proportions are
    computed over.
    """
    per_user = {u: len(s) for u, s in sorted(per_user_sets.items())}
    if aggregation == "sum":
        pool = [k for u in sorted(per_user_sets) for k in sorted(per_user_sets[u], key=_key_sort)]
        total = sum(per_user.values())
    elif aggregation == "union":
        pool = sorted(set().union(*per_user_sets.values()), key=_key_sort) if per_user_sets else []
        total = len(pool)
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    props: dict[str, float] = {}
    if pool:
        counts = {c.value: 0 for c in CATEGORIES}
        for cat, _, _ in pool:
            counts[FeatureCategory(cat).value] += 1
        props = {c: n / len(pool) for c, n in counts.items()}
    return UvqReport(per_user, total, props, len(pool), aggregation)


def _key_sort(k: FeatureKey):
    return (FeatureCategory(k[0]).value, k[1], k[2])


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    if len(xs) != len(ys) or len(xs) < 2:
        raise DegenerateInput("pearson needs two equal-length sequences of length >= 2")
    if any(not math.isfinite(v) for v in list(xs) + list(ys)):
        raise DegenerateInput("pearson inputs must be finite")
    try:
        r = statistics.correlation(xs, ys)
    except statistics.StatisticsError as e:
        raise DegenerateInput(str(e)) from None
    return max(-1.0, min(1.0, r))


def judge_user_features(features: Sequence[DifferenceFeature], judge: ProviderSpec, gateway: Gateway,
                        prompts: PromptSet | None = None) -> list[tuple[DifferenceFeature, ValidityVerdict]]:
    """Judge each feature of one user, passing same-name features as siblings."""
    prompts = prompts or load_prompts()
    by_name: dict[str, list[DifferenceFeature]] = {}
    for f in features:
        by_name.setdefault(canonical_name(f.dimension.name), []).append(f)
    out = []
    for i, f in enumerate(features):
        group = by_name[canonical_name(f.dimension.name)]
        siblings = [g for g in group if g is not f]
        out.append((f, judge_feature(f, judge, gateway, siblings, prompts)))
    return out
