"""BLEU, METEOR, ROUGE-1 and ROUGE-L over a shared tokenizer.

All scorers take pre-tokenized sequences (lists of str) produced by
:func:`tokenize`. Corpus BLEU is reported on the 0-100 scale; the
others are in [0, 1].
"""

from __future__ import annotations

import itertools
import math
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Iterable, Sequence

from .errors import EmptyInput, LengthMismatch, MissingReference, SampleSetMismatch

if TYPE_CHECKING:
    from .corpus import Corpus
    from .pipeline import GeneratedReview

Tokens = Sequence[str]


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties.

    >>> tokenize("The cat, sat.")
    ['the', 'cat', 'sat']
    >>> tokenize("don't stop")
    ["don't", 'stop']
    """
    out = []
    for raw in text.lower().split():
        i, j = 0, len(raw)
        while i < j and _is_punct(raw[i]):
            i += 1
        while j > i and _is_punct(raw[j - 1]):
            j -= 1
        if i < j:
            out.append(raw[i:j])
    return out


# --------------------------------------------------------------------- BLEU

def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _clipped_counts(hyp: Tokens, ref: Tokens, n: int) -> tuple[int, int]:
    h = ngrams(hyp, n)
    r = ngrams(ref, n)
    matches = sum(min(c, r[g]) for g, c in h.items())
    return matches, max(len(hyp) - n + 1, 0)


def brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len == 0:
        return 0.0
    if hyp_len > ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def bleu(hypotheses: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4) -> float:
    """Corpus BLEU (x100) with one reference per hypothesis and no smoothing."""
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise LengthMismatch("need at least one hypothesis/reference pair")
    matches = [0] * max_n
    totals = [0] * max_n
    c = r = 0
    for hyp, ref in zip(hypotheses, references):
        c += len(hyp)
        r += len(ref)
        for n in range(1, max_n + 1):
            m, t = _clipped_counts(hyp, ref, n)
            matches[n - 1] += m
            totals[n - 1] += t
    if any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    return 100.0 * brevity_penalty(c, r) * math.exp(log_p)


def sentence_bleu(hyp: Tokens, ref: Tokens, max_n: int = 4) -> float:
    """Add-one smoothed sentence BLEU (x100); smoothing applies for n >= 2 only."""
    if not hyp:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        m, t = _clipped_counts(hyp, ref, n)
        if n == 1:
            if m == 0:
                return 0.0
            log_p += math.log(m / t)
        else:
            log_p += math.log((m + 1) / (t + 1))
    return 100.0 * brevity_penalty(len(hyp), len(ref)) * math.exp(log_p / max_n)


# ------------------------------------------------------------------- METEOR

METEOR_ALPHA_WEIGHT = 9.0  # Fmean = 10PR / (R + 9P)
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0
_ENUM_LIMIT = 4096


@lru_cache(maxsize=65536)
def _stem(word: str) -> str:
    return _porter().stem(word)


@lru_cache(maxsize=1)
def _porter():
    from nltk.stem.porter import PorterStemmer

    return PorterStemmer()


def count_crossings(pairs: Iterable[tuple[int, int]]) -> int:
    pairs = list(pairs)
    return sum(
        1
        for (a, b), (c, d) in itertools.combinations(pairs, 2)
        if (a - c) * (b - d) < 0
    )


def _group_options(hpos: list[int], rpos: list[int]) -> list[list[tuple[int, int]]]:
    # Order-preserving matchings of min(|h|,|r|) pairs; crossing within a group never helps.
    if len(hpos) <= len(rpos):
        return [list(zip(hpos, sub)) for sub in itertools.combinations(rpos, len(hpos))]
    return [list(zip(sub, rpos)) for sub in itertools.combinations(hpos, len(rpos))]


def _align_stage(keys_h: dict[int, str], keys_r: dict[int, str],
                 fixed: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Maximum-cardinality alignment between the free positions of one stage.

    Among maximum alignments the one with the fewest crossings (counting
    crossings against ``fixed`` pairs from earlier stages too) is chosen.
    Exhaustive when the option space is small, otherwise coordinate descent
    over word groups starting from the leftmost choice.
    """
    by_key_h: dict[str, list[int]] = {}
    by_key_r: dict[str, list[int]] = {}
    for i, k in sorted(keys_h.items()):
        by_key_h.setdefault(k, []).append(i)
    for j, k in sorted(keys_r.items()):
        by_key_r.setdefault(k, []).append(j)
    groups = [
        _group_options(by_key_h[k], by_key_r[k])
        for k in sorted(by_key_h.keys() & by_key_r.keys())
    ]
    if not groups:
        return []

    def cost(choice: Sequence[list[tuple[int, int]]]) -> int:
        return count_crossings(fixed + [p for g in choice for p in g])

    space = math.prod(len(g) for g in groups)
    if space <= _ENUM_LIMIT:
        best = min(itertools.product(*groups), key=cost)
        return sorted(p for g in best for p in g)

    choice = [g[0] for g in groups]
    best_cost = cost(choice)
    improved = True
    while improved:
        improved = False
        for gi, opts in enumerate(groups):
            if len(opts) == 1 or len(opts) > _ENUM_LIMIT:
                continue
            for opt in opts:
                trial = choice[:gi] + [opt] + choice[gi + 1:]
                c = cost(trial)
                if c < best_cost:
                    choice, best_cost, improved = trial, c, True
    return sorted(p for g in choice for p in g)


def meteor_alignment(hyp: Tokens, ref: Tokens) -> list[tuple[int, int]]:
    """Exact-match stage followed by Porter-stem stage on leftovers."""
    exact = _align_stage(dict(enumerate(hyp)), dict(enumerate(ref)), [])
    used_h = {i for i, _ in exact}
    used_r = {j for _, j in exact}
    stem_h = {i: _stem(t) for i, t in enumerate(hyp) if i not in used_h}
    stem_r = {j: _stem(t) for j, t in enumerate(ref) if j not in used_r}
    stemmed = _align_stage(stem_h, stem_r, exact)
    return sorted(exact + stemmed)


def count_chunks(pairs: Sequence[tuple[int, int]]) -> int:
    """Minimal number of runs contiguous and in order on both sides."""
    pairs = sorted(pairs)
    if not pairs:
        return 0
    chunks = 1
    for (h0, r0), (h1, r1) in zip(pairs, pairs[1:]):
        if h1 != h0 + 1 or r1 != r0 + 1:
            chunks += 1
    return chunks


def meteor_from_counts(matches: int, hyp_len: int, ref_len: int, chunks: int) -> float:
    if matches == 0:
        return 0.0
    p = matches / hyp_len
    r = matches / ref_len
    fmean = 10.0 * p * r / (r + METEOR_ALPHA_WEIGHT * p)
    penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
    return fmean * (1.0 - penalty)


def meteor(hypothesis: Tokens, reference: Tokens) -> float:
    if not hypothesis or not reference:
        raise EmptyInput("meteor needs nonempty hypothesis and reference")
    pairs = meteor_alignment(hypothesis, reference)
    return meteor_from_counts(len(pairs), len(hypothesis), len(reference), count_chunks(pairs))


# -------------------------------------------------------------------- ROUGE

def _prf(overlap: int, hyp_len: int, ref_len: int) -> tuple[float, float, float]:
    p = overlap / hyp_len
    r = overlap / ref_len
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


def rouge_1(hypothesis: Tokens, reference: Tokens) -> tuple[float, float, float]:
    if not hypothesis or not reference:
        raise EmptyInput("rouge needs nonempty hypothesis and reference")
    h, r = Counter(hypothesis), Counter(reference)
    overlap = sum(min(c, r[t]) for t, c in h.items())
    return _prf(overlap, len(hypothesis), len(reference))


def lcs_length(a: Tokens, b: Tokens) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis: Tokens, reference: Tokens) -> tuple[float, float, float]:
    if not hypothesis or not reference:
        raise EmptyInput("rouge needs nonempty hypothesis and reference")
    return _prf(lcs_length(hypothesis, reference), len(hypothesis), len(reference))


# -------------------------------------------------------------- aggregation

@dataclass
class SampleScores:
    user_id: str
    item_id: str
    bleu: float
    meteor: float
    rouge1_f: float
    rougeL_f: float


@dataclass
class CorpusScores:
    bleu: float
    meteor: float
    rouge1_f: float
    rougeL_f: float


@dataclass
class MetricReport:
    per_sample: list[SampleScores]
    corpus: CorpusScores
    n_samples: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "corpus": asdict(self.corpus),
            "per_sample": [asdict(s) for s in self.per_sample],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            per_sample=[SampleScores(**s) for s in d["per_sample"]],
            corpus=CorpusScores(**d["corpus"]),
            n_samples=d["n_samples"],
            meta=d.get("meta", {}),
        )


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs) if xs else 0.0


def score_pairs(pairs: Sequence[tuple[str, str, str, str]]) -> MetricReport:
    """Score (user_id, item_id, hypothesis_text, reference_text) tuples."""
    pairs = sorted(pairs, key=lambda p: (p[0], p[1]))
    hyps, refs, rows = [], [], []
    for user_id, item_id, hyp_text, ref_text in pairs:
        h, r = tokenize(hyp_text), tokenize(ref_text)
        hyps.append(h)
        refs.append(r)
        if h and r:
            row = SampleScores(user_id, item_id, sentence_bleu(h, r), meteor(h, r),
                               rouge_1(h, r)[2], rouge_l(h, r)[2])
        else:
            row = SampleScores(user_id, item_id, 0.0, 0.0, 0.0, 0.0)
        rows.append(row)
    corpus = CorpusScores(
        bleu=bleu(hyps, refs) if pairs else 0.0,
        meteor=_mean([s.meteor for s in rows]),
        rouge1_f=_mean([s.rouge1_f for s in rows]),
        rougeL_f=_mean([s.rougeL_f for s in rows]),
    )
    return MetricReport(rows, corpus, len(rows))


def evaluate_run(generations: Sequence["GeneratedReview"], corpus: "Corpus") -> MetricReport:
    refs = {s.key: s.review_text for s in corpus.test}
    pairs = []
    for g in generations:
        key = (g.target_user, g.item_id)
        if key not in refs:
            raise MissingReference(f"no test reference for user={key[0]!r} item={key[1]!r}")
        pairs.append((key[0], key[1], g.text, refs[key]))
    return score_pairs(pairs)


def average_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """Field-wise arithmetic mean of reports over the same sample set."""
    if not reports:
        raise SampleSetMismatch("no reports to average")
    keys = [(s.user_id, s.item_id) for s in reports[0].per_sample]
    for rep in reports[1:]:
        if [(s.user_id, s.item_id) for s in rep.per_sample] != keys:
            raise SampleSetMismatch("reports cover different sample sets")
    metric_names = ("bleu", "meteor", "rouge1_f", "rougeL_f")
    rows = [
        SampleScores(u, i, **{
            m: _mean([getattr(rep.per_sample[idx], m) for rep in reports]) for m in metric_names
        })
        for idx, (u, i) in enumerate(keys)
    ]
    corpus = CorpusScores(**{m: _mean([getattr(rep.corpus, m) for rep in reports]) for m in metric_names})
    return MetricReport(rows, corpus, reports[0].n_samples, meta={"averaged_over": len(reports)})
