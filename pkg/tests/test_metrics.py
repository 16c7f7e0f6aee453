import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drp.errors import EmptyInput, LengthMismatch, MissingReference, SampleSetMismatch
from drp.metrics import (
    CorpusScores,
    MetricReport,
    SampleScores,
    average_reports,
    bleu,
    brevity_penalty,
    count_chunks,
    count_crossings,
    evaluate_run,
    lcs_length,
    meteor,
    meteor_alignment,
    meteor_from_counts,
    rouge_1,
    rouge_l,
    sentence_bleu,
    tokenize,
)
from drp.pipeline import GeneratedReview
from drp.corpus import Corpus, ReviewSample

from oracles import bleu_oracle, clipped_matches, lcs_oracle, prf, unigram_overlap_oracle

seqs = st.lists(st.sampled_from([f"w{i}" for i in range(20)]), min_size=1, max_size=30)


@pytest.mark.parametrize("text,expected", [
    ("The cat, sat.", ["the", "cat", "sat"]),
    ("", []),
    ("don't stop", ["don't", "stop"]),
    ("well-known  «quotes» ...", ["well-known", "quotes"]),
    ("ÉCOLE\tNoël!", ["école", "noël"]),
])
def test_tokenize(text, expected):
    assert tokenize(text) == expected


def test_bleu_worked_example():
    hyp = "the cat sat on the mat".split()
    ref = "the cat sat on a mat".split()
    assert [clipped_matches(hyp, ref, n) for n in range(1, 5)] == [(5, 6), (3, 5), (2, 4), (1, 3)]
    assert brevity_penalty(6, 6) == 1.0
    assert bleu([hyp], [ref]) == pytest.approx(100 * (30 / 360) ** 0.25, abs=1e-9)
    assert bleu([hyp], [ref]) == pytest.approx(53.73, abs=0.01)


def test_bleu_perfect_and_zero():
    s = "a b c d e".split()
    assert bleu([s], [s]) == pytest.approx(100.0)
    assert bleu([["a", "b", "c", "d"]], [["d", "c", "b", "a"]]) == 0.0


def test_bleu_length_mismatch():
    with pytest.raises(LengthMismatch):
        bleu([["a"]], [])
    with pytest.raises(LengthMismatch):
        bleu([], [])


def test_bleu_is_corpus_level_not_mean():
    h = [["a", "b", "c", "d"], ["x", "y", "z", "w", "v"]]
    r = [["a", "b", "c", "d"], ["x", "y", "q", "w", "v"]]
    corpus = bleu(h, r)
    assert corpus == pytest.approx(bleu_oracle(h, r), abs=1e-9)
    # second pair alone has no 3-gram match
    assert bleu([h[1]], [r[1]]) == 0.0
    assert corpus > 0


@settings(max_examples=250, deadline=None)
@given(seqs, seqs)
def test_bleu_matches_oracle(h, r):
    assert bleu([h], [r]) == pytest.approx(bleu_oracle([h], [r]), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(seqs, seqs), min_size=1, max_size=5))
def test_corpus_bleu_matches_oracle(pairs):
    hs, rs = [p[0] for p in pairs], [p[1] for p in pairs]
    assert bleu(hs, rs) == pytest.approx(bleu_oracle(hs, rs), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(seqs, seqs)
def test_metric_ranges(h, r):
    assert 0.0 <= bleu([h], [r]) <= 100.0
    assert 0.0 <= sentence_bleu(h, r) <= 100.0
    assert 0.0 <= meteor(h, r) <= 1.0
    for score in rouge_1(h, r) + rouge_l(h, r):
        assert 0.0 <= score <= 1.0


def test_brevity_never_increases_when_shortened():
    ref_len = 10
    bps = [brevity_penalty(c, ref_len) for c in range(1, ref_len + 1)]
    assert bps == sorted(bps)
    assert all(b < 1.0 for b in bps[:-1])


def test_sentence_bleu_smoothing():
    # no bigram matches, but unigram matches: smoothed score stays positive
    assert sentence_bleu(["a", "b"], ["b", "a"]) > 0
    assert sentence_bleu(["q"], ["a"]) == 0.0


# ------------------------------------------------------------------ ROUGE

def test_rouge_examples():
    hyp = "the cat sat".split()
    ref = "the cat sat on the mat".split()
    assert rouge_1(hyp, ref) == pytest.approx((1.0, 0.5, 2 / 3), abs=1e-12)
    assert lcs_oracle(hyp, ref) == 3
    assert rouge_l(hyp, ref) == pytest.approx((1.0, 0.5, 2 / 3), abs=1e-12)
    assert rouge_1(ref, ref) == (1.0, 1.0, 1.0)
    assert rouge_l(ref, ref) == (1.0, 1.0, 1.0)
    assert rouge_1(["a", "b"], ["c", "d"]) == (0.0, 0.0, 0.0)


def test_rouge_l_reversed():
    assert lcs_oracle(["a", "b", "c"], ["c", "b", "a"]) == 1
    assert rouge_l(["a", "b", "c"], ["c", "b", "a"]) == pytest.approx((1 / 3, 1 / 3, 1 / 3))


def test_rouge_empty():
    with pytest.raises(EmptyInput):
        rouge_1([], ["a"])
    with pytest.raises(EmptyInput):
        rouge_l(["a"], [])
    with pytest.raises(EmptyInput):
        meteor([], ["a"])


@settings(max_examples=250, deadline=None)
@given(seqs, seqs)
def test_rouge_1_oracle_and_symmetry(h, r):
    assert rouge_1(h, r) == pytest.approx(prf(unigram_overlap_oracle(h, r), len(h), len(r)), abs=1e-9)
    assert rouge_1(h, r)[0] == rouge_1(r, h)[1]


@settings(max_examples=250, deadline=None)
@given(seqs.filter(lambda s: len(s) <= 12), seqs.filter(lambda s: len(s) <= 12))
def test_rouge_l_oracle(h, r):
    assert lcs_length(h, r) == lcs_oracle(h, r)
    assert rouge_l(h, r) == pytest.approx(prf(lcs_oracle(h, r), len(h), len(r)), abs=1e-9)


# ----------------------------------------------------------------- METEOR

@pytest.mark.parametrize("m", [1, 5, 10])
def test_meteor_identity(m):
    s = [f"tok{i}" for i in range(m)]
    assert meteor(s, s) == pytest.approx(1 - 0.5 * (1 / m) ** 3, abs=1e-9)


def test_meteor_examples():
    assert meteor("a b c d e f g h i j".split(), "a b c d e f g h i j".split()) == pytest.approx(0.9995)
    assert meteor(["apple"], ["zebra"]) == 0.0
    assert meteor(["cats"], ["cat"]) == pytest.approx(0.5)


def test_meteor_fmean_weights_recall():
    # m=2, |hyp|=2, |ref|=4: P=1, R=0.5 -> Fmean = 10*0.5/(0.5+9) ; one chunk
    fmean = 10 * 1 * 0.5 / (0.5 + 9 * 1)
    assert meteor(["a", "b"], ["a", "b", "c", "d"]) == pytest.approx(fmean * (1 - 0.5 * (1 / 2) ** 3))


def test_meteor_prefers_fewer_crossings():
    # "the" appears twice in the reference; the in-order pick keeps one chunk
    hyp = ["the", "cat"]
    ref = ["the", "cat", "saw", "the"]
    pairs = meteor_alignment(hyp, ref)
    assert pairs == [(0, 0), (1, 1)]
    assert count_chunks(pairs) == 1


def test_meteor_stem_stage_only_on_leftovers():
    pairs = meteor_alignment(["running", "run"], ["run", "runs"])
    # exact: run<->run ; stem: running<->runs
    assert sorted(pairs) == [(0, 1), (1, 0)]


def test_count_chunks_and_crossings():
    assert count_chunks([(0, 0), (1, 1), (2, 2)]) == 1
    assert count_chunks([(0, 2), (1, 0), (2, 1)]) == 2
    assert count_crossings([(0, 1), (1, 0)]) == 1
    assert count_chunks([]) == 0


def test_meteor_monotone_in_chunks_randomized():
    rng = random.Random(7)
    for _ in range(300):
        n = rng.randint(1, 15)
        hyp_len = n + rng.randint(0, 5)
        ref_len = n + rng.randint(0, 5)
        perms = []
        for _ in range(5):
            order = list(range(n))
            rng.shuffle(order)
            pairs = list(zip(range(n), sorted(rng.sample(range(ref_len), n))))
            pairs = [(i, pairs[j][1]) for i, j in zip(range(n), order)]
            perms.append((count_chunks(pairs), meteor_from_counts(n, hyp_len, ref_len, count_chunks(pairs))))
        perms.sort()
        for (c0, s0), (c1, s1) in zip(perms, perms[1:]):
            assert c0 <= c1 and s0 >= s1


def test_meteor_large_input_uses_bounded_search():
    hyp = ["the"] * 12 + ["a"] * 12
    ref = ["a"] * 15 + ["the"] * 15
    score = meteor(hyp, ref)
    assert 0 < score <= 1
    assert len(meteor_alignment(hyp, ref)) == 24


# ------------------------------------------------------------ aggregation

def _corpus(pairs):
    train = [ReviewSample(u, f"h-{i}", "t", "history", 1) for u, i, _ in pairs]
    test = [ReviewSample(u, i, "t", ref, 2) for u, i, ref in pairs]
    return Corpus(frozenset(train), frozenset(test))


def test_evaluate_run_identity():
    refs = [("u1", "i1", "the cat sat on the mat today"), ("u2", "i2", "a very good book to read")]
    corpus = _corpus(refs)
    gens = [GeneratedReview(u, i, ref, "rag", 0.0, "0" * 64) for u, i, ref in refs]
    rep = evaluate_run(gens, corpus)
    assert rep.corpus.bleu == pytest.approx(100.0)
    assert rep.corpus.rouge1_f == pytest.approx(1.0)
    assert rep.corpus.rougeL_f == pytest.approx(1.0)
    expected_meteor = ((1 - 0.5 * (1 / 7) ** 3) + (1 - 0.5 * (1 / 6) ** 3)) / 2
    assert rep.corpus.meteor == pytest.approx(expected_meteor, abs=1e-12)


def test_evaluate_run_two_sample_means():
    refs = [("u1", "i1", "the cat sat on the mat"), ("u2", "i2", "a b c")]
    hyps = {"u1": "the cat sat", "u2": "c b a"}
    corpus = _corpus(refs)
    gens = [GeneratedReview(u, i, hyps[u], "rag", 0.0, "0" * 64) for u, i, _ in refs]
    rep = evaluate_run(gens, corpus)
    # hand values: rouge1 F 2/3 and 1; rougeL F 2/3 and 1/3
    assert rep.corpus.rouge1_f == pytest.approx((2 / 3 + 1) / 2, abs=1e-12)
    assert rep.corpus.rougeL_f == pytest.approx((2 / 3 + 1 / 3) / 2, abs=1e-12)
    assert rep.corpus.meteor == pytest.approx(sum(s.meteor for s in rep.per_sample) / 2, abs=1e-12)
    assert rep.corpus.bleu == pytest.approx(
        bleu_oracle([hyps["u1"].split(), hyps["u2"].split()], [refs[0][2].split(), refs[1][2].split()]))


def test_evaluate_run_missing_reference():
    corpus = _corpus([("u1", "i1", "x y")])
    with pytest.raises(MissingReference):
        evaluate_run([GeneratedReview("u1", "nope", "x", "rag", 0.0, "0" * 64)], corpus)


def _report(vals):
    rows = [SampleScores("u", "i", *vals)]
    return MetricReport(rows, CorpusScores(*vals), 1)


def test_average_reports():
    avg = average_reports([_report([2.0, 0.1, 0.2, 0.3]), _report([3.0, 0.3, 0.4, 0.5])])
    assert avg.corpus.bleu == 2.5
    assert avg.corpus.meteor == pytest.approx(0.2, abs=1e-12)
    assert avg.per_sample[0].rougeL_f == pytest.approx(0.4, abs=1e-12)
    single = _report([1.0, 0.5, 0.5, 0.5])
    assert average_reports([single]).corpus == single.corpus
    other = MetricReport([SampleScores("v", "i", 0, 0, 0, 0)], CorpusScores(0, 0, 0, 0), 1)
    with pytest.raises(SampleSetMismatch):
        average_reports([single, other])


def test_metric_report_roundtrip():
    rep = _report([1.0, 0.5, 0.25, 0.125])
    assert MetricReport.from_dict(rep.to_dict()) == rep
