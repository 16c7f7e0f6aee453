import numpy as np
import pytest

from drp.corpus import ReviewSample, UserHistory, make_history
from drp.embed import HashEmbeddingProvider, StubEmbeddingProvider
from drp.errors import EmptyHistory
from drp.retrieve import item_query, retrieve_key_history


def sample(item, ts, text):
    return ReviewSample("u", item, "title", text, ts)


def test_clamp_to_history_size():
    h = make_history([sample("a", 1, "x"), sample("b", 2, "y")])
    r = retrieve_key_history(h, "q", 5, "recency")
    assert len(r) == 2 and r.k_requested == 5


def test_recency():
    h = make_history([sample("a", 10, "x"), sample("b", 20, "y"), sample("c", 30, "z")])
    r = retrieve_key_history(h, "q", 2, "recency")
    assert [s.timestamp for s in r.samples] == [30, 20]


def stub():
    # query along e1; cosines: r1 0.9, r2 0.1, r3 0.5
    def unit(c):
        return [c, float(np.sqrt(1 - c * c)), 0.0]
    return StubEmbeddingProvider({"query": [1.0, 0.0, 0.0], "r1": unit(0.9), "r2": unit(0.1), "r3": unit(0.5)})


def test_similarity_with_stub():
    h = make_history([sample("i1", 1, "r1"), sample("i2", 2, "r2"), sample("i3", 3, "r3")])
    r = retrieve_key_history(h, "query", 2, "similarity", stub())
    assert [s.item_id for s in r.samples] == ["i1", "i3"]
    assert [sc for _, sc in r.entries] == pytest.approx([0.9, 0.5])


def test_similarity_scale_invariant():
    base = stub()
    scaled = StubEmbeddingProvider({k: v * 7.5 for k, v in base.table.items()})
    h = make_history([sample("i1", 1, "r1"), sample("i2", 2, "r2"), sample("i3", 3, "r3")])
    a = retrieve_key_history(h, "query", 3, "similarity", base)
    b = retrieve_key_history(h, "query", 3, "similarity", scaled)
    assert a.samples == b.samples
    assert [s for _, s in a.entries] == pytest.approx([s for _, s in b.entries], abs=1e-12)


def test_tie_break_timestamp_desc_then_item():
    h = make_history([sample("b", 5, "same"), sample("a", 5, "same"), sample("c", 9, "same")])
    r = retrieve_key_history(h, "same", 3, "similarity", HashEmbeddingProvider(16))
    assert [s.item_id for s in r.samples] == ["c", "a", "b"]


def test_subset_and_deterministic():
    texts = ["slow plot", "loved the art", "great story", "too long", "nice cover"]
    h = make_history([sample(f"i{n}", n, t) for n, t in enumerate(texts)])
    p = HashEmbeddingProvider(32)
    a = retrieve_key_history(h, "great art", 3, "similarity", p)
    assert a == retrieve_key_history(h, "great art", 3, "similarity", p)
    assert len(set(a.samples)) == 3 and set(a.samples) <= set(h.samples)
    scores = [s for _, s in a.entries]
    assert scores == sorted(scores, reverse=True)


def test_errors():
    with pytest.raises(EmptyHistory):
        retrieve_key_history(UserHistory("u", ()), "q", 2, "recency")
    h = make_history([sample("a", 1, "x")])
    with pytest.raises(ValueError):
        retrieve_key_history(h, "q", 0, "recency")
    with pytest.raises(ValueError):
        retrieve_key_history(h, "q", 1, "bm25")


def test_item_query():
    assert item_query("Title", "desc") == "Title desc"
    assert item_query("Title") == "Title"
