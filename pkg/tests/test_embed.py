import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drp.corpus import ReviewSample, make_history
from drp.embed import (
    HashEmbeddingProvider,
    RemoteEmbeddingProvider,
    StubEmbeddingProvider,
    embed_text,
    normalize,
    profile_embedding,
)
from drp.errors import EmptyHistory, EmptyText, ProviderError, ZeroVector


def hist(texts, user="u"):
    return make_history(ReviewSample(user, f"i{n}", "t", t, n) for n, t in enumerate(texts))


def test_hash_provider_deterministic():
    p = HashEmbeddingProvider(dim=8, seed=3)
    a = embed_text("abc", p)
    assert a.shape == (8,)
    assert np.array_equal(a, embed_text("abc", HashEmbeddingProvider(dim=8, seed=3)))
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-9)
    assert not np.array_equal(a, embed_text("abc", HashEmbeddingProvider(dim=8, seed=4)))


def test_empty_text():
    with pytest.raises(EmptyText):
        embed_text("", HashEmbeddingProvider(8))
    with pytest.raises(EmptyText):
        embed_text("   ", HashEmbeddingProvider(8))


def test_hash_provider_distinct_over_fixture():
    rng = random.Random(0)
    words = ["good", "bad", "plot", "book", "read", "love", "slow", "fast", "cover", "story"]
    texts = set()
    while len(texts) < 100:
        texts.add(" ".join(rng.choice(words) for _ in range(rng.randint(3, 8))))
    p = HashEmbeddingProvider(dim=64)
    vecs = [embed_text(t, p) for t in sorted(texts)]
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            assert not np.array_equal(vecs[i], vecs[j])


def test_punctuation_only_text_still_embeds():
    v = embed_text("!!!", HashEmbeddingProvider(16))
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_profile_single_sample():
    p = HashEmbeddingProvider(16)
    prof = profile_embedding(hist(["only one review"]), p)
    assert np.allclose(prof.vector, normalize(embed_text("only one review", p)), atol=1e-12)


def test_profile_zero_mean():
    stub = StubEmbeddingProvider({"a": [1.0, 2.0, -1.0], "b": [-1.0, -2.0, 1.0]})
    with pytest.raises(ZeroVector):
        profile_embedding(hist(["a", "b"]), stub)


def test_profile_three_stub_vectors():
    stub = StubEmbeddingProvider({"x": [1, 0, 0], "y": [0, 2, 0], "z": [1, 1, 3]})
    prof = profile_embedding(hist(["x", "y", "z"]), stub)
    mean = np.array([2 / 3, 3 / 3, 3 / 3])  # (1+0+1)/3, (0+2+1)/3, (0+0+3)/3
    assert np.allclose(prof.vector, mean / np.sqrt((mean ** 2).sum()), atol=1e-12)
    assert np.linalg.norm(prof.vector) == pytest.approx(1.0, abs=1e-9)


def test_profile_empty_history():
    from drp.corpus import UserHistory

    with pytest.raises(EmptyHistory):
        profile_embedding(UserHistory("u", ()), HashEmbeddingProvider(8))


@settings(max_examples=50, deadline=None)
@given(st.permutations(["one fine day", "slow plot", "great cover art", "too long", "loved it"]))
def test_profile_permutation_invariant(order):
    p = HashEmbeddingProvider(32)
    base = profile_embedding(hist(["one fine day", "slow plot", "great cover art", "too long", "loved it"]), p)
    perm = profile_embedding(hist(list(order)), p)
    assert np.array_equal(base.vector, perm.vector)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=10).filter(lambda v: any(abs(x) > 1e-3 for x in v)),
       st.floats(1e-3, 1e3))
def test_normalize_scale_safety(v, c):
    a, b = normalize(v), normalize(np.asarray(v) * c)
    assert np.argmax(np.abs(a)) == np.argmax(np.abs(b))
    assert np.allclose(a, b, atol=1e-9)


def test_normalize_zero():
    with pytest.raises(ZeroVector):
        normalize([0.0, 0.0])


def test_remote_provider_wire_protocol(monkeypatch):
    import httpx

    seen = {}

    def handler(request: httpx.Request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        body = __import__("json").loads(request.content)
        seen["body"] = body
        data = [{"index": i, "embedding": [float(len(t)), 1.0]} for i, t in enumerate(body["input"])]
        return httpx.Response(200, json={"data": list(reversed(data))})

    monkeypatch.setenv("DRP_API_KEY", "sekrit")
    p = RemoteEmbeddingProvider("http://emb.local/", "e5", 2, transport=httpx.MockTransport(handler))
    out = p.embed_many(["ab", "abcd"])
    assert seen["url"] == "http://emb.local/v1/embeddings"
    assert seen["auth"] == "Bearer sekrit"
    assert seen["body"] == {"model": "e5", "input": ["ab", "abcd"]}
    assert out.tolist() == [[2.0, 1.0], [4.0, 1.0]]


def test_remote_provider_errors():
    import httpx

    p = RemoteEmbeddingProvider("http://x", "m", 2, transport=httpx.MockTransport(lambda r: httpx.Response(500)))
    with pytest.raises(ProviderError):
        p.embed_many(["a"])
    bad = RemoteEmbeddingProvider("http://x", "m", 3,
                                  transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"data": [{"embedding": [1, 2]}]})))
    with pytest.raises(ProviderError):
        bad.embed_many(["a"])
