"""Context pairing and embedding: pair construction from windows, the
deterministic stub embedder, and the write-once cache."""

import numpy as np
import pytest

from cucvae.context import (
    CLS_TOKEN,
    SEP_TOKEN,
    ContextEmbeddingSet,
    CrossUtterancePair,
    HashEmbedder,
    build_embedder,
    cache_path,
    embed_pairs,
    load_cached,
    make_pairs,
    precompute_and_cache,
    verify_cache,
    window_texts,
)
from cucvae.corpus import SENTINEL, UtteranceRecord


class TestPairing:
    def test_window_of_five_gives_four_pairs(self):
        pairs = make_pairs(["a", "b", "c", "d", "e"])
        assert len(pairs) == 4
        assert [(p.left, p.right) for p in pairs] == [
            ("a", "b"), ("b", "c"), ("c", "d"), ("d", "e"),
        ]
        assert [p.index for p in pairs] == [-2, -1, 0, 1]

    def test_window_of_three(self):
        pairs = make_pairs(["prev", "cur", "next"])
        assert len(pairs) == 2
        assert pairs[0].index == -1 and pairs[1].index == 0

    @pytest.mark.parametrize("window", [[], ["only"], ["a", "b"],
                                        ["a", "b", "c", "d"]])
    def test_bad_window_lengths_rejected(self, window):
        with pytest.raises(ValueError):
            make_pairs(window)

    def test_marked_tokens_layout(self):
        pair = CrossUtterancePair("hello there", "good day", -1)
        assert pair.marked_tokens() == [
            CLS_TOKEN, "hello", "there", SEP_TOKEN, "good", "day",
        ]

    def test_sentinel_only_detection(self):
        assert CrossUtterancePair(SENTINEL, SENTINEL, -1).is_sentinel_only
        assert not CrossUtterancePair("x", SENTINEL, 0).is_sentinel_only


class TestStubEmbedder:
    def test_deterministic(self):
        emb = HashEmbedder()
        pairs = make_pairs(["a", "b", "c"])
        assert np.array_equal(emb.embed(pairs), emb.embed(pairs))

    def test_order_within_pair_matters(self):
        emb = HashEmbedder()
        ab = emb.embed([CrossUtterancePair("a", "b", 0)])
        ba = emb.embed([CrossUtterancePair("b", "a", 0)])
        assert not np.allclose(ab, ba)

    def test_vector_depends_on_text_not_position(self):
        emb = HashEmbedder()
        first = emb.embed([CrossUtterancePair("a", "b", -2)])
        second = emb.embed([CrossUtterancePair("a", "b", 1)])
        assert np.array_equal(first, second)

    def test_roughly_standard_normal(self):
        emb = HashEmbedder(dim=768)
        pairs = [CrossUtterancePair(f"u{i}", f"u{i+1}", 0) for i in range(16)]
        vecs = emb.embed(pairs)
        assert vecs.shape == (16, 768)
        assert abs(float(vecs.mean())) < 0.05
        assert abs(float(vecs.std()) - 1.0) < 0.05

    def test_configurable_dimension(self):
        emb = HashEmbedder(dim=32)
        out = embed_pairs(make_pairs(["a", "b", "c"]), emb)
        assert out.vectors.shape == (2, 32)

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            build_embedder("word2vec")


class TestEmbeddingSet:
    def test_rejects_odd_rows(self):
        with pytest.raises(ValueError):
            ContextEmbeddingSet(np.zeros((3, 8), np.float32))

    def test_rejects_nan(self):
        bad = np.zeros((2, 8), np.float32)
        bad[0, 0] = np.nan
        with pytest.raises(ValueError):
            ContextEmbeddingSet(bad)

    def test_context_size(self):
        assert ContextEmbeddingSet(np.zeros((10, 4))).context_size == 5


def make_records():
    return [
        UtteranceRecord("u0", "first line", "s", "u0.wav",
                        (SENTINEL, "u0", "u1")),
        UtteranceRecord("u1", "second line", "s", "u1.wav",
                        ("u0", "u1", SENTINEL)),
    ]


class TestCache:
    def test_precompute_and_load(self, tmp_path):
        records = make_records()
        written = precompute_and_cache(records, HashEmbedder(dim=16), tmp_path)
        assert sorted(p.name for p in written) == ["u0.ctx.npy", "u1.ctx.npy"]
        got = load_cached(tmp_path, "u0")
        assert got.vectors.shape == (2, 16)
        verify_cache(records, tmp_path)  # must not raise

    def test_cache_matches_direct_embedding(self, tmp_path):
        records = make_records()
        emb = HashEmbedder(dim=16)
        precompute_and_cache(records, emb, tmp_path)
        texts = {r.id: r.text for r in records}
        direct = embed_pairs(make_pairs(window_texts(records[0], texts)), emb)
        assert np.array_equal(load_cached(tmp_path, "u0").vectors,
                              direct.vectors)

    def test_missing_entries_reported(self, tmp_path):
        records = make_records()
        precompute_and_cache(records, HashEmbedder(dim=16), tmp_path)
        cache_path(tmp_path, "u1").unlink()
        with pytest.raises(FileNotFoundError, match="u1"):
            verify_cache(records, tmp_path)

    def test_incomplete_record_list_rejected(self, tmp_path):
        records = make_records()
        with pytest.raises(ValueError, match="neighbors"):
            precompute_and_cache(records[:1], HashEmbedder(dim=16), tmp_path)

    def test_load_missing_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_cached(tmp_path, "nope")

    def test_cache_path_layout(self, tmp_path):
        assert cache_path(tmp_path, "abc").name == "abc.ctx.npy"


class TestWindowTexts:
    def test_sentinel_resolution(self):
        records = make_records()
        texts = {r.id: r.text for r in records}
        assert window_texts(records[0], texts) == ["", "first line",
                                                   "second line"]
