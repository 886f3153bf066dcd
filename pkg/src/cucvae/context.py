"""Cross-utterance sentence pairs and their fixed-size embeddings.

A window of 2L+1 utterance texts yields 2L consecutive pairs; each pair is
rendered with a leading classifier token and a separator at the sentence
boundary and embedded to one d_ctx vector.  The embedder is frozen: no
gradients ever flow into it, and embeddings are precomputed into a cache
that training reads exclusively.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import SENTINEL, UtteranceRecord

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"


@dataclass(frozen=True)
class CrossUtterancePair:
    """Adjacent utterance pair; index is relative to the current utterance,
    so index -1 pairs (u_{i-1}, u_i) and index 0 pairs (u_i, u_{i+1})."""

    left: str
    right: str
    index: int

    def marked_tokens(self) -> list[str]:
        """Token stream with classifier/separator markers; a sentinel side
        contributes zero tokens."""
        return [CLS_TOKEN, *self.left.split(), SEP_TOKEN, *self.right.split()]

    @property
    def is_sentinel_only(self) -> bool:
        return self.left == SENTINEL and self.right == SENTINEL


@dataclass
class ContextEmbeddingSet:
    """The 2L pair embeddings for one utterance, shape [2L, d_ctx]."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise ValueError("context embeddings must be a 2-D matrix")
        if self.vectors.shape[0] % 2 != 0 or self.vectors.shape[0] == 0:
            raise ValueError("row count must be 2L for some L >= 1")
        if not np.isfinite(self.vectors).all():
            raise ValueError("context embeddings contain NaN/Inf")

    @property
    def context_size(self) -> int:
        return self.vectors.shape[0] // 2

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def make_pairs(window: Sequence[str]) -> list[CrossUtterancePair]:
    """Split a 2L+1 utterance window into its 2L adjacent pairs."""
    if len(window) % 2 == 0:
        raise ValueError(f"window length must be odd, got {len(window)}")
    if len(window) < 3:
        raise ValueError("window must span at least 3 utterances")
    half = len(window) // 2
    return [
        CrossUtterancePair(left=window[k], right=window[k + 1], index=k - half)
        for k in range(len(window) - 1)
    ]


class SentencePairEmbedder(Protocol):
    """Read-only mapping from sentence pairs to fixed-size vectors."""

    dim: int

    def embed(self, pairs: Sequence[CrossUtterancePair]) -> np.ndarray:
        """Return one vector per pair, shape [len(pairs), dim]."""
        ...


class HashEmbedder:
    """Deterministic stand-in embedder for tests and offline runs.

    Each pair's marked token sequence is hashed and the digest seeds a fixed
    pseudo-random unit-variance vector, so equal pairs map to equal vectors,
    order matters, and no model download is needed.
    """

    def __init__(self, dim: int = 768):
        self.dim = dim

    def embed(self, pairs: Sequence[CrossUtterancePair]) -> np.ndarray:
        out = np.empty((len(pairs), self.dim), dtype=np.float32)
        for i, pair in enumerate(pairs):
            digest = hashlib.blake2b(
                "\x1f".join(pair.marked_tokens()).encode(), digest_size=8
            ).digest()
            seed = int.from_bytes(digest, "little")
            rng = np.random.Generator(np.random.PCG64(seed))
            out[i] = rng.standard_normal(self.dim, dtype=np.float32)
        return out


class BertEmbedder:
    """Production embedder: a pretrained 12-block, 12-head masked LM; the
    classifier-token output vector of each pair is used as-is.

    The model is loaded lazily, set to eval mode and fully detached from
    autograd; it never contributes trainable parameters.
    """

    def __init__(self, model_name: str = "bert-base-uncased", device: str = "cpu"):
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError(
                "the production embedder needs the 'transformers' package; "
                "install the [bert] extra or use the stub embedder"
            ) from exc
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_name)
            self._model = AutoModel.from_pretrained(model_name).to(device)
        except OSError as exc:
            raise RuntimeError(
                f"could not load pretrained model {model_name!r}; "
                "use the stub embedder for offline runs"
            ) from exc
        self._model.eval()
        for p in self._model.parameters():
            p.requires_grad_(False)
        self._device = device
        self.dim = self._model.config.hidden_size

    def embed(self, pairs: Sequence[CrossUtterancePair]) -> np.ndarray:
        import torch

        batch = self._tokenizer(
            [p.left for p in pairs],
            [p.right for p in pairs],
            padding=True,
            truncation=True,
            return_tensors="pt",
        ).to(self._device)
        with torch.no_grad():
            hidden = self._model(**batch).last_hidden_state
        return hidden[:, 0].cpu().numpy().astype(np.float32)


def build_embedder(kind: str, bert_model: str = "bert-base-uncased",
                   dim: int = 768) -> SentencePairEmbedder:
    if kind == "stub":
        return HashEmbedder(dim)
    if kind == "bert":
        return BertEmbedder(bert_model)
    raise ValueError(f"unknown embedder kind {kind!r}")


def embed_pairs(
    pairs: Sequence[CrossUtterancePair], embedder: SentencePairEmbedder
) -> ContextEmbeddingSet:
    """Embed each pair in order; embedder failures carry the pair index."""
    if not pairs:
        raise ValueError("no pairs to embed")
    try:
        vectors = embedder.embed(pairs)
    except Exception as exc:
        raise RuntimeError(
            f"embedder failed on pair batch of {len(pairs)} "
            f"(indices {[p.index for p in pairs]})"
        ) from exc
    if vectors.shape != (len(pairs), embedder.dim):
        raise RuntimeError(
            f"embedder returned shape {vectors.shape}, "
            f"expected {(len(pairs), embedder.dim)}"
        )
    return ContextEmbeddingSet(vectors=vectors)


def window_texts(record: UtteranceRecord, texts_by_id: dict[str, str]) -> list[str]:
    """Resolve a record's context ids to texts; sentinels become empty."""
    return [
        "" if cid == SENTINEL else texts_by_id[cid] for cid in record.context_ids
    ]


def cache_path(cache_dir, utterance_id: str) -> Path:
    return Path(cache_dir) / f"{utterance_id}.ctx.npy"


def precompute_and_cache(
    records: Sequence[UtteranceRecord],
    embedder: SentencePairEmbedder,
    cache_dir,
) -> list[Path]:
    """Embed every record's context window and persist one float32 matrix
    per utterance id next to the feature files."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    texts = {r.id: r.text for r in records}
    written = []
    for rec in records:
        missing = [
            cid for cid in rec.context_ids
            if cid != SENTINEL and cid not in texts
        ]
        if missing:
            raise ValueError(
                f"utterance {rec.id!r} references neighbors {missing} that "
                "are not in the given record list"
            )
        pairs = make_pairs(window_texts(rec, texts))
        emb = embed_pairs(pairs, embedder)
        path = cache_path(cache_dir, rec.id)
        np.save(path, emb.vectors)
        written.append(path)
    return written


def load_cached(cache_dir, utterance_id: str) -> ContextEmbeddingSet:
    path = cache_path(cache_dir, utterance_id)
    if not path.exists():
        raise FileNotFoundError(f"no cached context embedding for {utterance_id!r}")
    return ContextEmbeddingSet(vectors=np.load(path))


def verify_cache(records: Sequence[UtteranceRecord], cache_dir):
    """Raise if any manifest utterance lacks a cached embedding."""
    missing = [
        r.id for r in records if not cache_path(cache_dir, r.id).exists()
    ]
    if missing:
        raise FileNotFoundError(
            f"context cache at {cache_dir} is missing {len(missing)} "
            f"utterances: {missing[:10]}"
        )
