"""Corpus ingestion: context window reconstruction, book location, feature
extraction and the on-disk manifest/feature-file layout.

Input layout expected under ``corpus_dir``::

    metadata.jsonl   one utterance per line: {"id", "document", "speaker",
                     "text", "audio"}; line order within a document is
                     reading order
    books/<doc>.txt  optional raw book text, used to re-order utterances by
                     their located position
    <audio files>    referenced by relative path from metadata

Outputs are a ``manifest.jsonl`` plus one ``.npz`` feature container per
utterance (mel float32, f0 float32, energy float32, durations int32).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import audio
from .config import AudioConfig
from .g2p import PhonemeSequence, g2p

SENTINEL = ""  # context slot beyond a document boundary


class RawUtterance(NamedTuple):
    id: str
    text: str
    speaker_id: str
    audio_path: str


@dataclass(frozen=True)
class UtteranceRecord:
    """One utterance plus the ids of its 2L+1 context window."""

    id: str
    text: str
    speaker_id: str
    audio_path: str
    context_ids: tuple[str, ...]
    feature_path: str = ""

    def __post_init__(self):
        if len(self.context_ids) % 2 == 0:
            raise ValueError("context_ids must have odd length 2L+1")
        center = self.context_ids[len(self.context_ids) // 2]
        if center != self.id:
            raise ValueError(
                f"center of context window is {center!r}, expected {self.id!r}"
            )
        if not self.text.strip():
            raise ValueError(f"utterance {self.id!r} has empty text")

    @property
    def context_size(self) -> int:
        return len(self.context_ids) // 2


@dataclass
class AcousticFeatures:
    """Per-utterance acoustic targets; sum(durations) == mel frame count."""

    mel: np.ndarray         # [num_frames, n_mels] float32
    f0: np.ndarray          # [num_frames] float32, 0 = unvoiced
    energy: np.ndarray      # [num_frames] float32
    durations: np.ndarray   # [T] int32 frame counts

    def __post_init__(self):
        self.mel = np.asarray(self.mel, dtype=np.float32)
        self.f0 = np.asarray(self.f0, dtype=np.float32)
        self.energy = np.asarray(self.energy, dtype=np.float32)
        self.durations = np.asarray(self.durations, dtype=np.int32)
        n = self.mel.shape[0]
        if self.f0.shape != (n,) or self.energy.shape != (n,):
            raise ValueError("f0/energy length must match mel frame count")
        if int(self.durations.sum()) != n:
            raise ValueError(
                f"durations sum to {int(self.durations.sum())}, "
                f"expected {n} frames"
            )
        if (self.durations < 0).any():
            raise ValueError("durations must be non-negative")

    @property
    def num_frames(self) -> int:
        return self.mel.shape[0]


def build_context_windows(
    documents: dict[str, Sequence[RawUtterance]], context_size: int
) -> list[UtteranceRecord]:
    """Attach an ordered 2L+1 context-id window to every utterance.

    Windows never cross document boundaries; positions past an edge hold the
    sentinel.  Utterance ids must be unique corpus-wide because they name
    feature and cache files.
    """
    if context_size < 1:
        raise ValueError("context_size must be >= 1")
    records = []
    seen: set[str] = set()
    for doc_id, utts in documents.items():
        for u in utts:
            if u.id in seen:
                raise ValueError(
                    f"duplicate utterance id {u.id!r} (document {doc_id!r})"
                )
            seen.add(u.id)
        ids = [u.id for u in utts]
        for pos, u in enumerate(utts):
            window = []
            for off in range(-context_size, context_size + 1):
                k = pos + off
                window.append(ids[k] if 0 <= k < len(ids) else SENTINEL)
            records.append(
                UtteranceRecord(
                    id=u.id,
                    text=u.text,
                    speaker_id=u.speaker_id,
                    audio_path=u.audio_path,
                    context_ids=tuple(window),
                )
            )
    return records


def _normalize_for_match(text: str) -> str:
    return " ".join(re.sub(r"[^a-z0-9']+", " ", text.lower()).split())


def levenshtein(a: str, b: str) -> int:
    """Plain edit distance (unit insert/delete/substitute costs)."""
    la, lb = len(a), len(b)
    if la == 0 or lb == 0:
        return max(la, lb)
    b_codes = np.frombuffer(b.encode("utf-32-le"), np.uint32)
    offsets = np.arange(lb + 1, dtype=np.int64)
    prev = offsets.copy()
    cur = np.empty(lb + 1, dtype=np.int64)
    for i in range(1, la + 1):
        cost = (b_codes != ord(a[i - 1])).astype(np.int64)
        cur[0] = i
        np.minimum(prev[1:] + 1, prev[:-1] + cost, out=cur[1:])
        # fold in insertions: cur[j] = min_{k<=j} cur[k] + (j - k)
        cur -= offsets
        np.minimum.accumulate(cur, out=cur)
        cur += offsets
        prev, cur = cur, prev
    return int(prev[-1])


def edit_similarity(a: str, b: str) -> float:
    """1 - levenshtein(a, b) / max(len); 1.0 for two empty strings."""
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def locate_in_book(
    transcript: str, book_text: str, threshold: float = 0.85
) -> tuple[int, int] | None:
    """Character span of the best fuzzy match of ``transcript`` in
    ``book_text``, or ``None`` when nothing reaches ``threshold``.

    Matching is case- and punctuation-insensitive: both sides are normalized
    and compared with normalized edit similarity over word windows whose
    length is within 2 words of the transcript's.
    """
    if not book_text:
        raise ValueError("book_text must be non-empty")
    target = _normalize_for_match(transcript)
    if not target:
        return None
    words = []
    for m in re.finditer(r"\S+", book_text):
        norm = _normalize_for_match(m.group(0))
        if not norm:
            continue
        # trim offsets to the word's alphanumeric core so exact matches
        # return exact spans
        token = m.group(0)
        left = 0
        while left < len(token) and not token[left].isalnum():
            left += 1
        right = len(token)
        while right > left and not token[right - 1].isalnum():
            right -= 1
        words.append((m.start() + left, m.start() + right, norm))
    if not words:
        return None
    n_target = len(target.split())
    best_score, best_span = -1.0, None
    for start in range(len(words)):
        for width in range(max(1, n_target - 2), n_target + 3):
            if start + width > len(words):
                break
            window = " ".join(w for _, _, w in words[start : start + width])
            score = edit_similarity(window, target)
            if score > best_score:
                best_score = score
                best_span = (words[start][0], words[start + width - 1][1])
    if best_score >= threshold:
        return best_span
    return None


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights``.

    Floors the exact shares, then hands remaining units to the largest
    fractional remainders (ties broken by position).  All-zero weights fall
    back to a uniform split.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if (weights < 0).any():
        raise ValueError("weights must be non-negative")
    if weights.sum() <= 0:
        weights = np.ones_like(weights)
    shares = weights / weights.sum() * total
    out = np.floor(shares).astype(np.int64)
    remainder = total - int(out.sum())
    if remainder > 0:
        frac = shares - out
        order = np.lexsort((np.arange(len(frac)), -frac))
        out[order[:remainder]] += 1
    return out


def durations_from_alignment(
    alignment: Sequence[tuple[str, float, float]],
    n_phonemes: int,
    n_frames: int,
    cfg: AudioConfig,
) -> np.ndarray:
    """Frame durations from (phone, start_sec, end_sec) rows; the row count
    must equal the phoneme count."""
    if len(alignment) != n_phonemes:
        raise ValueError(
            f"alignment has {len(alignment)} phones but the phoneme "
            f"sequence has {n_phonemes}"
        )
    spans = np.array([max(0.0, e - s) for _, s, e in alignment])
    spans = spans * cfg.sample_rate / cfg.hop_length
    return largest_remainder(spans, n_frames).astype(np.int32)


def extract_features(
    wav: np.ndarray,
    phonemes: PhonemeSequence,
    cfg: AudioConfig,
    alignment: Sequence[tuple[str, float, float]] | None = None,
) -> AcousticFeatures:
    """Mel, F0, energy and per-phoneme frame durations for one utterance.

    Without an alignment the frames are split uniformly over the phonemes
    (toy mode); either way largest-remainder rounding guarantees
    ``sum(durations) == num_frames``.
    """
    mel = audio.mel_spectrogram(wav, cfg)
    f0 = audio.track_f0(wav, cfg)
    energy = audio.frame_energy(wav, cfg)
    n_frames = mel.shape[0]
    if alignment is None:
        durations = largest_remainder(
            np.ones(len(phonemes)), n_frames
        ).astype(np.int32)
    else:
        durations = durations_from_alignment(
            alignment, len(phonemes), n_frames, cfg
        )
    return AcousticFeatures(mel=mel, f0=f0, energy=energy, durations=durations)


# ---------------------------------------------------------------------------
# On-disk formats


def save_features(path, feats: AcousticFeatures):
    np.savez(
        path,
        mel=feats.mel,
        f0=feats.f0,
        energy=feats.energy,
        durations=feats.durations,
    )


def load_features(path) -> AcousticFeatures:
    with np.load(path) as z:
        return AcousticFeatures(
            mel=z["mel"], f0=z["f0"], energy=z["energy"], durations=z["durations"]
        )


def write_manifest(records: Sequence[UtteranceRecord], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({
                "id": r.id,
                "text": r.text,
                "speaker_id": r.speaker_id,
                "audio_path": r.audio_path,
                "context_ids": list(r.context_ids),
                "feature_path": r.feature_path,
            }) + "\n")


def read_manifest(path) -> list[UtteranceRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            records.append(UtteranceRecord(
                id=d["id"],
                text=d["text"],
                speaker_id=d["speaker_id"],
                audio_path=d["audio_path"],
                context_ids=tuple(d["context_ids"]),
                feature_path=d.get("feature_path", ""),
            ))
    return records


def read_corpus_metadata(corpus_dir) -> dict[str, list[RawUtterance]]:
    """Parse ``metadata.jsonl`` into per-document utterance lists, file order
    preserved."""
    corpus_dir = Path(corpus_dir)
    meta = corpus_dir / "metadata.jsonl"
    if not meta.exists():
        raise FileNotFoundError(f"no metadata.jsonl under {corpus_dir}")
    documents: dict[str, list[RawUtterance]] = {}
    with open(meta) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            documents.setdefault(d["document"], []).append(RawUtterance(
                id=d["id"],
                text=d["text"],
                speaker_id=d["speaker"],
                audio_path=str(corpus_dir / d["audio"]),
            ))
    return documents


def order_by_book(
    documents: dict[str, list[RawUtterance]],
    corpus_dir,
    threshold: float = 0.85,
) -> dict[str, list[RawUtterance]]:
    """Re-order each document's utterances by their located book position.

    Documents without a ``books/<doc>.txt`` file keep metadata order, as do
    utterances that cannot be located (they stay behind the located ones in
    their original relative order).
    """
    corpus_dir = Path(corpus_dir)
    ordered = {}
    for doc_id, utts in documents.items():
        book = corpus_dir / "books" / f"{doc_id}.txt"
        if not book.exists():
            ordered[doc_id] = utts
            continue
        text = book.read_text()
        located, missing = [], []
        for u in utts:
            span = locate_in_book(u.text, text, threshold)
            if span is None:
                missing.append(u)
            else:
                located.append((span[0], u))
        located.sort(key=lambda p: p[0])
        ordered[doc_id] = [u for _, u in located] + missing
    return ordered


def read_alignment_file(path) -> list[tuple[str, float, float]]:
    """Parse a forced-aligner interchange file: tab- or space-separated
    ``phone start_sec end_sec`` rows, ``#`` comments allowed."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"malformed alignment row {line!r} in {path}")
            rows.append((parts[0], float(parts[1]), float(parts[2])))
    return rows


@dataclass
class PreprocessSummary:
    n_ok: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)


def preprocess_corpus(
    corpus_dir,
    out_dir,
    context_size: int,
    cfg: AudioConfig,
    aligner_dir=None,
    use_book_order: bool = False,
    match_threshold: float = 0.85,
    word_boundary_silence: bool = False,
) -> tuple[Path, PreprocessSummary]:
    """Run the full ingestion pipeline and write manifest + feature files.

    Returns the manifest path and a summary naming any failed utterances.
    """
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)

    documents = read_corpus_metadata(corpus_dir)
    if use_book_order:
        documents = order_by_book(documents, corpus_dir, match_threshold)
    records = build_context_windows(documents, context_size)

    summary = PreprocessSummary()
    kept = []
    for rec in records:
        try:
            phonemes = g2p(rec.text, word_boundary_silence)
            wav = audio.load_wav(rec.audio_path, cfg.sample_rate)
            alignment = None
            if aligner_dir is not None:
                align_path = Path(aligner_dir) / f"{rec.id}.tsv"
                if align_path.exists():
                    alignment = read_alignment_file(align_path)
            feats = extract_features(wav, phonemes, cfg, alignment)
            fpath = feat_dir / f"{rec.id}.npz"
            save_features(fpath, feats)
            kept.append(replace(rec, feature_path=str(fpath)))
            summary.n_ok += 1
        except Exception as exc:  # noqa: BLE001 - per-utterance isolation
            summary.failures.append((rec.id, str(exc)))
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(kept, manifest_path)
    return manifest_path, summary
