"""Checkpoint-backed synthesis sessions.

A session owns a loaded acoustic model, the sentence-pair embedder for
context conditioning, and a vocoder. It turns raw text (plus neighbor
texts for the cross-utterance variant) into waveforms, and runs the
posterior-mean reconstruction path used by the objective metrics.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .context import ContextEmbeddingSet, build_embedder, embed_pairs, make_pairs
from .corpus import AcousticFeatures, UtteranceRecord, load_features
from .g2p import PhonemeSequence, g2p
from .training import load_checkpoint
from .vocoder import build_vocoder


@dataclass
class SynthesisResult:
    wav: np.ndarray
    mel: np.ndarray
    durations: np.ndarray       # frames per phoneme
    phonemes: PhonemeSequence
    sample_rate: int


class SynthesisSession:
    """Loads a checkpoint once and synthesizes many utterances from it."""

    def __init__(self, checkpoint_path: str | Path,
                 vocoder_command: str | None = None,
                 allow_fallback_vocoder: bool = True):
        self.model, self.config, self._payload = load_checkpoint(checkpoint_path)
        self.model.eval()
        self.vocoder = build_vocoder(
            self.config.audio, command=vocoder_command,
            allow_fallback=allow_fallback_vocoder,
        )
        self._embedder = None

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def speaker_ids(self) -> list[str]:
        return list(self._payload["speaker_ids"])

    def _context_matrix(self, text: str,
                        context_texts: list[str] | None) -> torch.Tensor | None:
        """Embed the 2L neighbor texts around ``text``; sentinels allowed
        as empty strings."""
        if not self.config.uses_context:
            return None
        L = self.config.context_size
        if context_texts is None:
            raise ValueError(
                f"variant {self.variant!r} conditions on cross-utterance "
                f"context; pass {2 * L} neighbor texts (empty string for a "
                "missing slot) via --context"
            )
        if len(context_texts) != 2 * L:
            raise ValueError(
                f"expected {2 * L} neighbor texts "
                f"({L} before and {L} after), got {len(context_texts)}"
            )
        if self._embedder is None:
            ccfg = self.config.context
            self._embedder = build_embedder(
                ccfg.embedder, ccfg.bert_model, dim=self.config.model.d_ctx
            )
        window = [*context_texts[:L], text, *context_texts[L:]]
        pairs = make_pairs(window)
        emb: ContextEmbeddingSet = embed_pairs(pairs, self._embedder)
        return torch.from_numpy(emb.vectors)

    def synthesize_text(
        self,
        text: str,
        speaker_id: str | None = None,
        context_texts: list[str] | None = None,
        mode: str = "sample",
        temperature: float = 1.0,
        standard_gaussian: bool = False,
        seed: int | None = None,
        generator: torch.Generator | None = None,
    ) -> SynthesisResult:
        seq = g2p(text, self.config.data.word_boundary_silence)
        ids = torch.tensor(seq.ids(), dtype=torch.long)
        speakers = self.speaker_ids
        speaker_id = speaker_id if speaker_id is not None else speakers[0]
        spk = self.model.speaker_index(speaker_id)
        context = self._context_matrix(text, context_texts)
        if generator is None and seed is not None:
            generator = torch.Generator().manual_seed(seed)
        out = self.model.synthesize(
            ids, spk, context=context, mode=mode, temperature=temperature,
            standard_gaussian=standard_gaussian, generator=generator,
        )
        mel = out.mel.numpy().astype(np.float32)
        wav = self.vocoder.synthesize(mel)
        return SynthesisResult(
            wav=wav, mel=mel,
            durations=out.durations.numpy().astype(np.int64),
            phonemes=seq, sample_rate=self.config.audio.sample_rate,
        )

    def reconstruct_utterance(
        self,
        record: UtteranceRecord,
        features: AcousticFeatures | None = None,
        context_texts: list[str] | None = None,
    ) -> SynthesisResult:
        """Rebuild a corpus utterance from its reference mel through the
        posterior, with ground-truth durations."""
        feats = features if features is not None else load_features(record.feature_path)
        seq = g2p(record.text, self.config.data.word_boundary_silence)
        if len(seq) != len(feats.durations):
            raise ValueError(
                f"utterance {record.id}: transcript/duration length mismatch"
            )
        ids = torch.tensor(seq.ids(), dtype=torch.long)
        spk = self.model.speaker_index(record.speaker_id)
        context = self._context_matrix(record.text, context_texts)
        out = self.model.reconstruct(
            ids, spk,
            mel_ref=torch.from_numpy(feats.mel.astype(np.float32)),
            durations=torch.from_numpy(feats.durations.astype(np.int64)),
            context=context,
        )
        mel = out.mel.numpy().astype(np.float32)
        wav = self.vocoder.synthesize(mel)
        return SynthesisResult(
            wav=wav, mel=mel,
            durations=feats.durations.astype(np.int64),
            phonemes=seq, sample_rate=self.config.audio.sample_rate,
        )


def neighbor_texts_from_record(
    record: UtteranceRecord, texts_by_id: dict[str, str]
) -> list[str]:
    """The 2L neighbor texts of a manifest record, sentinels as empty."""
    L = record.context_size
    window = [
        "" if cid == "" else texts_by_id[cid] for cid in record.context_ids
    ]
    return window[:L] + window[L + 1:]
