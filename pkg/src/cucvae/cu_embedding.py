"""Per-phoneme mixture encodings and their fusion with cross-utterance
context.

The phoneme sequence runs through a Transformer encoder; the speaker
embedding is broadcast-added to every position, giving the pre-fusion
encodings F.  A multi-head attention layer then attends from each phoneme
into the 2L context-pair embeddings, the attended vector is concatenated
with the phoneme's own encoding and projected back down, giving the
post-fusion encodings H.  A duration predictor on H emits per-phoneme
log-durations.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import ModelConfig
from .g2p import INVENTORY, is_silence
from .layers import FFTBlock, VariancePredictor, lengths_to_mask, sinusoidal_positions


class SpeakerTable(nn.Module):
    """Learned speaker embeddings with a stable id -> row lookup."""

    def __init__(self, speaker_ids: list[str], d_model: int):
        super().__init__()
        if not speaker_ids:
            raise ValueError("need at least one speaker")
        self.speaker_ids = tuple(sorted(set(speaker_ids)))
        self._index = {s: i for i, s in enumerate(self.speaker_ids)}
        self.embeddings = nn.Embedding(len(self.speaker_ids), d_model)

    def index_of(self, speaker_id: str) -> int:
        try:
            return self._index[speaker_id]
        except KeyError:
            raise KeyError(
                f"unknown speaker {speaker_id!r}; known: {self.speaker_ids}"
            ) from None

    def forward(self, speaker_idx: torch.Tensor) -> torch.Tensor:
        return self.embeddings(speaker_idx)


class PhonemeEncoder(nn.Module):
    """Transformer encoder over phoneme ids, with optional sinusoidal
    positions (disabled in equivariance tests)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embedding = nn.Embedding(len(INVENTORY), cfg.d_model, padding_idx=0)
        self.blocks = nn.ModuleList(
            FFTBlock(cfg.d_model, cfg.encoder_heads, cfg.ff_dim,
                     cfg.ff_kernels, cfg.dropout)
            for _ in range(cfg.encoder_layers)
        )

    def forward(self, phoneme_ids: torch.Tensor,
                mask: torch.Tensor | None = None) -> torch.Tensor:
        x = self.embedding(phoneme_ids)
        if self.cfg.use_positions:
            x = x + sinusoidal_positions(
                x.shape[1], x.shape[2], device=x.device, dtype=x.dtype
            )
        for block in self.blocks:
            x = block(x, mask)
        return x


class CUEmbedding(nn.Module):
    """Pre-fusion encodings F, post-fusion encodings H and predicted
    log-durations D for a batch of utterances.

    With ``use_context=False`` (every variant except the full model) the
    fusion attention and projection are omitted entirely and H equals F.
    """

    def __init__(self, cfg: ModelConfig, speaker_ids: list[str],
                 use_context: bool = True):
        super().__init__()
        self.cfg = cfg
        self.use_context = use_context
        self.encoder = PhonemeEncoder(cfg)
        self.speakers = SpeakerTable(speaker_ids, cfg.d_model)
        if use_context:
            self.fusion = nn.MultiheadAttention(
                cfg.d_model,
                cfg.fusion_heads,
                kdim=cfg.d_ctx,
                vdim=cfg.d_ctx,
                batch_first=True,
            )
            self.projection = nn.Linear(2 * cfg.d_model, cfg.d_model)
        self.duration_predictor = VariancePredictor(
            cfg.d_model, cfg.predictor_channels, cfg.predictor_kernel, cfg.dropout
        )

    def encode_phonemes(self, phoneme_ids: torch.Tensor, speaker_idx: torch.Tensor,
                        mask: torch.Tensor | None = None) -> torch.Tensor:
        """Mixture encodings F: encoder output plus the speaker embedding
        broadcast over every phoneme position."""
        encoded = self.encoder(phoneme_ids, mask)
        f = encoded + self.speakers(speaker_idx).unsqueeze(1)
        if mask is not None:
            f = f * mask.unsqueeze(-1)
        return f

    def fuse_context(
        self,
        f: torch.Tensor,
        context: torch.Tensor,
        sentinel_mask: torch.Tensor | None = None,
        need_weights: bool = False,
    ):
        """Attend from each phoneme encoding into the context-pair vectors.

        ``context`` is [B, 2L, d_ctx]; ``sentinel_mask`` flags pairs to hide
        from attention (True = masked).  Returns [B, T, d_model] and, on
        request, the per-head attention weights.
        """
        if not self.use_context:
            raise RuntimeError("this model variant was built without context fusion")
        if context.shape[-1] != self.cfg.d_ctx:
            raise ValueError(
                f"context dim {context.shape[-1]} != configured {self.cfg.d_ctx}"
            )
        key_padding = None
        if self.cfg.mask_sentinel_pairs and sentinel_mask is not None:
            key_padding = sentinel_mask
        g, weights = self.fusion(
            f, context, context,
            key_padding_mask=key_padding,
            need_weights=need_weights,
            average_attn_weights=False,
        )
        return (g, weights) if need_weights else (g, None)

    def project_cu(self, g: torch.Tensor, f: torch.Tensor) -> torch.Tensor:
        """Concatenate [g_t, f_t] per phoneme and apply one linear map."""
        if g.shape != f.shape:
            raise ValueError(f"shape mismatch: {tuple(g.shape)} vs {tuple(f.shape)}")
        return self.projection(torch.cat([g, f], dim=-1))

    def predict_durations(self, h: torch.Tensor,
                          mask: torch.Tensor | None = None) -> torch.Tensor:
        """Per-phoneme log-durations (log1p of frame counts)."""
        return self.duration_predictor(h, mask)

    def forward(
        self,
        phoneme_ids: torch.Tensor,
        speaker_idx: torch.Tensor,
        context: torch.Tensor | None = None,
        mask: torch.Tensor | None = None,
        sentinel_mask: torch.Tensor | None = None,
    ):
        """Returns (F, H, log_durations)."""
        f = self.encode_phonemes(phoneme_ids, speaker_idx, mask)
        if self.use_context:
            if context is None:
                raise ValueError("this variant requires context embeddings")
            g, _ = self.fuse_context(f, context, sentinel_mask)
            h = self.project_cu(g, f)
            if mask is not None:
                h = h * mask.unsqueeze(-1)
        else:
            h = f
        log_dur = self.predict_durations(h, mask)
        return f, h, log_dur


def durations_to_frames(log_dur: torch.Tensor, phoneme_ids: torch.Tensor,
                        silence_ids: torch.Tensor) -> torch.Tensor:
    """Round predicted log-durations to integer frame counts.

    Non-silence phonemes get at least one frame; silence may collapse to
    zero frames.
    """
    frames = torch.expm1(log_dur).round().clamp(min=0).long()
    silent = torch.isin(phoneme_ids, silence_ids)
    return torch.where(silent, frames, frames.clamp(min=1))


def silence_id_tensor(device=None) -> torch.Tensor:
    ids = [i for i, p in enumerate(INVENTORY) if is_silence(p)]
    return torch.tensor(ids, device=device)


__all__ = [
    "SpeakerTable",
    "PhonemeEncoder",
    "CUEmbedding",
    "durations_to_frames",
    "silence_id_tensor",
    "lengths_to_mask",
]
