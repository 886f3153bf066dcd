"""Mel decoding: latent injection, length regulation and the feed-forward
Transformer decoder.

Everything here is fully parallel over frames; there is no autoregressive
dependency, so the output at one frame never depends on later frames.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import ModelConfig
from .layers import FFTBlock, lengths_to_mask, sinusoidal_positions


class LatentProjection(nn.Module):
    """Project the low-dimensional latent up to the model width so it can be
    added onto the fused encodings; bias starts at zero so z = 0 is a no-op."""

    def __init__(self, d_z: int, d_model: int):
        super().__init__()
        self.linear = nn.Linear(d_z, d_model)
        nn.init.zeros_(self.linear.bias)

    def forward(self, h: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if h.shape[:-1] != z.shape[:-1]:
            raise ValueError(
                f"latent shape {tuple(z.shape)} does not align with "
                f"encodings {tuple(h.shape)}"
            )
        return h + self.linear(z)


def length_regulate(rows: torch.Tensor, durations: torch.Tensor) -> torch.Tensor:
    """Expand per-phoneme rows to per-frame rows by pure repetition.

    ``rows`` is [T, d], ``durations`` a non-negative integer vector [T] with
    a positive sum; row t appears durations[t] times, in order, and
    zero-duration rows are dropped.
    """
    if durations.dtype not in (torch.int32, torch.int64):
        raise ValueError("durations must be integers")
    if (durations < 0).any():
        raise ValueError("durations must be non-negative")
    if int(durations.sum()) == 0:
        raise ValueError("all durations are zero; nothing to expand")
    return torch.repeat_interleave(rows, durations, dim=0)


def length_regulate_batch(
    rows: torch.Tensor, durations: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched length regulation with right-padding.

    ``rows`` [B, T, d] and ``durations`` [B, T] give ([B, max_frames, d],
    frame_lengths [B]).
    """
    expanded = [length_regulate(rows[i], durations[i]) for i in range(rows.shape[0])]
    lengths = torch.tensor(
        [e.shape[0] for e in expanded], device=rows.device, dtype=torch.long
    )
    out = rows.new_zeros(rows.shape[0], int(lengths.max()), rows.shape[2])
    for i, e in enumerate(expanded):
        out[i, : e.shape[0]] = e
    return out, lengths


class MelDecoder(nn.Module):
    """Feed-forward Transformer decoder mapping frame-rate hidden vectors to
    mel frames via a final linear layer."""

    def __init__(self, cfg: ModelConfig, n_mels: int):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(
            FFTBlock(cfg.d_model, cfg.decoder_heads, cfg.ff_dim,
                     cfg.ff_kernels, cfg.dropout)
            for _ in range(cfg.decoder_layers)
        )
        self.out = nn.Linear(cfg.d_model, n_mels)

    def forward(self, frames: torch.Tensor,
                mask: torch.Tensor | None = None) -> torch.Tensor:
        x = frames
        if self.cfg.use_positions:
            x = x + sinusoidal_positions(
                x.shape[1], x.shape[2], device=x.device, dtype=x.dtype
            )
        for block in self.blocks:
            x = block(x, mask)
        mel = self.out(x)
        if mask is not None:
            mel = mel * mask.unsqueeze(-1)
        return mel


__all__ = [
    "LatentProjection",
    "length_regulate",
    "length_regulate_batch",
    "MelDecoder",
    "lengths_to_mask",
]
