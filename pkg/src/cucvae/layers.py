"""Shared network blocks: sinusoidal positions, feed-forward Transformer
blocks with convolutional feed-forward layers, width-1 convolution stacks
for the latent parameter networks, and the duration/pitch/energy predictor.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def sinusoidal_positions(length: int, dim: int, device=None, dtype=None) -> torch.Tensor:
    """Standard sinusoidal position table, shape [length, dim]."""
    dtype = dtype or torch.get_default_dtype()
    position = torch.arange(length, device=device, dtype=dtype).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, dim, 2, device=device, dtype=dtype)
        * (-math.log(10000.0) / dim)
    )
    table = torch.zeros(length, dim, device=device, dtype=dtype)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: dim // 2])
    return table


def lengths_to_mask(lengths: torch.Tensor, max_len: int | None = None) -> torch.Tensor:
    """Boolean mask [B, max_len], True on valid positions."""
    if max_len is None:
        max_len = int(lengths.max())
    steps = torch.arange(max_len, device=lengths.device)
    return steps[None, :] < lengths[:, None]


class ConvFeedForward(nn.Module):
    """Two 1-D convolutions with ReLU in between, as the position-wise
    feed-forward of an FFT block."""

    def __init__(self, d_model: int, ff_dim: int, kernels=(9, 1), dropout: float = 0.1):
        super().__init__()
        k1, k2 = kernels
        self.conv1 = nn.Conv1d(d_model, ff_dim, k1, padding=k1 // 2)
        self.conv2 = nn.Conv1d(ff_dim, d_model, k2, padding=k2 // 2)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [B, T, d_model]
        y = self.conv1(x.transpose(1, 2)).relu()
        y = self.conv2(y).transpose(1, 2)
        return self.dropout(y)


class FFTBlock(nn.Module):
    """Self-attention + convolutional feed-forward with residuals and
    post-layer-norm, the building block of encoder and decoder."""

    def __init__(self, d_model: int, heads: int, ff_dim: int,
                 kernels=(9, 1), dropout: float = 0.1):
        super().__init__()
        self.attn = nn.MultiheadAttention(
            d_model, heads, dropout=dropout, batch_first=True
        )
        self.ff = ConvFeedForward(d_model, ff_dim, kernels, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        # mask: [B, T] True on valid positions
        key_padding = None if mask is None else ~mask
        attn_out, _ = self.attn(
            x, x, x, key_padding_mask=key_padding, need_weights=False
        )
        x = self.norm1(x + self.dropout(attn_out))
        x = self.norm2(x + self.ff(x))
        if mask is not None:
            x = x * mask.unsqueeze(-1)
        return x


class ConvStack(nn.Module):
    """Stack of width-1 1-D convolutions (position-wise MLP over a sequence),
    ReLU between layers, final layer zero-initialised so outputs start at 0.
    """

    def __init__(self, in_dim: int, out_dim: int, channels: int, layers: int):
        super().__init__()
        if layers < 1:
            raise ValueError("need at least one layer")
        dims = [in_dim] + [channels] * (layers - 1) + [out_dim]
        self.convs = nn.ModuleList(
            nn.Conv1d(dims[i], dims[i + 1], kernel_size=1) for i in range(layers)
        )
        nn.init.zeros_(self.convs[-1].weight)
        nn.init.zeros_(self.convs[-1].bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [B, T, in_dim] -> [B, T, out_dim]
        y = x.transpose(1, 2)
        for conv in self.convs[:-1]:
            y = conv(y).relu()
        y = self.convs[-1](y)
        return y.transpose(1, 2)


class VariancePredictor(nn.Module):
    """Per-position scalar predictor: two convolutional blocks (conv, ReLU,
    layer norm, dropout) and a final linear layer, zero-initialised."""

    def __init__(self, d_model: int, channels: int = 256, kernel: int = 3,
                 dropout: float = 0.1):
        super().__init__()
        self.conv1 = nn.Conv1d(d_model, channels, kernel, padding=kernel // 2)
        self.norm1 = nn.LayerNorm(channels)
        self.conv2 = nn.Conv1d(channels, channels, kernel, padding=kernel // 2)
        self.norm2 = nn.LayerNorm(channels)
        self.dropout = nn.Dropout(dropout)
        self.out = nn.Linear(channels, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        # x: [B, T, d_model] -> [B, T]
        y = self.conv1(x.transpose(1, 2)).relu().transpose(1, 2)
        y = self.dropout(self.norm1(y))
        y = self.conv2(y.transpose(1, 2)).relu().transpose(1, 2)
        y = self.dropout(self.norm2(y))
        y = self.out(y).squeeze(-1)
        if mask is not None:
            y = y * mask
        return y
