"""Utterance-specific prior, conditional posterior and the hierarchical
reparameterised sampling chain.

The prior network maps the fused encodings H and log-durations D to
per-phoneme Gaussian parameters (mu_p, sigma_p); the posterior network maps
duration-pooled reference mel frames to (mu, sigma).  Sampling composes

    z_p = mu_p + sigma_p * eps,   eps ~ N(0, I)
    z   = mu   + sigma   * z_p

so the marginal of z is N(mu + sigma*mu_p, (sigma*sigma_p)^2), and both KL
regularisers are closed-form diagonal-Gaussian divergences.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .config import ModelConfig
from .layers import ConvStack


@dataclass
class LatentParams:
    """Diagonal Gaussian over per-phoneme latents; variance is stored as
    log-variance and exponentiated on read."""

    mean: torch.Tensor      # [..., T, d_z]
    logvar: torch.Tensor    # [..., T, d_z]

    def __post_init__(self):
        if self.mean.shape != self.logvar.shape:
            raise ValueError("mean and logvar must share a shape")

    @property
    def sigma(self) -> torch.Tensor:
        return torch.exp(0.5 * self.logvar)

    @property
    def var(self) -> torch.Tensor:
        return torch.exp(self.logvar)


@dataclass
class LatentSample:
    """A latent draw plus the standard-normal noise that produced it, kept
    for reproducibility."""

    z: torch.Tensor
    epsilon: torch.Tensor


def _check_positive_sigma(params: LatentParams, name: str):
    if not torch.isfinite(params.logvar).all():
        raise ValueError(f"{name} log-variance contains non-finite entries")


def sample_prior(
    params_p: LatentParams,
    epsilon: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> LatentSample:
    """z_p = mu_p + sigma_p * eps with eps standard normal (or supplied)."""
    _check_positive_sigma(params_p, "prior")
    if epsilon is None:
        epsilon = torch.randn(
            params_p.mean.shape,
            generator=generator,
            device=params_p.mean.device,
            dtype=params_p.mean.dtype,
        )
    z_p = params_p.mean + params_p.sigma * epsilon
    return LatentSample(z=z_p, epsilon=epsilon)


def sample_posterior(params: LatentParams, z_p: LatentSample) -> LatentSample:
    """z = mu + sigma * z_p, the conditional-posterior reparameterisation."""
    _check_positive_sigma(params, "posterior")
    z = params.mean + params.sigma * z_p.z
    return LatentSample(z=z, epsilon=z_p.epsilon)


def gaussian_kl(mean1, logvar1, mean2, logvar2) -> torch.Tensor:
    """Elementwise KL(N(mean1, e^logvar1) || N(mean2, e^logvar2))."""
    return 0.5 * (
        logvar2
        - logvar1
        + (torch.exp(logvar1) + (mean1 - mean2) ** 2) * torch.exp(-logvar2)
        - 1.0
    )


def kl_posterior_prior(params: LatentParams, params_p: LatentParams) -> torch.Tensor:
    """KL between the marginal of z (through both reparameterisations) and
    the utterance-specific prior, summed over latent dims: [..., T].

    The marginal of z is N(mu + sigma*mu_p, (sigma*sigma_p)^2).
    """
    _check_positive_sigma(params, "posterior")
    _check_positive_sigma(params_p, "prior")
    eff_mean = params.mean + params.sigma * params_p.mean
    eff_logvar = params.logvar + params_p.logvar
    kl = gaussian_kl(eff_mean, eff_logvar, params_p.mean, params_p.logvar)
    return kl.sum(dim=-1)


def kl_prior_standard(params_p: LatentParams) -> torch.Tensor:
    """KL(N(mu_p, sigma_p^2) || N(0, I)) summed over latent dims: [..., T]."""
    _check_positive_sigma(params_p, "prior")
    kl = 0.5 * (
        params_p.mean**2 + params_p.var - 1.0 - params_p.logvar
    )
    return kl.sum(dim=-1)


def inference_sample(
    params_p: LatentParams,
    mode: str = "sample",
    temperature: float = 1.0,
    standard_gaussian: bool = False,
    epsilon: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> LatentSample:
    """Draw the inference-time latent.

    ``mode="sample"`` draws z = mu_p + tau * sigma_p * eps from the learned
    prior; ``mode="mean"`` returns mu_p deterministically.  The
    ``standard_gaussian`` compatibility flag ignores the learned prior and
    draws z ~ N(0, tau^2) instead.
    """
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    if mode not in ("sample", "mean"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    _check_positive_sigma(params_p, "prior")
    if epsilon is None:
        epsilon = torch.randn(
            params_p.mean.shape,
            generator=generator,
            device=params_p.mean.device,
            dtype=params_p.mean.dtype,
        )
    if standard_gaussian:
        z = temperature * epsilon if mode == "sample" else torch.zeros_like(epsilon)
    elif mode == "mean":
        z = params_p.mean.clone()
    else:
        z = params_p.mean + temperature * params_p.sigma * epsilon
    return LatentSample(z=z, epsilon=epsilon)


def segment_average(
    frames: torch.Tensor, durations: torch.Tensor
) -> torch.Tensor:
    """Average frame rows into per-phoneme rows by duration spans.

    ``frames`` is [B, F, C] and ``durations`` [B, T] with per-sample frame
    sums <= F (padding frames beyond the sum are ignored).  Zero-duration
    phonemes yield zero vectors.
    """
    if durations.dtype not in (torch.int32, torch.int64):
        raise ValueError("durations must be integer frame counts")
    b, _, channels = frames.shape
    t = durations.shape[1]
    out = frames.new_zeros(b, t, channels)
    for i in range(b):
        total = int(durations[i].sum())
        if total > frames.shape[1]:
            raise ValueError(
                f"durations sum to {total} frames but only {frames.shape[1]} given"
            )
        index = torch.repeat_interleave(
            torch.arange(t, device=frames.device), durations[i]
        )
        out[i].index_add_(0, index, frames[i, :total])
    counts = durations.clamp(min=1).unsqueeze(-1).to(frames.dtype)
    out = out / counts
    return out * (durations > 0).unsqueeze(-1).to(frames.dtype)


class PriorNetwork(nn.Module):
    """Utterance-specific prior q(z_p | D, H): a width-1 convolution stack
    over [H_t ; D_t] emitting per-phoneme mean and log-variance."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.net = ConvStack(
            cfg.d_model + 1, 2 * cfg.d_z, cfg.vae_channels, cfg.vae_layers
        )

    def forward(self, h: torch.Tensor, log_dur: torch.Tensor) -> LatentParams:
        x = torch.cat([h, log_dur.unsqueeze(-1)], dim=-1)
        stats = self.net(x)
        mean, logvar = stats.chunk(2, dim=-1)
        c = self.cfg.logvar_clamp
        return LatentParams(mean=mean, logvar=logvar.clamp(-c, c))


class PosteriorNetwork(nn.Module):
    """Fine-grained posterior from duration-pooled reference mel frames."""

    def __init__(self, cfg: ModelConfig, n_mels: int):
        super().__init__()
        self.cfg = cfg
        self.net = ConvStack(n_mels, 2 * cfg.d_z, cfg.vae_channels, cfg.vae_layers)

    def forward(self, mel: torch.Tensor, durations: torch.Tensor) -> LatentParams:
        pooled = segment_average(mel, durations)
        stats = self.net(pooled)
        mean, logvar = stats.chunk(2, dim=-1)
        c = self.cfg.logvar_clamp
        return LatentParams(mean=mean, logvar=logvar.clamp(-c, c))


class GlobalPosteriorNetwork(nn.Module):
    """Utterance-level posterior: one latent per utterance, inferred from
    the per-channel mean and standard deviation of the mel frames."""

    def __init__(self, cfg: ModelConfig, n_mels: int):
        super().__init__()
        self.cfg = cfg
        layers = []
        dims = [2 * n_mels] + [cfg.vae_channels] * (cfg.vae_layers - 1) \
            + [2 * cfg.d_z]
        for i in range(len(dims) - 1):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                layers.append(nn.ReLU())
        nn.init.zeros_(layers[-1].weight)
        nn.init.zeros_(layers[-1].bias)
        self.net = nn.Sequential(*layers)

    def forward(self, mel: torch.Tensor, frame_mask: torch.Tensor) -> LatentParams:
        keep = frame_mask.unsqueeze(-1).to(mel.dtype)
        denom = frame_mask.sum(dim=1, keepdim=True).clamp(min=1).to(mel.dtype)
        mean_frame = (mel * keep).sum(dim=1) / denom
        sq = (mel.pow(2) * keep).sum(dim=1) / denom
        std_frame = (sq - mean_frame.pow(2)).clamp(min=0).sqrt()
        pooled = torch.cat([mean_frame, std_frame], dim=-1)
        stats = self.net(pooled).unsqueeze(1)  # [B, 1, 2*d_z]
        mean, logvar = stats.chunk(2, dim=-1)
        c = self.cfg.logvar_clamp
        return LatentParams(mean=mean, logvar=logvar.clamp(-c, c))
