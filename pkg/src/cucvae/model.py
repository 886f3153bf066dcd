"""The end-to-end acoustic model and its ablation variants.

Variants select which prosody machinery sits between the fused encodings
and the decoder:

* ``baseline``          pitch/energy predictors, no latent variable
* ``global_vae``        one utterance-level latent, standard-normal prior
* ``fine_grained_vae``  per-phoneme latents, standard-normal prior
* ``cvae``              per-phoneme latents, conditional prior on (H, D),
                        no cross-utterance context
* ``cuc_vae``           full model: context fusion plus conditional prior

Pitch and energy predictors exist only in the baseline; every VAE variant
replaces them with its latent path.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .config import RunConfig
from .cu_embedding import CUEmbedding, durations_to_frames, silence_id_tensor
from .decoder import LatentProjection, MelDecoder, length_regulate_batch, lengths_to_mask
from .layers import VariancePredictor
from .vae import (
    GlobalPosteriorNetwork,
    LatentParams,
    PosteriorNetwork,
    PriorNetwork,
    inference_sample,
    kl_posterior_prior,
    kl_prior_standard,
    sample_posterior,
    sample_prior,
)


@dataclass
class TrainForward:
    """Everything the loss needs from one training forward pass."""

    mel_pred: torch.Tensor            # [B, F, n_mels]
    log_dur_pred: torch.Tensor        # [B, T]
    kl_post_seq: torch.Tensor | None  # [B, T] or [B, 1] (global); None for baseline
    kl_prior_seq: torch.Tensor | None
    pitch_pred: torch.Tensor | None   # [B, T], baseline only
    energy_pred: torch.Tensor | None


@dataclass
class SynthesisForward:
    mel: torch.Tensor        # [F, n_mels]
    durations: torch.Tensor  # [T] int
    log_dur: torch.Tensor    # [T]
    z: torch.Tensor | None   # [T, d_z] / [1, d_z]
    prior: LatentParams | None


class AcousticModel(nn.Module):
    def __init__(self, config: RunConfig, speaker_ids: list[str]):
        super().__init__()
        self.config = config
        self.variant = config.variant
        mcfg = config.model
        n_mels = config.audio.n_mels

        self.cu_embedding = CUEmbedding(
            mcfg, speaker_ids, use_context=config.uses_context
        )
        if self.variant in ("fine_grained_vae", "cvae", "cuc_vae"):
            self.posterior = PosteriorNetwork(mcfg, n_mels)
        if self.variant == "global_vae":
            self.posterior = GlobalPosteriorNetwork(mcfg, n_mels)
        if config.uses_conditional_prior:
            self.prior = PriorNetwork(mcfg)
        if config.uses_vae:
            self.latent_proj = LatentProjection(mcfg.d_z, mcfg.d_model)
        else:
            self.pitch_predictor = VariancePredictor(
                mcfg.d_model, mcfg.predictor_channels,
                mcfg.predictor_kernel, mcfg.dropout,
            )
            self.energy_predictor = VariancePredictor(
                mcfg.d_model, mcfg.predictor_channels,
                mcfg.predictor_kernel, mcfg.dropout,
            )
            self.pitch_proj = nn.Linear(1, mcfg.d_model)
            self.energy_proj = nn.Linear(1, mcfg.d_model)
        self.decoder = MelDecoder(mcfg, n_mels)
        self.register_buffer(
            "silence_ids", silence_id_tensor(), persistent=False
        )

    # -- training ----------------------------------------------------------

    def forward_train(self, batch: dict,
                      generator: torch.Generator | None = None) -> TrainForward:
        """Teacher-forced pass: length regulation uses ground-truth
        durations so predicted frames align with the reference mel."""
        ph_mask = lengths_to_mask(batch["phoneme_lengths"],
                                  batch["phoneme_ids"].shape[1])
        f, h, log_dur_pred = self.cu_embedding(
            batch["phoneme_ids"],
            batch["speaker_idx"],
            context=batch.get("context"),
            mask=ph_mask,
            sentinel_mask=batch.get("sentinel_mask"),
        )

        kl_post_seq = kl_prior_seq = None
        pitch_pred = energy_pred = None
        durations = batch["durations"]

        if self.variant == "baseline":
            pitch_pred = self.pitch_predictor(h, ph_mask)
            energy_pred = self.energy_predictor(h, ph_mask)
            h = (
                h
                + self.pitch_proj(batch["pitch_target"].unsqueeze(-1))
                + self.energy_proj(batch["energy_target"].unsqueeze(-1))
            )
        elif self.variant == "global_vae":
            frame_mask = lengths_to_mask(batch["frame_lengths"],
                                         batch["mel"].shape[1])
            post = self.posterior(batch["mel"], frame_mask)
            z = sample_prior(post, generator=generator)
            kl_post_seq = kl_prior_standard(post)          # [B, 1]
            z_seq = z.z.expand(-1, h.shape[1], -1)
            h = self.latent_proj(h, z_seq)
        elif self.variant == "fine_grained_vae":
            post = self.posterior(batch["mel"], durations)
            z = sample_prior(post, generator=generator)
            kl_post_seq = kl_prior_standard(post)          # [B, T]
            h = self.latent_proj(h, z.z)
        else:  # cvae, cuc_vae
            prior = self.prior(h, batch["log_dur_target"])
            post = self.posterior(batch["mel"], durations)
            z_p = sample_prior(prior, generator=generator)
            z = sample_posterior(post, z_p)
            kl_post_seq = kl_posterior_prior(post, prior)  # [B, T]
            kl_prior_seq = kl_prior_standard(prior)        # [B, T]
            h = self.latent_proj(h, z.z)

        if kl_post_seq is not None and kl_post_seq.shape == ph_mask.shape:
            kl_post_seq = kl_post_seq * ph_mask
        if kl_prior_seq is not None:
            kl_prior_seq = kl_prior_seq * ph_mask

        frames, frame_lengths = length_regulate_batch(h, durations)
        frame_mask = lengths_to_mask(frame_lengths, frames.shape[1])
        mel_pred = self.decoder(frames, frame_mask)
        return TrainForward(
            mel_pred=mel_pred,
            log_dur_pred=log_dur_pred,
            kl_post_seq=kl_post_seq,
            kl_prior_seq=kl_prior_seq,
            pitch_pred=pitch_pred,
            energy_pred=energy_pred,
        )

    # -- inference ---------------------------------------------------------

    def _standard_prior(self, h: torch.Tensor) -> LatentParams:
        shape = (*h.shape[:-1], self.config.model.d_z)
        zeros = h.new_zeros(shape)
        return LatentParams(mean=zeros, logvar=torch.zeros_like(zeros))

    @torch.no_grad()
    def synthesize(
        self,
        phoneme_ids: torch.Tensor,
        speaker_idx: int,
        context: torch.Tensor | None = None,
        mode: str = "sample",
        temperature: float = 1.0,
        standard_gaussian: bool = False,
        durations: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> SynthesisForward:
        """Synthesize one utterance; durations come from the predictor
        unless overridden."""
        ph = phoneme_ids.unsqueeze(0)
        spk = torch.tensor([speaker_idx], device=ph.device)
        ctx = None if context is None else context.unsqueeze(0)
        f, h, log_dur = self.cu_embedding(ph, spk, context=ctx)
        if durations is None:
            durations = durations_to_frames(
                log_dur, ph, self.silence_ids
            ).squeeze(0)
        durations = durations.to(torch.long)

        z_out = prior = None
        if self.variant == "baseline":
            pitch = self.pitch_predictor(h)
            energy = self.energy_predictor(h)
            h = h + self.pitch_proj(pitch.unsqueeze(-1)) \
                  + self.energy_proj(energy.unsqueeze(-1))
        else:
            if self.config.uses_conditional_prior:
                prior = self.prior(h, log_dur)
            else:
                # plain VAEs sample from the standard-normal prior
                shape_h = h if self.variant != "global_vae" else h[:, :1]
                prior = self._standard_prior(shape_h)
            z = inference_sample(
                prior, mode=mode, temperature=temperature,
                standard_gaussian=standard_gaussian, generator=generator,
            )
            z_seq = z.z
            if self.variant == "global_vae":
                z_seq = z_seq.expand(-1, h.shape[1], -1)
            h = self.latent_proj(h, z_seq)
            z_out = z.z.squeeze(0)

        frames, _ = length_regulate_batch(h, durations.unsqueeze(0))
        mel = self.decoder(frames)
        return SynthesisForward(
            mel=mel.squeeze(0),
            durations=durations,
            log_dur=log_dur.squeeze(0),
            z=z_out,
            prior=prior,
        )

    @torch.no_grad()
    def reconstruct(
        self,
        phoneme_ids: torch.Tensor,
        speaker_idx: int,
        mel_ref: torch.Tensor,
        durations: torch.Tensor,
        context: torch.Tensor | None = None,
    ) -> SynthesisForward:
        """Posterior-mean reconstruction of a reference utterance with its
        ground-truth durations (used by the reconstruction metrics)."""
        ph = phoneme_ids.unsqueeze(0)
        spk = torch.tensor([speaker_idx], device=ph.device)
        ctx = None if context is None else context.unsqueeze(0)
        f, h, log_dur = self.cu_embedding(ph, spk, context=ctx)
        dur = durations.unsqueeze(0).to(torch.long)

        z_out = prior = None
        if self.variant == "baseline":
            pitch = self.pitch_predictor(h)
            energy = self.energy_predictor(h)
            h = h + self.pitch_proj(pitch.unsqueeze(-1)) \
                  + self.energy_proj(energy.unsqueeze(-1))
        else:
            mel_b = mel_ref.unsqueeze(0)
            if self.variant == "global_vae":
                frame_mask = torch.ones(
                    1, mel_b.shape[1], dtype=torch.bool, device=mel_b.device
                )
                post = self.posterior(mel_b, frame_mask)
            else:
                post = self.posterior(mel_b, dur)
            if self.config.uses_conditional_prior:
                prior = self.prior(h, torch.log1p(dur.to(h.dtype)))
                z_p = sample_prior(prior, epsilon=torch.zeros_like(post.mean))
                z = sample_posterior(post, z_p)
                z_seq = z.z
            else:
                z_seq = post.mean
            if self.variant == "global_vae":
                z_seq = z_seq.expand(-1, h.shape[1], -1)
            h = self.latent_proj(h, z_seq)
            z_out = z_seq.squeeze(0)

        frames, _ = length_regulate_batch(h, dur)
        mel = self.decoder(frames)
        return SynthesisForward(
            mel=mel.squeeze(0),
            durations=durations,
            log_dur=log_dur.squeeze(0),
            z=z_out,
            prior=prior,
        )

    def speaker_index(self, speaker_id: str) -> int:
        return self.cu_embedding.speakers.index_of(speaker_id)


def trainable_parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
