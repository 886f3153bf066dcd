"""Non-autoregressive TTS with per-phoneme prosody latents drawn from a
cross-utterance conditioned prior.

The package is organised around the synthesis pipeline:

* :mod:`cucvae.corpus` / :mod:`cucvae.audio` / :mod:`cucvae.g2p` -- corpus
  ingestion, context window reconstruction, acoustic feature extraction.
* :mod:`cucvae.context` -- cross-utterance sentence pairs and their fixed
  768-dim embeddings (pluggable embedder, frozen at training time).
* :mod:`cucvae.cu_embedding` -- phoneme encoder, speaker embedding, context
  fusion via multi-head attention, duration prediction.
* :mod:`cucvae.vae` -- utterance-specific prior, conditional posterior,
  hierarchical reparameterised sampling and closed-form KL terms.
* :mod:`cucvae.decoder` / :mod:`cucvae.vocoder` -- latent injection, length
  regulation, feed-forward mel decoder and waveform realisation.
* :mod:`cucvae.training` -- ELBO objective, annealing, checkpoints.
* :mod:`cucvae.evaluation` -- FFE, MCD and prosody diversity metrics.
* :mod:`cucvae.cli` -- batch command line entry points.
"""

__version__ = "0.1.0"

VARIANTS = ("baseline", "global_vae", "fine_grained_vae", "cvae", "cuc_vae")
