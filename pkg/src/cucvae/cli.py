"""Command-line entry points for the full pipeline.

Every flag has a config-file equivalent; precedence is defaults, then the
YAML file passed with --config, then explicit flags. Each command that
produces outputs dumps the resolved config beside them.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import torch

from .audio import load_wav, save_wav
from .config import RunConfig, apply_overrides, load_config, save_config
from .context import build_embedder, precompute_and_cache, verify_cache
from .corpus import load_features, preprocess_corpus, read_manifest
from .evaluation import (
    F0Track,
    MetricRow,
    ProsodySample,
    emit_case_study,
    ffe,
    mcd,
    prosody_std,
    write_report,
)
from .synthesis import SynthesisSession, neighbor_texts_from_record
from .training import train as run_training
from .vocoder import save_mel


def _resolve_config(config_path: str | None, **flag_overrides) -> RunConfig:
    config = load_config(config_path) if config_path else RunConfig()
    return apply_overrides(config, flag_overrides)


def _dump_config(config: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, out_dir / "config.resolved.yaml")


config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
    default=None, help="YAML config file; flags override its values.",
)
cache_dir_option = click.option(
    "--cache-dir", envvar="CUCVAE_CACHE_DIR",
    type=click.Path(file_okay=False), default=None,
    help="Context embedding cache directory (env: CUCVAE_CACHE_DIR).",
)


@click.group()
@click.version_option(package_name="cucvae")
def main():
    """Cross-utterance conditional VAE text-to-speech pipeline."""


@main.command()
@click.option("--corpus-dir", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Corpus root containing metadata.jsonl and wavs/.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False),
              help="Where the manifest and feature files are written.")
@config_option
@click.option("--context-size", type=int, default=None,
              help="Utterances kept on each side of the center (L).")
@click.option("--aligner-dir", type=click.Path(exists=True, file_okay=False),
              default=None,
              help="Directory of <id>.tsv phoneme alignments; uniform "
                   "splits are used when absent.")
@click.option("--book-order/--metadata-order", "book_order", default=False,
              help="Re-order utterances by their located book position.")
@click.option("--word-boundary-silence", is_flag=True, default=None,
              help="Insert a silence phoneme between words.")
def preprocess(corpus_dir, out_dir, config_path, context_size, aligner_dir,
               book_order, word_boundary_silence):
    """Extract features and build the context-window manifest."""
    config = _resolve_config(
        config_path,
        **{"context_size": context_size,
           "data.word_boundary_silence": word_boundary_silence},
    )
    out = Path(out_dir)
    manifest, summary = preprocess_corpus(
        corpus_dir, out, config.context_size, config.audio,
        aligner_dir=aligner_dir,
        use_book_order=book_order,
        match_threshold=config.data.match_threshold,
        word_boundary_silence=config.data.word_boundary_silence,
    )
    _dump_config(config, out)
    click.echo(f"wrote {summary.n_ok} utterances to {manifest}")
    if summary.failures:
        for utt_id, reason in summary.failures:
            click.echo(f"failed {utt_id}: {reason}", err=True)
        sys.exit(1)


@main.command("embed-context")
@click.option("--manifest", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Manifest written by the preprocess command.")
@cache_dir_option
@config_option
@click.option("--embedder", type=click.Choice(["stub", "bert"]), default=None,
              help="Sentence-pair embedder backend.")
def embed_context(manifest, cache_dir, config_path, embedder):
    """Precompute and cache cross-utterance context embeddings."""
    if cache_dir is None:
        raise click.UsageError("--cache-dir (or CUCVAE_CACHE_DIR) is required")
    config = _resolve_config(config_path, **{"context.embedder": embedder})
    records = read_manifest(manifest)
    backend = build_embedder(
        config.context.embedder, config.context.bert_model,
        dim=config.model.d_ctx,
    )
    written = precompute_and_cache(records, backend, cache_dir)
    verify_cache(records, cache_dir)
    click.echo(f"cached {len(written)} context embeddings under {cache_dir}")


@main.command()
@click.option("--manifest", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False),
              help="Checkpoint and log directory.")
@config_option
@cache_dir_option
@click.option("--variant",
              type=click.Choice(["baseline", "global_vae", "fine_grained_vae",
                                 "cvae", "cuc_vae"]),
              default=None, help="Model variant to train.")
@click.option("--context-size", type=int, default=None,
              help="Must match the L the manifest was preprocessed with.")
@click.option("--max-steps", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--seed", type=int, default=None)
def train(manifest, out_dir, config_path, cache_dir, variant, context_size,
          max_steps, batch_size, learning_rate, seed):
    """Optimize a variant on a preprocessed manifest."""
    config = _resolve_config(
        config_path,
        **{"variant": variant,
           "context_size": context_size,
           "training.max_steps": max_steps,
           "training.batch_size": batch_size,
           "training.learning_rate": learning_rate,
           "training.seed": seed,
           "seed": seed},
    )
    out = Path(out_dir)
    _dump_config(config, out)
    result = run_training(config, manifest, out, cache_dir=cache_dir)
    final = result.history[-1]
    click.echo(
        f"finished {result.steps} steps: total {final.total:.4f} "
        f"(recon {final.recon:.4f}, dur {final.dur:.4f}, "
        f"kl_post {final.kl_post:.4f}, kl_prior {final.kl_prior:.4f})"
    )
    click.echo(f"checkpoint: {result.checkpoint_path}")


@main.command()
@click.option("--checkpoint", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--text", required=True, help="Text to synthesize.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--speaker", default=None,
              help="Speaker id from the training corpus (default: first).")
@click.option("--context", "contexts", multiple=True,
              help="Neighbor texts, given 2L times in reading order; use "
                   "an empty string for a missing slot.")
@click.option("--mode", type=click.Choice(["sample", "mean"]),
              default="sample", show_default=True,
              help="Draw latents from the prior or use its mean.")
@click.option("--temperature", type=float, default=1.0, show_default=True,
              help="Scale on the prior standard deviation when sampling.")
@click.option("--num-samples", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=1234, show_default=True)
@click.option("--standard-gaussian", is_flag=True, default=False,
              help="Ignore the learned prior and sample latents from N(0,1).")
@click.option("--vocoder-command", default=None,
              help="External vocoder template with {mel} and {wav} slots; "
                   "iterative phase reconstruction is used when absent.")
def synthesize(checkpoint, text, out_dir, speaker, contexts, mode,
               temperature, num_samples, seed, standard_gaussian,
               vocoder_command):
    """Synthesize waveform samples for one text."""
    session = SynthesisSession(checkpoint, vocoder_command=vocoder_command)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump_config(session.config, out)
    context_texts = list(contexts) if contexts else None
    generator = torch.Generator().manual_seed(seed)
    for k in range(num_samples):
        result = session.synthesize_text(
            text, speaker_id=speaker, context_texts=context_texts,
            mode=mode, temperature=temperature,
            standard_gaussian=standard_gaussian, generator=generator,
        )
        stem = out / f"sample_{k:03d}"
        save_wav(stem.with_suffix(".wav"), result.wav, result.sample_rate)
        save_mel(stem.with_suffix(".mel.npz"), result.mel,
                 session.config.audio)
        sidecar = {
            "text": text,
            "speaker": speaker or session.speaker_ids[0],
            "variant": session.variant,
            "mode": mode,
            "temperature": temperature,
            "standard_gaussian": standard_gaussian,
            "seed": seed,
            "sample_index": k,
            "context": context_texts,
            "duration_frames": int(result.durations.sum()),
        }
        stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    click.echo(f"wrote {num_samples} sample(s) to {out}")


@main.command()
@click.option("--checkpoint", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@cache_dir_option
@click.option("--limit", type=int, default=None,
              help="Evaluate only the first N utterances.")
@click.option("--prosody-samples", type=int, default=10, show_default=True,
              help="Prior draws per utterance for the diversity stds.")
@click.option("--prosody-utterances", type=int, default=11, show_default=True)
@click.option("--seed", type=int, default=1234, show_default=True)
@click.option("--skip-prosody", is_flag=True, default=False)
def evaluate(checkpoint, manifest, out_dir, cache_dir, limit,
             prosody_samples, prosody_utterances, seed, skip_prosody):
    """Reconstruction metrics (FFE, MCD) and prosody diversity report."""
    session = SynthesisSession(checkpoint)
    config = session.config
    records = read_manifest(manifest)
    if limit is not None:
        records = records[:limit]
    texts_by_id = {r.id: r.text for r in records}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump_config(config, out)

    def neighbors(rec):
        if not config.uses_context:
            return None
        return neighbor_texts_from_record(rec, texts_by_id)

    rows = []
    tol = config.data.mcd_frame_tolerance
    for rec in records:
        ref_wav = load_wav(rec.audio_path, config.audio.sample_rate)
        recon = session.reconstruct_utterance(rec, context_texts=neighbors(rec))
        row = MetricRow(utterance_id=rec.id)
        row.ffe = ffe(
            F0Track.from_waveform(ref_wav, config.audio),
            F0Track.from_waveform(recon.wav, config.audio),
            frame_tolerance=tol,
        )
        row.mcd = mcd(ref_wav, recon.wav, config.audio, frame_tolerance=tol)
        rows.append(row)

    stats = None
    if not skip_prosody:
        subset = records[: min(prosody_utterances, len(records))]
        generator = torch.Generator().manual_seed(seed)

        def sampler(rec, k):
            result = session.synthesize_text(
                rec.text, speaker_id=rec.speaker_id,
                context_texts=neighbors(rec), mode="sample",
                generator=generator,
            )
            return ProsodySample(
                wav=result.wav, durations=result.durations,
                phonemes=result.phonemes.phonemes,
            )

        stats = prosody_std(sampler, subset, prosody_samples, config.audio)
        rows.append(MetricRow(utterance_id="prosody(all)",
                              f0_std=stats.f0_std, e_std=stats.e_std))

    report = write_report(rows, out / "metrics.txt")
    click.echo(report.read_text().rstrip())
    if stats is not None and stats.excluded_f0_spans:
        click.echo(
            f"note: {stats.excluded_f0_spans} unvoiced phoneme span(s) "
            "excluded from the F0 std"
        )
    click.echo(f"report: {report}")


@main.command("case-study")
@click.option("--checkpoint", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--text", required=True,
              help="Text synthesized once per context line.")
@click.option("--contexts-file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="One context per line: 2L neighbor texts separated "
                   "by ' | '.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--speaker", default=None)
@click.option("--mode", type=click.Choice(["sample", "mean"]),
              default="mean", show_default=True)
@click.option("--seed", type=int, default=1234, show_default=True)
def case_study(checkpoint, text, contexts_file, out_dir, speaker, mode, seed):
    """Export energy and F0 contours of one text under several contexts."""
    session = SynthesisSession(checkpoint)
    contexts = []
    for line in Path(contexts_file).read_text().splitlines():
        if line.strip():
            contexts.append([t.strip() for t in line.split("|")])
    if not contexts:
        raise click.UsageError(f"{contexts_file} lists no contexts")
    out = Path(out_dir)

    def synthesize_fn(context_texts):
        generator = torch.Generator().manual_seed(seed)
        result = session.synthesize_text(
            text, speaker_id=speaker, context_texts=list(context_texts),
            mode=mode, generator=generator,
        )
        return result.wav

    written = emit_case_study(
        synthesize_fn, text, contexts, out, session.config.audio
    )
    _dump_config(session.config, out)
    click.echo(f"wrote {len(written)} contour table(s) to {out}")


if __name__ == "__main__":
    main()
