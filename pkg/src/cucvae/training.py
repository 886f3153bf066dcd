"""Training objective and optimization loop.

The objective is the negative evidence lower bound: masked L1 mel
reconstruction, log-duration MSE, and the two KL terms (posterior against
the utterance-specific prior, and that prior against the standard normal),
each KL summed over phonemes and averaged over the batch. KL weights are
linearly annealed from zero. The baseline variant has no KL terms and
instead carries pitch and energy predictor losses; those fields are zero
for every VAE variant, so for them ``total`` reduces to
``recon + dur + beta1*kl_post + beta2*kl_prior``.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .config import RunConfig, config_from_dict
from .context import cache_path
from .corpus import UtteranceRecord, load_features, read_manifest
from .decoder import lengths_to_mask
from .g2p import INVENTORY, g2p
from .model import AcousticModel, TrainForward


@dataclass
class LossBreakdown:
    """One step's loss terms. ``pitch`` and ``energy`` are baseline-only
    extras and identically zero for VAE variants."""

    recon: float
    dur: float
    kl_post: float
    kl_prior: float
    beta1: float
    beta2: float
    total: float
    pitch: float = 0.0
    energy: float = 0.0

    def validate(self, tol: float = 1e-6) -> None:
        expected = (
            self.recon + self.dur
            + self.beta1 * self.kl_post + self.beta2 * self.kl_prior
            + self.pitch + self.energy
        )
        if abs(float(self.total) - float(expected)) > tol * max(1.0, abs(float(expected))):
            raise ValueError(
                f"loss total {float(self.total)} does not match the sum of "
                f"its terms {float(expected)}"
            )
        if float(self.kl_post) < 0 or float(self.kl_prior) < 0:
            raise ValueError("KL terms must be non-negative")

    def as_floats(self) -> "LossBreakdown":
        return LossBreakdown(**{k: float(v) for k, v in asdict(self).items()})


def _masked_l1(pred: torch.Tensor, target: torch.Tensor,
               mask: torch.Tensor) -> torch.Tensor:
    keep = mask.unsqueeze(-1).to(pred.dtype)
    denom = (keep.sum() * pred.shape[-1]).clamp(min=1)
    return (torch.abs(pred - target) * keep).sum() / denom


def _masked_mse(pred: torch.Tensor, target: torch.Tensor,
                mask: torch.Tensor) -> torch.Tensor:
    keep = mask.to(pred.dtype)
    denom = keep.sum().clamp(min=1)
    return ((pred - target).pow(2) * keep).sum() / denom


def _check_finite(name: str, value: torch.Tensor) -> None:
    if not torch.isfinite(value).all():
        raise RuntimeError(f"loss term '{name}' is not finite; aborting step")


def elbo_loss(
    model: AcousticModel,
    batch: dict,
    betas: tuple[float, float],
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Run a teacher-forced forward pass and assemble the objective.

    Returns the differentiable total plus a float breakdown for logging.
    """
    out: TrainForward = model.forward_train(batch, generator=generator)
    beta1, beta2 = betas

    ph_mask = lengths_to_mask(batch["phoneme_lengths"],
                              batch["phoneme_ids"].shape[1])
    frame_mask = lengths_to_mask(batch["frame_lengths"],
                                 batch["mel"].shape[1])

    recon = _masked_l1(out.mel_pred, batch["mel"], frame_mask)
    dur = _masked_mse(out.log_dur_pred, batch["log_dur_target"], ph_mask)
    _check_finite("recon", recon)
    _check_finite("dur", dur)

    zero = recon.new_zeros(())
    kl_post = kl_prior = zero
    if out.kl_post_seq is not None:
        kl_post = out.kl_post_seq.sum(dim=-1).mean()
        _check_finite("kl_post", kl_post)
    if out.kl_prior_seq is not None:
        kl_prior = out.kl_prior_seq.sum(dim=-1).mean()
        _check_finite("kl_prior", kl_prior)

    pitch = energy = zero
    if out.pitch_pred is not None:
        pitch = _masked_mse(out.pitch_pred, batch["pitch_target"], ph_mask)
        energy = _masked_mse(out.energy_pred, batch["energy_target"], ph_mask)
        _check_finite("pitch", pitch)
        _check_finite("energy", energy)

    total = recon + dur + beta1 * kl_post + beta2 * kl_prior + pitch + energy
    _check_finite("total", total)
    breakdown = LossBreakdown(
        recon=float(recon.detach()), dur=float(dur.detach()),
        kl_post=float(kl_post.detach()), kl_prior=float(kl_prior.detach()),
        beta1=beta1, beta2=beta2, total=float(total.detach()),
        pitch=float(pitch.detach()), energy=float(energy.detach()),
    )
    return total, breakdown


def kl_anneal(step: int, beta1_max: float, beta2_max: float,
              horizon: int) -> tuple[float, float]:
    """Linear warm-up of the KL weights from 0 to their maxima."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if horizon <= 0:
        return beta1_max, beta2_max
    frac = min(1.0, step / horizon)
    return beta1_max * frac, beta2_max * frac


def lr_factor(step: int, warmup_steps: int) -> float:
    """Inverse-square-root decay with linear warm-up, peaking at 1.0."""
    s = step + 1
    w = max(1, warmup_steps)
    return min(s / w, math.sqrt(w / s))


# -- data ------------------------------------------------------------------


def _segment_means(values: np.ndarray, durations: np.ndarray,
                   voiced_only: bool = False) -> np.ndarray:
    """Mean of per-frame values within each phoneme span; empty or fully
    unvoiced spans give 0."""
    seg_ids = np.repeat(np.arange(len(durations)), durations)
    vals = values[: len(seg_ids)].astype(np.float64)
    if voiced_only:
        keep = vals > 0
        counts = np.bincount(seg_ids[keep], minlength=len(durations))
        sums = np.bincount(seg_ids[keep], weights=vals[keep],
                           minlength=len(durations))
    else:
        counts = np.bincount(seg_ids, minlength=len(durations))
        sums = np.bincount(seg_ids, weights=vals, minlength=len(durations))
    out = np.zeros(len(durations), dtype=np.float32)
    nz = counts > 0
    out[nz] = (sums[nz] / counts[nz]).astype(np.float32)
    return out


@dataclass
class UtteranceItem:
    record: UtteranceRecord
    phoneme_ids: np.ndarray    # [T] int64
    mel: np.ndarray            # [F, n_mels] float32
    durations: np.ndarray      # [T] int64
    pitch_target: np.ndarray   # [T] float32, log1p of voiced-mean f0
    energy_target: np.ndarray  # [T] float32, log1p of mean frame energy
    context: np.ndarray | None          # [2L, d_ctx] float32
    sentinel_mask: np.ndarray | None    # [2L] bool, True = sentinel-only pair


class UtteranceDataset:
    """Loads manifest records plus cached features and, for the full
    variant, cached context embeddings."""

    def __init__(self, manifest_path: str | Path, config: RunConfig,
                 cache_dir: str | Path | None = None):
        self.config = config
        self.records = read_manifest(manifest_path)
        if not self.records:
            raise ValueError(f"manifest {manifest_path} lists no utterances")
        self.speaker_ids = sorted({r.speaker_id for r in self.records})
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        if config.uses_context:
            if self.cache_dir is None:
                raise ValueError(
                    "the cross-utterance variant needs a context cache "
                    "directory"
                )
            manifest_l = self.records[0].context_size
            if manifest_l != config.context_size:
                raise ValueError(
                    f"manifest was preprocessed with context_size "
                    f"{manifest_l} but the config says "
                    f"{config.context_size}; re-run preprocess or adjust "
                    "the config"
                )

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int) -> UtteranceItem:
        rec = self.records[idx]
        feats = load_features(rec.feature_path)
        seq = g2p(rec.text,
                  word_boundary_silence=self.config.data.word_boundary_silence)
        if len(seq) != len(feats.durations):
            raise ValueError(
                f"utterance {rec.id}: {len(seq)} phonemes from the "
                f"transcript but {len(feats.durations)} stored durations; "
                "were the features built with a different silence setting?"
            )
        durations = feats.durations.astype(np.int64)
        pitch = _segment_means(feats.f0, durations, voiced_only=True)
        energy = _segment_means(feats.energy, durations)

        context = sentinel = None
        if self.config.uses_context:
            context = np.load(cache_path(self.cache_dir, rec.id))
            context = np.asarray(context, dtype=np.float32)
            ids = rec.context_ids
            sentinel = np.array(
                [ids[k] == "" and ids[k + 1] == "" for k in range(len(ids) - 1)],
                dtype=bool,
            )
        return UtteranceItem(
            record=rec,
            phoneme_ids=np.asarray(seq.ids(), dtype=np.int64),
            mel=feats.mel,
            durations=durations,
            pitch_target=np.log1p(pitch),
            energy_target=np.log1p(energy),
            context=context,
            sentinel_mask=sentinel,
        )


def collate(items: Sequence[UtteranceItem]) -> dict:
    """Pad a list of utterances into one batch of tensors."""
    if not items:
        raise ValueError("cannot collate an empty batch")
    B = len(items)
    T = max(len(it.phoneme_ids) for it in items)
    F = max(it.mel.shape[0] for it in items)
    n_mels = items[0].mel.shape[1]

    ph = torch.zeros(B, T, dtype=torch.long)
    dur = torch.zeros(B, T, dtype=torch.long)
    pitch = torch.zeros(B, T)
    energy = torch.zeros(B, T)
    mel = torch.zeros(B, F, n_mels)
    ph_len = torch.zeros(B, dtype=torch.long)
    fr_len = torch.zeros(B, dtype=torch.long)
    for b, it in enumerate(items):
        t, f = len(it.phoneme_ids), it.mel.shape[0]
        ph[b, :t] = torch.from_numpy(it.phoneme_ids)
        dur[b, :t] = torch.from_numpy(it.durations)
        pitch[b, :t] = torch.from_numpy(it.pitch_target)
        energy[b, :t] = torch.from_numpy(it.energy_target)
        mel[b, :f] = torch.from_numpy(it.mel)
        ph_len[b] = t
        fr_len[b] = f

    batch = {
        "ids": [it.record.id for it in items],
        "phoneme_ids": ph,
        "phoneme_lengths": ph_len,
        "speaker_idx": None,  # filled by the caller, which owns the table
        "mel": mel,
        "frame_lengths": fr_len,
        "durations": dur,
        "log_dur_target": torch.log1p(dur.float()),
        "pitch_target": pitch,
        "energy_target": energy,
        "context": None,
        "sentinel_mask": None,
    }
    if items[0].context is not None:
        batch["context"] = torch.stack(
            [torch.from_numpy(it.context) for it in items]
        )
        batch["sentinel_mask"] = torch.stack(
            [torch.from_numpy(it.sentinel_mask) for it in items]
        )
    return batch


def make_batches(frame_counts: Sequence[int], order: Sequence[int],
                 batch_size: int,
                 frame_budget: int | None = None) -> list[list[int]]:
    """Group dataset indices into batches, either by count or by packing
    until a total-frame budget is hit (always at least one per batch)."""
    batches: list[list[int]] = []
    if frame_budget is None:
        for i in range(0, len(order), batch_size):
            batches.append(list(order[i: i + batch_size]))
        return batches
    current: list[int] = []
    used = 0
    for idx in order:
        n = frame_counts[idx]
        if current and used + n > frame_budget:
            batches.append(current)
            current, used = [], 0
        current.append(idx)
        used += n
    if current:
        batches.append(current)
    return batches


# -- checkpointing ---------------------------------------------------------


def save_checkpoint(path: str | Path, model: AcousticModel,
                    optimizer: torch.optim.Optimizer | None,
                    step: int, speaker_ids: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "model_state": model.state_dict(),
        "optimizer_state": None if optimizer is None else optimizer.state_dict(),
        "step": step,
        "config": model.config.to_dict(),
        "config_fingerprint": model.config.fingerprint(),
        "speaker_ids": list(speaker_ids),
        "phoneme_inventory": list(INVENTORY),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(
    path: str | Path,
) -> tuple[AcousticModel, RunConfig, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if list(payload["phoneme_inventory"]) != list(INVENTORY):
        raise RuntimeError(
            f"checkpoint {path} was trained with a different phoneme "
            "inventory and cannot be loaded"
        )
    config = config_from_dict(payload["config"])
    if config.fingerprint() != payload["config_fingerprint"]:
        raise RuntimeError(f"checkpoint {path} has a stale config fingerprint")
    model = AcousticModel(config, payload["speaker_ids"])
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, config, payload


# -- the loop --------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint_path: Path
    history: list[LossBreakdown] = field(default_factory=list)
    steps: int = 0


def train(
    config: RunConfig,
    manifest_path: str | Path,
    out_dir: str | Path,
    cache_dir: str | Path | None = None,
    max_steps: int | None = None,
    log_every: int | None = None,
    stop_when: Callable[[int, LossBreakdown], bool] | None = None,
) -> TrainResult:
    """Deterministic single-process training loop.

    Shuffling, dropout, and latent sampling all derive from the configured
    seed, so two runs with the same config produce identical loss
    sequences. Aborts if the total ever exceeds 1000x its initial value.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tcfg = config.training
    steps_limit = tcfg.max_steps if max_steps is None else max_steps
    log_every = tcfg.log_interval if log_every is None else log_every

    torch.manual_seed(tcfg.seed)
    rng = random.Random(tcfg.seed)

    dataset = UtteranceDataset(manifest_path, config, cache_dir=cache_dir)
    frame_counts = [
        int(load_features(r.feature_path).mel.shape[0]) for r in dataset.records
    ]
    model = AcousticModel(config, dataset.speaker_ids)
    model.train()
    speaker_index = {s: i for i, s in enumerate(dataset.speaker_ids)}

    optimizer = torch.optim.Adam(
        model.parameters(), lr=tcfg.learning_rate,
        betas=tcfg.adam_betas, eps=tcfg.adam_eps,
    )
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda s: lr_factor(s, tcfg.warmup_steps)
    )

    log_path = out_dir / "train_log.jsonl"
    history: list[LossBreakdown] = []
    initial_total: float | None = None
    step = 0
    checkpoint_path = out_dir / "checkpoint_last.pt"

    with open(log_path, "w") as log_file:
        while step < steps_limit:
            order = list(range(len(dataset)))
            rng.shuffle(order)
            for batch_idx in make_batches(frame_counts, order,
                                          tcfg.batch_size, tcfg.frame_budget):
                if step >= steps_limit:
                    break
                items = [dataset[i] for i in batch_idx]
                batch = collate(items)
                batch["speaker_idx"] = torch.tensor(
                    [speaker_index[it.record.speaker_id] for it in items]
                )
                betas = kl_anneal(step, tcfg.beta1_max, tcfg.beta2_max,
                                  tcfg.kl_warmup_steps)
                total, breakdown = elbo_loss(model, batch, betas)

                if initial_total is None:
                    initial_total = max(breakdown.total, 1e-8)
                if breakdown.total > 1e3 * initial_total:
                    raise RuntimeError(
                        f"training diverged at step {step}: total "
                        f"{breakdown.total:.4g} exceeds 1000x the initial "
                        f"{initial_total:.4g}; breakdown {asdict(breakdown)}"
                    )

                optimizer.zero_grad()
                total.backward()
                if tcfg.grad_clip > 0:
                    nn.utils.clip_grad_norm_(model.parameters(), tcfg.grad_clip)
                optimizer.step()
                scheduler.step()

                history.append(breakdown)
                if log_every > 0 and step % log_every == 0:
                    record = {"step": step,
                              "lr": scheduler.get_last_lr()[0],
                              **asdict(breakdown)}
                    log_file.write(json.dumps(record) + "\n")
                step += 1
                if tcfg.checkpoint_interval > 0 and \
                        step % tcfg.checkpoint_interval == 0:
                    save_checkpoint(out_dir / f"checkpoint_{step}.pt",
                                    model, optimizer, step, dataset.speaker_ids)
                if stop_when is not None and stop_when(step, breakdown):
                    steps_limit = step
                    break

    save_checkpoint(checkpoint_path, model, optimizer, step,
                    dataset.speaker_ids)
    return TrainResult(checkpoint_path=checkpoint_path, history=history,
                       steps=step)
