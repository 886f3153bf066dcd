"""Objective metrics: F0 frame error, mel-cepstral distortion, and prosody
diversity, plus the case-study contour export.

FFE counts frames whose voicing decision flips (VDE) or whose pitch, when
both tracks are voiced, deviates by more than 20% (GPE). MCD compares the
first 13 MFCCs (c0 excluded) with the 10*sqrt(2)/ln(10) constant. Prosody
diversity is the standard deviation, across repeated prior samples, of
each phoneme's relative energy and mean F0.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .audio import frame_energy, mfcc, track_f0
from .config import AudioConfig
from .g2p import SILENCE

MCD_CONSTANT = 10.0 * math.sqrt(2.0) / math.log(10.0)
GPE_THRESHOLD = 0.20


@dataclass
class F0Track:
    """A pitch track where 0 Hz marks unvoiced frames."""

    f0: np.ndarray
    voicing: np.ndarray

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.voicing = np.asarray(self.voicing, dtype=bool)
        if self.f0.ndim != 1 or self.f0.shape != self.voicing.shape:
            raise ValueError("f0 and voicing must be equal-length vectors")
        if not np.array_equal(self.voicing, self.f0 > 0):
            raise ValueError("voicing must equal (f0 > 0) frame by frame")

    @classmethod
    def from_f0(cls, f0: np.ndarray) -> "F0Track":
        f0 = np.asarray(f0, dtype=np.float64)
        return cls(f0=f0, voicing=f0 > 0)

    @classmethod
    def from_waveform(cls, wav: np.ndarray, cfg: AudioConfig) -> "F0Track":
        return cls.from_f0(track_f0(wav, cfg))

    def __len__(self) -> int:
        return len(self.f0)


def _match_lengths(n_ref: int, n_test: int, tolerance: int,
                   what: str) -> int:
    if min(n_ref, n_test) == 0:
        raise ValueError(f"{what}: empty overlap between inputs")
    diff = abs(n_ref - n_test)
    if diff > tolerance:
        raise ValueError(
            f"{what}: frame counts differ by {diff} "
            f"({n_ref} vs {n_test}), beyond the {tolerance}-frame tolerance"
        )
    if diff:
        warnings.warn(
            f"{what}: truncating {diff} trailing frame(s) to align inputs",
            stacklevel=3,
        )
    return min(n_ref, n_test)


def ffe(reference: F0Track, test: F0Track, frame_tolerance: int = 2) -> float:
    """F0 frame error: (gross pitch errors + voicing decision errors) / N."""
    n = _match_lengths(len(reference), len(test), frame_tolerance, "ffe")
    ref_f0, ref_v = reference.f0[:n], reference.voicing[:n]
    test_f0, test_v = test.f0[:n], test.voicing[:n]

    vde = ref_v != test_v
    both = ref_v & test_v
    gpe = np.zeros(n, dtype=bool)
    gpe[both] = (
        np.abs(test_f0[both] - ref_f0[both]) / ref_f0[both] > GPE_THRESHOLD
    )
    return float((vde.sum() + gpe.sum()) / n)


def mcd_from_coeffs(ref_coeffs: np.ndarray, test_coeffs: np.ndarray,
                    frame_tolerance: int = 2) -> float:
    """MCD in dB from full MFCC matrices; uses coefficients 1..13 only."""
    ref_coeffs = np.atleast_2d(np.asarray(ref_coeffs, dtype=np.float64))
    test_coeffs = np.atleast_2d(np.asarray(test_coeffs, dtype=np.float64))
    n = _match_lengths(ref_coeffs.shape[0], test_coeffs.shape[0],
                       frame_tolerance, "mcd")
    diff = ref_coeffs[:n, 1:14] - test_coeffs[:n, 1:14]
    if diff.shape[1] != 13:
        raise ValueError(
            f"need at least 14 MFCC coefficients, got {ref_coeffs.shape[1]}"
        )
    return float(MCD_CONSTANT * np.mean(np.linalg.norm(diff, axis=1)))


def mcd(reference_audio: np.ndarray, test_audio: np.ndarray,
        cfg: AudioConfig, frame_tolerance: int = 2) -> float:
    """Mel-cepstral distortion between two waveforms at the same rate."""
    ref_c = mfcc(reference_audio, cfg, n_coef=14)
    test_c = mfcc(test_audio, cfg, n_coef=14)
    return mcd_from_coeffs(ref_c, test_c, frame_tolerance)


# -- prosody diversity -------------------------------------------------------


@dataclass
class ProsodySample:
    """One synthesis draw of an utterance."""

    wav: np.ndarray
    durations: np.ndarray       # frames per phoneme
    phonemes: Sequence[str]


@dataclass
class ProsodyStats:
    e_std: float
    f0_std: float
    num_samples: int
    selection: list[tuple[str, int, str]] = field(default_factory=list)
    excluded_f0_spans: int = 0


def select_phonemes(phonemes: Sequence[str], durations: np.ndarray,
                    count: int = 3) -> list[int]:
    """Indices of the longest non-silence phonemes, longest first, ties
    broken by position."""
    candidates = [
        i for i, p in enumerate(phonemes)
        if p != SILENCE and durations[i] > 0
    ]
    candidates.sort(key=lambda i: (-int(durations[i]), i))
    return candidates[:count]


def relative_energy(wav: np.ndarray, start: int, end: int) -> float:
    """Mean absolute amplitude in [start, end) over the whole-signal mean."""
    whole = float(np.mean(np.abs(wav)))
    if whole == 0.0:
        return 0.0
    span = wav[start:end]
    if span.size == 0:
        return 0.0
    return float(np.mean(np.abs(span)) / whole)


def prosody_std(
    sampler: Callable[[object, int], ProsodySample],
    utterances: Sequence[object],
    num_samples: int,
    cfg: AudioConfig,
    phonemes_per_utterance: int = 3,
) -> ProsodyStats:
    """Std of relative energy and F0 per phoneme across repeated samples.

    ``sampler(utterance, k)`` must synthesize draw ``k`` of the given
    utterance. Phoneme spans come from the first draw's durations (the
    duration predictor is deterministic, so draws share spans). Spans that
    are unvoiced in some draw are excluded from the F0 statistic and
    counted.
    """
    if num_samples < 2:
        raise ValueError("need at least 2 samples to estimate a std")
    hop = cfg.hop_length
    e_stds: list[float] = []
    f0_stds: list[float] = []
    selection: list[tuple[str, int, str]] = []
    excluded = 0

    for utt in utterances:
        draws = [sampler(utt, k) for k in range(num_samples)]
        first = draws[0]
        chosen = select_phonemes(first.phonemes, first.durations,
                                 phonemes_per_utterance)
        starts = np.concatenate([[0], np.cumsum(first.durations)])
        tracks = [track_f0(d.wav, cfg) for d in draws]
        utt_id = getattr(utt, "id", repr(utt))
        for idx in chosen:
            f_lo, f_hi = int(starts[idx]), int(starts[idx + 1])
            e_vals = [
                relative_energy(d.wav, f_lo * hop, f_hi * hop) for d in draws
            ]
            e_stds.append(float(np.std(e_vals)))
            selection.append((utt_id, idx, first.phonemes[idx]))

            f0_vals = []
            for tr in tracks:
                span = tr[f_lo: min(f_hi, len(tr))]
                voiced = span[span > 0]
                if voiced.size == 0:
                    break
                f0_vals.append(float(np.mean(voiced)))
            if len(f0_vals) == num_samples:
                f0_stds.append(float(np.std(f0_vals)))
            else:
                excluded += 1

    return ProsodyStats(
        e_std=float(np.mean(e_stds)) if e_stds else 0.0,
        f0_std=float(np.mean(f0_stds)) if f0_stds else 0.0,
        num_samples=num_samples,
        selection=selection,
        excluded_f0_spans=excluded,
    )


# -- case study and reports ---------------------------------------------------


def emit_case_study(
    synthesize_fn: Callable[[Sequence[str]], np.ndarray],
    text: str,
    contexts: Sequence[Sequence[str]],
    out_dir: str | Path,
    cfg: AudioConfig,
) -> list[Path]:
    """Synthesize ``text`` under each context and export per-frame
    (time, energy, f0) tables for contour plots."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for k, context in enumerate(contexts):
        wav = synthesize_fn(context)
        energy = frame_energy(wav, cfg)
        f0 = track_f0(wav, cfg)
        n = min(len(energy), len(f0))
        path = out_dir / f"context_{k:02d}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", "energy", "f0_hz"])
            for t in range(n):
                writer.writerow([
                    f"{t * cfg.hop_length / cfg.sample_rate:.6f}",
                    f"{energy[t]:.6f}",
                    f"{f0[t]:.3f}",
                ])
        written.append(path)
    manifest = out_dir / "contexts.txt"
    with open(manifest, "w") as fh:
        fh.write(f"text: {text}\n")
        for k, context in enumerate(contexts):
            fh.write(f"context_{k:02d}: {' | '.join(context)}\n")
    return written


@dataclass
class MetricRow:
    utterance_id: str
    ffe: float | None = None
    mcd: float | None = None
    f0_std: float | None = None
    e_std: float | None = None


def write_report(rows: Sequence[MetricRow], path: str | Path) -> Path:
    """Fixed-width table with one row per utterance plus a mean row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    headers = ("utterance", "FFE", "MCD_dB", "F0_std", "E_std")

    def fmt(v: float | None) -> str:
        return "-" if v is None else f"{v:.4f}"

    table = [
        (r.utterance_id, fmt(r.ffe), fmt(r.mcd), fmt(r.f0_std), fmt(r.e_std))
        for r in rows
    ]
    means = []
    for attr in ("ffe", "mcd", "f0_std", "e_std"):
        vals = [getattr(r, attr) for r in rows if getattr(r, attr) is not None]
        means.append(fmt(float(np.mean(vals)) if vals else None))
    table.append(("mean", *means))

    widths = [
        max(len(headers[c]), *(len(row[c]) for row in table))
        for c in range(len(headers))
    ]
    with open(path, "w") as fh:
        fh.write("  ".join(h.ljust(w) for h, w in zip(headers, widths)) + "\n")
        fh.write("  ".join("-" * w for w in widths) + "\n")
        for row in table:
            fh.write("  ".join(v.ljust(w) for v, w in zip(row, widths)) + "\n")
    return path
