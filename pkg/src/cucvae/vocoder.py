"""Waveform realisation behind a small vocoder interface.

The production binding shells out to an external pretrained neural vocoder
through a file interchange (mel written as float32 with analysis metadata,
waveform read back as 16-bit PCM).  The built-in fallback reconstructs phase
deterministically from the mel via the pseudo-inverse filterbank and
Griffin-Lim iterations; it is lower fidelity but dependency-free.
"""

from __future__ import annotations

import subprocess
import tempfile
from pathlib import Path

import numpy as np

from . import audio
from .config import AudioConfig


def save_mel(path, logmel: np.ndarray, cfg: AudioConfig):
    """Write mel interchange: float32 matrix plus analysis metadata."""
    np.savez(
        path,
        mel=np.asarray(logmel, dtype=np.float32),
        sample_rate=np.int64(cfg.sample_rate),
        hop_length=np.int64(cfg.hop_length),
        n_mels=np.int64(cfg.n_mels),
    )


def load_mel(path) -> tuple[np.ndarray, dict]:
    with np.load(path) as z:
        meta = {
            "sample_rate": int(z["sample_rate"]),
            "hop_length": int(z["hop_length"]),
            "n_mels": int(z["n_mels"]),
        }
        return z["mel"].astype(np.float32), meta


class GriffinLimVocoder:
    """Deterministic iterative phase-reconstruction fallback."""

    def __init__(self, cfg: AudioConfig):
        self.cfg = cfg

    def synthesize(self, logmel: np.ndarray) -> np.ndarray:
        magnitude = audio.mel_to_linear(logmel, self.cfg)
        return audio.griffin_lim(magnitude, self.cfg)


class ExternalVocoder:
    """Bind a pretrained neural vocoder as a subprocess.

    ``command`` is a template with ``{mel}`` and ``{wav}`` placeholders; the
    mel interchange file is written, the command run, and the produced wav
    read back.
    """

    def __init__(self, command: str, cfg: AudioConfig):
        self.command = command
        self.cfg = cfg

    def synthesize(self, logmel: np.ndarray) -> np.ndarray:
        with tempfile.TemporaryDirectory() as tmp:
            mel_path = Path(tmp) / "mel.npz"
            wav_path = Path(tmp) / "out.wav"
            save_mel(mel_path, logmel, self.cfg)
            cmd = self.command.format(mel=mel_path, wav=wav_path)
            result = subprocess.run(cmd, shell=True, capture_output=True, text=True)
            if result.returncode != 0 or not wav_path.exists():
                raise RuntimeError(
                    f"external vocoder failed (exit {result.returncode}): "
                    f"{result.stderr.strip()[:500]}"
                )
            return audio.load_wav(wav_path, self.cfg.sample_rate)


def build_vocoder(cfg: AudioConfig, command: str | None = None,
                  allow_fallback: bool = True):
    """External binding when configured, else the deterministic fallback."""
    if command:
        return ExternalVocoder(command, cfg)
    if not allow_fallback:
        raise RuntimeError(
            "no vocoder binding configured and the fallback is disabled"
        )
    return GriffinLimVocoder(cfg)
