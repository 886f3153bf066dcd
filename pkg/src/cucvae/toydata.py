"""Synthetic pitched corpus for tests and demos.

Each utterance is a harmonic tone whose fundamental glides between
per-utterance endpoints, with a per-word amplitude envelope so that energy
varies across the signal. The audio carries a measurable F0 track and
energy contour, which is all the acoustic pipeline needs; no attempt is
made to sound like speech.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .audio import save_wav
from .config import AudioConfig

TOY_SENTENCES = (
    "mary asked the time",
    "who told mary",
    "the old man said hello",
    "she went to the house",
    "only five days were left",
    "he found the little book",
    "they could not see the water",
    "it was a good day",
    "mary told the old man",
    "the water was cold",
    "he asked who came first",
    "she said it was time",
)


def harmonic_utterance(
    n_words: int,
    f0_start: float,
    f0_end: float,
    duration: float,
    sample_rate: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """A gliding harmonic tone with one amplitude bump per word."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = np.linspace(f0_start, f0_end, n)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    wav = np.zeros(n)
    for k, gain in enumerate((1.0, 0.5, 0.25, 0.12), start=1):
        wav += gain * np.sin(k * phase)
    # one raised-cosine bump per word, amplitudes jittered per utterance
    env = np.zeros(n)
    edges = np.linspace(0, n, n_words + 1).astype(int)
    for w in range(n_words):
        seg = slice(edges[w], edges[w + 1])
        m = edges[w + 1] - edges[w]
        amp = 0.5 + 0.5 * rng.random()
        env[seg] = amp * np.sin(np.linspace(0, np.pi, m)) ** 2
    wav = wav * env
    peak = np.max(np.abs(wav))
    if peak > 0:
        wav = 0.8 * wav / peak
    return wav.astype(np.float32)


def build_toy_corpus(
    out_dir: str | Path,
    n_utterances: int = 8,
    n_documents: int = 2,
    n_speakers: int = 2,
    seed: int = 0,
    audio: AudioConfig | None = None,
) -> Path:
    """Write wavs plus ``metadata.jsonl`` in the corpus layout and return
    the corpus directory."""
    if n_utterances > len(TOY_SENTENCES):
        raise ValueError(
            f"at most {len(TOY_SENTENCES)} toy utterances are available"
        )
    audio = audio or AudioConfig()
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    lines = []
    for i in range(n_utterances):
        text = TOY_SENTENCES[i]
        doc = f"book{i % n_documents}"
        speaker = f"spk{i % n_speakers}"
        utt_id = f"utt{i:03d}"
        f0_a = float(rng.uniform(120, 260))
        f0_b = float(np.clip(f0_a + rng.uniform(-60, 60), 90, 320))
        duration = float(rng.uniform(0.8, 1.3))
        wav = harmonic_utterance(
            len(text.split()), f0_a, f0_b, duration, audio.sample_rate, rng
        )
        rel = f"wavs/{utt_id}.wav"
        save_wav(out_dir / rel, wav, audio.sample_rate)
        lines.append({
            "id": utt_id,
            "document": doc,
            "speaker": speaker,
            "text": text,
            "audio": rel,
        })

    with open(out_dir / "metadata.jsonl", "w") as fh:
        for line in lines:
            fh.write(json.dumps(line) + "\n")
    return out_dir
