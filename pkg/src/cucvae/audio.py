"""Signal processing primitives: STFT, log-mel analysis, frame energy, an
autocorrelation pitch tracker, MFCCs and iterative phase reconstruction.

All functions are pure numpy and deterministic: two calls on the same input
produce bit-identical output.  The framing convention is center-padded with
``num_frames = ceil(len(signal) / hop_length)``, so a 1.0 s clip at 22050 Hz
with hop 256 yields 87 frames.
"""

from __future__ import annotations

import numpy as np
import scipy.fft
import scipy.io.wavfile
import scipy.signal

from .config import AudioConfig


def num_frames(n_samples: int, hop_length: int) -> int:
    """Frame count of the center-padded analysis of ``n_samples`` samples."""
    return -(-n_samples // hop_length)


def load_wav(path, target_sr: int) -> np.ndarray:
    """Read a wav file as mono float32 in [-1, 1], resampled to ``target_sr``."""
    sr, data = scipy.io.wavfile.read(path)
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    data = np.asarray(data, dtype=np.float64)
    if sr != target_sr:
        g = np.gcd(sr, target_sr)
        data = scipy.signal.resample_poly(data, target_sr // g, sr // g)
    return data.astype(np.float32)


def save_wav(path, wav: np.ndarray, sample_rate: int):
    """Write a float waveform as 16-bit PCM."""
    wav = np.clip(np.asarray(wav, dtype=np.float64), -1.0, 1.0)
    pcm = (wav * 32767.0).round().astype(np.int16)
    scipy.io.wavfile.write(path, sample_rate, pcm)


def frame_signal(y: np.ndarray, frame_length: int, hop_length: int) -> np.ndarray:
    """Slice ``y`` into center-padded frames of shape [num_frames, frame_length].

    Frame ``t`` is centered on sample ``t * hop_length``; the signal is
    zero-padded by ``frame_length // 2`` on both sides.
    """
    if frame_length % 2 != 0:
        raise ValueError("frame_length must be even")
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n == 0:
        raise ValueError("empty signal")
    pad = frame_length // 2
    padded = np.pad(y, (pad, pad))
    n_frames = num_frames(n, hop_length)
    idx = np.arange(frame_length)[None, :] + hop_length * np.arange(n_frames)[:, None]
    return padded[idx]


def stft(y: np.ndarray, n_fft: int, hop_length: int, win_length: int) -> np.ndarray:
    """Complex STFT, shape [num_frames, n_fft // 2 + 1], Hann window."""
    frames = frame_signal(y, win_length, hop_length)
    window = scipy.signal.get_window("hann", win_length, fftbins=True)
    frames = frames * window[None, :]
    if n_fft > win_length:
        frames = np.pad(frames, ((0, 0), (0, n_fft - win_length)))
    return np.fft.rfft(frames, n=n_fft, axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: AudioConfig) -> np.ndarray:
    """Triangular mel filterbank, shape [n_mels, n_fft // 2 + 1]."""
    n_freq = cfg.n_fft // 2 + 1
    freqs = np.linspace(0.0, cfg.sample_rate / 2.0, n_freq)
    edges = mel_to_hz(
        np.linspace(hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.mel_fmax), cfg.n_mels + 2)
    )
    lower, center, upper = edges[:-2], edges[1:-1], edges[2:]
    up = (freqs[None, :] - lower[:, None]) / (center - lower)[:, None]
    down = (upper[:, None] - freqs[None, :]) / (upper - center)[:, None]
    return np.maximum(0.0, np.minimum(up, down))


def mel_spectrogram(y: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    """Log-compressed mel spectrogram [num_frames, n_mels] (natural log,
    magnitudes floored at ``cfg.mel_floor``)."""
    spec = np.abs(stft(y, cfg.n_fft, cfg.hop_length, cfg.win_length))
    mel = spec @ mel_filterbank(cfg).T
    return np.log(np.maximum(mel, cfg.mel_floor))


def frame_energy(y: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    """Per-frame amplitude L2-norm over the (unwindowed) analysis frame."""
    frames = frame_signal(y, cfg.win_length, cfg.hop_length)
    return np.sqrt((frames**2).sum(axis=1))


def track_f0(y: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    """Frame F0 track in Hz via normalised autocorrelation; 0 marks unvoiced.

    A frame is voiced when the normalised autocorrelation peak inside the
    configured lag range exceeds ``cfg.voicing_threshold``.  The peak lag is
    refined by parabolic interpolation.
    """
    frames = frame_signal(y, cfg.win_length, cfg.hop_length)
    n_frames, flen = frames.shape
    lag_min = max(2, int(np.floor(cfg.sample_rate / cfg.f0_max)))
    lag_max = min(flen - 2, int(np.ceil(cfg.sample_rate / cfg.f0_min)))
    if lag_max <= lag_min:
        raise ValueError("analysis frame too short for the configured f0 range")

    # Autocorrelation r[tau] = sum_t x[t] x[t+tau] via FFT, normalised per lag
    # by the geometric mean of the two overlapping segment energies.
    nfft = int(2 ** np.ceil(np.log2(2 * flen)))
    spectra = np.fft.rfft(frames, n=nfft, axis=1)
    acorr = np.fft.irfft(spectra * np.conj(spectra), n=nfft, axis=1)[:, : flen]

    sq = frames**2
    csum = np.concatenate(
        [np.zeros((n_frames, 1)), np.cumsum(sq, axis=1)], axis=1
    )
    total = csum[:, -1]

    lags = np.arange(lag_min, lag_max + 1)
    # energy of x[0:flen-tau] and of x[tau:flen] for each candidate lag
    e_head = np.take_along_axis(csum, (flen - lags)[None, :].repeat(n_frames, 0), axis=1)
    e_tail = total[:, None] - np.take_along_axis(
        csum, lags[None, :].repeat(n_frames, 0), axis=1
    )
    denom = np.sqrt(e_head * e_tail)
    with np.errstate(divide="ignore", invalid="ignore"):
        ncc = np.where(denom > 1e-12, acorr[:, lag_min : lag_max + 1] / denom, 0.0)

    best = np.argmax(ncc, axis=1)
    peak = ncc[np.arange(n_frames), best]
    voiced = peak >= cfg.voicing_threshold

    # Parabolic refinement around the peak lag.
    lag = lags[best].astype(np.float64)
    interior = (best > 0) & (best < len(lags) - 1)
    idx = np.flatnonzero(interior)
    if len(idx):
        y0 = ncc[idx, best[idx] - 1]
        y1 = ncc[idx, best[idx]]
        y2 = ncc[idx, best[idx] + 1]
        denom2 = y0 - 2 * y1 + y2
        offset = np.where(np.abs(denom2) > 1e-12, 0.5 * (y0 - y2) / denom2, 0.0)
        lag[idx] += np.clip(offset, -0.5, 0.5)

    f0 = np.where(voiced, cfg.sample_rate / lag, 0.0)
    in_range = (f0 >= cfg.f0_min) & (f0 <= cfg.f0_max)
    return np.where(in_range, f0, 0.0)


def mfcc(y: np.ndarray, cfg: AudioConfig, n_coef: int = 14) -> np.ndarray:
    """First ``n_coef`` mel-frequency cepstral coefficients, including c0.

    Computed as the orthonormal DCT-II of the natural-log mel spectrogram,
    shape [num_frames, n_coef].
    """
    logmel = mel_spectrogram(y, cfg)
    ceps = scipy.fft.dct(logmel, type=2, axis=1, norm="ortho")
    return ceps[:, :n_coef]


def istft(spec: np.ndarray, hop_length: int, win_length: int, n_samples: int) -> np.ndarray:
    """Overlap-add inverse of :func:`stft` for the first ``n_samples`` samples."""
    n_frames = spec.shape[0]
    window = scipy.signal.get_window("hann", win_length, fftbins=True)
    frames = np.fft.irfft(spec, axis=1)[:, :win_length] * window[None, :]
    pad = win_length // 2
    out = np.zeros(n_frames * hop_length + 2 * pad)
    norm = np.zeros_like(out)
    wsq = window**2
    for t in range(n_frames):
        start = t * hop_length
        out[start : start + win_length] += frames[t]
        norm[start : start + win_length] += wsq
    out = np.where(norm > 1e-10, out / np.maximum(norm, 1e-10), out)
    return out[pad : pad + n_samples]


def griffin_lim(
    magnitude: np.ndarray, cfg: AudioConfig, n_iter: int | None = None
) -> np.ndarray:
    """Deterministic Griffin-Lim phase reconstruction from a linear-magnitude
    spectrogram [num_frames, n_fft // 2 + 1].

    Phase starts at zero, so identical input gives identical output.  The
    returned waveform has exactly ``num_frames * hop_length`` samples.
    """
    if n_iter is None:
        n_iter = cfg.griffin_lim_iters
    n_frames = magnitude.shape[0]
    n_samples = n_frames * cfg.hop_length
    spec = magnitude.astype(np.complex128)
    for _ in range(n_iter):
        y = istft(spec, cfg.hop_length, cfg.win_length, n_samples)
        rebuilt = stft(y, cfg.n_fft, cfg.hop_length, cfg.win_length)[:n_frames]
        phase = rebuilt / np.maximum(np.abs(rebuilt), 1e-10)
        spec = magnitude * phase
    return istft(spec, cfg.hop_length, cfg.win_length, n_samples).astype(np.float32)


def mel_to_linear(logmel: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    """Approximate linear magnitudes from log-mel via the filterbank
    pseudo-inverse, clipped to be non-negative."""
    basis = mel_filterbank(cfg)
    inv = np.linalg.pinv(basis)
    mel = np.exp(np.asarray(logmel, dtype=np.float64))
    return np.maximum(mel @ inv.T, 0.0)
