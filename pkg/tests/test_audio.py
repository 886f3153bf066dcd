"""Signal-processing primitives: framing, mel analysis, pitch tracking,
energy, MFCCs, and phase reconstruction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cucvae.audio import (
    frame_energy,
    frame_signal,
    griffin_lim,
    load_wav,
    mel_filterbank,
    mel_spectrogram,
    mel_to_linear,
    mfcc,
    num_frames,
    save_wav,
    stft,
    track_f0,
)
from cucvae.config import AudioConfig

CFG = AudioConfig()


def sine(freq, seconds=1.0, amp=0.5, sr=CFG.sample_rate):
    t = np.arange(int(seconds * sr)) / sr
    return (amp * np.sin(2 * np.pi * freq * t)).astype(np.float64)


class TestFraming:
    def test_one_second_is_87_frames(self):
        # ceil(22050 / 256) = 87
        assert num_frames(22050, 256) == 87
        assert mel_spectrogram(sine(220), CFG).shape == (87, 80)

    @given(st.integers(min_value=1, max_value=100000))
    def test_frame_count_is_ceil_of_hop_ratio(self, n):
        assert num_frames(n, 256) == -(-n // 256)

    def test_frame_matrix_shape_and_centering(self):
        y = np.arange(1000, dtype=np.float64)
        frames = frame_signal(y, 512, 256)
        assert frames.shape == (num_frames(1000, 256), 512)
        # frame t is centered on sample t*hop; frame 0 sees zero padding
        assert frames[0, 0] == 0.0
        assert frames[1, 256] == 256.0


class TestMelAnalysis:
    def test_filterbank_shape_and_coverage(self):
        basis = mel_filterbank(CFG)
        assert basis.shape == (80, CFG.n_fft // 2 + 1)
        assert np.all(basis >= 0)
        assert np.all(basis.sum(axis=1) > 0)

    def test_silence_hits_the_log_floor(self):
        mel = mel_spectrogram(np.zeros(22050), CFG)
        assert np.allclose(mel, np.log(CFG.mel_floor))

    def test_louder_signal_raises_mel_values(self):
        quiet = mel_spectrogram(sine(220, amp=0.1), CFG)
        loud = mel_spectrogram(sine(220, amp=0.8), CFG)
        assert loud.max() > quiet.max()

    def test_mel_is_finite_float32_friendly(self):
        mel = mel_spectrogram(sine(440), CFG)
        assert np.all(np.isfinite(mel))


class TestEnergy:
    def test_silence_has_zero_energy(self):
        assert np.allclose(frame_energy(np.zeros(4096), CFG), 0.0)

    def test_constant_signal_matches_l2_norm(self):
        y = np.full(CFG.win_length, 0.25)
        e = frame_energy(y, CFG)
        # interior frame sees the full constant window
        expected = np.sqrt(CFG.win_length * 0.25**2)
        assert e.max() == pytest.approx(expected, rel=1e-6)

    def test_scaling_amplitude_scales_energy(self):
        y = sine(150)
        assert np.allclose(frame_energy(3 * y, CFG),
                           3 * frame_energy(y, CFG), rtol=1e-9)


class TestPitchTracking:
    @pytest.mark.parametrize("freq", [110.0, 220.0, 330.0])
    def test_pure_tone_recovered(self, freq):
        f0 = track_f0(sine(freq), CFG)
        voiced = f0[f0 > 0]
        assert len(voiced) > 0.8 * len(f0)
        assert np.median(voiced) == pytest.approx(freq, rel=0.01)

    def test_silence_is_unvoiced(self):
        assert np.all(track_f0(np.zeros(22050), CFG) == 0)

    def test_noise_is_mostly_unvoiced(self):
        rng = np.random.default_rng(3)
        y = 0.3 * rng.standard_normal(22050)
        f0 = track_f0(y, CFG)
        assert np.mean(f0 > 0) < 0.5

    def test_range_limits_respected(self):
        f0 = track_f0(sine(220), CFG)
        voiced = f0[f0 > 0]
        assert voiced.min() >= CFG.f0_min
        assert voiced.max() <= CFG.f0_max

    def test_glide_tracks_direction(self):
        sr = CFG.sample_rate
        t = np.arange(sr) / sr
        inst = np.linspace(150, 250, sr)
        y = 0.5 * np.sin(2 * np.pi * np.cumsum(inst) / sr)
        f0 = track_f0(y, CFG)
        voiced_idx = np.flatnonzero(f0 > 0)
        first = f0[voiced_idx[: len(voiced_idx) // 3]].mean()
        last = f0[voiced_idx[-len(voiced_idx) // 3:]].mean()
        assert last > first + 50


class TestMfcc:
    def test_shape(self):
        assert mfcc(sine(220), CFG).shape == (87, 14)

    def test_silence_concentrates_in_c0(self):
        c = mfcc(np.zeros(22050), CFG)
        # constant log-mel -> all energy in the DC coefficient
        assert np.allclose(c[:, 1:], 0.0, atol=1e-9)
        assert np.all(c[:, 0] < 0)


class TestReconstruction:
    def test_stft_shape(self):
        spec = stft(sine(220), CFG.n_fft, CFG.hop_length, CFG.win_length)
        assert spec.shape == (87, CFG.n_fft // 2 + 1)

    def test_mel_to_linear_nonnegative(self):
        lin = mel_to_linear(mel_spectrogram(sine(220), CFG), CFG)
        assert lin.shape == (87, CFG.n_fft // 2 + 1)
        assert np.all(lin >= 0)

    def test_griffin_lim_length_and_determinism(self):
        mel = mel_spectrogram(sine(220), CFG)
        mag = mel_to_linear(mel, CFG)
        a = griffin_lim(mag, CFG, n_iter=4)
        b = griffin_lim(mag, CFG, n_iter=4)
        assert a.shape == (87 * CFG.hop_length,)
        assert np.array_equal(a, b)

    def test_griffin_lim_preserves_pitch(self):
        mel = mel_spectrogram(sine(220), CFG)
        wav = griffin_lim(mel_to_linear(mel, CFG), CFG, n_iter=32)
        f0 = track_f0(wav, CFG)
        voiced = f0[f0 > 0]
        assert np.median(voiced) == pytest.approx(220.0, rel=0.05)


class TestWavIO:
    def test_round_trip_within_quantization(self, tmp_path):
        y = sine(220, seconds=0.2)
        path = tmp_path / "t.wav"
        save_wav(path, y, CFG.sample_rate)
        back = load_wav(path, CFG.sample_rate)
        assert back.shape == y.shape
        assert np.max(np.abs(back - y)) <= 1.0 / 32768 + 1e-9

    @settings(max_examples=20)
    @given(st.floats(min_value=0.05, max_value=0.95))
    def test_peak_preserved(self, tmp_path_factory, amp):
        path = tmp_path_factory.mktemp("wav") / "p.wav"
        y = sine(330, seconds=0.05, amp=amp)
        save_wav(path, y, CFG.sample_rate)
        back = load_wav(path, CFG.sample_rate)
        assert np.max(np.abs(back)) == pytest.approx(amp, abs=2e-4)
