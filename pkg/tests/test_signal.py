import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unitts.errors import InvalidInputError
from unitts.signal import (
    LOG_FLOOR,
    FrameConfig,
    Waveform,
    analysis_window,
    cepstra,
    griffin_lim,
    istft,
    mel_filterbank,
    mel_spectrogram,
    mfcc,
    spectral_convergence,
    stft,
)

SR = 16000
CFG = FrameConfig()


def tone(freq, seconds=0.5, amp=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


def direct_dft_frames(x, cfg):
    # independent framing + explicit DFT matrix
    pad = cfg.fft_size // 2
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    win = analysis_window(cfg)
    n = np.arange(cfg.fft_size)
    k = np.arange(cfg.fft_size // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(n, k) / cfg.fft_size)
    frames = []
    for start in range(0, len(x) // cfg.hop * cfg.hop + 1, cfg.hop):
        frames.append((xp[start : start + cfg.fft_size] * win) @ basis)
    return np.array(frames)


class TestStft:
    def test_zero_waveform_gives_zero_magnitude(self):
        spec = stft(Waveform(np.zeros(3000), SR))
        assert np.all(np.abs(spec) == 0)

    def test_frame_count(self):
        assert stft(np.random.default_rng(0).standard_normal(1024), FrameConfig(1024, 256, 1024)).shape[0] == 5

    def test_bin_center_sine_matches_direct_dft(self):
        k = 37
        w = tone(k * SR / CFG.fft_size)
        spec = stft(w)
        oracle = direct_dft_frames(w.samples, CFG)
        np.testing.assert_allclose(spec, oracle, atol=1e-8)
        interior = np.abs(spec[3:-3])
        assert np.all(interior.argmax(axis=1) == k)

    def test_empty_waveform_rejected(self):
        with pytest.raises(InvalidInputError):
            stft(np.array([]))

    @pytest.mark.parametrize("hop,win,fft", [(0, 800, 1024), (900, 800, 1024), (200, 1200, 1024)])
    def test_invalid_config(self, hop, win, fft):
        with pytest.raises(InvalidInputError):
            FrameConfig(fft, hop, win)

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(min_value=1, max_value=4000), seed=st.integers(0, 2**16))
    def test_istft_round_trip(self, n, seed):
        x = np.random.default_rng(seed).uniform(-1, 1, n)
        y = istft(stft(x, CFG), CFG, n)
        np.testing.assert_allclose(y, x, atol=1e-6)

    def test_pure(self):
        x = np.random.default_rng(3).standard_normal(5000)
        assert np.array_equal(stft(x), stft(x.copy()))


class TestMel:
    def test_filterbank_rows_positive_and_compact(self):
        fb = mel_filterbank(SR, 1024, 80)
        assert np.all(fb.sum(axis=1) > 0)
        for row in fb:
            nz = np.flatnonzero(row)
            # contiguous support well short of the full spectrum
            assert nz[-1] - nz[0] + 1 == nz.size
            assert nz.size < fb.shape[1] / 4

    def test_zero_waveform_is_log_floor(self):
        mel = mel_spectrogram(Waveform(np.zeros(4000), SR))
        assert np.all(mel.frames == np.log(LOG_FLOOR))

    def test_filterbank_application_matches_matmul(self):
        rng = np.random.default_rng(1)
        w = Waveform(rng.uniform(-0.5, 0.5, 6000), SR)
        mag = np.abs(stft(w))
        fb = mel_filterbank(SR, CFG.fft_size, 40)
        expected = np.empty((mag.shape[0], 40))
        for t in range(mag.shape[0]):
            for m in range(40):
                expected[t, m] = np.log(max(sum(fb[m, k] * mag[t, k] for k in range(mag.shape[1])), LOG_FLOOR))
        np.testing.assert_allclose(mel_spectrogram(w, CFG, 40).frames, expected, rtol=1e-10, atol=1e-12)


class TestMfcc:
    def test_width_39(self):
        w = Waveform(np.random.default_rng(0).uniform(-0.3, 0.3, 9000), SR)
        assert mfcc(w).frames.shape == (9000 // CFG.hop + 1, 39)

    def test_stationary_input_has_zero_deltas(self):
        # 400 Hz: 40-sample period divides the hop, so every frame sees the same samples
        f = mfcc(tone(400, 1.0)).frames
        interior = f[8:-8]
        np.testing.assert_allclose(interior[:, 13:], 0.0, atol=1e-8)

    def test_delta_matches_least_squares_slope(self):
        w = Waveform(np.random.default_rng(5).uniform(-0.5, 0.5, 8000), SR)
        f = mfcc(w).frames
        base = f[:, :13]
        n = base.shape[0]
        x = np.arange(-2, 3, dtype=np.float64)
        for t in range(n):
            rows = base[np.clip(np.arange(t - 2, t + 3), 0, n - 1)]
            slope = np.linalg.lstsq(np.stack([x, np.ones(5)], 1), rows, rcond=None)[0][0]
            np.testing.assert_allclose(f[t, 13:26], slope, atol=1e-9)

    def test_short_waveform_rejected(self):
        with pytest.raises(InvalidInputError):
            mfcc(Waveform(np.ones(CFG.window_len - 1), SR))

    def test_cepstra_ignore_gain_except_c0(self):
        w = Waveform(np.random.default_rng(2).uniform(-0.2, 0.2, 6000), SR)
        a = cepstra(w)
        b = cepstra(Waveform(2 * w.samples, SR))
        np.testing.assert_allclose(a[:, 1:], b[:, 1:], atol=1e-9)


class TestGriffinLim:
    def test_zero_magnitude_gives_silence(self):
        out = griffin_lim(np.zeros((20, CFG.n_bins)), CFG, iters=5)
        assert np.all(out.samples == 0)

    def test_true_phase_is_fixed_point(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-0.5, 0.5, 200 * 30)
        spec = stft(x)
        out = griffin_lim(np.abs(spec), CFG, iters=0, init_phase=np.angle(spec), length=len(x))
        np.testing.assert_allclose(out.samples, x, atol=1e-9)

    def test_sine_converges(self):
        mag = np.abs(stft(tone(440, 0.6)))
        out, hist = griffin_lim(mag, CFG, iters=60, return_history=True)
        assert hist[-1] < 0.1
        assert spectral_convergence(np.abs(stft(out)), mag) == pytest.approx(hist[-1])

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_convergence_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-0.5, 0.5, 200 * 40) * np.hanning(200 * 40)
        _, hist = griffin_lim(np.abs(stft(x)), CFG, iters=40, seed=seed, return_history=True)
        assert np.all(np.diff(hist) <= 1e-7)

    def test_negative_magnitude_rejected(self):
        mag = np.ones((5, CFG.n_bins))
        mag[2, 3] = -1
        with pytest.raises(InvalidInputError):
            griffin_lim(mag, CFG)

    def test_deterministic(self):
        mag = np.abs(stft(tone(300, 0.3)))
        a = griffin_lim(mag, CFG, iters=5, seed=3).samples
        b = griffin_lim(mag, CFG, iters=5, seed=3).samples
        assert np.array_equal(a, b)
