"""Framing, spectrograms, MFCCs and Griffin-Lim phase reconstruction.

Everything here is a pure function of its inputs.  Spectra are computed with
centered frames (zero padding of ``fft_size // 2`` on both sides) so the frame
count is ``len // hop + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
import json

import numpy as np
from scipy.fft import dct

from .errors import InvalidInputError

LOG_FLOOR = 1e-5
N_BASE_CEPSTRA = 13
DELTA_CONTEXT = 2


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.shape[0] < 1:
            raise InvalidInputError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise InvalidInputError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class FrameConfig:
    """STFT geometry.  Defaults are 50 ms Hann windows every 12.5 ms at 16 kHz."""

    fft_size: int = 1024
    hop: int = 200
    window_len: int = 800
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.window_len <= self.fft_size:
            raise InvalidInputError(
                f"need 0 < hop <= window_len <= fft_size, got {self.hop}, {self.window_len}, {self.fft_size}"
            )
        if self.fft_size % 2:
            raise InvalidInputError("fft_size must be even")
        if self.window not in _WINDOWS:
            raise InvalidInputError(f"unknown window {self.window!r}; choose from {sorted(_WINDOWS)}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def to_dict(self) -> dict:
        return {"fft_size": self.fft_size, "hop": self.hop, "window_len": self.window_len, "window": self.window}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # (n_frames, n_mels) natural-log magnitude
    config: FrameConfig = field(default_factory=FrameConfig)
    sample_rate: int = 16000

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class MfccFrames:
    frames: np.ndarray  # (n_frames, 39): 13 cepstra, 13 deltas, 13 delta-deltas

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != 3 * N_BASE_CEPSTRA:
            raise InvalidInputError(f"MFCC frames must have width {3 * N_BASE_CEPSTRA}")
        if not np.all(np.isfinite(f)):
            raise InvalidInputError("MFCC frames contain non-finite values")
        object.__setattr__(self, "frames", f)

    def __len__(self):
        return self.frames.shape[0]


def _hann(n):
    # periodic Hann, which overlap-adds to a constant at hop = n / 4
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _hamming(n):
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)


_WINDOWS = {"hann": _hann, "hamming": _hamming, "boxcar": np.ones}


def analysis_window(cfg: FrameConfig) -> np.ndarray:
    """Taper of length ``window_len`` zero-padded (centered) to ``fft_size``."""
    w = np.zeros(cfg.fft_size)
    start = (cfg.fft_size - cfg.window_len) // 2
    w[start : start + cfg.window_len] = _WINDOWS[cfg.window](cfg.window_len)
    return w


def n_frames(n_samples: int, cfg: FrameConfig) -> int:
    return n_samples // cfg.hop + 1


def _samples(w) -> np.ndarray:
    if isinstance(w, Waveform):
        return w.samples
    s = np.asarray(w, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] < 1:
        raise InvalidInputError("waveform must be a non-empty 1-D array")
    return s


def stft(w, cfg: FrameConfig = FrameConfig()) -> np.ndarray:
    """Complex spectrogram of shape ``(len // hop + 1, fft_size // 2 + 1)``."""
    x = _samples(w)
    pad = cfg.fft_size // 2
    xp = np.pad(x, pad)
    count = n_frames(x.shape[0], cfg)
    idx = np.arange(cfg.fft_size)[None, :] + cfg.hop * np.arange(count)[:, None]
    frames = xp[idx] * analysis_window(cfg)
    return np.fft.rfft(frames, axis=1)


def istft(spec: np.ndarray, cfg: FrameConfig = FrameConfig(), length: int | None = None) -> np.ndarray:
    """Least-squares inverse of :func:`stft` (window-weighted overlap-add)."""
    spec = np.asarray(spec)
    count = spec.shape[0]
    win = analysis_window(cfg)
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1) * win
    pad = cfg.fft_size // 2
    total = cfg.fft_size + cfg.hop * (count - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = win * win
    for m in range(count):
        sl = slice(m * cfg.hop, m * cfg.hop + cfg.fft_size)
        out[sl] += frames[m]
        norm[sl] += wsq
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    if length is None:
        length = cfg.hop * (count - 1)
    out = out[pad : pad + length]
    if out.shape[0] < length:
        out = np.pad(out, (0, length - out.shape[0]))
    return out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, fft_size: int, n_mels: int, fmin: float = 0.0, fmax: float | None = None):
    """Triangular filters on the HTK mel scale, shape ``(n_mels, fft_size // 2 + 1)``."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    if not 0 <= fmin < fmax <= sample_rate / 2.0:
        raise InvalidInputError("need 0 <= fmin < fmax <= sample_rate / 2")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.linspace(0.0, sample_rate / 2.0, fft_size // 2 + 1)
    lower = (freqs[None, :] - edges[:-2, None]) / (edges[1:-1] - edges[:-2])[:, None]
    upper = (edges[2:, None] - freqs[None, :]) / (edges[2:] - edges[1:-1])[:, None]
    fb = np.maximum(0.0, np.minimum(lower, upper))
    # filters narrower than one bin still get their nearest bin
    empty = fb.sum(axis=1) <= 0
    if np.any(empty):
        centers = np.argmin(np.abs(freqs[None, :] - edges[1:-1, None]), axis=1)
        fb[empty, centers[empty]] = 1.0
    return fb


def mel_spectrogram(w: Waveform, cfg: FrameConfig = FrameConfig(), n_mels: int = 80) -> MelSpectrogram:
    if not isinstance(w, Waveform):
        raise InvalidInputError("mel_spectrogram needs a Waveform (sample rate is required)")
    mag = np.abs(stft(w, cfg))
    fb = mel_filterbank(w.sample_rate, cfg.fft_size, n_mels)
    frames = np.log(np.maximum(mag @ fb.T, LOG_FLOOR))
    return MelSpectrogram(frames, cfg, w.sample_rate)


def cepstra(w: Waveform, cfg: FrameConfig = FrameConfig(), n_coeffs: int = 13, n_mels: int = 40) -> np.ndarray:
    """Mel cepstra c0..c{n_coeffs-1}: orthonormal DCT-II of log mel power."""
    power = np.abs(stft(w, cfg)) ** 2
    fb = mel_filterbank(w.sample_rate, cfg.fft_size, n_mels)
    logmel = np.log(np.maximum(power @ fb.T, LOG_FLOOR))
    return dct(logmel, type=2, norm="ortho", axis=1)[:, :n_coeffs]


def deltas(feats: np.ndarray, context: int = DELTA_CONTEXT) -> np.ndarray:
    """Regression slope over ``±context`` frames with edge frames replicated."""
    feats = np.asarray(feats, dtype=np.float64)
    n = feats.shape[0]
    padded = np.pad(feats, ((context, context), (0, 0)), mode="edge")
    denom = 2.0 * sum(k * k for k in range(1, context + 1))
    out = np.zeros_like(feats)
    for k in range(1, context + 1):
        out += k * (padded[context + k : context + k + n] - padded[context - k : context - k + n])
    return out / denom


def mfcc(w: Waveform, cfg: FrameConfig = FrameConfig(), n_mels: int = 40) -> MfccFrames:
    """39-dim MFCCs: c0..c12 with first and second regression deltas."""
    if not isinstance(w, Waveform):
        raise InvalidInputError("mfcc needs a Waveform (sample rate is required)")
    if len(w) < cfg.window_len:
        raise InvalidInputError(f"waveform has {len(w)} samples, shorter than one window ({cfg.window_len})")
    base = cepstra(w, cfg, N_BASE_CEPSTRA, n_mels)
    d1 = deltas(base)
    d2 = deltas(d1)
    return MfccFrames(np.concatenate([base, d1, d2], axis=1))


def _bin_weights(n_bins: int) -> np.ndarray:
    # one-sided spectrum weighted so norms equal the two-sided norm
    wt = np.full(n_bins, 2.0)
    wt[0] = 1.0
    wt[-1] = 1.0
    return wt


def spectral_convergence(mag_est: np.ndarray, mag: np.ndarray) -> float:
    """``|| |S_est| - mag || / || mag ||`` in the two-sided spectral norm."""
    wt = _bin_weights(mag.shape[1])
    num = np.sqrt(np.sum(wt * (mag_est - mag) ** 2))
    den = np.sqrt(np.sum(wt * mag**2))
    if den == 0.0:
        return float(num > 0.0)
    return float(num / den)


def griffin_lim(
    mag: np.ndarray,
    cfg: FrameConfig = FrameConfig(),
    iters: int = 60,
    sample_rate: int = 16000,
    init_phase: np.ndarray | None = None,
    seed: int = 0,
    length: int | None = None,
    return_history: bool = False,
):
    """Recover a waveform whose STFT magnitude approximates ``mag``.

    Alternates between imposing ``mag`` and projecting onto consistent
    spectrograms (least-squares ISTFT then STFT).  The distance measured by
    :func:`spectral_convergence` cannot increase between iterations; the
    per-iteration values are returned when ``return_history`` is set.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[1] != cfg.n_bins:
        raise InvalidInputError(f"magnitude must have shape (n_frames, {cfg.n_bins})")
    if not np.all(np.isfinite(mag)):
        raise InvalidInputError("magnitude contains non-finite values")
    if np.any(mag < 0):
        raise InvalidInputError("magnitude must be non-negative")
    if iters < 0:
        raise InvalidInputError("iters must be >= 0")
    if length is None:
        length = cfg.hop * (mag.shape[0] - 1)
    length = max(int(length), 1)
    if init_phase is None:
        rng = np.random.default_rng(seed)
        phase = np.exp(2j * np.pi * rng.random(mag.shape))
    else:
        phase = np.exp(1j * np.asarray(init_phase))

    x = istft(mag * phase, cfg, length)
    history = []
    for _ in range(iters):
        est = stft(x, cfg)
        history.append(spectral_convergence(np.abs(est), mag))
        x = istft(mag * np.exp(1j * np.angle(est)), cfg, length)
    history.append(spectral_convergence(np.abs(stft(x, cfg)), mag))
    wav = Waveform(x, sample_rate)
    if return_history:
        return wav, history
    return wav
