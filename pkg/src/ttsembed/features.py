"""Waveform to log-mel features, plus the binary feature-cache format.

Framing: T = 1 + floor((len - frame_length) / hop), Hann window, magnitude
spectrum from an n_fft-point real FFT. Mel energies are clamped at a fixed
floor before the log so silence maps to a known constant.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError

LOG_FLOOR = 1e-10
CACHE_MAGIC = b"MELF"


@dataclass
class Waveform:
    samples: np.ndarray          # float64 in [-1, 1]
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")


@dataclass
class MelSpectrogram:
    frames: np.ndarray           # T x D_a log-mel energies
    frame_shift: float           # seconds
    n_mels: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DataError("mel spectrogram must be a T x D matrix with T >= 1")


@dataclass
class FeatureConfig:
    sample_rate: int = 16000
    frame_length_ms: float = 50.0
    hop_ms: float = 12.5
    n_fft: int = 1024
    n_mels: int = 40
    f_min: float = 0.0
    f_max: float | None = None   # default sample_rate / 2

    @property
    def frame_length(self) -> int:
        return int(round(self.sample_rate * self.frame_length_ms / 1000.0))

    @property
    def hop(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))


def frame_count(n_samples: int, cfg: FeatureConfig) -> int:
    if n_samples < cfg.frame_length:
        raise DataError(
            f"waveform of {n_samples} samples is shorter than one frame "
            f"({cfg.frame_length} samples)")
    return 1 + (n_samples - cfg.frame_length) // cfg.hop


def stft_magnitude(w: Waveform, frame_length: int, hop: int, n_fft: int) -> np.ndarray:
    """Hann-windowed magnitude STFT; rows are frames, columns FFT bins."""
    if frame_length > n_fft:
        raise ConfigError(f"frame_length {frame_length} exceeds n_fft {n_fft}")
    if hop < 1:
        raise ConfigError("hop must be >= 1")
    n = w.samples.size
    if n < frame_length:
        raise DataError(f"waveform of {n} samples is shorter than one frame")
    t = 1 + (n - frame_length) // hop
    idx = np.arange(frame_length)[None, :] + hop * np.arange(t)[:, None]
    frames = w.samples[idx] * np.hanning(frame_length)[None, :]
    return np.abs(np.fft.rfft(frames, n=n_fft, axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_fft: int, n_mels: int, sample_rate: int,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """Triangular filters on a mel-spaced grid; shape n_mels x (n_fft/2 + 1)."""
    if f_max is None:
        f_max = sample_rate / 2.0
    if not (0 <= f_min < f_max <= sample_rate / 2.0):
        raise ConfigError(f"invalid band edges f_min={f_min}, f_max={f_max}")
    if n_mels < 1:
        raise ConfigError("n_mels must be >= 1")
    n_bins = n_fft // 2 + 1
    if n_mels > n_bins - 2:
        raise ConfigError(f"{n_mels} filters do not fit into {n_bins} bins")
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bin_hz = np.arange(n_bins) * sample_rate / n_fft
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, center, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        up = (bin_hz - lo) / max(center - lo, 1e-12)
        down = (hi - bin_hz) / max(hi - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def filter_centers_hz(n_fft: int, n_mels: int, sample_rate: int,
                      f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    if f_max is None:
        f_max = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    return edges[1:-1]


def log_mel(w: Waveform, cfg: FeatureConfig) -> MelSpectrogram:
    mag = stft_magnitude(w, cfg.frame_length, cfg.hop, cfg.n_fft)
    fb = mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.sample_rate, cfg.f_min, cfg.f_max)
    energy = (mag * mag) @ fb.T
    frames = np.log(np.maximum(energy, LOG_FLOOR))
    return MelSpectrogram(frames, cfg.hop_ms / 1000.0, cfg.n_mels)


# ---------------------------------------------------------------------------
# feature cache: header {magic "MELF", u32 T, u32 D_a, f64 frame_shift},
# then T*D_a little-endian f64 values.
# ---------------------------------------------------------------------------

def save_features(path, mel: MelSpectrogram):
    t, d = mel.frames.shape
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<IId", t, d, mel.frame_shift))
        f.write(mel.frames.astype("<f8").tobytes())


def load_features(path) -> MelSpectrogram:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CACHE_MAGIC:
            raise DataError(f"{path}: bad feature-cache magic {magic!r}")
        t, d, frame_shift = struct.unpack("<IId", f.read(16))
        buf = f.read(8 * t * d)
        if len(buf) != 8 * t * d:
            raise DataError(f"{path}: truncated feature cache")
        frames = np.frombuffer(buf, dtype="<f8").reshape(t, d)
    return MelSpectrogram(frames.copy(), frame_shift, d)
