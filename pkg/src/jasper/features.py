"""Audio ingestion, log-mel filterbank features, and speed perturbation."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import get_window


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.isfinite(self.samples).all():
            raise ValueError("audio samples must be finite")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    n_mels: int = 64
    window_ms: float = 20.0
    hop_ms: float = 10.0
    fft_size: int | None = None  # next power of two >= window
    preemphasis: float = 0.97
    normalize: bool = True
    log_floor: float = 1e-20

    def __post_init__(self):
        if self.hop_ms > self.window_ms:
            raise ValueError("hop must not exceed window")

    def frame_params(self, sample_rate: int) -> tuple[int, int, int]:
        win = int(round(self.window_ms * sample_rate / 1000))
        hop = int(round(self.hop_ms * sample_rate / 1000))
        nfft = self.fft_size or 1 << (win - 1).bit_length()
        if nfft < win:
            raise ValueError(f"fft_size {nfft} shorter than window {win}")
        if self.n_mels > nfft // 2:
            raise ValueError(f"n_mels {self.n_mels} exceeds fft_size/2")
        return win, hop, nfft


class WavFormatError(ValueError):
    pass


def read_wav(path) -> AudioClip:
    """Read a PCM16 mono RIFF/WAVE file, scaling samples by 1/32768."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise WavFormatError(f"{path}: compressed WAV not supported")
            if wf.getsampwidth() != 2:
                raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
            if wf.getnchannels() != 1:
                raise WavFormatError(f"{path}: expected mono, got {wf.getnchannels()} channels")
            n = wf.getnframes()
            raw = wf.readframes(n)
            rate = wf.getframerate()
    except (wave.Error, EOFError, struct.error) as exc:
        raise WavFormatError(f"{path}: {exc}") from None
    if len(raw) != 2 * n:
        raise WavFormatError(f"{path}: truncated data chunk ({len(raw)} of {2 * n} bytes)")
    return AudioClip(np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate)


def write_wav(path, clip: AudioClip) -> None:
    """Write PCM16 mono; samples are scaled by 32768 and clipped to the int16 range."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, nfft: int, sample_rate: int) -> np.ndarray:
    """Triangular HTK-mel filters ``[n_mels, nfft//2 + 1]`` with unit peak height."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.linspace(0.0, sample_rate / 2, nfft // 2 + 1)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def mel_band_centers(n_mels: int, sample_rate: int) -> np.ndarray:
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))[1:-1]


def num_frames(n_samples: int, win: int, hop: int) -> int:
    return 1 + (n_samples - win) // hop


def mel_features(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Log-mel energies ``[1, n_mels, T]`` with ``T = 1 + (N - W) // H`` (no centre padding)."""
    win, hop, nfft = cfg.frame_params(clip.sample_rate)
    x = clip.samples
    if len(x) < win:
        raise ValueError(f"clip of {len(x)} samples shorter than one {win}-sample window")
    if cfg.preemphasis:
        x = np.concatenate([x[:1], x[1:] - cfg.preemphasis * x[:-1]])
    t = num_frames(len(x), win, hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:t]
    spec = np.abs(np.fft.rfft(frames * get_window("hann", win), n=nfft, axis=1)) ** 2
    energies = spec @ mel_filterbank(cfg.n_mels, nfft, clip.sample_rate).T
    feats = np.log(np.maximum(energies, cfg.log_floor)).T
    if cfg.normalize:
        feats = normalize_features(feats)
    return feats[None]


def normalize_features(feats: np.ndarray) -> np.ndarray:
    """Per-coefficient zero mean / unit variance over time; constant rows become zero."""
    mean = feats.mean(axis=1, keepdims=True)
    std = feats.std(axis=1, keepdims=True)
    return (feats - mean) / np.where(std > 0, std, 1.0)


SPEED_RANGE = (0.85, 1.15)


def speed_perturb(clip: AudioClip, factor: float) -> AudioClip:
    """Resample to ``round(N / factor)`` samples by linear interpolation."""
    if not SPEED_RANGE[0] <= factor <= SPEED_RANGE[1]:
        raise ValueError(f"speed factor {factor} outside {SPEED_RANGE}")
    n = len(clip.samples)
    m = int(round(n / factor))
    if factor == 1.0 or m == n:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    pos = np.arange(m) * ((n - 1) / (m - 1)) if m > 1 else np.zeros(1)
    return AudioClip(np.interp(pos, np.arange(n), clip.samples), clip.sample_rate)


def choose_speed_factor(policy: str, rng: np.random.Generator) -> float:
    """``fixed``: one of {0.9, 1.0, 1.1}; ``random``: uniform in [0.9, 1.1]; ``none``: 1.0."""
    if policy == "none":
        return 1.0
    if policy == "fixed":
        return float(rng.choice([0.9, 1.0, 1.1]))
    if policy == "random":
        return float(rng.uniform(0.9, 1.1))
    raise ValueError(f"unknown speed perturbation policy {policy!r}")


# Precomputed feature files: little-endian u32 n_mels, u32 T, then row-major f32 [n_mels, T].
_FEAT_HEADER = struct.Struct("<II")


def write_feature_file(path, feats: np.ndarray) -> None:
    feats = np.asarray(feats)
    if feats.ndim == 3:
        feats = feats[0]
    with open(path, "wb") as f:
        f.write(_FEAT_HEADER.pack(*feats.shape))
        f.write(feats.astype("<f4").tobytes())


def read_feature_file(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _FEAT_HEADER.size:
        raise ValueError(f"{path}: feature file too short")
    n_mels, t = _FEAT_HEADER.unpack_from(data)
    body = data[_FEAT_HEADER.size :]
    if len(body) != 4 * n_mels * t:
        raise ValueError(f"{path}: expected {4 * n_mels * t} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(n_mels, t).astype(np.float64)[None]
