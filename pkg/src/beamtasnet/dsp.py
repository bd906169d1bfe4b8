"""STFT analysis/synthesis and the waveform/spectrogram containers.

Spectrograms are stored as ``[channel, frame, bin]`` complex arrays with a
one-sided spectrum of ``fft_size // 2 + 1`` bins. Synthesis is weighted
overlap-add with the analysis window reused as the synthesis window and
normalization by the summed squared window.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StftConfig",
    "MultiChannelWaveform",
    "ComplexSpectrogram",
    "stft",
    "istft",
    "analysis_window",
]


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    hop: int = 128
    window: str = "hann"
    center_pad: bool = True

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two >= 2, got {self.fft_size}")
        if self.hop < 1 or self.fft_size % self.hop:
            raise ValueError(f"hop {self.hop} must divide fft_size {self.fft_size}")
        if self.hop > self.fft_size // 2:
            raise ValueError(f"hop {self.hop} exceeds fft_size/2")
        if self.window not in ("hann", "sqrt_hann"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass
class MultiChannelWaveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2:
            raise ValueError(f"expected a C x T sample matrix, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        self.samples = samples

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    def channel(self, c: int) -> np.ndarray:
        """Samples of channel ``c`` (1-based)."""
        return self.samples[c - 1]


@dataclass
class ComplexSpectrogram:
    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise ValueError(f"expected [channel, frame, bin] data, got shape {data.shape}")
        self.data = data

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def frame_count(self) -> int:
        return self.data.shape[1]

    @property
    def num_bins(self) -> int:
        return self.data.shape[2]


def analysis_window(cfg: StftConfig, dtype=np.float64) -> np.ndarray:
    n = np.arange(cfg.fft_size)
    # periodic Hann
    win = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / cfg.fft_size)
    if cfg.window == "sqrt_hann":
        win = np.sqrt(win)
    return win.astype(dtype)


def _frame_layout(length: int, cfg: StftConfig) -> tuple[int, int, int]:
    """Return (left pad, padded length, frame count) for a signal of ``length``."""
    left = cfg.fft_size // 2 if cfg.center_pad else 0
    padded = length + 2 * left
    if padded <= cfg.fft_size:
        frames = 1
    else:
        frames = -(-(padded - cfg.fft_size) // cfg.hop) + 1
    total = (frames - 1) * cfg.hop + cfg.fft_size
    return left, total, frames


def stft(wave: MultiChannelWaveform | np.ndarray, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    cfg = cfg or StftConfig()
    samples = wave.samples if isinstance(wave, MultiChannelWaveform) else np.atleast_2d(wave)
    if samples.shape[-1] == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(samples)):
        raise ValueError("non-finite input")
    samples = np.asarray(samples, dtype=np.float64)
    left, total, frames = _frame_layout(samples.shape[1], cfg)
    buf = np.zeros((samples.shape[0], total))
    buf[:, left:left + samples.shape[1]] = samples
    idx = np.arange(cfg.fft_size)[None, :] + cfg.hop * np.arange(frames)[:, None]
    segs = buf[:, idx] * analysis_window(cfg)
    return ComplexSpectrogram(np.fft.rfft(segs, axis=-1), cfg)


def istft(spec: ComplexSpectrogram, cfg: StftConfig | None = None, target_length: int | None = None,
          sample_rate: int = 16000) -> MultiChannelWaveform:
    cfg = cfg or spec.config
    if spec.num_bins != cfg.num_bins:
        raise ValueError("config/spec mismatch")
    channels, frames, _ = spec.data.shape
    # Hermitian completion: irfft discards imaginary parts of DC/Nyquist, so do it by hand
    # to keep the imaginary residual observable.
    full = np.concatenate([spec.data, np.conj(spec.data[..., -2:0:-1])], axis=-1)
    time = np.fft.ifft(full, axis=-1)
    segs = time.real
    win = analysis_window(cfg)
    total = (frames - 1) * cfg.hop + cfg.fft_size
    out = np.zeros((channels, total))
    norm = np.zeros(total)
    for t in range(frames):
        sl = slice(t * cfg.hop, t * cfg.hop + cfg.fft_size)
        out[:, sl] += segs[:, t] * win
        norm[sl] += win ** 2
    nz = norm > 1e-10
    out[:, nz] /= norm[nz]
    left = cfg.fft_size // 2 if cfg.center_pad else 0
    out = out[:, left:]
    if target_length is None:
        target_length = out.shape[1] - left
    if target_length <= out.shape[1]:
        out = out[:, :target_length]
    else:
        out = np.pad(out, ((0, 0), (0, target_length - out.shape[1])))
    return MultiChannelWaveform(out, sample_rate)


def max_imag_residual(spec: ComplexSpectrogram) -> float:
    """Largest |imag| of the inverse DFT of the Hermitian-completed frames."""
    full = np.concatenate([spec.data, np.conj(spec.data[..., -2:0:-1])], axis=-1)
    return float(np.max(np.abs(np.fft.ifft(full, axis=-1).imag), initial=0.0))
