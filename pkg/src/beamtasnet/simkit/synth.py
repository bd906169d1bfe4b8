"""Speech-like sources, noise fields, far-field spatialization and mixing."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from ..dsp import MultiChannelWaveform

__all__ = [
    "ArrayGeometry",
    "MixtureSpec",
    "NOISE_KINDS",
    "synth_speech",
    "make_noise",
    "fractional_delay",
    "spatialize",
    "make_mixture",
]

NOISE_KINDS = ("white", "pink", "diffuse", "recorded-file", "none")


@dataclass(frozen=True)
class ArrayGeometry:
    positions: tuple = ((0.0, 0, 0), (0.05, 0, 0), (0.10, 0, 0), (0.15, 0, 0), (0.20, 0, 0))
    speed_of_sound: float = 343.0

    def __post_init__(self):
        pos = self.array
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("positions must be a list of (x, y, z) coordinates in meters")
        if len({tuple(p) for p in pos.tolist()}) != len(pos):
            raise ValueError("microphone positions must be distinct")
        if self.speed_of_sound <= 0:
            raise ValueError("speed of sound must be positive")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=np.float64)

    @property
    def num_channels(self) -> int:
        return len(self.positions)

    @classmethod
    def linear(cls, num_mics: int = 5, spacing: float = 0.05) -> "ArrayGeometry":
        return cls(tuple((i * spacing, 0.0, 0.0) for i in range(num_mics)))

    def delays(self, azimuth_deg: float, fs: int) -> np.ndarray:
        """Per-channel delays in samples relative to channel 1."""
        az = np.deg2rad(azimuth_deg)
        unit = np.array([np.cos(az), np.sin(az), 0.0])
        rel = self.array - self.array[0]
        return rel @ unit / self.speed_of_sound * fs


@dataclass
class MixtureSpec:
    source: object
    noise_kind: str = "diffuse"
    snr_db: float = 0.0
    azimuth: float = 90.0
    seed: int = 0
    noise_file: str | None = None
    noise_sources: int = 4
    sensor_floor_db: float = -30.0
    gain_perturb_db: float = 0.0
    delay_perturb: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        if self.noise_kind != "none" and not np.isfinite(self.snr_db):
            raise ValueError("target SNR must be finite")


# ---------------------------------------------------------------- sources

def _formant_gain(freqs: np.ndarray, formants, bandwidths) -> np.ndarray:
    g = np.zeros_like(freqs)
    for f0, bw in zip(formants, bandwidths):
        g += 1.0 / (1.0 + ((freqs - f0) / (0.5 * bw)) ** 2)
    return g


def synth_speech(duration: float, fs: int = 16000, rng=None) -> np.ndarray:
    """Speech-like test signal: voiced harmonic syllables with formant envelopes,
    fricative bursts and pauses. Not intelligible, but sparse in time-frequency
    and pitched like speech, which is what masking and beamforming care about."""
    rng = np.random.default_rng(rng)
    n = int(round(duration * fs))
    out = np.zeros(n)
    pos = int(rng.uniform(0.05, 0.2) * fs)
    base_f0 = rng.uniform(95, 220)
    sos_fric = signal.butter(4, [2500, 6500], btype="bandpass", fs=fs, output="sos")
    while pos < n:
        for _ in range(rng.integers(1, 4)):
            if pos >= n:
                break
            if rng.random() < 0.25:
                m = int(rng.uniform(0.04, 0.10) * fs)
                burst = signal.sosfilt(sos_fric, rng.standard_normal(m)) * np.hanning(m) * 0.35
                seg = slice(pos, min(pos + m, n))
                out[seg] += burst[:seg.stop - seg.start]
                pos += m
                if pos >= n:
                    break
            m = int(rng.uniform(0.10, 0.28) * fs)
            t = np.arange(m) / fs
            f0 = base_f0 * (1 + rng.uniform(-0.15, 0.15)) * (1 + rng.uniform(-0.2, 0.2) * t / max(t[-1], 1e-3))
            phase = 2 * np.pi * np.cumsum(f0) / fs
            formants = (rng.uniform(300, 850), rng.uniform(900, 2300), rng.uniform(2300, 3300))
            harmonics = np.arange(1, int(4000 / f0.max()) + 1)
            amps = _formant_gain(harmonics * f0.mean(), formants, (90, 140, 200)) / np.sqrt(harmonics)
            voiced = (amps[:, None] * np.cos(harmonics[:, None] * phase[None, :]
                                             + rng.uniform(0, 2 * np.pi, len(harmonics))[:, None])).sum(0)
            env = np.sin(np.pi * np.arange(m) / m) ** 0.6
            seg = slice(pos, min(pos + m, n))
            out[seg] += (voiced * env)[:seg.stop - seg.start]
            pos += m
        pos += int(rng.uniform(0.06, 0.30) * fs)
    rms = np.sqrt(np.mean(out ** 2))
    if rms == 0:
        return out
    return out * (0.05 / rms)


def _pink(n: int, rng) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec))
    f[0] = 1
    x = np.fft.irfft(spec / np.sqrt(f), n)
    return x / np.std(x)


def fractional_delay(x: np.ndarray, delay: float, taps: int = 32, beta: float = 8.0) -> np.ndarray:
    """Delay ``x`` by ``delay`` samples (may be negative or fractional), keeping its length.

    Integer delays are exact shifts; fractional parts use a Kaiser-windowed sinc.
    """
    n = len(x)
    whole = int(np.floor(delay))
    frac = delay - whole
    if frac == 0.0:
        h, centre = np.ones(1), 0
    else:
        half = taps // 2
        m = np.arange(-half + 1, half + 1)
        arg = m - frac
        win = np.i0(beta * np.sqrt(np.clip(1 - (arg / half) ** 2, 0, None))) / np.i0(beta)
        h = np.sinc(arg) * win
        h /= h.sum()
        centre = half - 1
    full = np.convolve(x, h)
    start = centre - whole
    out = np.zeros(n)
    lo, hi = max(0, -start), min(n, len(full) - start)
    if hi > lo:
        out[lo:hi] = full[start + lo:start + hi]
    return out


def spatialize(source: np.ndarray, geometry: ArrayGeometry, azimuth: float, fs: int = 16000) -> MultiChannelWaveform:
    """Anechoic far-field image of ``source`` at each microphone; channel 1 is undelayed."""
    src = np.asarray(source, dtype=np.float64)
    delays = geometry.delays(azimuth, fs)
    return MultiChannelWaveform(np.stack([fractional_delay(src, d) for d in delays]), fs)


def make_noise(kind: str, channels: int, n: int, rng, geometry: ArrayGeometry | None = None,
               fs: int = 16000, noise_file: str | None = None, noise_sources: int = 4,
               sensor_floor_db: float = -30.0) -> np.ndarray:
    """Unscaled ``channels x n`` noise field of the given kind."""
    if kind == "white":
        return rng.standard_normal((channels, n))
    if kind == "pink":
        return np.stack([_pink(n, rng) for _ in range(channels)])
    if kind == "diffuse":
        geometry = geometry or ArrayGeometry.linear(channels)
        field_ = np.zeros((channels, n))
        for az in rng.uniform(0, 180, size=noise_sources):
            field_ += spatialize(_pink(n, rng), geometry, az, fs).samples
        field_ /= np.sqrt(noise_sources)
        floor = 10 ** (sensor_floor_db / 20)
        return field_ + floor * rng.standard_normal((channels, n))
    if kind == "recorded-file":
        if noise_file is None:
            raise ValueError("recorded-file noise needs noise_file")
        from .audio_io import read_wav
        rec = read_wav(noise_file).samples.astype(np.float64)
        reps = -(-n // rec.shape[1]) + 1
        rec = np.tile(rec, (1, reps))
        start = int(rng.integers(0, rec.shape[1] - n + 1))
        rec = rec[:, start:start + n]
        if rec.shape[0] == channels:
            return rec
        geometry = geometry or ArrayGeometry.linear(channels)
        return spatialize(rec[0], geometry, rng.uniform(0, 180), fs).samples
    if kind == "none":
        return np.zeros((channels, n))
    raise ValueError(f"unknown noise kind {kind!r}")


def _perturb(x: np.ndarray, gains_db: np.ndarray, delays: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    out[0] = x[0]
    for c in range(1, x.shape[0]):
        out[c] = fractional_delay(x[c], delays[c]) * 10 ** (gains_db[c] / 20)
    return out


def make_mixture(spec: MixtureSpec, geometry: ArrayGeometry | None = None, fs: int = 16000) -> dict:
    """Mix a spatialized source with scaled noise at the requested reference-channel SNR.

    Returns float32 ``mixture``, ``clean`` and ``noise`` (C x T) with
    ``mixture == clean + noise`` exactly, plus the realized ``snr_db``.
    """
    geometry = geometry or ArrayGeometry.linear()
    rng = np.random.default_rng(spec.seed)
    if isinstance(spec.source, (str, Path)):
        from .audio_io import read_wav
        src = read_wav(spec.source).samples[0].astype(np.float64)
    else:
        src = np.asarray(spec.source, dtype=np.float64)
    if not np.any(src):
        raise ValueError("silent source")
    clean = spatialize(src, geometry, spec.azimuth, fs).samples
    c, n = clean.shape
    if spec.noise_kind == "none":
        noise = np.zeros_like(clean)
    else:
        noise = make_noise(spec.noise_kind, c, n, rng, geometry, fs, spec.noise_file,
                           spec.noise_sources, spec.sensor_floor_db)
        ps, pn = np.sum(clean[0] ** 2), np.sum(noise[0] ** 2)
        noise *= np.sqrt(ps / (pn * 10 ** (spec.snr_db / 10)))
    if spec.gain_perturb_db or spec.delay_perturb:
        gains = rng.normal(0, spec.gain_perturb_db, c) if spec.gain_perturb_db else np.zeros(c)
        delays = rng.normal(0, spec.delay_perturb, c) if spec.delay_perturb else np.zeros(c)
        clean, noise = _perturb(clean, gains, delays), _perturb(noise, gains, delays)
    clean32 = clean.astype(np.float32)
    noise32 = noise.astype(np.float32)
    mixture32 = clean32 + noise32
    if spec.noise_kind == "none":
        snr = float("inf")
    else:
        snr = float(10 * np.log10(np.sum(clean32[0].astype(np.float64) ** 2)
                                  / np.sum(noise32[0].astype(np.float64) ** 2)))
    return {"mixture": mixture32, "clean": clean32, "noise": noise32, "snr_db": snr,
            "source": src.astype(np.float32)}


def standard_eval_set(count: int = 50, seconds: float = 2.0, snr_db: float = 0.0, seed: int = 7,
                      fs: int = 16000):
    """Yield the fixed synthetic evaluation mixtures (diffuse noise, anechoic).

    Utterance ``i`` depends only on ``(seed, i)``, so any prefix of the set is
    itself reproducible.
    """
    geometry = ArrayGeometry.linear()
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        src = synth_speech(seconds, fs, rng)
        spec = MixtureSpec(src, "diffuse", snr_db, float(rng.uniform(20, 160)),
                           int(rng.integers(1 << 30)))
        yield make_mixture(spec, geometry, fs)
