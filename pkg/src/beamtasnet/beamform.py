"""Covariance estimation, masks and the trace-normalized MVDR beamformer.

Spectrogram arrays are ``[channel, frame, bin]``; covariance stacks are
``(F, C, C)``; masks are ``(frames, bins)`` or ``(frames,)`` for the 1-D
frame mask. Reference channels are 1-based.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import ComplexSpectrogram, MultiChannelWaveform, StftConfig, istft, stft

__all__ = [
    "CovariancePair",
    "BeamformerWeights",
    "TimeFrequencyMask",
    "covariance_from_signals",
    "covariance_from_mask",
    "psm_mask",
    "power_mask",
    "one_d_mask",
    "mvdr_filter",
    "apply_beamformer",
    "beamform_with_estimates",
    "beam_tasnet_enhance",
    "STRATEGIES",
]

STRATEGIES = ("sig_mvdr", "mask_psm", "mask_1d")


def _hermitize(phi: np.ndarray) -> np.ndarray:
    return 0.5 * (phi + np.conj(np.swapaxes(phi, -1, -2)))


@dataclass
class CovariancePair:
    phi_x: np.ndarray
    phi_n: np.ndarray

    @property
    def num_bins(self) -> int:
        return self.phi_x.shape[0]


@dataclass
class BeamformerWeights:
    h: np.ndarray  # (F, C)
    ref_channel: int = 1


@dataclass
class TimeFrequencyMask:
    values: np.ndarray
    kind: str = "psm"

    def __post_init__(self):
        if self.kind not in ("psm", "power", "one_d_broadcast"):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        self.values = np.clip(np.asarray(self.values, dtype=np.float64), 0.0, 1.0)

    def complement(self) -> "TimeFrequencyMask":
        return TimeFrequencyMask(1.0 - self.values, self.kind)


def _spec_data(spec) -> np.ndarray:
    data = spec.data if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    return data[None] if data.ndim == 2 else data


def covariance_from_signals(speech, noisy) -> CovariancePair:
    """Speech covariance from enhanced spectra, noise covariance from the residual ``Y - X``."""
    xs, ys = _spec_data(speech), _spec_data(noisy)
    if xs.shape != ys.shape:
        raise ValueError(f"shape mismatch: {xs.shape} vs {ys.shape}")
    frames = xs.shape[1]
    if frames < 1:
        raise ValueError("need at least one frame")
    ns = ys - xs
    phi_x = np.einsum("ctf,dtf->fcd", xs, np.conj(xs)) / frames
    phi_n = np.einsum("ctf,dtf->fcd", ns, np.conj(ns)) / frames
    return CovariancePair(_hermitize(phi_x), _hermitize(phi_n))


def covariance_from_mask(mask: TimeFrequencyMask, noisy) -> np.ndarray:
    """Mask-weighted spatial covariance, averaged over frames."""
    ys = _spec_data(noisy)
    _, frames, bins = ys.shape
    m = mask.values
    if mask.kind == "one_d_broadcast" or m.ndim == 1:
        if m.shape != (frames,):
            raise ValueError(f"1-D mask of shape {m.shape} does not match {frames} frames")
        m = np.broadcast_to(m[:, None], (frames, bins))
    elif m.shape != (frames, bins):
        raise ValueError(f"mask shape {m.shape} does not match spectrogram ({frames}, {bins})")
    phi = np.einsum("tf,ctf,dtf->fcd", m, ys, np.conj(ys)) / frames
    return _hermitize(phi)


def psm_mask(speech_ref, noisy_ref, floor: float = 1e-10) -> TimeFrequencyMask:
    """Phase-sensitive mask ``clip(|X|/|Y| cos(angle X - angle Y), 0, 1)`` on one channel."""
    x = _spec_data(speech_ref)[0]
    y = _spec_data(noisy_ref)[0]
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    ay = np.abs(y)
    ok = ay >= floor
    # |X|/|Y| cos(dphi) == Re(X conj(Y)) / |Y|^2
    ratio = np.zeros(x.shape)
    ratio[ok] = np.real(x[ok] * np.conj(y[ok])) / ay[ok] ** 2
    return TimeFrequencyMask(ratio, "psm")


def power_mask(speech_ref, noise_ref, floor: float = 1e-10) -> TimeFrequencyMask:
    """Magnitude-ratio mask ``|X| / (|X| + |N|)`` from speech and noise estimates."""
    ax = np.abs(_spec_data(speech_ref)[0])
    an = np.abs(_spec_data(noise_ref)[0])
    den = ax + an
    vals = np.where(den > floor, ax / np.maximum(den, floor), 0.0)
    return TimeFrequencyMask(vals, "power")


def one_d_mask(mask: TimeFrequencyMask) -> TimeFrequencyMask:
    """Average a time-frequency mask over frequency, giving one weight per frame."""
    if mask.values.ndim != 2:
        raise ValueError("one_d_mask expects a (frames, bins) mask")
    return TimeFrequencyMask(mask.values.mean(axis=1), "one_d_broadcast")


def mvdr_filter(cov: CovariancePair, ref_channel: int = 1, loading: float = 1e-5,
                herm_tol: float = 1e-8) -> BeamformerWeights:
    """Trace-normalized MVDR weights ``(Phi_N^-1 Phi_X / tr(Phi_N^-1 Phi_X)) u`` per bin.

    ``loading`` adds ``loading * tr(Phi_N)/C`` to the diagonal of the noise
    covariance. Bins whose noise covariance is identically zero, or whose
    normalizing trace vanishes, pass the reference channel through.
    """
    phi_x, phi_n = np.asarray(cov.phi_x), np.asarray(cov.phi_n)
    if phi_x.shape != phi_n.shape or phi_x.ndim != 3 or phi_x.shape[1] != phi_x.shape[2]:
        raise ValueError(f"covariance shapes {phi_x.shape} / {phi_n.shape} are not (F, C, C)")
    if loading < 0:
        raise ValueError("loading must be non-negative")
    bins, c, _ = phi_x.shape
    if not 1 <= ref_channel <= c:
        raise ValueError(f"reference channel {ref_channel} out of range 1..{c}")
    for name, phi in (("speech", phi_x), ("noise", phi_n)):
        asym = np.abs(phi - np.conj(np.swapaxes(phi, -1, -2))).max(initial=0.0)
        if asym > herm_tol * max(np.abs(phi).max(initial=0.0), 1.0):
            raise ValueError(f"{name} covariance is not Hermitian (deviation {asym:.3g})")
    phi_x, phi_n = _hermitize(phi_x), _hermitize(phi_n)
    q = ref_channel - 1
    u = np.zeros(c, dtype=complex)
    u[q] = 1.0
    h = np.tile(u, (bins, 1))

    tr_n = np.real(np.trace(phi_n, axis1=1, axis2=2))
    scale = max(np.abs(np.real(np.trace(phi_x, axis1=1, axis2=2))).max(initial=0.0), tr_n.max(initial=0.0))
    active = tr_n > 1e-14 * max(scale, 1e-300)
    if not np.any(active):
        return BeamformerWeights(h, ref_channel)
    eye = np.eye(c)
    loaded = phi_n[active] + (loading * tr_n[active] / c)[:, None, None] * eye
    if loading == 0:
        cond = np.linalg.cond(loaded)
        if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
            raise np.linalg.LinAlgError("singular noise covariance")
    try:
        num = np.linalg.solve(loaded, phi_x[active])
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular noise covariance") from None
    tr = np.trace(num, axis1=1, axis2=2)
    ok = np.abs(tr) >= 1e-12 * np.maximum(np.abs(num).max(axis=(1, 2)), 1e-300)
    ok &= np.abs(tr) > 1e-300
    sol = np.tile(u, (len(tr), 1))
    sol[ok] = num[ok][:, :, q] / tr[ok][:, None]
    h[active] = sol
    return BeamformerWeights(h, ref_channel)


def apply_beamformer(weights: BeamformerWeights, noisy) -> ComplexSpectrogram:
    """``X_bf[t, f] = h_f^H Y[t, f]``; returns a single-channel spectrogram."""
    ys = _spec_data(noisy)
    h = np.asarray(weights.h)
    if h.shape != (ys.shape[2], ys.shape[0]):
        raise ValueError(f"weights {h.shape} do not match spectrogram channels/bins {ys.shape}")
    out = np.einsum("fc,ctf->tf", np.conj(h), ys)[None]
    cfg = noisy.config if isinstance(noisy, ComplexSpectrogram) else StftConfig()
    return ComplexSpectrogram(out, cfg)


def beamform_with_estimates(noisy: MultiChannelWaveform, speech_mc: MultiChannelWaveform,
                            noise_mc: MultiChannelWaveform | None, strategy: str,
                            ref_channel: int = 1, stft_cfg: StftConfig | None = None,
                            loading: float = 1e-5) -> np.ndarray:
    """Beamform ``noisy`` using covariances derived from multi-channel estimates.

    ``noise_mc`` is needed only for ``mask_1d``; when omitted it is taken as
    ``noisy - speech_mc``.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    cfg = stft_cfg or StftConfig()
    if speech_mc.samples.shape != noisy.samples.shape:
        raise ValueError("speech estimates must match the noisy input shape")
    Y = stft(noisy, cfg)
    X = stft(speech_mc, cfg)
    q = ref_channel - 1
    if strategy == "sig_mvdr":
        cov = covariance_from_signals(X, Y)
    else:
        if strategy == "mask_psm":
            mask = psm_mask(X.data[q], Y.data[q])
        else:
            if noise_mc is None:
                noise_mc = MultiChannelWaveform(noisy.samples - speech_mc.samples, noisy.sample_rate)
            N = stft(noise_mc, cfg)
            mask = one_d_mask(power_mask(X.data[q], N.data[q]))
        cov = CovariancePair(covariance_from_mask(mask, Y), covariance_from_mask(mask.complement(), Y))
    weights = mvdr_filter(cov, ref_channel, loading)
    out = istft(apply_beamformer(weights, Y), cfg, target_length=noisy.length,
                sample_rate=noisy.sample_rate)
    return out.samples[0]


def beam_tasnet_enhance(params, arch, y: MultiChannelWaveform, strategy: str = "mask_1d",
                        ref_channel: int = 1, stft_cfg: StftConfig | None = None,
                        loading: float = 1e-5) -> np.ndarray:
    """Full pipeline: rotated TasNet passes, covariance estimation, MVDR, iSTFT."""
    from .tasnet import enhance_multichannel

    if not isinstance(y, MultiChannelWaveform):
        y = MultiChannelWaveform(np.asarray(y))
    speech_mc, noise_mc = enhance_multichannel(params, arch, y)
    return beamform_with_estimates(y, speech_mc, noise_mc, strategy, ref_channel, stft_cfg, loading)
