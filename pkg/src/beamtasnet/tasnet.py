"""Multi-channel Conv-TasNet with channel rotation, plus the SNR enhancement loss.

Channel indices are 1-based throughout the public API, matching the
rotation notation ``y^(c) = [y_c, ..., y_C, y_1, ..., y_{c-1}]``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diffnet import ParamSet, Tensor, functional as F, no_grad
from .dsp import MultiChannelWaveform

__all__ = [
    "TasNetArch",
    "EnhOutput",
    "init_params",
    "rotate_channels",
    "rotation_order",
    "separate",
    "forward",
    "enhance_multichannel",
    "snr_db",
    "snr_tensor",
    "enh_loss",
    "make_rotation_training_set",
]


@dataclass(frozen=True)
class TasNetArch:
    in_channels: int = 5
    enc_filters: int = 256
    kernel: int = 20
    stride: int = 10
    stacks: int = 4
    blocks_per_stack: int = 8
    bottleneck: int = 256
    hidden: int = 512
    num_outputs: int = 2
    mask_nonlinearity: str = "relu"
    norm_eps: float = 1e-8

    def __post_init__(self):
        if self.kernel % self.stride:
            raise ValueError("stride must divide kernel")
        if self.num_outputs != 2:
            raise ValueError("the separator emits exactly a speech mask and a noise mask")
        if self.mask_nonlinearity not in ("relu", "sigmoid"):
            raise ValueError(f"unknown mask nonlinearity {self.mask_nonlinearity!r}")
        if min(self.in_channels, self.enc_filters, self.stacks, self.blocks_per_stack,
               self.bottleneck, self.hidden) < 1:
            raise ValueError("architecture sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TasNetArch":
        return cls(**d)


@dataclass
class EnhOutput:
    speech: np.ndarray
    noise: np.ndarray


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(arch: TasNetArch, seed: int = 0, dtype=np.float32) -> ParamSet:
    rng = np.random.default_rng(seed)
    p = ParamSet()
    n, b, h, k = arch.enc_filters, arch.bottleneck, arch.hidden, arch.kernel
    p.add("encoder.weight", _uniform(rng, (n, arch.in_channels, k), arch.in_channels * k, dtype))
    p.add("separator.norm.gain", np.ones(n, dtype))
    p.add("separator.norm.bias", np.zeros(n, dtype))
    p.add("separator.bottleneck.weight", _uniform(rng, (b, n, 1), n, dtype))
    p.add("separator.bottleneck.bias", np.zeros(b, dtype))
    for r in range(arch.stacks):
        for x in range(arch.blocks_per_stack):
            pre = f"separator.block{r}.{x}."
            p.add(pre + "in.weight", _uniform(rng, (h, b, 1), b, dtype))
            p.add(pre + "in.bias", np.zeros(h, dtype))
            p.add(pre + "prelu1", np.full(1, 0.25, dtype))
            p.add(pre + "norm1.gain", np.ones(h, dtype))
            p.add(pre + "norm1.bias", np.zeros(h, dtype))
            p.add(pre + "depthwise.weight", _uniform(rng, (h, 3), 3, dtype))
            p.add(pre + "depthwise.bias", np.zeros(h, dtype))
            p.add(pre + "prelu2", np.full(1, 0.25, dtype))
            p.add(pre + "norm2.gain", np.ones(h, dtype))
            p.add(pre + "norm2.bias", np.zeros(h, dtype))
            p.add(pre + "res.weight", _uniform(rng, (b, h, 1), h, dtype))
            p.add(pre + "res.bias", np.zeros(b, dtype))
            p.add(pre + "skip.weight", _uniform(rng, (b, h, 1), h, dtype))
            p.add(pre + "skip.bias", np.zeros(b, dtype))
    p.add("separator.out.prelu", np.full(1, 0.25, dtype))
    p.add("separator.mask.weight", _uniform(rng, (2 * n, b, 1), b, dtype))
    p.add("separator.mask.bias", np.zeros(2 * n, dtype))
    p.add("decoder.weight", _uniform(rng, (n, 1, k), n, dtype))
    return p


# ---------------------------------------------------------------- rotation

def rotation_order(num_channels: int, c: int) -> list[int]:
    """1-based channel order of ``y^(c)``."""
    if not 1 <= c <= num_channels:
        raise ValueError(f"rotation index {c} out of range 1..{num_channels}")
    return [((c - 1 + i) % num_channels) + 1 for i in range(num_channels)]


def rotate_channels(y, c: int):
    """Cyclically rotate channels so that original channel ``c`` comes first."""
    samples = y.samples if isinstance(y, MultiChannelWaveform) else np.asarray(y)
    order = np.array(rotation_order(samples.shape[0], c)) - 1
    rotated = samples[order]
    if isinstance(y, MultiChannelWaveform):
        return MultiChannelWaveform(rotated, y.sample_rate)
    return rotated


# ---------------------------------------------------------------- network

def _encoder_padding(arch: TasNetArch, length: int) -> tuple[int, int]:
    left = arch.kernel - arch.stride
    base = length + 2 * left
    extra = (-(base - arch.kernel)) % arch.stride
    return left, left + extra


def separate(params: ParamSet, arch: TasNetArch, y) -> tuple[Tensor, Tensor]:
    """Batched MC-Conv-TasNet pass.

    ``y`` is ``(B, C_in, T)`` (array or Tensor). Returns speech and noise
    estimates as ``(B, T)`` tensors, trimmed to the input length.
    """
    yv = y.value if isinstance(y, Tensor) else np.asarray(y)
    if yv.ndim != 3 or yv.shape[1] != arch.in_channels:
        got = yv.shape[1] if yv.ndim == 3 else yv.shape
        raise ValueError(f"channel mismatch: expected C={arch.in_channels} channels, got {got}")
    length = yv.shape[-1]
    if length < arch.kernel:
        raise ValueError(f"input of {length} samples is shorter than the encoder kernel")
    p = params
    left, right = _encoder_padding(arch, length)
    y = F.pad(y if isinstance(y, Tensor) else Tensor(yv), left, right)

    w = F.relu(F.conv1d(y, p["encoder.weight"], stride=arch.stride))
    h = F.global_layer_norm(w, p["separator.norm.gain"], p["separator.norm.bias"], arch.norm_eps)
    h = F.conv1d(h, p["separator.bottleneck.weight"], p["separator.bottleneck.bias"])
    skip_sum = None
    for r in range(arch.stacks):
        for x in range(arch.blocks_per_stack):
            pre = f"separator.block{r}.{x}."
            d = 2 ** x
            z = F.conv1d(h, p[pre + "in.weight"], p[pre + "in.bias"])
            z = F.prelu(z, p[pre + "prelu1"])
            z = F.global_layer_norm(z, p[pre + "norm1.gain"], p[pre + "norm1.bias"], arch.norm_eps)
            z = F.depthwise_conv1d(z, p[pre + "depthwise.weight"], p[pre + "depthwise.bias"],
                                   dilation=d, padding=d)
            z = F.prelu(z, p[pre + "prelu2"])
            z = F.global_layer_norm(z, p[pre + "norm2.gain"], p[pre + "norm2.bias"], arch.norm_eps)
            skip = F.conv1d(z, p[pre + "skip.weight"], p[pre + "skip.bias"])
            skip_sum = skip if skip_sum is None else skip_sum + skip
            last = r == arch.stacks - 1 and x == arch.blocks_per_stack - 1
            if not last:
                h = h + F.conv1d(z, p[pre + "res.weight"], p[pre + "res.bias"])
    m = F.prelu(skip_sum, p["separator.out.prelu"])
    m = F.conv1d(m, p["separator.mask.weight"], p["separator.mask.bias"])
    m = F.relu(m) if arch.mask_nonlinearity == "relu" else F.sigmoid(m)
    n = arch.enc_filters
    speech = F.conv_transpose1d(m[:, :n] * w, p["decoder.weight"], stride=arch.stride)
    noise = F.conv_transpose1d(m[:, n:] * w, p["decoder.weight"], stride=arch.stride)
    return speech[:, 0, left:left + length], noise[:, 0, left:left + length]


def forward(params: ParamSet, arch: TasNetArch, y_rot) -> EnhOutput:
    """Enhance one (already rotated) multi-channel input; channel 1 is the reference."""
    samples = y_rot.samples if isinstance(y_rot, MultiChannelWaveform) else np.asarray(y_rot)
    if samples.ndim != 2 or samples.shape[0] != arch.in_channels:
        raise ValueError(f"channel mismatch: expected C={arch.in_channels} channels, "
                         f"got {samples.shape[0] if samples.ndim == 2 else samples.shape}")
    dtype = params["encoder.weight"].dtype
    with no_grad():
        s, n = separate(params, arch, samples[None].astype(dtype, copy=False))
    return EnhOutput(s.value[0], n.value[0])


def enhance_multichannel(params: ParamSet, arch: TasNetArch, y) -> tuple[MultiChannelWaveform, MultiChannelWaveform]:
    """Run every channel rotation and collect the per-channel speech and noise estimates.

    Output channel ``c`` is the first-channel estimate for rotation ``c``.
    """
    wave = y if isinstance(y, MultiChannelWaveform) else MultiChannelWaveform(y)
    if wave.num_channels != arch.in_channels:
        raise ValueError(f"channel mismatch: expected C={arch.in_channels} channels, "
                         f"got {wave.num_channels}")
    speech, noise = [], []
    for c in range(1, wave.num_channels + 1):
        out = forward(params, arch, rotate_channels(wave.samples, c))
        speech.append(out.speech)
        noise.append(out.noise)
    return (MultiChannelWaveform(np.stack(speech), wave.sample_rate),
            MultiChannelWaveform(np.stack(noise), wave.sample_rate))


# ---------------------------------------------------------------- SNR and loss

_SCALE = {"power10": 10.0, "paper20": 20.0}


def snr_db(ref, est, mode: str = "power10", cap: float = 60.0) -> float:
    """SNR of ``est`` against ``ref`` in dB, clamped to ``[-cap, cap]``.

    ``paper20`` uses a factor of 20 on the ratio of squared norms.
    """
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    num = float(np.sum(ref ** 2))
    if num == 0.0:
        raise ValueError("silent reference")
    den = float(np.sum((ref - est) ** 2))
    if den == 0.0:
        return cap
    return float(np.clip(_SCALE[mode] * np.log10(num / den), -cap, cap))


def snr_tensor(ref: np.ndarray, est: Tensor, mode: str = "power10", cap: float = 60.0,
               rel_eps: float = 1e-8) -> Tensor:
    """Differentiable per-item SNR for ``(B, T)`` estimates; returns a ``(B,)`` tensor."""
    ref = np.asarray(ref)
    num = np.sum(ref.astype(np.float64) ** 2, axis=-1)
    if np.any(num == 0):
        raise ValueError("silent reference")
    num = num.astype(est.dtype)
    den = F.sum(F.square(F.sub(ref, est)), axis=-1) + rel_eps * num
    snr = F.mul(F.sub(np.log10(num), F.log10(den)), _SCALE[mode])
    return F.clip(snr, -cap, cap)


def enh_loss(x_ref, x_est: Tensor, n_ref, n_est: Tensor, mode: str = "power10",
             cap: float = 60.0) -> Tensor:
    """``-SNR(x, x_hat) - SNR(n, n_hat)``, averaged over the batch."""
    x_ref, n_ref = np.atleast_2d(x_ref), np.atleast_2d(n_ref)
    if x_est.ndim == 1:
        x_est = F.reshape(x_est, (1, -1))
        n_est = F.reshape(n_est, (1, -1))
    if x_ref.shape != x_est.shape or n_ref.shape != n_est.shape:
        raise ValueError("length mismatch between references and estimates")
    total = F.add(snr_tensor(x_ref, x_est, mode, cap), snr_tensor(n_ref, n_est, mode, cap))
    return F.mul(F.mean(total), -1.0)


def make_rotation_training_set(examples):
    """Expand each C-channel example into its C rotations.

    ``examples`` is an iterable of dicts with ``mixture`` (C x T), ``speech``
    and ``noise`` (per-channel references, C x T). Each output item holds the
    rotated mixture plus single-channel references for the new first channel.
    """
    items = []
    for i, ex in enumerate(examples):
        mix = np.asarray(ex["mixture"])
        if ex.get("speech") is None or ex.get("noise") is None:
            raise ValueError(f"example {i} is missing per-channel references")
        speech, noise = np.asarray(ex["speech"]), np.asarray(ex["noise"])
        if speech.shape != mix.shape or noise.shape != mix.shape:
            raise ValueError(f"example {i} is missing per-channel references")
        for c in range(1, mix.shape[0] + 1):
            items.append({
                "mixture": rotate_channels(mix, c),
                "speech": speech[c - 1],
                "noise": noise[c - 1],
                "rotation": c,
                "source_index": i,
            })
    return items
