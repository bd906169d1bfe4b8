"""Training loop: Adam, chunked (truncated) backprop, condition routing and a log-mel surrogate backend.

Two modes are supported. ``enh_only`` trains the enhancer on channel-rotated
simulated utterances with the SNR loss. ``joint`` adds a differentiable
backend loss computed on the enhanced reference channel; which terms a record
contributes depends on its condition (see :func:`joint_loss`).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffnet import NonFiniteError, ParamSet, Tensor, backward, functional as F, no_grad
from .diffnet.checkpoint import load_checkpoint, save_checkpoint
from .dsp import StftConfig
from .tasnet import TasNetArch, enh_loss, rotate_channels, separate

__all__ = [
    "TrainConfig",
    "ChunkPlan",
    "LogMelBackend",
    "TrainResult",
    "TrainingDiverged",
    "select_chunk",
    "tbptt_forward",
    "joint_loss",
    "adam_step",
    "clip_grad_norm",
    "enh_step",
    "joint_step",
    "train",
    "save_model",
    "load_model",
    "mel_filterbank",
    "read_train_file",
]

CONDITIONS = ("simu", "real", "clean")
_ROUTES = {
    "simu": ("enh+asr", "enh", "asr"),
    "real": ("asr", "skip"),
    "clean": ("backend", "skip"),
}
DEFAULT_ROUTES = {"simu": "enh+asr", "real": "asr", "clean": "backend"}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 4
    max_steps: int = 2000
    chunk_seconds: float = 3.0
    segment_seconds: float | None = None
    seed: int = 0
    loss_mode: str = "power10"
    snr_cap: float = 60.0
    asr_weight: float = 1.0
    grad_clip: float | None = 5.0
    log_interval: int = 10
    checkpoint_interval: int = 500
    eval_interval: int = 0
    patience: int = 10
    backend_trainable: bool = False
    n_mels: int = 80
    condition_loss: dict = field(default_factory=lambda: dict(DEFAULT_ROUTES))

    def __post_init__(self):
        if not self.chunk_seconds > 0:
            raise ValueError("chunk_seconds must be positive")
        if self.lr < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps_adam <= 0:
            raise ValueError("invalid Adam hyperparameters")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size must be >= 1 and max_steps >= 0")
        if self.loss_mode not in ("power10", "paper20"):
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")
        routes = dict(DEFAULT_ROUTES)
        routes.update(self.condition_loss or {})
        for cond, route in routes.items():
            if cond not in _ROUTES or route not in _ROUTES[cond]:
                raise ValueError(f"invalid loss route {cond}={route!r}")
        self.condition_loss = routes

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        from ._config import load_config_file

        return cls(**load_config_file(path))

    def to_dict(self) -> dict:
        return asdict(self)


def read_train_file(path) -> tuple[TrainConfig, dict | None, int]:
    """Training config file: TrainConfig fields plus an optional ``arch`` table and ``init_seed``."""
    from ._config import load_config_file

    data = dict(load_config_file(path))
    arch = data.pop("arch", None)
    init_seed = int(data.pop("init_seed", 0))
    return TrainConfig(**data), arch, init_seed


@dataclass(frozen=True)
class ChunkPlan:
    start: int
    length: int
    total: int

    def __post_init__(self):
        if self.start < 0 or self.length < 1 or self.start + self.length > self.total:
            raise ValueError(f"invalid chunk plan {self}")

    @property
    def stop(self) -> int:
        return self.start + self.length

    @property
    def full(self) -> bool:
        return self.start == 0 and self.length == self.total


def select_chunk(total: int, chunk_seconds: float, fs: int, rng, align: int = 1) -> ChunkPlan:
    """Random chunk of ``round(K * fs)`` samples (whole utterance when shorter).

    With ``align > 1`` the length and start are rounded down to multiples of
    ``align`` so chunk edges fall between encoder frames.
    """
    if total < 1:
        raise ValueError("total length must be >= 1")
    length = min(int(round(chunk_seconds * fs)), total)
    if length >= total:
        return ChunkPlan(0, total, total)
    if align > 1:
        length = max(align, length - length % align)
    hi = total - length
    start = int(rng.integers(0, hi + 1))
    if align > 1:
        start -= start % align
    return ChunkPlan(start, length, total)


def tbptt_forward(params: ParamSet, arch: TasNetArch, y, plan: ChunkPlan) -> tuple[Tensor, Tensor]:
    """Full-length speech/noise estimates whose chunk ``plan`` carries the graph.

    ``y`` is ``(C, T)`` or ``(B, C, T)``. Samples outside the chunk come from
    a forward-only pass over the whole input and are constants here.
    """
    y = np.asarray(y)
    yb = y[None] if y.ndim == 2 else y
    if yb.shape[-1] != plan.total:
        raise ValueError(f"plan total {plan.total} does not match input length {yb.shape[-1]}")
    if plan.full:
        return separate(params, arch, yb)
    with no_grad():
        s_full, n_full = separate(params, arch, yb)
    s_c, n_c = separate(params, arch, yb[..., plan.start:plan.stop])
    parts_s, parts_n = [], []
    if plan.start > 0:
        parts_s.append(Tensor(s_full.value[:, :plan.start]))
        parts_n.append(Tensor(n_full.value[:, :plan.start]))
    parts_s.append(s_c)
    parts_n.append(n_c)
    if plan.stop < plan.total:
        parts_s.append(Tensor(s_full.value[:, plan.stop:]))
        parts_n.append(Tensor(n_full.value[:, plan.stop:]))
    return F.concat(parts_s, axis=-1), F.concat(parts_n, axis=-1)


# ---------------------------------------------------------------- surrogate backend

def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, fft_size: int, fs: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, fft_size // 2 + 1)``."""
    fmax = fs / 2 if fmax is None else fmax
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * fs / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None] - lo) / (mid - lo)
    down = (hi - freqs[None]) / (hi - mid)
    return np.clip(np.minimum(up, down), 0.0, None)


class LogMelBackend:
    """Mean squared log-mel distance to the clean source's features.

    Features are built from diffnet ops (a DFT basis applied as a strided
    convolution), so the loss is differentiable with respect to the input
    waveform. With ``trainable=True`` a per-band gain and bias are applied to
    the estimate's features and exposed as parameters named ``backend.*``.
    """

    def __init__(self, fs: int = 16000, stft_cfg: StftConfig | None = None, n_mels: int = 80,
                 trainable: bool = False, floor: float = 1e-6, dtype=np.float32):
        self.cfg = stft_cfg or StftConfig()
        self.fs = fs
        self.floor = floor
        n, bins = self.cfg.fft_size, self.cfg.num_bins
        t = np.arange(n)
        k = np.arange(bins)[:, None]
        win = 0.5 - 0.5 * np.cos(2 * np.pi * t / n)
        basis = np.concatenate([np.cos(2 * np.pi * k * t / n), -np.sin(2 * np.pi * k * t / n)]) * win
        self.basis = basis[:, None, :].astype(dtype)
        self.mel = mel_filterbank(n_mels, n, fs)[:, :, None].astype(dtype)
        self.params = ParamSet()
        if trainable:
            self.params.add("backend.gain", np.ones(n_mels, dtype))
            self.params.add("backend.bias", np.zeros(n_mels, dtype))

    def features(self, wave) -> Tensor:
        """Log-mel features ``(B, n_mels, frames)`` of a ``(B, T)`` or ``(T,)`` waveform."""
        x = wave if isinstance(wave, Tensor) else Tensor(np.asarray(wave, dtype=self.basis.dtype))
        if x.ndim == 1:
            x = F.reshape(x, (1, -1))
        half = self.cfg.fft_size // 2
        x = F.pad(F.reshape(x, (x.shape[0], 1, x.shape[1])), half, half)
        spec = F.conv1d(x, self.basis, stride=self.cfg.hop)
        bins = self.cfg.num_bins
        power = F.square(spec[:, :bins]) + F.square(spec[:, bins:])
        return F.log(F.conv1d(power, self.mel) + self.floor)

    def target_features(self, clean) -> np.ndarray:
        with no_grad():
            return self.features(clean).value

    def loss(self, est, target_feats: np.ndarray) -> Tensor:
        feats = self.features(est)
        if self.params:
            feats = F.add(F.mul(feats, F.reshape(self.params["backend.gain"], (-1, 1))),
                          F.reshape(self.params["backend.bias"], (-1, 1)))
        if feats.shape != np.shape(target_feats):
            raise ValueError(f"feature shape {feats.shape} does not match target {np.shape(target_feats)}")
        return F.mean(F.square(F.sub(feats, target_feats)))


def joint_loss(condition: str, enh=None, backend=None, asr_weight: float = 1.0, route: str | None = None):
    """Combine loss terms for one record according to its condition.

    ``simu`` gives ``L_enh + w * L_asr``, ``real`` gives ``w * L_asr`` and
    ``clean`` gives the backend loss alone (computed by the caller on the
    clean source, with the enhancer bypassed).
    """
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    route = route or DEFAULT_ROUTES[condition]
    if route == "skip":
        return None
    if condition == "simu" and "enh" in route and enh is None:
        raise ValueError("simu record missing references for the enhancement loss")
    if "asr" in route or route == "backend":
        if backend is None:
            raise ValueError(f"{condition} record needs a backend loss")
    terms = []
    if "enh" in route:
        terms.append(enh if isinstance(enh, Tensor) else Tensor(np.asarray(enh, dtype=np.float64)))
    if "asr" in route or route == "backend":
        b = backend if isinstance(backend, Tensor) else Tensor(np.asarray(backend, dtype=np.float64))
        terms.append(b if asr_weight == 1.0 else F.mul(b, asr_weight))
    out = terms[0]
    for t in terms[1:]:
        out = F.add(out, t)
    return out


# ---------------------------------------------------------------- optimizer

def clip_grad_norm(grads: dict, max_norm: float | None) -> float:
    """Scale ``grads`` in place to a global L2 norm of at most ``max_norm``; returns the prior norm."""
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * np.asarray(scale, dtype=grads[k].dtype)
    return total


def adam_step(params: ParamSet, grads: dict, state: dict, cfg: TrainConfig) -> dict:
    """One bias-corrected Adam update of the parameters present in ``grads``.

    Parameters without an entry are untouched. Any non-finite gradient aborts
    the whole step before a single parameter changes.
    """
    for name in sorted(grads):
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        g = grads[name]
        if np.shape(g) != params[name].shape:
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {name} {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
    t = state.get("step", 0) + 1
    m, v = state.setdefault("m", {}), state.setdefault("v", {})
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name in sorted(grads):
        p = params[name]
        g = np.asarray(grads[name], dtype=np.float64)
        m[name] = cfg.beta1 * m.get(name, 0.0) + (1 - cfg.beta1) * g
        v[name] = cfg.beta2 * v.get(name, 0.0) + (1 - cfg.beta2) * g * g
        update = cfg.lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + cfg.eps_adam)
        p.value = (p.value - update).astype(p.value.dtype)
    state["step"] = t
    return state


# ---------------------------------------------------------------- data

def _load_split(manifest, split: str) -> tuple[list[dict], Path]:
    from .simkit.dataset import load_record, read_manifest

    root = Path(manifest).parent
    records = [r for r in read_manifest(manifest) if r.get("split") == split]
    out = []
    for rec in sorted(records, key=lambda r: r["utt_id"]):
        ex = load_record(rec, root)
        ex["ref_channel"] = int(rec.get("ref_channel", 1))
        out.append(ex)
    return out, root


def _crop(length: int, seg: int, stride: int, rng) -> tuple[int, int]:
    if seg >= length:
        return 0, length
    seg -= seg % stride
    start = int(rng.integers(0, length - seg + 1))
    return start - start % stride, seg


def _enh_batch(examples, items, pick, arch, cfg, fs, rng, dtype):
    lengths = [examples[items[i][0]]["mixture"].shape[1] for i in pick]
    seg = min(lengths)
    if cfg.segment_seconds:
        seg = min(seg, int(round(cfg.segment_seconds * fs)))
    ys, xs, ns = [], [], []
    for i, n in zip(pick, lengths):
        k, c = items[i]
        ex = examples[k]
        start, seg_ = _crop(n, seg, arch.stride, rng)
        sl = slice(start, start + seg_)
        ys.append(rotate_channels(ex["mixture"][:, sl], c))
        xs.append(ex["clean"][c - 1, sl])
        ns.append(ex["noise"][c - 1, sl])
        seg = seg_
    return (np.stack(ys).astype(dtype), np.stack(xs).astype(dtype), np.stack(ns).astype(dtype))


# ---------------------------------------------------------------- steps

def _collect_grads(param_sets) -> dict:
    grads = {}
    for ps in param_sets:
        for name, p in ps.items():
            if p.grad is not None:
                grads[name] = p.grad
    return grads


def _apply(param_sets, grads, state, cfg) -> float:
    merged = ParamSet()
    for ps in param_sets:
        for name, p in ps.items():
            merged[name] = p
    norm = clip_grad_norm(grads, cfg.grad_clip)
    adam_step(merged, grads, state, cfg)
    return norm


def enh_step(params: ParamSet, arch: TasNetArch, batch, cfg: TrainConfig, state: dict) -> dict:
    """One enhancement-loss update on a ``(mixture, speech, noise)`` batch."""
    y, x, n = batch
    params.zero_grad()
    s_hat, n_hat = separate(params, arch, y)
    loss = enh_loss(x, s_hat, n, n_hat, cfg.loss_mode, cfg.snr_cap)
    if not np.isfinite(loss.item()):
        raise NonFiniteError("non-finite training loss")
    backward(loss)
    norm = _apply([params], _collect_grads([params]), state, cfg)
    return {"L_enh": loss.item(), "total": loss.item(), "grad_norm": norm}


def _record_loss(params, arch, backend, ex, cfg, fs, rng):
    """Loss tensor and logged terms for one joint-mode record (``None`` when skipped)."""
    cond = ex["condition"]
    route = cfg.condition_loss[cond]
    if route == "skip":
        return None, {}
    dtype = params["encoder.weight"].dtype
    if cond == "clean":
        target = ex["target"]
        feats = backend.target_features(target[None])
        l_b = backend.loss(Tensor(target[None].astype(dtype)), feats)
        return joint_loss(cond, backend=l_b, asr_weight=cfg.asr_weight, route=route), {"L_backend": l_b.item()}
    mix = ex["mixture"]
    num_ch = mix.shape[0]
    if cond == "simu":
        if ex.get("clean") is None or ex.get("noise") is None:
            raise ValueError(f"{ex['utt_id']}: simu record missing references")
        c = int(rng.integers(1, num_ch + 1))
        target = ex["clean"][c - 1]
    else:
        c = ex.get("ref_channel", 1)
        target = ex["target"]
    y = rotate_channels(mix, c).astype(dtype)
    plan = select_chunk(y.shape[1], cfg.chunk_seconds, fs, rng, align=arch.stride)
    s_hat, n_hat = tbptt_forward(params, arch, y, plan)
    terms = {}
    l_enh = l_b = None
    if "enh" in route:
        l_enh = enh_loss(ex["clean"][c - 1][None].astype(dtype), s_hat,
                         ex["noise"][c - 1][None].astype(dtype), n_hat, cfg.loss_mode, cfg.snr_cap)
        terms["L_enh"] = l_enh.item()
    if "asr" in route:
        n = min(len(target), s_hat.shape[1])
        l_b = backend.loss(s_hat[:, :n], backend.target_features(target[None, :n]))
        terms["L_backend"] = l_b.item()
    return joint_loss(cond, l_enh, l_b, cfg.asr_weight, route), terms


def joint_step(params: ParamSet, arch: TasNetArch, backend: LogMelBackend, examples: list[dict],
               cfg: TrainConfig, state: dict, rng, fs: int = 16000) -> dict:
    """One update on a batch of loaded records of any condition.

    Only parameters that receive a gradient are updated, so a batch of clean
    records leaves the enhancer untouched.
    """
    params.zero_grad()
    backend.params.zero_grad()
    total, counts, logged = None, {c: 0 for c in CONDITIONS}, {}
    for ex in examples:
        loss, terms = _record_loss(params, arch, backend, ex, cfg, fs, rng)
        if loss is None:
            continue
        counts[ex["condition"]] += 1
        for k, v in terms.items():
            logged.setdefault(k, []).append(v)
        total = loss if total is None else F.add(total, loss)
    if total is None:
        return {"total": None, "conditions": counts}
    total = F.mul(total, 1.0 / len(examples))
    if not np.isfinite(total.item()):
        raise NonFiniteError("non-finite training loss")
    backward(total)
    grads = _collect_grads([params, backend.params])
    norm = _apply([params, backend.params], grads, state, cfg)
    out = {"total": total.item(), "conditions": counts, "grad_norm": norm}
    out.update({k: float(np.mean(v)) for k, v in logged.items()})
    return out


# ---------------------------------------------------------------- checkpoints

def save_model(path, params: ParamSet, arch: TasNetArch, meta: dict | None = None,
               backend: LogMelBackend | None = None) -> Path:
    merged = ParamSet()
    for ps in (params, backend.params if backend is not None else {}):
        for name, p in ps.items():
            merged[name] = p
    save_checkpoint(path, merged, {"arch": arch.to_dict(), **(meta or {})})
    return Path(path)


def load_model(path) -> tuple[ParamSet, TasNetArch, dict]:
    """Enhancer parameters, architecture and metadata (``backend.*`` tensors go to ``meta['backend']``)."""
    allp, meta = load_checkpoint(path)
    if "arch" not in meta:
        from .diffnet import CheckpointError

        raise CheckpointError(f"{path}: checkpoint carries no architecture")
    arch = TasNetArch.from_dict(meta["arch"])
    params, back = ParamSet(), ParamSet()
    for name, p in allp.items():
        (back if name.startswith("backend.") else params)[name] = p
    meta = dict(meta, backend=back)
    return params, arch, meta


# ---------------------------------------------------------------- loop

@dataclass
class TrainResult:
    params: ParamSet
    log: list
    checkpoints: list
    steps: int
    stopped_early: bool = False
    backend: LogMelBackend | None = None


def _dev_loss(params, arch, dev, cfg) -> float:
    dtype = params["encoder.weight"].dtype
    vals = []
    with no_grad():
        for ex in dev:
            s, n = separate(params, arch, ex["mixture"][None].astype(dtype))
            vals.append(enh_loss(ex["clean"][0][None], s, ex["noise"][0][None], n,
                                 cfg.loss_mode, cfg.snr_cap).item())
    return float(np.mean(vals))


def train(manifest, params: ParamSet, arch: TasNetArch, cfg: TrainConfig | None = None,
          mode: str = "enh_only", out_dir=None, backend: LogMelBackend | None = None,
          progress=None) -> TrainResult:
    """Train ``params`` in place on the ``train`` split of ``manifest``.

    Writes ``loss_log.jsonl`` and checkpoints to ``out_dir`` when given.
    Deterministic for a fixed ``cfg.seed`` and initial parameters.
    """
    cfg = cfg or TrainConfig()
    if mode not in ("enh_only", "joint"):
        raise ValueError(f"unknown training mode {mode!r}")
    rng = np.random.default_rng(cfg.seed)
    examples, _ = _load_split(manifest, "train")
    dev = [ex for ex in _load_split(manifest, "dev")[0] if ex["condition"] == "simu"] if cfg.eval_interval else []
    if not examples:
        raise ValueError("manifest has no training records")
    fs = _sample_rate(manifest)
    dtype = params["encoder.weight"].dtype
    if mode == "enh_only":
        examples = [ex for ex in examples if ex["condition"] == "simu"]
        if not examples:
            raise ValueError("enh_only training needs simu records with references")
        items = [(k, c) for k, ex in enumerate(examples) for c in range(1, ex["mixture"].shape[0] + 1)]
    elif backend is None:
        backend = LogMelBackend(fs, n_mels=cfg.n_mels, trainable=cfg.backend_trainable, dtype=dtype)

    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "loss_log.jsonl", "w", encoding="utf-8")
    meta = {"mode": mode, "train_config": cfg.to_dict()}
    state: dict = {"step": 0}
    log, ckpts, window = [], [], []
    best, bad_evals, stopped = math.inf, 0, False

    def emit(entry):
        log.append(entry)
        if log_fh is not None:
            log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            log_fh.flush()
        if progress is not None:
            progress(entry)

    def checkpoint(name, step):
        if out is None:
            return
        path = save_model(out / name, params, arch, dict(meta, step=step), backend)
        ckpts.append(str(path))

    def flush(step):
        if not window:
            return
        counts = {c: sum(w.get("conditions", {}).get(c, 0) for w in window) for c in CONDITIONS}
        if mode == "enh_only":
            counts["simu"] = len(window) * cfg.batch_size
        entry = {"step": step, "conditions": counts}
        for key in ("L_enh", "L_backend", "total"):
            vals = [w[key] for w in window if w.get(key) is not None]
            entry[key] = float(np.mean(vals)) if vals else None
        emit(entry)
        window.clear()

    step = 0
    try:
        for step in range(1, cfg.max_steps + 1):
            try:
                if mode == "enh_only":
                    pick = rng.choice(len(items), size=cfg.batch_size, replace=len(items) < cfg.batch_size)
                    batch = _enh_batch(examples, items, pick, arch, cfg, fs, rng, dtype)
                    stats = enh_step(params, arch, batch, cfg, state)
                else:
                    pick = rng.choice(len(examples), size=cfg.batch_size, replace=len(examples) < cfg.batch_size)
                    stats = joint_step(params, arch, backend, [examples[i] for i in pick], cfg, state, rng, fs)
            except NonFiniteError as exc:
                flush(step - 1)
                last = ckpts[-1] if ckpts else "none written yet"
                raise TrainingDiverged(f"training diverged at step {step} ({exc}); "
                                       f"last good checkpoint: {last}") from exc
            window.append(stats)
            if step % cfg.log_interval == 0:
                flush(step)
            if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
                checkpoint(f"ckpt_{step:06d}.ckpt", step)
            if cfg.eval_interval and dev and step % cfg.eval_interval == 0:
                d = _dev_loss(params, arch, dev, cfg)
                emit({"step": step, "dev_loss": d})
                if d < best - 1e-6:
                    best, bad_evals = d, 0
                else:
                    bad_evals += 1
                    if bad_evals >= cfg.patience:
                        stopped = True
                        break
        flush(step)
        checkpoint("final.ckpt", step)
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(params, log, ckpts, step, stopped, backend)


def _sample_rate(manifest) -> int:
    from .simkit.dataset import read_manifest

    rates = {int(r.get("sample_rate", 16000)) for r in read_manifest(manifest)}
    if len(rates) != 1:
        raise ValueError(f"manifest mixes sample rates {sorted(rates)}")
    return rates.pop()
