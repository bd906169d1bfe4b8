"""Dataset synthesis and the JSON-lines manifest.

Manifest records (paths relative to the manifest file)::

    {"utt_id", "split", "condition": "simu"|"real"|"clean", "sample_rate",
     "ref_channel", "mixture", "clean": [per-channel paths], "noise": [...],
     "target", "snr_db", "azimuth", "noise_kind"}

``simu`` records carry ``clean`` and ``noise``; ``real`` records carry only
``mixture`` and ``target``; ``clean`` records carry only ``target``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dsp import MultiChannelWaveform
from .audio_io import read_wav, write_wav
from .synth import ArrayGeometry, MixtureSpec, make_mixture, synth_speech

__all__ = ["DatasetConfig", "build_dataset", "read_manifest", "write_manifest",
           "synthesize_sources", "load_record", "ManifestError", "MANIFEST_NAME"]

MANIFEST_NAME = "manifest.jsonl"
CONDITIONS = ("simu", "real", "clean")


class ManifestError(ValueError):
    pass


@dataclass
class DatasetConfig:
    source_dir: str
    out_dir: str
    n_train: int = 10
    n_dev: int = 0
    n_eval: int = 0
    n_real_train: int = 0
    n_real_eval: int = 0
    n_clean: int = 0
    seed: int = 0
    sample_rate: int = 16000
    num_mics: int = 5
    mic_spacing: float = 0.05
    snr_range: tuple = (0.0, 0.0)
    noise_kind: str = "diffuse"
    noise_sources: int = 4
    sensor_floor_db: float = -30.0
    noise_file: str | None = None
    real_noise_kind: str = "white"
    real_snr_range: tuple = (0.0, 0.0)
    real_gain_perturb_db: float = 1.0
    real_delay_perturb: float = 0.5
    real_noise_file: str | None = None
    max_seconds: float | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "DatasetConfig":
        from .._config import load_config_file

        path = Path(path)
        data = load_config_file(path)
        base = path.parent
        for key in ("source_dir", "out_dir", "noise_file", "real_noise_file"):
            if data.get(key) and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])
        for key in ("snr_range", "real_snr_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @property
    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry.linear(self.num_mics, self.mic_spacing)


def synthesize_sources(out_dir, count: int, seed: int = 0, duration=(1.0, 1.0), fs: int = 16000) -> list[Path]:
    """Write ``count`` speech-like mono sources named ``src_0000.wav`` ..."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        rng = np.random.default_rng([seed, i, 7])
        dur = rng.uniform(*duration) if duration[0] != duration[1] else duration[0]
        p = out_dir / f"src_{i:04d}.wav"
        write_wav(p, MultiChannelWaveform(synth_speech(dur, fs, rng)[None].astype(np.float32), fs))
        paths.append(p)
    return paths


def _rel(path: Path, root: Path) -> str:
    return path.relative_to(root).as_posix()


def build_dataset(cfg: DatasetConfig) -> list[dict]:
    """Generate every split to ``cfg.out_dir`` and write ``manifest.jsonl`` there."""
    sources = sorted(Path(cfg.source_dir).glob("*.wav"))
    plan = [("train", "simu", cfg.n_train), ("dev", "simu", cfg.n_dev), ("eval", "simu", cfg.n_eval),
            ("train", "real", cfg.n_real_train), ("eval", "real", cfg.n_real_eval),
            ("train", "clean", cfg.n_clean)]
    needed = sum(n for *_, n in plan)
    if needed == 0:
        raise ValueError("dataset config requests no utterances")
    if len(sources) < needed:
        raise ValueError(f"insufficient source files: need {needed}, found {len(sources)} in {cfg.source_dir}")
    root = Path(cfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    geometry = cfg.geometry
    records, k = [], 0
    for split, condition, count in plan:
        for j in range(count):
            src_path = sources[k]
            rng = np.random.default_rng([cfg.seed, k])
            utt_seed = int(rng.integers(0, 2**63 - 1))
            uid = f"{condition}_{split}_{j:04d}"
            udir = root / split / uid
            src = read_wav(src_path)
            if src.sample_rate != cfg.sample_rate:
                raise ValueError(f"{src_path}: sample rate {src.sample_rate} != {cfg.sample_rate}")
            source = src.samples[0].astype(np.float64)
            if cfg.max_seconds:
                source = source[:int(cfg.max_seconds * cfg.sample_rate)]
            target = udir / "target.wav"
            write_wav(target, MultiChannelWaveform(source[None].astype(np.float32), cfg.sample_rate))
            rec = {"utt_id": uid, "split": split, "condition": condition,
                   "sample_rate": cfg.sample_rate, "ref_channel": 1,
                   "source_file": src_path.name, "target": _rel(target, root)}
            if condition != "clean":
                real = condition == "real"
                lo, hi = cfg.real_snr_range if real else cfg.snr_range
                spec = MixtureSpec(
                    source=source,
                    noise_kind=cfg.real_noise_kind if real else cfg.noise_kind,
                    snr_db=float(rng.uniform(lo, hi)),
                    azimuth=float(rng.uniform(20, 160)),
                    seed=utt_seed,
                    noise_file=cfg.real_noise_file if real else cfg.noise_file,
                    noise_sources=cfg.noise_sources,
                    sensor_floor_db=cfg.sensor_floor_db,
                    gain_perturb_db=cfg.real_gain_perturb_db if real else 0.0,
                    delay_perturb=cfg.real_delay_perturb if real else 0.0,
                )
                mix = make_mixture(spec, geometry, cfg.sample_rate)
                write_wav(udir / "mixture.wav", MultiChannelWaveform(mix["mixture"], cfg.sample_rate))
                rec.update(mixture=_rel(udir / "mixture.wav", root), azimuth=spec.azimuth,
                           noise_kind=spec.noise_kind, snr_db=mix["snr_db"])
                if not real:
                    clean_paths, noise_paths = [], []
                    for c in range(mix["clean"].shape[0]):
                        cp, np_ = udir / f"clean_ch{c + 1}.wav", udir / f"noise_ch{c + 1}.wav"
                        write_wav(cp, MultiChannelWaveform(mix["clean"][c:c + 1], cfg.sample_rate))
                        write_wav(np_, MultiChannelWaveform(mix["noise"][c:c + 1], cfg.sample_rate))
                        clean_paths.append(_rel(cp, root))
                        noise_paths.append(_rel(np_, root))
                    rec.update(clean=clean_paths, noise=noise_paths)
            records.append(rec)
            k += 1
    write_manifest(root / MANIFEST_NAME, records)
    return records


def write_manifest(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "utt_id" not in rec or rec.get("condition") not in CONDITIONS:
                raise ManifestError(f"{path}: line {lineno}: record needs utt_id and a valid condition")
            if rec["condition"] == "simu" and not (rec.get("clean") and rec.get("noise")):
                raise ManifestError(f"{path}: line {lineno}: simu record without references")
            records.append(rec)
    return records


def load_record(rec: dict, root) -> dict:
    """Load the arrays a record points to; absent fields come back as None."""
    root = Path(root)

    def stack(paths):
        return np.concatenate([read_wav(root / p).samples for p in paths]) if paths else None

    out = {"utt_id": rec["utt_id"], "condition": rec["condition"]}
    out["mixture"] = read_wav(root / rec["mixture"]).samples if rec.get("mixture") else None
    out["clean"] = stack(rec.get("clean"))
    out["noise"] = stack(rec.get("noise"))
    out["target"] = read_wav(root / rec["target"]).samples[0] if rec.get("target") else None
    return out


def config_dict(cfg: DatasetConfig) -> dict:
    return asdict(cfg)
