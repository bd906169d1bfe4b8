"""Signal-level metrics (SNR, SI-SDR, SDR) and set-level evaluation reports."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tasnet import snr_db

__all__ = ["si_sdr", "sdr", "snr_db", "MetricReport", "evaluate_set", "write_report",
           "format_table", "METRICS"]

METRICS = ("snr_db", "si_sdr_db", "sdr_db")
REPORT_SCHEMA = "beamtasnet-metrics/1"
SDR_NOTE = ("sdr_db is plain SNR (allow_scale=false) or SI-SDR (allow_scale=true); "
            "BSS-Eval distortion filtering is not applied")


def si_sdr(ref, est, cap: float = 60.0) -> float:
    """Scale-invariant SDR in dB, clamped to ``[-cap, cap]``."""
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    energy = float(np.dot(ref, ref))
    if energy == 0.0:
        raise ValueError("silent reference")
    target = (np.dot(est, ref) / energy) * ref
    resid = est - target
    num, den = float(np.dot(target, target)), float(np.dot(resid, resid))
    if den == 0.0:
        return cap
    if num == 0.0:
        return -cap
    return float(np.clip(10.0 * np.log10(num / den), -cap, cap))


def sdr(ref, est, allow_scale: bool = False, cap: float = 60.0) -> float:
    return si_sdr(ref, est, cap) if allow_scale else snr_db(ref, est, "power10", cap)


@dataclass
class MetricReport:
    records: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def aggregates(self) -> dict:
        out = {}
        for m in METRICS:
            vals = [r[m] for r in self.records if m in r and math.isfinite(r[m])]
            out[m] = {
                # fsum is exactly rounded, so the mean does not depend on record order
                "mean": math.fsum(vals) / len(vals) if vals else None,
                "median": float(np.median(vals)) if vals else None,
                "count": len(vals),
            }
        return out

    def summary(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "note": SDR_NOTE,
            "utterances": len(self.records),
            "skipped_count": len(self.skipped),
            "skipped": self.skipped,
            "aggregates": self.aggregates(),
        }


def evaluate_pair(ref, est, allow_scale: bool = False, cap: float = 60.0) -> dict:
    return {
        "snr_db": snr_db(ref, est, "power10", cap),
        "si_sdr_db": si_sdr(ref, est, cap),
        "sdr_db": sdr(ref, est, allow_scale, cap),
    }


def _reference_for(record: dict, root: Path):
    """Reference-channel clean path for ``record`` or None when it carries no reference."""
    ref_ch = int(record.get("ref_channel", 1))
    clean = record.get("clean")
    if clean:
        return root / clean[ref_ch - 1]
    if record.get("target"):
        return root / record["target"]
    return None


def evaluate_set(manifest, enhanced_dir, allow_scale: bool = False, max_mismatch: int = 128,
                 cap: float = 60.0, split: str | None = None) -> MetricReport:
    """Score ``<enhanced_dir>/<utt_id>.wav`` against each record's reference channel.

    ``manifest`` is a path to a JSON-lines manifest or an already-loaded list
    of records (paths then resolve against the current directory). Problems
    with individual utterances are reported as skips, never raised.
    """
    from .simkit.audio_io import read_wav
    from .simkit.dataset import read_manifest

    if isinstance(manifest, (str, Path)):
        root = Path(manifest).parent
        records = read_manifest(manifest)
    else:
        root, records = Path("."), list(manifest)
    if split is not None:
        records = [r for r in records if r.get("split") == split]
    if not records:
        raise ValueError("empty manifest")
    enhanced_dir = Path(enhanced_dir)
    report = MetricReport()
    for rec in sorted(records, key=lambda r: r["utt_id"]):
        uid = rec["utt_id"]
        ref_path = _reference_for(rec, root)
        if ref_path is None:
            report.skipped.append({"utt_id": uid, "reason": "no reference signal"})
            continue
        est_path = enhanced_dir / f"{uid}.wav"
        if not est_path.exists():
            report.skipped.append({"utt_id": uid, "reason": f"missing enhanced file {est_path.name}"})
            continue
        try:
            ref_w = read_wav(ref_path)
            est_w = read_wav(est_path)
        except (OSError, ValueError) as exc:
            report.skipped.append({"utt_id": uid, "reason": str(exc)})
            continue
        if ref_w.sample_rate != est_w.sample_rate:
            report.skipped.append({"utt_id": uid, "reason": "sample rate mismatch"})
            continue
        ref_ch = int(rec.get("ref_channel", 1))
        ref = ref_w.samples[0]
        est = est_w.samples[ref_ch - 1] if est_w.num_channels > 1 else est_w.samples[0]
        if abs(len(ref) - len(est)) > max_mismatch:
            report.skipped.append({"utt_id": uid, "reason": f"length mismatch {len(ref)} vs {len(est)}"})
            continue
        n = min(len(ref), len(est))
        try:
            vals = evaluate_pair(ref[:n], est[:n], allow_scale, cap)
        except ValueError as exc:
            report.skipped.append({"utt_id": uid, "reason": str(exc)})
            continue
        report.records.append({"utt_id": uid, "condition": rec.get("condition"), **vals})
    return report


def format_table(report: MetricReport) -> str:
    head = f"{'utt_id':<24}{'SNR':>9}{'SI-SDR':>9}{'SDR':>9}"
    lines = [head, "-" * len(head)]
    for r in report.records:
        lines.append(f"{r['utt_id']:<24}{r['snr_db']:9.2f}{r['si_sdr_db']:9.2f}{r['sdr_db']:9.2f}")
    lines.append("-" * len(head))
    agg = report.aggregates()
    for stat in ("mean", "median"):
        cells = [agg[m][stat] for m in METRICS]
        lines.append(f"{stat:<24}" + "".join(f"{v:9.2f}" if v is not None else f"{'-':>9}" for v in cells))
    if report.skipped:
        lines.append(f"skipped: {len(report.skipped)}")
        lines.extend(f"  {s['utt_id']}: {s['reason']}" for s in report.skipped)
    return "\n".join(lines)


def write_report(report: MetricReport, out_path) -> tuple[Path, Path]:
    """Write per-utterance JSON lines next to a summary JSON.

    ``out_path`` names the summary file; records go to the same stem with a
    ``.jsonl`` suffix.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    lines_path = out_path.with_suffix(".jsonl")
    with open(lines_path, "w", encoding="utf-8") as fh:
        for r in report.records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return lines_path, out_path
