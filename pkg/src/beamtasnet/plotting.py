"""Figure rendering: log-magnitude spectrogram images and evaluation summaries.

Everything renders through the Agg backend with fixed metadata so identical
inputs give byte-identical PNG files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.image as mimage  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dsp import MultiChannelWaveform, StftConfig, stft  # noqa: E402

__all__ = ["spectrogram_db", "save_spectrogram_png", "render_metrics_figure", "DB_FLOOR"]

DB_FLOOR = -80.0
_PNG_META = {"Software": None}


def spectrogram_db(wave, channel: int = 1, cfg: StftConfig | None = None) -> np.ndarray:
    """Log-magnitude STFT of one channel in dB relative to its peak, clipped to ``[-80, 0]``.

    Returns ``(F, frames)`` with row 0 the DC bin. An all-zero input maps to a
    uniform floor image.
    """
    cfg = cfg or StftConfig()
    if not isinstance(wave, MultiChannelWaveform):
        wave = MultiChannelWaveform(np.atleast_2d(np.asarray(wave)))
    if not 1 <= channel <= wave.num_channels:
        raise ValueError(f"channel {channel} out of range 1..{wave.num_channels}")
    single = MultiChannelWaveform(wave.samples[channel - 1:channel], wave.sample_rate)
    mag = np.abs(stft(single, cfg).data[0]).T
    peak = mag.max()
    if peak == 0:
        return np.full(mag.shape, DB_FLOOR)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag / peak)
    return np.clip(db, DB_FLOOR, 0.0)


def save_spectrogram_png(path, image_db: np.ndarray, palette: str = "gray") -> Path:
    """Write ``image_db`` one pixel per (bin, frame), low frequencies at the bottom."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mimage.imsave(path, np.asarray(image_db), cmap=palette, vmin=DB_FLOOR, vmax=0.0,
                  origin="lower", format="png", metadata=_PNG_META)
    return path


def render_metrics_figure(records: list, path, metric: str = "si_sdr_db", title: str | None = None) -> Path:
    """Per-utterance bar chart of ``metric`` with one mean line per condition."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    recs = [r for r in records if r.get(metric) is not None and np.isfinite(r[metric])]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.18 * len(recs) + 2), 3.2), dpi=100)
    conds = sorted({r.get("condition") or "-" for r in recs})
    colors = {c: f"C{i}" for i, c in enumerate(conds)}
    for i, r in enumerate(recs):
        ax.bar(i, r[metric], color=colors[r.get("condition") or "-"], width=0.8)
    for c in conds:
        vals = [r[metric] for r in recs if (r.get("condition") or "-") == c]
        ax.axhline(float(np.mean(vals)), color=colors[c], linestyle="--", linewidth=1,
                   label=f"{c}: mean {np.mean(vals):.2f} dB (n={len(vals)})")
    ax.axhline(0.0, color="k", linewidth=0.5)
    ax.set_xlabel("utterance")
    ax.set_ylabel(metric.replace("_db", " [dB]"))
    ax.set_title(title or f"{metric} per utterance")
    if conds:
        ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return path
