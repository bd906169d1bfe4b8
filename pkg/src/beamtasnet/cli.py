"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure (message on stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

__all__ = ["main", "build_parser"]


def _stft_cfg(args):
    from .dsp import StftConfig

    return StftConfig(fft_size=args.fft_size, hop=args.hop)


def _add_stft(p):
    p.add_argument("--fft-size", type=int, default=512, help="STFT size in samples (default 512)")
    p.add_argument("--hop", type=int, default=128, help="STFT hop in samples (default 128)")


def enhance_wave(params, arch, wave, strategy: str, ref_channel: int = 1, stft_cfg=None,
                 loading: float = 1e-5) -> np.ndarray:
    """Single-channel enhanced signal for one multi-channel input."""
    from .beamform import beam_tasnet_enhance
    from .tasnet import forward, rotate_channels

    if wave.num_channels != arch.in_channels:
        raise ValueError(f"channel mismatch: expected C={arch.in_channels} channels, got {wave.num_channels}")
    if not 1 <= ref_channel <= wave.num_channels:
        raise ValueError(f"reference channel {ref_channel} out of range 1..{wave.num_channels}")
    if strategy == "tasnet":
        return forward(params, arch, rotate_channels(wave.samples, ref_channel)).speech
    return beam_tasnet_enhance(params, arch, wave, strategy, ref_channel, stft_cfg, loading)


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    from .simkit import DatasetConfig, build_dataset, synthesize_sources

    cfg = DatasetConfig.from_file(args.config)
    if args.make_sources:
        synthesize_sources(cfg.source_dir, args.make_sources, seed=cfg.seed,
                           duration=tuple(args.source_seconds), fs=cfg.sample_rate)
    records = build_dataset(cfg)
    counts = {}
    for r in records:
        key = f"{r['split']}/{r['condition']}"
        counts[key] = counts.get(key, 0) + 1
    print(f"wrote {len(records)} utterances to {cfg.out_dir}")
    for key in sorted(counts):
        print(f"  {key}: {counts[key]}")
    return 0


def cmd_train(args) -> int:
    from .tasnet import TasNetArch, init_params
    from .trainer import load_model, read_train_file, train

    cfg, arch_dict, init_seed = read_train_file(args.config)
    if args.init:
        params, arch, _ = load_model(args.init)
    else:
        arch = TasNetArch.from_dict(arch_dict or {})
        params = init_params(arch, init_seed)

    def progress(entry):
        if "dev_loss" in entry:
            print(f"step {entry['step']:>6}  dev_loss {entry['dev_loss']:.4f}", flush=True)
        else:
            print(f"step {entry['step']:>6}  total {entry['total']:.4f}", flush=True)

    result = train(args.manifest, params, arch, cfg, mode=args.mode, out_dir=args.out_dir,
                   progress=None if args.quiet else progress)
    print(f"finished after {result.steps} steps"
          + (" (early stop)" if result.stopped_early else "")
          + f"; final checkpoint {result.checkpoints[-1]}")
    return 0


def cmd_enhance(args) -> int:
    from .simkit.audio_io import read_wav, write_wav
    from .trainer import load_model

    params, arch, _ = load_model(args.model)
    cfg = _stft_cfg(args)
    if args.input:
        if not args.output:
            raise ValueError("--input needs --output")
        jobs = [(Path(args.input), Path(args.output))]
    else:
        from .simkit.dataset import read_manifest

        if not args.output_dir:
            raise ValueError("--manifest needs --output-dir")
        root = Path(args.manifest).parent
        recs = [r for r in read_manifest(args.manifest)
                if r.get("mixture") and (args.split is None or r.get("split") == args.split)]
        jobs = [(root / r["mixture"], Path(args.output_dir) / f"{r['utt_id']}.wav") for r in recs]
    for src, dst in jobs:
        wave = read_wav(src)
        out = enhance_wave(params, arch, wave, args.strategy, args.ref_channel, cfg, args.loading)
        write_wav(dst, np.asarray(out, dtype=np.float32)[None], sample_rate=wave.sample_rate)
    print(f"enhanced {len(jobs)} file(s) with strategy {args.strategy}")
    return 0


def cmd_evaluate(args) -> int:
    from .metrics import evaluate_set, format_table, write_report
    from .plotting import render_metrics_figure

    report = evaluate_set(args.manifest, args.enhanced, allow_scale=args.allow_scale, split=args.split)
    lines_path, summary_path = write_report(report, args.out)
    print(format_table(report))
    print(f"report: {summary_path} (per-utterance: {lines_path})")
    if not args.no_figure:
        fig = render_metrics_figure(report.records, Path(args.out).with_suffix(".png"),
                                    title=f"SI-SDR per utterance ({Path(args.enhanced).name})")
        print(f"figure: {fig}")
    return 0


def cmd_spectrogram(args) -> int:
    from .plotting import save_spectrogram_png, spectrogram_db
    from .simkit.audio_io import read_wav

    wave = read_wav(args.input)
    img = spectrogram_db(wave, args.channel, _stft_cfg(args))
    save_spectrogram_png(args.out, img, args.palette)
    print(f"wrote {args.out} ({img.shape[0]} bins x {img.shape[1]} frames)")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamtasnet",
                                     description="Multi-channel time-domain speech enhancement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a multi-condition dataset from a config file")
    p.add_argument("--config", required=True, help="dataset config (JSON or TOML)")
    p.add_argument("--make-sources", type=int, default=0, metavar="N",
                   help="first write N speech-like sources into the config's source_dir")
    p.add_argument("--source-seconds", type=float, nargs=2, default=(1.0, 1.0), metavar=("LO", "HI"),
                   help="duration range of generated sources (default 1.0 1.0)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the enhancer (enh_only) or fine-tune jointly")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True, help="training config (JSON or TOML)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=("enh_only", "joint"), default="enh_only")
    p.add_argument("--init", help="checkpoint to start from (architecture is taken from it)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance one file or every mixture of a manifest")
    p.add_argument("--model", required=True, help="checkpoint written by train")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="multi-channel WAV")
    src.add_argument("--manifest", help="manifest whose mixtures are enhanced")
    p.add_argument("--output", help="output WAV (with --input)")
    p.add_argument("--output-dir", help="output directory, one <utt_id>.wav each (with --manifest)")
    p.add_argument("--split", help="only records of this split (with --manifest)")
    p.add_argument("--strategy", choices=("tasnet", "sig_mvdr", "mask_psm", "mask_1d"), default="mask_1d")
    p.add_argument("--ref-channel", type=int, default=1)
    p.add_argument("--loading", type=float, default=1e-5, help="relative diagonal loading (default 1e-5)")
    _add_stft(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score enhanced files against manifest references")
    p.add_argument("--manifest", required=True)
    p.add_argument("--enhanced", required=True, help="directory of <utt_id>.wav files")
    p.add_argument("--out", required=True, help="summary JSON path; records go to the .jsonl sibling")
    p.add_argument("--split")
    p.add_argument("--allow-scale", action="store_true", help="sdr_db uses SI-SDR instead of plain SNR")
    p.add_argument("--no-figure", action="store_true", help="skip the PNG next to the summary")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("spectrogram", help="render a log-magnitude spectrogram PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--channel", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--palette", default="gray", help="matplotlib colormap name (default gray)")
    _add_stft(p)
    p.set_defaults(func=cmd_spectrogram)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures map to exit code 1
        msg = str(exc) or exc.__class__.__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
