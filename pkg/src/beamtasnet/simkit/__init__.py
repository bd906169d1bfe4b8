"""Synthetic multi-channel data generation and audio/manifest I/O."""
from .audio_io import WavFormatError, read_wav, write_wav
from .dataset import (DatasetConfig, ManifestError, build_dataset, load_record, read_manifest,
                      synthesize_sources, write_manifest)
from .synth import (ArrayGeometry, MixtureSpec, fractional_delay, make_mixture, make_noise,
                    spatialize, standard_eval_set, synth_speech)

__all__ = [
    "read_wav", "write_wav", "WavFormatError", "DatasetConfig", "build_dataset", "read_manifest",
    "write_manifest", "load_record", "synthesize_sources", "ManifestError", "ArrayGeometry",
    "MixtureSpec", "make_mixture", "make_noise", "spatialize", "fractional_delay", "synth_speech",
    "standard_eval_set",
]
