"""RIFF/WAVE reading and writing for PCM16 and IEEE float32, any channel count."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..dsp import MultiChannelWaveform

__all__ = ["read_wav", "write_wav", "WavFormatError"]

FORMAT_PCM = 0x0001
FORMAT_FLOAT = 0x0003
FORMAT_EXTENSIBLE = 0xFFFE


class WavFormatError(ValueError):
    pass


def read_wav(path) -> MultiChannelWaveform:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise WavFormatError(f"{path}: malformed header at byte {len(data)}: file shorter than RIFF header")
    if data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: malformed header at byte 0: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if cid == b"fmt ":
            if size < 16 or body + size > len(data):
                raise WavFormatError(f"{path}: malformed header at byte {pos}: bad fmt chunk")
            tag, channels, rate, _, align, bits = struct.unpack_from("<HHIIHH", data, body)
            if tag == FORMAT_EXTENSIBLE:
                if size < 40:
                    raise WavFormatError(f"{path}: malformed header at byte {pos}: short extensible fmt")
                (tag,) = struct.unpack_from("<H", data, body + 24)
            if channels < 1 or rate < 1:
                raise WavFormatError(f"{path}: malformed header at byte {body}: "
                                     f"{channels} channels at {rate} Hz")
            fmt = (tag, channels, rate, bits)
        elif cid == b"data":
            if fmt is None:
                raise WavFormatError(f"{path}: malformed header at byte {pos}: data chunk before fmt chunk")
            tag, channels, rate, bits = fmt
            if tag == FORMAT_PCM and bits == 16:
                dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
            elif tag == FORMAT_FLOAT and bits == 32:
                dtype, scale = np.dtype("<f4"), None
            else:
                raise WavFormatError(f"{path}: unsupported encoding (format tag 0x{tag:04x}, {bits} bits)")
            frame_bytes = dtype.itemsize * channels
            if body + size > len(data) or size % frame_bytes:
                raise WavFormatError(f"{path}: unexpected end of data chunk at byte {len(data)} "
                                     f"(declared {size} bytes from byte {body})")
            raw = np.frombuffer(data, dtype=dtype, count=size // dtype.itemsize, offset=body)
            frames = raw.reshape(-1, channels).T
            samples = frames.astype(np.float32) if scale is None else frames.astype(np.float64) * scale
            return MultiChannelWaveform(np.ascontiguousarray(samples), rate)
        pos = body + size + (size & 1)
    raise WavFormatError(f"{path}: malformed header at byte {pos}: no data chunk")


def write_wav(path, wave, encoding: str = "float32", sample_rate: int | None = None) -> None:
    """Write ``wave`` (MultiChannelWaveform or C x T / T array).

    PCM16 output is scaled by 32768 and saturated to the int16 range.
    """
    if isinstance(wave, MultiChannelWaveform):
        samples, rate = wave.samples, wave.sample_rate
    else:
        samples, rate = np.atleast_2d(np.asarray(wave)), 16000
    if sample_rate is not None:
        rate = sample_rate
    channels = samples.shape[0]
    if encoding == "float32":
        tag, bits = FORMAT_FLOAT, 32
        payload = np.ascontiguousarray(samples.T, dtype="<f4").tobytes()
    elif encoding == "pcm16":
        tag, bits = FORMAT_PCM, 16
        q = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
        payload = np.ascontiguousarray(q.T, dtype="<i2").tobytes()
    else:
        raise ValueError(f"unsupported encoding {encoding!r}")
    align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * align, align, bits)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    if tag == FORMAT_FLOAT:
        # non-PCM formats carry a fact chunk with the frame count
        chunks += b"fact" + struct.pack("<II", 4, samples.shape[1])
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        chunks += b"\x00"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks)
