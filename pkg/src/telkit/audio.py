"""WAV decoding and sample-rate conversion.

Only RIFF/WAVE with PCM 16-bit or IEEE float 32-bit payloads is accepted;
everything else is rejected with the offending path in the message.  The
recordings this toolkit cares about come at 8 kHz or 16 kHz, so clips are
normalised to the configured rate before feature extraction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import AudioDecodeError


@dataclass
class AudioClip:
    """Mono waveform in [-1, 1] plus its sample rate and origin."""

    samples: np.ndarray
    sample_rate: int
    source_path: str

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate


def _read_chunks(raw, path):
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioDecodeError(f"{path}: not a RIFF/WAVE file")
    chunks = {}
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if cid in (b"fmt ", b"data") and cid not in chunks:
            chunks[cid] = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if b"fmt " not in chunks or b"data" not in chunks:
        raise AudioDecodeError(f"{path}: missing fmt/data chunk")
    return chunks


def decode_wav(path):
    """Decode a WAV file to a mono AudioClip scaled to [-1, 1].

    Stereo is averaged down; PCM-16 samples are divided by 32768 so that
    full negative scale maps exactly to -1.
    """
    path = str(path)
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise AudioDecodeError(f"{path}: unreadable ({e})") from e

    chunks = _read_chunks(raw, path)
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise AudioDecodeError(f"{path}: truncated fmt chunk")
    audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if channels < 1 or rate <= 0:
        raise AudioDecodeError(f"{path}: bad fmt (channels={channels}, rate={rate})")

    data = chunks[b"data"]
    if audio_format == 1 and bits == 16:
        frames = np.frombuffer(data[: len(data) - len(data) % (2 * channels)], dtype="<i2")
        samples = frames.astype(np.float32) / 32768.0
    elif audio_format == 3 and bits == 32:
        frames = np.frombuffer(data[: len(data) - len(data) % (4 * channels)], dtype="<f4")
        samples = np.clip(frames.astype(np.float32), -1.0, 1.0)
    else:
        raise AudioDecodeError(
            f"{path}: unsupported encoding (format={audio_format}, bits={bits}); "
            "only PCM-16 and float-32 are handled"
        )

    if channels > 1:
        samples = samples[: len(samples) - len(samples) % channels]
        samples = samples.reshape(-1, channels).mean(axis=1)
    if len(samples) == 0:
        raise AudioDecodeError(f"{path}: zero-length audio")
    if not np.isfinite(samples).all():
        raise AudioDecodeError(f"{path}: non-finite samples")
    return AudioClip(samples=np.ascontiguousarray(samples, dtype=np.float32),
                     sample_rate=int(rate), source_path=path)


def write_wav(path, samples, sample_rate):
    """Write mono float samples in [-1, 1] as a PCM-16 WAV."""
    pcm = np.clip(np.asarray(samples, dtype=np.float64) * 32768.0, -32768, 32767)
    pcm = pcm.astype("<i2")
    body = pcm.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(body), b"WAVE",
        b"fmt ", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16,
        b"data", len(body),
    )
    Path(path).write_bytes(header + body)


def resample(clip, target_rate):
    """Polyphase resample to target_rate; identity when rates already match."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if clip.sample_rate == target_rate:
        return clip
    g = gcd(clip.sample_rate, target_rate)
    out = resample_poly(clip.samples.astype(np.float64), target_rate // g, clip.sample_rate // g)
    return AudioClip(samples=out.astype(np.float32), sample_rate=int(target_rate),
                     source_path=clip.source_path)
