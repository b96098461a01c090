"""Log-mel spectrogram extraction.

Clips are padded/truncated to a fixed duration so every spectrogram for a
given config has identical shape, then framed, windowed (periodic Hann),
FFT'd, mapped through a triangular mel filterbank and log-compressed as
log(power + eps).  Deterministic: same clip + config gives bit-identical
output.

The default front-end (25 ms window, 10 ms hop, 512-point FFT at 16 kHz,
fmin 0, fmax Nyquist, power mel) is a standard speech setup; none of
those numbers is sacred and all are overridable in the config.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    duration_s: float = 3.0
    window_length: int = 400
    hop_length: int = 160
    n_fft: int = 512
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float | None = None  # None = Nyquist
    log_eps: float = 1e-10

    def validate(self):
        if self.sample_rate <= 0 or self.duration_s <= 0:
            raise ConfigError("sample_rate and duration_s must be positive")
        if self.hop_length <= 0 or self.window_length <= 0:
            raise ConfigError("window/hop lengths must be positive")
        if self.window_length > self.n_fft:
            raise ConfigError(f"window_length {self.window_length} exceeds n_fft {self.n_fft}")
        if self.n_mels > self.n_fft // 2 + 1:
            raise ConfigError(f"n_mels {self.n_mels} exceeds the {self.n_fft // 2 + 1} FFT bins")
        if self.fmax is not None and self.fmax > self.sample_rate / 2:
            raise ConfigError(f"fmax {self.fmax} above Nyquist {self.sample_rate / 2}")
        if self.clip_samples < self.window_length:
            raise ConfigError("configured duration shorter than one analysis window")

    @property
    def clip_samples(self):
        return int(round(self.duration_s * self.sample_rate))

    @property
    def n_frames(self):
        return (self.clip_samples - self.window_length) // self.hop_length + 1


@dataclass
class Spectrogram:
    """2-d log-mel grid, n_mels rows by n_frames columns."""

    values: np.ndarray
    n_mels: int
    n_frames: int
    frame_hop_s: float

    def copy(self):
        return Spectrogram(self.values.copy(), self.n_mels, self.n_frames, self.frame_hop_s)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg):
    """Triangular mel filters over the rfft bins, shape (n_mels, n_fft//2+1).

    With many mel bands and a small FFT the lowest triangles can be
    narrower than one bin and would come out empty; those rows fall back
    to a single unit weight on the bin nearest the band centre, so every
    row sums to something positive and stays inside its triangle support.
    """
    n_bins = cfg.n_fft // 2 + 1
    fmax = cfg.fmax if cfg.fmax is not None else cfg.sample_rate / 2
    bin_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2))

    fb = np.zeros((cfg.n_mels, n_bins), dtype=np.float64)
    for i in range(cfg.n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (bin_freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - mid, 1e-12)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
        if fb[i].sum() <= 0.0:
            nearest = int(np.argmin(np.abs(bin_freqs - mid)))
            fb[i, nearest] = 1.0
    return fb


def _frame(samples, window_length, hop_length):
    n = (len(samples) - window_length) // hop_length + 1
    stride = samples.strides[0]
    return np.lib.stride_tricks.as_strided(
        samples, shape=(n, window_length), strides=(hop_length * stride, stride)
    )


def mel_spectrogram(clip, cfg, filterbank=None):
    """Fixed-size log-mel spectrogram of one clip.

    The clip must already be at cfg.sample_rate; it is zero-padded or
    tail-truncated to exactly cfg.duration_s.  Pass a precomputed
    ``filterbank`` when extracting many clips under one config.
    """
    cfg.validate()
    if clip.sample_rate != cfg.sample_rate:
        raise DataError(
            f"{clip.source_path}: clip rate {clip.sample_rate} != configured {cfg.sample_rate}; resample first"
        )
    if len(clip.samples) == 0:
        raise DataError(f"{clip.source_path}: empty clip")

    x = np.asarray(clip.samples, dtype=np.float64)
    target = cfg.clip_samples
    if len(x) < target:
        x = np.concatenate([x, np.zeros(target - len(x))])
    elif len(x) > target:
        x = x[:target]

    frames = _frame(x, cfg.window_length, cfg.hop_length)
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(cfg.window_length) / cfg.window_length)
    spectrum = np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)
    power = spectrum.real**2 + spectrum.imag**2  # (n_frames, n_bins)

    fb = filterbank if filterbank is not None else mel_filterbank(cfg)
    mel_power = fb @ power.T
    values = np.log(mel_power + cfg.log_eps).astype(np.float32)
    return Spectrogram(
        values=values,
        n_mels=cfg.n_mels,
        n_frames=values.shape[1],
        frame_hop_s=cfg.hop_length / cfg.sample_rate,
    )


# --- flat binary feature blob ------------------------------------------------
# 16-byte header: magic "SPEC", u32 n_mels, u32 n_frames, u32 dtype tag
# (4 = float32), then row-major little-endian floats.

_BLOB_MAGIC = b"SPEC"


def write_feature_blob(spec, path):
    """Serialize one spectrogram to the flat binary format."""
    values = np.ascontiguousarray(spec.values, dtype="<f4")
    header = struct.pack("<4sIII", _BLOB_MAGIC, spec.n_mels, spec.n_frames, 4)
    Path(path).write_bytes(header + values.tobytes())


def read_feature_blob(path, frame_hop_s=0.01):
    """Read a spectrogram back from the flat binary format."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _BLOB_MAGIC:
        raise DataError(f"{path}: not a feature blob")
    n_mels, n_frames, tag = struct.unpack_from("<III", raw, 4)
    if tag != 4:
        raise DataError(f"{path}: unsupported dtype tag {tag}")
    expect = 16 + 4 * n_mels * n_frames
    if len(raw) != expect:
        raise DataError(f"{path}: expected {expect} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=16).reshape(n_mels, n_frames).copy()
    return Spectrogram(values=values, n_mels=n_mels, n_frames=n_frames, frame_hop_s=frame_hop_s)
