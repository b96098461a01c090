"""Spectrogram masking augmentation.

Rectangular frequency-band and time-interval masks, the policy popularized
for speech spectrograms: each mask has a width drawn uniformly from
[0, max] and a uniform placement, and is filled either with zeros or the
per-spectrogram mean of the unmasked input.  Width 0 is a legal draw and
leaves the grid untouched.

Pure function of (input, spec, rng): the caller owns the generator, so a
run is reproducible by seeding.  Draw order is fixed: frequency masks
first, then time masks, two draws (width, position) per mask.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .features import Spectrogram


@dataclass(frozen=True)
class AugmentSpec:
    freq_mask_max: int = 16
    time_mask_max: int = 32
    n_freq_masks: int = 1
    n_time_masks: int = 1
    fill: str = "mean"  # "mean" or "zero"

    def validate(self, n_mels=None, n_frames=None):
        if min(self.freq_mask_max, self.time_mask_max, self.n_freq_masks, self.n_time_masks) < 0:
            raise ConfigError("mask widths and counts must be non-negative")
        if self.fill not in ("mean", "zero"):
            raise ConfigError(f"unknown fill policy {self.fill!r}")
        if n_mels is not None and self.freq_mask_max > n_mels:
            raise ConfigError(f"freq_mask_max {self.freq_mask_max} exceeds {n_mels} mel bands")
        if n_frames is not None and self.time_mask_max > n_frames:
            raise ConfigError(f"time_mask_max {self.time_mask_max} exceeds {n_frames} frames")


def spec_augment(spec, aug, rng):
    """Masked copy of ``spec``; the input is never modified.

    The mean fill value is computed once from the input before any mask
    lands, so later masks do not see earlier ones.
    """
    aug.validate(n_mels=spec.n_mels, n_frames=spec.n_frames)
    out = spec.values.copy()
    fill = out.mean(dtype=out.dtype) if aug.fill == "mean" else out.dtype.type(0)

    for _ in range(aug.n_freq_masks):
        width = int(rng.integers(0, aug.freq_mask_max + 1))
        start = int(rng.integers(0, spec.n_mels - width + 1))
        out[start : start + width, :] = fill
    for _ in range(aug.n_time_masks):
        width = int(rng.integers(0, aug.time_mask_max + 1))
        start = int(rng.integers(0, spec.n_frames - width + 1))
        out[:, start : start + width] = fill

    return Spectrogram(out, spec.n_mels, spec.n_frames, spec.frame_hop_s)
