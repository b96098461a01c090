"""Dataset manifests and feature loading.

A manifest is a small CSV (``path,label,speaker,group,split``) that pins
down exactly which file landed in which split, so a run is reproducible
from the manifest alone.  Paths are stored relative to the manifest's own
directory.  Scanning helpers build manifests for two corpus layouts:
spoken-digit trees of ``{digit}_{speaker}_{index}.wav`` files, and
genre trees of one directory per class holding clips (or spectrogram
images already rendered as PNGs).
"""

from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import decode_wav, resample
from .errors import AudioDecodeError, DataError
from .features import Spectrogram, mel_filterbank, mel_spectrogram

SPLITS = ("train", "val", "test")

_FIELDS = ("path", "label", "speaker", "group", "split")


@dataclass(frozen=True)
class ManifestRow:
    path: str  # relative to the manifest file
    label: str
    speaker: str
    group: str
    split: str


@dataclass
class Manifest:
    rows: list
    root: Path  # directory the row paths hang off

    @property
    def class_names(self):
        """Sorted distinct labels over ALL splits, shared by every consumer."""
        return sorted({r.label for r in self.rows})

    def split(self, name):
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}, expected one of {SPLITS}")
        return [r for r in self.rows if r.split == name]

    def save(self, path):
        """Write the CSV; row paths are rebased onto the manifest's directory."""
        path = Path(path)
        base = path.resolve().parent
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_FIELDS)
            for r in self.rows:
                rel = os.path.relpath((self.root / r.path).resolve(), base)
                w.writerow([Path(rel).as_posix(), r.label, r.speaker, r.group, r.split])

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            with path.open(newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                if header != list(_FIELDS):
                    raise DataError(f"{path}: expected header {','.join(_FIELDS)}, got {header}")
                rows = []
                for i, rec in enumerate(reader, start=2):
                    if len(rec) != len(_FIELDS):
                        raise DataError(f"{path}:{i}: expected {len(_FIELDS)} fields, got {len(rec)}")
                    row = ManifestRow(*rec)
                    if row.split not in SPLITS:
                        raise DataError(f"{path}:{i}: unknown split {row.split!r}")
                    if not row.path or not row.label:
                        raise DataError(f"{path}:{i}: path and label are required")
                    rows.append(row)
        except OSError as e:
            raise DataError(f"cannot read manifest {path}: {e}") from e
        if not rows:
            raise DataError(f"{path}: manifest has no rows")
        seen = set()
        for r in rows:
            if r.path in seen:
                raise DataError(f"{path}: duplicate entry {r.path}")
            seen.add(r.path)
        return cls(rows=rows, root=path.resolve().parent)


@dataclass
class LabeledExample:
    """One feature grid with its identity, ready for batching."""

    id: str
    features: np.ndarray  # (n_mels, n_frames) float32
    label: int
    label_name: str
    speaker: str
    group: str


def _features_from_wav(path, cfg, filterbank):
    clip = decode_wav(path)
    clip = resample(clip, cfg.sample_rate)
    return mel_spectrogram(clip, cfg, filterbank=filterbank)


def _features_from_image(path, cfg):
    """A pre-rendered spectrogram image, mapped onto the log-power scale.

    Grayscale intensity 0..255 becomes log(eps)..0 (dark = silence), the
    row order is flipped so low frequencies sit at row 0 like the computed
    features, and the image is resampled to the configured grid.
    """
    from PIL import Image

    try:
        with Image.open(path) as im:
            im = im.convert("L").resize((cfg.n_frames, cfg.n_mels), Image.BILINEAR)
            px = np.asarray(im, dtype=np.float32)
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    px = px[::-1, :]
    lo = np.float32(np.log(cfg.log_eps))
    values = lo - (px / np.float32(255.0)) * lo
    return Spectrogram(values, cfg.n_mels, cfg.n_frames, cfg.hop_length / cfg.sample_rate)


def load_split(manifest, split, feature_cfg):
    """Decode and featurize every row of one split, in manifest order.

    Returns (examples, class_names); labels are indices into class_names,
    which always covers the whole manifest so splits agree.
    """
    rows = manifest.split(split)
    if not rows:
        raise DataError(f"manifest has no rows in split {split!r}")
    class_names = manifest.class_names
    index = {c: i for i, c in enumerate(class_names)}
    fb = mel_filterbank(feature_cfg)
    examples = []
    for r in rows:
        path = manifest.root / r.path
        if path.suffix.lower() == ".png":
            spec = _features_from_image(path, feature_cfg)
        else:
            spec = _features_from_wav(path, feature_cfg, fb)
        examples.append(
            LabeledExample(
                id=Path(r.path).stem,
                features=spec.values,
                label=index[r.label],
                label_name=r.label,
                speaker=r.speaker,
                group=r.group,
            )
        )
    return examples, class_names


def load_groups(path):
    """Optional ``speaker,group`` CSV mapping; header row required."""
    path = Path(path)
    mapping = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["speaker", "group"]:
            raise DataError(f"{path}: expected header speaker,group, got {header}")
        for rec in reader:
            if len(rec) != 2:
                raise DataError(f"{path}: malformed row {rec}")
            mapping[rec[0]] = rec[1]
    return mapping


# ---------------------------------------------------------------------------
# corpus scanning

_DIGIT_NAME = re.compile(r"^(\d+)_([A-Za-z0-9]+)_(\d+)\.wav$")


def scan_digit_corpus(root, val_per_speaker=5, groups=None):
    """Manifest for a flat ``{digit}_{speaker}_{index}.wav`` tree.

    Within each (speaker, digit) pair, recordings sort by take index and
    the LAST ``val_per_speaker`` go to validation; takes are recorded in
    session order, so this holds out each speaker's final takes rather
    than a random sample.  Unparseable .wav names are an error, listed.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    wavs = sorted(root.rglob("*.wav"))
    if not wavs:
        raise DataError(f"{root}: no .wav files found")
    bad = [p.name for p in wavs if not _DIGIT_NAME.match(p.name)]
    if bad:
        raise DataError(f"{root}: filenames not matching digit_speaker_index.wav: {bad[:10]}")

    by_pair = {}
    for p in wavs:
        digit, speaker, idx = _DIGIT_NAME.match(p.name).groups()
        by_pair.setdefault((speaker, digit), []).append((int(idx), p))

    group_of = groups or {}
    rows = []
    for (speaker, digit), takes in sorted(by_pair.items()):
        takes.sort()
        if val_per_speaker >= len(takes):
            raise DataError(
                f"speaker {speaker} digit {digit}: {len(takes)} takes cannot"
                f" hold out {val_per_speaker} for validation"
            )
        n_train = len(takes) - val_per_speaker
        for j, (_, p) in enumerate(takes):
            rows.append(
                ManifestRow(
                    path=str(p.relative_to(root)),
                    label=digit,
                    speaker=speaker,
                    group=group_of.get(speaker, ""),
                    split="train" if j < n_train else "val",
                )
            )
    return Manifest(rows=rows, root=root)


def scan_genre_corpus(root, val_per_class=21, images=False):
    """Manifest for a one-directory-per-class tree; returns (manifest, skipped).

    Audio files are probed by decoding; undecodable ones are skipped and
    reported rather than failing the scan, since the well-known corpus of
    this shape ships with a corrupt clip or two.  Within each class, files
    sort by name and the last ``val_per_class`` go to validation.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    pattern = "*.png" if images else "*.wav"
    by_class = {}
    for p in sorted(root.rglob(pattern)):
        by_class.setdefault(p.parent.name, []).append(p)
    if not by_class:
        raise DataError(f"{root}: no {pattern} files found")

    rows, skipped = [], []
    for label, files in sorted(by_class.items()):
        keep = []
        for p in files:
            if not images:
                try:
                    decode_wav(p)
                except AudioDecodeError as e:
                    skipped.append(f"{p.relative_to(root)}: {e}")
                    continue
            keep.append(p)
        if len(keep) <= val_per_class:
            raise DataError(
                f"class {label}: {len(keep)} usable files cannot hold out {val_per_class}"
            )
        n_train = len(keep) - val_per_class
        for j, p in enumerate(keep):
            rows.append(
                ManifestRow(
                    path=str(p.relative_to(root)),
                    label=label,
                    speaker="",
                    group="",
                    split="train" if j < n_train else "val",
                )
            )
    return Manifest(rows=rows, root=root), skipped
