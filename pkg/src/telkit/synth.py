"""Synthetic spoken-digit-style corpus.

Generates a flat tree of short 16 kHz WAV clips named
``{digit}_{speaker}_{index}.wav`` plus a ``groups.csv`` mapping speakers
to two groups, mimicking the layout of the common free spoken digit
corpora so the scanning and split logic can be exercised end to end
without shipping audio.

The signal model is source-filter, like voiced speech.  The source is a
harmonic comb at the speaker's fundamental with a speaker-specific
spectral tilt, so the gross energy layout of a clip is dominated by who
is talking; the digit class lives in the filter, a pair of formant
resonances whose center frequencies glide along a class-specific
trajectory.  Several digit pairs share static formant positions and
differ only in glide direction, which a classifier can pick up from
local time-frequency orientation but which barely moves a raw spectral
distance.  Takes jitter pitch, tract length, formant gains, onset (a
random lead-in keeps clips unaligned) and the noise floor.  A weak tone
above 4 kHz rides on every clip so downsampling below 8 kHz measurably
hurts.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .audio import write_wav

# per digit: F1 start/end, F2 start/end (Hz), AM rate (Hz), high-band tone (Hz).
# Digits 4 and 9 form a confusable mirror pair: identical bands and tone,
# opposite glide direction, and a small modulation-rate offset, so the pair
# separates slowly rather than never.  The other eight digits are distinct,
# but their tones crowd into close couples (0/6, 1/8, 5/7) so several
# contrasts lean on band shape alone and stay gradual to learn.
_DIGIT_TEMPLATES = (
    (300, 320, 900, 950, 3.0, 4300),
    (350, 360, 2000, 2050, 5.5, 4700),
    (450, 470, 1200, 1900, 2.5, 5100),
    (650, 650, 1100, 1750, 7.0, 5500),
    (420, 650, 1800, 1800, 4.0, 5900),
    (550, 550, 850, 1400, 6.0, 6300),
    (280, 280, 2400, 1700, 8.5, 4500),
    (480, 460, 2100, 1300, 3.4, 6100),
    (620, 640, 1650, 950, 7.8, 4900),
    (650, 420, 1800, 1800, 4.7, 5900),
)

_SPEAKER_NAMES = ("ada", "bel", "cal", "dot", "eli", "fay", "gus", "hal")

_MAX_HARMONIC_HZ = 4200.0


def _speaker_profiles(n_speakers, rng):
    profiles = []
    for i in range(n_speakers):
        name = _SPEAKER_NAMES[i] if i < len(_SPEAKER_NAMES) else f"spk{i}"
        low_voice = i % 2 == 0
        f0 = rng.uniform(85, 125) if low_voice else rng.uniform(165, 245)
        profiles.append(
            {
                "name": name,
                "group": "low" if low_voice else "high",
                "f0": f0,
                "formant_scale": rng.uniform(0.85, 1.15),
                "tilt": rng.uniform(0.7, 1.4),
                "level": rng.uniform(0.3, 0.6),
            }
        )
    return profiles


def _render_take(template, speaker, rng, sample_rate):
    f1s, f1e, f2s, f2e, am_rate, high = template
    dur = rng.uniform(0.38, 0.55)
    n = int(dur * sample_rate)
    t = np.arange(n) / sample_rate
    u = t / t[-1]

    f0 = speaker["f0"] * rng.uniform(0.96, 1.04)
    scale = speaker["formant_scale"] * rng.uniform(0.94, 1.06)
    n_harm = min(60, int(_MAX_HARMONIC_HZ / f0))
    k = np.arange(1, n_harm + 1, dtype=np.float64)

    # source: comb at k*f0 with vibrato, amplitudes rolling off as k^-tilt
    vib = 1.0 + 0.01 * np.sin(2 * np.pi * 5.0 * t + rng.uniform(0, 2 * np.pi))
    inst = k[:, None] * f0 * vib[None, :]
    phase = 2 * np.pi * np.cumsum(inst, axis=1) / sample_rate
    phase += rng.uniform(0, 2 * np.pi, size=(n_harm, 1))
    roll = k ** -speaker["tilt"]

    # filter: two gliding resonances weight each harmonic over time
    fr1 = (f1s + (f1e - f1s) * u) * scale
    fr2 = (f2s + (f2e - f2s) * u) * scale
    fk = (k * f0)[:, None]
    g1 = 1.0 * rng.uniform(0.7, 1.3)
    g2 = 0.8 * rng.uniform(0.7, 1.3)
    weights = (
        g1 * np.exp(-((fk - fr1[None, :]) ** 2) / (2.0 * 90.0**2))
        + g2 * np.exp(-((fk - fr2[None, :]) ** 2) / (2.0 * 140.0**2))
        + 0.03
    )
    sig = (roll[:, None] * weights * np.sin(phase)).sum(axis=0)

    sig += 0.18 * rng.uniform(0.6, 1.4) * np.sin(
        2 * np.pi * high * t + rng.uniform(0, 2 * np.pi)
    )
    sig *= 1.0 + rng.uniform(0.3, 0.7) * np.sin(
        2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi)
    )

    # attack and release so clips do not click
    edge = max(1, int(0.02 * sample_rate))
    env = np.ones(n)
    env[:edge] = np.linspace(0, 1, edge)
    env[-edge:] = np.linspace(1, 0, edge)
    lead = np.zeros(int(rng.uniform(0.0, 0.25) * sample_rate))
    sig = np.concatenate([lead, sig * env])
    sig += rng.normal(0.0, rng.uniform(0.01, 0.04), len(sig))

    sig *= speaker["level"] * rng.uniform(0.8, 1.2) / np.abs(sig).max()
    return sig.astype(np.float32)


def generate_digit_corpus(out_dir, n_speakers=6, n_digits=10, takes_per_digit=50,
                          sample_rate=16000, seed=0):
    """Write the corpus tree; returns (paths written, groups.csv path)."""
    if not 1 <= n_digits <= len(_DIGIT_TEMPLATES):
        raise ValueError(f"n_digits must be in [1, {len(_DIGIT_TEMPLATES)}]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([int(seed), 0x5D])
    speakers = _speaker_profiles(n_speakers, rng)

    paths = []
    for spk in speakers:
        for digit in range(n_digits):
            for take in range(takes_per_digit):
                samples = _render_take(_DIGIT_TEMPLATES[digit], spk, rng, sample_rate)
                path = out_dir / f"{digit}_{spk['name']}_{take}.wav"
                write_wav(path, samples, sample_rate)
                paths.append(path)

    groups_path = out_dir / "groups.csv"
    with groups_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["speaker", "group"])
        for spk in speakers:
            w.writerow([spk["name"], spk["group"]])
    return paths, groups_path
