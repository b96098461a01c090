"""Epoch batch construction.

Two samplers.  ``shuffle`` is the ordinary permuted sweep.
``class_balanced`` builds each batch from P classes times K examples so a
metric loss always has positives to pair; with pure shuffling, a rare
class can easily land alone in a batch and contribute nothing.

Both are pure functions of (labels, config, epoch_seed): the same epoch of
the same run is reproducible without touching global RNG state.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError

SAMPLERS = ("auto", "shuffle", "class_balanced")


def derive_pk(batch_size, n_classes):
    """A (P, K) split of batch_size: P classes per batch, K examples each.

    P starts at min(n_classes, batch_size // 2) and walks down to the
    nearest divisor of batch_size, so P * K == batch_size always holds and
    every class slot receives at least 2 examples.
    """
    if batch_size < 4:
        raise ConfigError(f"class-balanced batches need batch_size >= 4, got {batch_size}")
    p = min(n_classes, batch_size // 2)
    while p > 1 and batch_size % p != 0:
        p -= 1
    return p, batch_size // p


def _labels_of(dataset):
    return np.asarray([getattr(ex, "label", ex) for ex in dataset])


def make_batches(dataset, cfg, epoch_seed):
    """Index batches for one epoch, as a list of int64 arrays.

    ``cfg`` is duck-typed: batch_size, effective_sampler, sampler_p,
    sampler_k and regime are read off it, so a TrainConfig or any
    namespace with those attributes works.  ``epoch_seed`` should already
    mix the run seed and the epoch number.

    shuffle: one permutation chopped into batches; the final short batch
    is kept for a pure-classification regime and dropped otherwise (tiny
    remnants mine poorly).
    class_balanced: every batch draws P distinct classes and K examples
    per class, without replacement inside a batch; classes with fewer
    than K examples overall are an error, named.
    """
    batch_size = cfg.batch_size
    sampler = cfg.effective_sampler
    p, k = cfg.sampler_p, cfg.sampler_k
    keep_short_final = cfg.regime == "cel"
    labels = _labels_of(dataset)
    n = len(labels)
    if n == 0:
        raise DataError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    rng = np.random.default_rng(epoch_seed)

    if sampler == "shuffle":
        perm = rng.permutation(n)
        batches = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
        if not keep_short_final and len(batches) > 1 and len(batches[-1]) < batch_size:
            batches.pop()
        return [b.astype(np.int64) for b in batches]

    if sampler != "class_balanced":
        raise ConfigError(f"unknown sampler {sampler!r}")

    classes = np.unique(labels)
    if p is None or k is None:
        p, k = derive_pk(batch_size, len(classes))
    if p * k != batch_size:
        raise ConfigError(f"P*K = {p}*{k} != batch_size {batch_size}")
    if p > len(classes):
        raise ConfigError(f"P = {p} exceeds the {len(classes)} distinct classes")
    if p < 2:
        raise ConfigError("class-balanced batches need P >= 2 distinct classes")

    by_class = {c: np.flatnonzero(labels == c) for c in classes}
    thin = sorted(str(c) for c, idx in by_class.items() if len(idx) < k)
    if thin:
        raise DataError(f"classes with fewer than K={k} examples: {thin}")

    n_batches = max(1, n // batch_size)
    batches = []
    for _ in range(n_batches):
        chosen = rng.choice(classes, size=p, replace=False)
        rows = [rng.choice(by_class[c], size=k, replace=False) for c in chosen]
        batches.append(np.concatenate(rows).astype(np.int64))
    return batches
