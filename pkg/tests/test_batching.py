"""Batch samplers: coverage, balance, determinism, failure naming."""

from types import SimpleNamespace

import numpy as np
import pytest

from telkit.batching import derive_pk, make_batches
from telkit.errors import ConfigError, DataError


def cfg(batch_size=8, sampler="shuffle", regime="tel", p=None, k=None):
    return SimpleNamespace(
        batch_size=batch_size,
        effective_sampler=sampler,
        sampler_p=p,
        sampler_k=k,
        regime=regime,
    )


def labels(seq):
    return [SimpleNamespace(label=c) for c in seq]


# -- derive_pk -----------------------------------------------------------------


@pytest.mark.parametrize(
    "batch,classes,want",
    [
        (64, 10, (8, 8)),
        (64, 4, (4, 16)),
        (32, 10, (8, 4)),
        (12, 5, (4, 3)),  # 5 and 6 > 12//2, walk down from min(5, 6)=5 to 4
        (6, 10, (3, 2)),
        (4, 2, (2, 2)),
        (10, 3, (2, 5)),  # 3 does not divide 10
    ],
)
def test_derive_pk(batch, classes, want):
    assert derive_pk(batch, classes) == want


def test_derive_pk_product_invariant():
    for batch in range(4, 65):
        for classes in range(2, 12):
            p, k = derive_pk(batch, classes)
            assert p * k == batch and p >= 1 and k >= 2


def test_derive_pk_rejects_tiny_batch():
    with pytest.raises(ConfigError):
        derive_pk(3, 4)


# -- shuffle -------------------------------------------------------------------


def test_shuffle_partitions_every_index():
    data = labels([0, 1] * 8)
    batches = make_batches(data, cfg(batch_size=4, regime="cel"), epoch_seed=[1, 2])
    flat = np.concatenate(batches)
    assert sorted(flat.tolist()) == list(range(16))
    assert [len(b) for b in batches] == [4, 4, 4, 4]


def test_shuffle_keeps_short_final_batch_only_for_cel():
    data = labels([0, 1] * 5)  # 10 examples, batch 4 -> 4,4,2
    short = make_batches(data, cfg(batch_size=4, regime="cel"), epoch_seed=[0])
    assert [len(b) for b in short] == [4, 4, 2]
    for regime in ("tel", "triplet"):
        drop = make_batches(data, cfg(batch_size=4, regime=regime), epoch_seed=[0])
        assert [len(b) for b in drop] == [4, 4]


def test_shuffle_single_short_batch_survives():
    data = labels([0, 1, 0])
    batches = make_batches(data, cfg(batch_size=8, regime="tel"), epoch_seed=[0])
    assert [len(b) for b in batches] == [3]


def test_shuffle_epoch_seed_controls_order():
    data = labels(range(20))
    a = make_batches(data, cfg(), epoch_seed=[5, 1])
    b = make_batches(data, cfg(), epoch_seed=[5, 1])
    c = make_batches(data, cfg(), epoch_seed=[5, 2])
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))


def test_shuffle_actually_permutes():
    data = labels(range(64))
    batches = make_batches(data, cfg(batch_size=64), epoch_seed=[9])
    assert not np.array_equal(batches[0], np.arange(64))


# -- class_balanced --------------------------------------------------------------


def test_balanced_batches_have_p_classes_k_each():
    y = np.repeat(np.arange(5), 20)
    data = labels(y)
    batches = make_batches(data, cfg(batch_size=8, sampler="class_balanced"), epoch_seed=[3])
    assert len(batches) == 100 // 8
    for b in batches:
        assert len(b) == 8
        vals, counts = np.unique(y[b], return_counts=True)
        assert len(vals) == 4 and (counts == 2).all()  # derive_pk(8, 5) = (4, 2)
        assert len(np.unique(b)) == len(b)  # no repeats inside a batch


def test_balanced_respects_explicit_pk():
    y = np.repeat(np.arange(4), 12)
    batches = make_batches(
        labels(y), cfg(batch_size=12, sampler="class_balanced", p=3, k=4), epoch_seed=[1]
    )
    for b in batches:
        vals, counts = np.unique(y[b], return_counts=True)
        assert len(vals) == 3 and (counts == 4).all()


def test_balanced_is_seed_deterministic():
    y = np.repeat(np.arange(4), 10)
    a = make_batches(labels(y), cfg(batch_size=8, sampler="class_balanced"), epoch_seed=[7, 0])
    b = make_batches(labels(y), cfg(batch_size=8, sampler="class_balanced"), epoch_seed=[7, 0])
    assert all(np.array_equal(x, y_) for x, y_ in zip(a, b))


def test_balanced_names_thin_classes():
    y = [0] * 10 + [1] * 10 + [2]  # class 2 has one example, K will be >= 2
    with pytest.raises(DataError, match="2"):
        make_batches(labels(y), cfg(batch_size=8, sampler="class_balanced"), epoch_seed=[0])


def test_balanced_rejects_p_above_class_count():
    y = [0] * 8 + [1] * 8
    with pytest.raises(ConfigError, match="distinct classes"):
        make_batches(
            labels(y), cfg(batch_size=8, sampler="class_balanced", p=4, k=2), epoch_seed=[0]
        )


def test_balanced_rejects_bad_pk_product():
    y = [0] * 8 + [1] * 8
    with pytest.raises(ConfigError, match="batch_size"):
        make_batches(
            labels(y), cfg(batch_size=8, sampler="class_balanced", p=2, k=3), epoch_seed=[0]
        )


def test_empty_dataset_rejected():
    with pytest.raises(DataError, match="empty"):
        make_batches([], cfg(), epoch_seed=[0])


def test_unknown_sampler_rejected():
    with pytest.raises(ConfigError, match="sampler"):
        make_batches(labels([0, 1]), cfg(sampler="bogus"), epoch_seed=[0])


def test_plain_label_sequences_are_accepted():
    # datasets may be bare label arrays, not only example objects
    batches = make_batches(np.array([0, 1, 0, 1]), cfg(batch_size=2), epoch_seed=[0])
    assert sorted(np.concatenate(batches).tolist()) == [0, 1, 2, 3]
