"""Shared fixtures and tiny dataset factories."""

import numpy as np
import pytest
from hypothesis import settings

from telkit.data import LabeledExample
from telkit.model import ModelConfig, init_model

settings.register_profile("ci", deadline=None, max_examples=30, derandomize=True)
settings.load_profile("ci")


def make_dataset(n, n_classes, shape=(12, 16), seed=0, sep=2.0, groups=("g0", "g1")):
    """Class-separated gaussian blobs posing as log-mel grids.

    Class c sits at a mean of ``sep * c - 20`` so classes are linearly
    separable for sep around 2 and overlap heavily for small sep.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        y = i % n_classes
        f = (rng.standard_normal(shape) * 0.5 + sep * y - 20.0).astype(np.float32)
        out.append(
            LabeledExample(
                id=f"ex{i}",
                features=f,
                label=y,
                label_name=str(y),
                speaker=f"spk{i % 4}",
                group=groups[i % len(groups)],
            )
        )
    return out


def tiny_model(shape=(12, 16), n_classes=3, blocks=((8, 3, 1, 2),), dim=8, seed=0, **kw):
    cfg = ModelConfig(
        input_shape=shape, n_classes=n_classes, conv_blocks=blocks, embedding_dim=dim, **kw
    )
    return init_model(cfg, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
