"""Run configuration files.

A run config is one JSON object with up to four sections: ``features``,
``model``, ``train`` and ``augment`` (null or absent = no augmentation).
Any key the code does not know is an error, not a warning; a config that
names a knob that does not exist should fail before it burns an hour of
training.  The trainer echoes the fully resolved config next to its
artifacts so a run can be reproduced from the run directory alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .augment import AugmentSpec
from .errors import ConfigError
from .features import FeatureConfig
from .train import TrainConfig, train_config_from_doc, train_config_to_doc

_SECTIONS = ("features", "model", "train", "augment")

# model keys that may appear in a config file; input_shape and n_classes
# are resolved from the data, but may be pinned here as assertions
_MODEL_KEYS = (
    "conv_blocks", "embedding_dim", "normalize_embeddings", "l2_lambda",
    "l2_on_conv", "input_shift", "input_scale", "input_shape", "n_classes",
)


def _doc_of(obj):
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _from_doc(cls, doc, section):
    known = {f.name for f in fields(cls)}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown {section} config keys: {sorted(extra)}")
    return cls(**doc)


@dataclass
class RunSettings:
    """Parsed config file: concrete feature/train configs, raw model overrides.

    The augment section, when present, is folded into ``train.augment``.
    """

    features: FeatureConfig
    model: dict
    train: TrainConfig


def run_settings_from_doc(doc):
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    extra = set(doc) - set(_SECTIONS)
    if extra:
        raise ConfigError(f"unknown run config sections: {sorted(extra)}")

    features = _from_doc(FeatureConfig, doc.get("features", {}), "features")
    features.validate()

    model = dict(doc.get("model", {}))
    bad = set(model) - set(_MODEL_KEYS)
    if bad:
        raise ConfigError(f"unknown model config keys: {sorted(bad)}")
    if "conv_blocks" in model:
        model["conv_blocks"] = tuple(tuple(b) for b in model["conv_blocks"])
    if "input_shape" in model and model["input_shape"] is not None:
        model["input_shape"] = tuple(model["input_shape"])

    train = train_config_from_doc(doc.get("train", {}))

    aug_doc = doc.get("augment")
    if aug_doc is not None:
        augment = _from_doc(AugmentSpec, aug_doc, "augment")
        augment.validate()
        train = replace(train, augment=augment)

    return RunSettings(features=features, model=model, train=train)


def load_run_settings(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    return run_settings_from_doc(doc)


def feature_config_to_doc(cfg):
    return _doc_of(cfg)


def augment_to_doc(aug):
    return None if aug is None else _doc_of(aug)


def resolved_run_doc(feature_cfg, model_cfg, train_cfg):
    """The full picture of one run, every default made explicit."""
    from .model import config_to_doc  # local import, model pulls in the kernels

    return {
        "features": feature_config_to_doc(feature_cfg),
        "model": config_to_doc(model_cfg),
        "train": train_config_to_doc(train_cfg),
        "augment": augment_to_doc(train_cfg.augment),
    }


def write_config_echo(doc, path):
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
