"""Convolutional embedding network with a linear classifier head.

One spectrogram goes in as a (1, H, W) image; a stack of conv/relu/maxpool
blocks and a global average pool produce a fixed-width embedding, and a
single linear layer maps embeddings to class logits.  Both heads share the
trunk, which is what lets a joint objective shape one embedding space with
two signals.

The raw log-power inputs sit in roughly [log(eps), ~0]; a fixed affine
(shift then scale, constants in the config, not data statistics) moves
silence to 0 and full-scale power to about 1 before the first conv so the
default init does not have to fight a -23 DC offset.

Checkpoints are a flat binary format, documented at save_checkpoint.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, ShapeError

# default trunk: four 3x3 stride-1 blocks, channel doubling, halving pools
DEFAULT_BLOCKS = ((16, 3, 1, 2), (32, 3, 1, 2), (64, 3, 1, 2), (128, 3, 1, 2))

# log(1e-10) -> 0, log-power 0 -> ~1
INPUT_SHIFT = 23.025850929940457
INPUT_SCALE = 1.0 / 23.025850929940457


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple  # (n_mels, n_frames)
    n_classes: int
    conv_blocks: tuple = DEFAULT_BLOCKS  # (out_channels, kernel, stride, pool) each
    embedding_dim: int = 512
    normalize_embeddings: bool = False
    l2_lambda: float = 1e-4
    l2_on_conv: bool = False  # extend the penalty to conv kernels
    input_shift: float = INPUT_SHIFT
    input_scale: float = INPUT_SCALE

    def validate(self):
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be positive")
        if len(self.input_shape) != 2 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (n_mels, n_frames), got {self.input_shape}")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be non-negative")
        for i, blk in enumerate(self.conv_blocks):
            if len(blk) != 4:
                raise ConfigError(f"block {i}: expected (out_channels, kernel, stride, pool)")
            out_ch, k, s, pool = blk
            if min(out_ch, k, s, pool) < 1:
                raise ConfigError(f"block {i}: all of {blk} must be positive")
        self.feature_map_shapes()  # raises if any map collapses

    def feature_map_shapes(self):
        """Spatial shape after each block; raises when a map vanishes."""
        h, w = self.input_shape
        shapes = []
        for i, (_, k, s, pool) in enumerate(self.conv_blocks):
            pad = k // 2
            h = (h + 2 * pad - k) // s + 1
            w = (w + 2 * pad - k) // s + 1
            if h < pool or w < pool:
                raise ConfigError(
                    f"block {i}: feature map {h}x{w} smaller than its {pool}x{pool} pool"
                )
            h //= pool
            w //= pool
            shapes.append((h, w))
        return shapes

    @property
    def trunk_channels(self):
        return self.conv_blocks[-1][0] if self.conv_blocks else 1


class Model:
    """Parameter container plus the two forward heads, embed and classify."""

    def __init__(self, config, params):
        config.validate()
        self.config = config
        self.params = params  # name -> Tensor, insertion order fixed at init

    # -- forward ------------------------------------------------------------

    def _check_input(self, x):
        h, w = self.config.input_shape
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (h, w):
            raise ShapeError(
                f"expected input (batch, 1, {h}, {w}), got {tuple(x.shape)}"
            )
        if x.shape[0] == 0:
            raise ShapeError("empty batch")

    def embed(self, batch):
        """Embeddings for a batch of spectrograms, shape (B, embedding_dim)."""
        x = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
        self._check_input(x)
        dt = self.params["embed.w"].data.dtype
        cfg = self.config
        x = ((x + dt.type(cfg.input_shift)) * dt.type(cfg.input_scale)).astype(dt, copy=False)
        h = Tensor(x)
        for i, (_, k, s, pool) in enumerate(cfg.conv_blocks):
            h = ad.conv2d(h, self.params[f"conv{i}.w"], stride=s, padding=k // 2)
            h = ad.relu(h)
            h = ad.max_pool2d(h, pool)
        if cfg.conv_blocks:
            h = ad.global_avg_pool(h)
        else:
            h = ad.flatten(h)
        emb = ad.linear(h, self.params["embed.w"], self.params["embed.b"])
        if cfg.normalize_embeddings:
            emb = ad.row_normalize(emb)
        return emb

    def classify(self, embeddings):
        """Class logits from embeddings, shape (B, n_classes)."""
        if embeddings.data.ndim != 2 or embeddings.data.shape[1] != self.config.embedding_dim:
            raise ShapeError(
                f"expected embeddings (batch, {self.config.embedding_dim}),"
                f" got {tuple(embeddings.data.shape)}"
            )
        return ad.linear(embeddings, self.params["head.w"], self.params["head.b"])

    # -- parameter bookkeeping ----------------------------------------------

    def penalized_params(self):
        """Names of the weight matrices the L2 penalty applies to.

        Dense layers always; conv kernels only behind the l2_on_conv
        flag; biases never.
        """
        dense = [n for n in self.params if n in ("embed.w", "head.w")]
        if self.config.l2_on_conv:
            return [n for n in self.params if n.endswith(".w") and n.startswith("conv")] + dense
        return dense

    def l2_penalty(self):
        """lambda * sum of squared penalized weights, as a plain float."""
        lam = self.config.l2_lambda
        return lam * sum(float((self.params[n].data ** 2).sum()) for n in self.penalized_params())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def astype(self, dtype):
        """Same architecture with parameters cast to ``dtype`` (fresh leaves)."""
        params = {
            n: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad)
            for n, p in self.params.items()
        }
        return Model(self.config, params)

    def n_parameters(self):
        return sum(p.data.size for p in self.params.values())


def init_model(config, seed=0, dtype=np.float32):
    """He-init everything with per-layer fan-in scaling; biases start at zero."""
    config.validate()
    rng = np.random.default_rng([int(seed), 0x7E1])
    params = {}
    in_ch = 1
    for i, (out_ch, k, s, pool) in enumerate(config.conv_blocks):
        fan_in = in_ch * k * k
        w = rng.standard_normal((out_ch, in_ch, k, k)) * math.sqrt(2.0 / fan_in)
        params[f"conv{i}.w"] = Tensor(w.astype(dtype), requires_grad=True)
        in_ch = out_ch
    if config.conv_blocks:
        trunk_out = config.trunk_channels
    else:
        trunk_out = config.input_shape[0] * config.input_shape[1]
    we = rng.standard_normal((trunk_out, config.embedding_dim)) * math.sqrt(2.0 / trunk_out)
    params["embed.w"] = Tensor(we.astype(dtype), requires_grad=True)
    params["embed.b"] = Tensor(np.zeros(config.embedding_dim, dtype=dtype), requires_grad=True)
    wh = rng.standard_normal((config.embedding_dim, config.n_classes)) * math.sqrt(
        2.0 / config.embedding_dim
    )
    params["head.w"] = Tensor(wh.astype(dtype), requires_grad=True)
    params["head.b"] = Tensor(np.zeros(config.n_classes, dtype=dtype), requires_grad=True)
    return Model(config, params)


# ---------------------------------------------------------------------------
# checkpoint serialization

_CKPT_MAGIC = b"TELC"
_CKPT_VERSION = 1
_DTYPE_TAGS = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def config_to_doc(config):
    return {
        "input_shape": list(config.input_shape),
        "n_classes": config.n_classes,
        "conv_blocks": [list(b) for b in config.conv_blocks],
        "embedding_dim": config.embedding_dim,
        "normalize_embeddings": config.normalize_embeddings,
        "l2_lambda": config.l2_lambda,
        "l2_on_conv": config.l2_on_conv,
        "input_shift": config.input_shift,
        "input_scale": config.input_scale,
    }


def config_from_doc(doc):
    known = set(config_to_doc(ModelConfig((1, 1), 2)).keys())
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown model config keys: {sorted(extra)}")
    missing = known - set(doc)
    if missing:
        raise ConfigError(f"missing model config keys: {sorted(missing)}")
    return ModelConfig(
        input_shape=tuple(doc["input_shape"]),
        n_classes=doc["n_classes"],
        conv_blocks=tuple(tuple(b) for b in doc["conv_blocks"]),
        embedding_dim=doc["embedding_dim"],
        normalize_embeddings=doc["normalize_embeddings"],
        l2_lambda=doc["l2_lambda"],
        l2_on_conv=doc["l2_on_conv"],
        input_shift=doc["input_shift"],
        input_scale=doc["input_scale"],
    )


def save_checkpoint(model, path, metadata=None):
    """Write model params and config to one flat binary file.

    Layout: magic "TELC", u32 version, u32 json length, canonical JSON
    blob (sorted keys, no whitespace) holding the model config plus any
    caller metadata, u32 param count, then per parameter sorted by name:
    u32 name length, name bytes, u32 ndim, u32 dims, u32 dtype size,
    raw little-endian values.  A CRC32 of everything before it closes the
    file, so truncation and bit rot are detected at load.
    """
    doc = {"model": config_to_doc(model.config)}
    if metadata:
        overlap = set(metadata) & {"model"}
        if overlap:
            raise CheckpointError(f"metadata may not override keys: {sorted(overlap)}")
        doc.update(metadata)
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    parts = [_CKPT_MAGIC, struct.pack("<I", _CKPT_VERSION), struct.pack("<I", len(blob)), blob]
    names = sorted(model.params)
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        data = model.params[name].data
        arr = np.ascontiguousarray(data, dtype=data.dtype.newbyteorder("<"))
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<I", arr.dtype.itemsize))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path):
    """Read a checkpoint back; returns (Model, metadata dict).

    Raises CheckpointError for a bad magic, version, CRC, or truncated
    stream, and for parameter shapes that disagree with the stored config.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, crc_stored = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) != crc_stored:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt or truncated")

    off = 4
    version, jlen = struct.unpack_from("<II", body, off)
    off += 8
    if version != _CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        doc = json.loads(body[off : off + jlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: bad config blob: {e}") from e
    off += jlen
    if "model" not in doc:
        raise CheckpointError(f"{path}: config blob missing model section")
    config = config_from_doc(doc["model"])

    (n_params,) = struct.unpack_from("<I", body, off)
    off += 4
    params = {}
    try:
        for _ in range(n_params):
            (nlen,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off : off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<I", body, off)
            off += 4
            dims = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            (isize,) = struct.unpack_from("<I", body, off)
            off += 4
            if isize not in _DTYPE_TAGS:
                raise CheckpointError(f"{path}: parameter {name}: unsupported dtype size {isize}")
            count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            nbytes = count * isize
            arr = np.frombuffer(body, dtype=_DTYPE_TAGS[isize], count=count, offset=off)
            off += nbytes
            params[name] = Tensor(arr.reshape(dims).copy(), requires_grad=True)
    except struct.error as e:
        raise CheckpointError(f"{path}: truncated parameter records: {e}") from e
    if off != len(body):
        raise CheckpointError(f"{path}: {len(body) - off} trailing bytes after parameters")

    expected = {n: p.data.shape for n, p in init_model(config, seed=0).params.items()}
    got = {n: p.data.shape for n, p in params.items()}
    if expected != got:
        raise CheckpointError(
            f"{path}: parameters do not match config: expected {expected}, found {got}"
        )
    meta = {k: v for k, v in doc.items() if k != "model"}
    return Model(config, {n: params[n] for n in expected}), meta
