"""Embedding network: forward shapes, init determinism, checkpoint format."""

import dataclasses
import json
import math
import struct
import zlib

import numpy as np
import pytest

from telkit.errors import CheckpointError, ConfigError, ShapeError
from telkit.model import (
    ModelConfig,
    config_from_doc,
    config_to_doc,
    init_model,
    load_checkpoint,
    save_checkpoint,
)

from conftest import tiny_model


def small_config(**kw):
    base = dict(
        input_shape=(12, 16),
        n_classes=3,
        conv_blocks=((4, 3, 1, 2), (8, 3, 1, 2)),
        embedding_dim=8,
    )
    base.update(kw)
    return ModelConfig(**base)


def batch(rng, n, shape=(12, 16)):
    return rng.standard_normal((n, 1) + shape).astype(np.float32)


# -- forward ------------------------------------------------------------------


def test_embed_and_classify_shapes(rng):
    m = tiny_model(blocks=((4, 3, 1, 2), (8, 3, 1, 2)))
    e = m.embed(batch(rng, 5))
    assert e.data.shape == (5, 8) and e.data.dtype == np.float32
    z = m.classify(e)
    assert z.data.shape == (5, 3)


def test_no_conv_blocks_flattens_input(rng):
    m = tiny_model(shape=(4, 5), blocks=(), dim=6)
    e = m.embed(batch(rng, 2, (4, 5)))
    assert e.data.shape == (2, 6)
    assert m.params["embed.w"].data.shape == (20, 6)


def test_init_is_seed_deterministic():
    a = init_model(small_config(), seed=7)
    b = init_model(small_config(), seed=7)
    c = init_model(small_config(), seed=8)
    for n in a.params:
        assert a.params[n].data.tobytes() == b.params[n].data.tobytes()
    assert a.params["conv0.w"].data.tobytes() != c.params["conv0.w"].data.tobytes()


def test_biases_start_at_zero():
    m = init_model(small_config(), seed=3)
    assert not m.params["embed.b"].data.any()
    assert not m.params["head.b"].data.any()


def test_forward_is_deterministic(rng):
    m = tiny_model()
    x = batch(rng, 4)
    assert m.embed(x).data.tobytes() == m.embed(x).data.tobytes()


def test_silence_embeds_to_exact_zero():
    # the fixed input affine cancels log(1e-10) exactly, convs have no bias,
    # and both output biases start at zero, so a silent clip must come out as
    # the zero embedding and zero logits at any fresh init
    m = tiny_model(seed=41)
    x = np.full((2, 1, 12, 16), math.log(1e-10), dtype=np.float32)
    e = m.embed(x)
    assert not e.data.any()
    z = m.classify(e)
    assert not z.data.any()


def test_input_affine_matches_manual_preprocessing(rng):
    m = tiny_model(seed=5)
    raw = dataclasses.replace(m.config, input_shift=0.0, input_scale=1.0)
    m_raw = type(m)(raw, m.params)
    x = batch(rng, 3)
    pre = (x + np.float32(m.config.input_shift)) * np.float32(m.config.input_scale)
    assert m.embed(x).data.tobytes() == m_raw.embed(pre).data.tobytes()


def test_duplicate_inputs_give_duplicate_rows(rng):
    m = tiny_model()
    x = batch(rng, 1)
    e = m.embed(np.concatenate([x, x], axis=0))
    assert e.data[0].tobytes() == e.data[1].tobytes()


def test_single_example_matches_batched(rng):
    m = tiny_model()
    x = batch(rng, 3)
    solo = m.embed(x[:1]).data[0]
    together = m.embed(x).data[0]
    np.testing.assert_allclose(solo, together, rtol=1e-6, atol=1e-7)


def test_classify_on_zero_embeddings_returns_bias():
    m = tiny_model()
    m.params["head.b"].data[:] = np.arange(3, dtype=np.float32)
    from telkit.autodiff import Tensor

    z = m.classify(Tensor(np.zeros((4, 8), dtype=np.float32)))
    np.testing.assert_array_equal(z.data, np.tile(np.arange(3, dtype=np.float32), (4, 1)))


def test_heads_share_the_trunk(rng):
    # classifier weights must not leak into the embedding path
    m = tiny_model(seed=9)
    x = batch(rng, 3)
    before = m.embed(x).data.tobytes()
    m.params["head.w"].data += 1.0
    m.params["head.b"].data += 0.5
    assert m.embed(x).data.tobytes() == before


def test_normalized_embeddings_have_unit_rows(rng):
    m = tiny_model(normalize_embeddings=True)
    e = m.embed(batch(rng, 6))
    np.testing.assert_allclose(np.linalg.norm(e.data, axis=1), 1.0, rtol=1e-5)


# -- validation ---------------------------------------------------------------


def test_empty_batch_rejected():
    m = tiny_model()
    with pytest.raises(ShapeError, match="empty batch"):
        m.embed(np.zeros((0, 1, 12, 16), dtype=np.float32))


def test_wrong_input_shape_rejected(rng):
    m = tiny_model()
    with pytest.raises(ShapeError):
        m.embed(rng.standard_normal((2, 1, 12, 15)).astype(np.float32))
    with pytest.raises(ShapeError):
        m.embed(rng.standard_normal((2, 12, 16)).astype(np.float32))


def test_classify_checks_embedding_width(rng):
    m = tiny_model()
    from telkit.autodiff import Tensor

    with pytest.raises(ShapeError):
        m.classify(Tensor(rng.standard_normal((2, 9)).astype(np.float32)))


def test_collapsed_feature_map_names_the_block():
    cfg = small_config(
        input_shape=(8, 8),
        conv_blocks=((4, 3, 1, 2), (4, 3, 1, 2), (4, 3, 1, 2), (4, 3, 1, 2)),
    )
    with pytest.raises(ConfigError, match="block 3"):
        cfg.validate()


def test_feature_map_shapes():
    assert small_config(input_shape=(16, 16)).feature_map_shapes() == [(8, 8), (4, 4)]


@pytest.mark.parametrize(
    "kw",
    [
        dict(n_classes=1),
        dict(embedding_dim=0),
        dict(input_shape=(12,)),
        dict(input_shape=(0, 16)),
        dict(l2_lambda=-0.1),
        dict(conv_blocks=((4, 3, 1),)),
        dict(conv_blocks=((0, 3, 1, 2),)),
    ],
)
def test_bad_config_rejected(kw):
    with pytest.raises(ConfigError):
        small_config(**kw).validate()


# -- penalty and bookkeeping ---------------------------------------------------


def test_l2_penalty_matches_direct_sum():
    m = tiny_model(l2_lambda=0.01, seed=2)
    want = 0.01 * (
        float((m.params["embed.w"].data ** 2).sum())
        + float((m.params["head.w"].data ** 2).sum())
    )
    assert m.l2_penalty() == pytest.approx(want, rel=1e-12)
    assert set(m.penalized_params()) == {"embed.w", "head.w"}


def test_l2_on_conv_extends_the_penalty():
    m = tiny_model(l2_lambda=0.01, l2_on_conv=True, blocks=((4, 3, 1, 2), (8, 3, 1, 2)))
    assert set(m.penalized_params()) == {"conv0.w", "conv1.w", "embed.w", "head.w"}
    want = 0.01 * sum(float((m.params[n].data ** 2).sum()) for n in m.penalized_params())
    assert m.l2_penalty() == pytest.approx(want, rel=1e-12)


def test_n_parameters():
    m = tiny_model(blocks=((4, 3, 1, 2),), dim=8)
    # conv0: 4*1*3*3, embed: 4*8 + 8, head: 8*3 + 3
    assert m.n_parameters() == 36 + 32 + 8 + 24 + 3


def test_astype_round_trips_values(rng):
    m = tiny_model()
    m64 = m.astype(np.float64)
    assert m64.params["embed.w"].data.dtype == np.float64
    assert m.params["embed.w"].data.dtype == np.float32  # original untouched
    np.testing.assert_array_equal(
        m64.params["embed.w"].data, m.params["embed.w"].data.astype(np.float64)
    )
    e = m64.embed(batch(rng, 2).astype(np.float64))
    assert e.data.dtype == np.float64


# -- config doc ----------------------------------------------------------------


def test_config_doc_round_trip():
    cfg = small_config(normalize_embeddings=True, l2_on_conv=True, l2_lambda=0.5)
    assert config_from_doc(config_to_doc(cfg)) == cfg


def test_config_doc_rejects_unknown_and_missing_keys():
    doc = config_to_doc(small_config())
    doc["dropout"] = 0.5
    with pytest.raises(ConfigError, match="dropout"):
        config_from_doc(doc)
    del doc["dropout"], doc["n_classes"]
    with pytest.raises(ConfigError, match="n_classes"):
        config_from_doc(doc)


# -- checkpoints ----------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    m = tiny_model(seed=13)
    p = tmp_path / "m.ckpt"
    save_checkpoint(m, p, metadata={"epoch": 4, "note": "x"})
    m2, meta = load_checkpoint(p)
    assert meta == {"epoch": 4, "note": "x"}
    assert m2.config == m.config
    assert list(m2.params) == list(m.params)  # same order as a fresh init
    for n in m.params:
        assert m2.params[n].data.tobytes() == m.params[n].data.tobytes()
        assert m2.params[n].data.dtype == m.params[n].data.dtype


def test_checkpoint_resave_is_byte_identical(tmp_path):
    m = tiny_model(seed=13)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(m, a, metadata={"epoch": 1})
    m2, meta = load_checkpoint(a)
    save_checkpoint(m2, b, metadata=meta)
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_float64_params(tmp_path):
    m = tiny_model(seed=1).astype(np.float64)
    p = tmp_path / "m.ckpt"
    save_checkpoint(m, p)
    m2, _ = load_checkpoint(p)
    assert m2.params["embed.w"].data.dtype == np.float64
    assert m2.params["embed.w"].data.tobytes() == m.params["embed.w"].data.tobytes()


def test_checkpoint_detects_flipped_byte(tmp_path):
    m = tiny_model()
    p = tmp_path / "m.ckpt"
    save_checkpoint(m, p)
    raw = bytearray(p.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(p)


def test_checkpoint_detects_truncation(tmp_path):
    m = tiny_model()
    p = tmp_path / "m.ckpt"
    save_checkpoint(m, p)
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_checkpoint_rejects_wrong_magic(tmp_path):
    p = tmp_path / "m.ckpt"
    p.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(p)


def test_checkpoint_rejects_future_version(tmp_path):
    m = tiny_model()
    p = tmp_path / "m.ckpt"
    save_checkpoint(m, p)
    body = bytearray(p.read_bytes()[:-4])
    struct.pack_into("<I", body, 4, 99)
    p.write_bytes(bytes(body) + struct.pack("<I", zlib.crc32(bytes(body))))
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(p)


def test_checkpoint_rejects_shape_config_mismatch(tmp_path):
    # rewrite the config blob so stored params no longer fit it, with a valid CRC
    m = tiny_model()
    p = tmp_path / "m.ckpt"
    save_checkpoint(m, p)
    body = bytearray(p.read_bytes()[:-4])
    (jlen,) = struct.unpack_from("<I", body, 8)
    doc = json.loads(body[12 : 12 + jlen].decode())
    doc["model"]["embedding_dim"] += 1
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    patched = body[:8] + struct.pack("<I", len(blob)) + blob + body[12 + jlen :]
    p.write_bytes(bytes(patched) + struct.pack("<I", zlib.crc32(bytes(patched))))
    with pytest.raises(CheckpointError, match="do not match config"):
        load_checkpoint(p)


def test_checkpoint_metadata_cannot_shadow_model(tmp_path):
    m = tiny_model()
    with pytest.raises(CheckpointError, match="model"):
        save_checkpoint(m, tmp_path / "m.ckpt", metadata={"model": {}})


def test_missing_checkpoint_file(tmp_path):
    with pytest.raises((CheckpointError, FileNotFoundError)):
        load_checkpoint(tmp_path / "absent.ckpt")
