"""Evaluation pass, kNN scoring, and the run artifact writers."""

import csv
from types import SimpleNamespace

import numpy as np
import pytest

from telkit.autodiff import Tensor
from telkit.errors import DataError, ShapeError
from telkit.evaluate import (
    CSV_FIELDS,
    ConfusionMatrix,
    EpochRow,
    GroupReport,
    embed_dataset,
    emit_curves,
    evaluate,
    export_embeddings,
    knn_classify,
    write_metrics_csv,
)

from conftest import make_dataset, tiny_model
from oracles import knn_predict


class StubModel:
    """Embeds each example as (m, -m) with m the feature mean, classifies as
    (m, -m) logits, so predictions and distances are hand-computable."""

    def __init__(self, n_classes=2):
        self.config = SimpleNamespace(n_classes=n_classes, embedding_dim=2, input_shape=(2, 2))

    def embed(self, x):
        m = np.asarray(x).mean(axis=(1, 2, 3))
        return Tensor(np.stack([m, -m], axis=1))

    def classify(self, emb):
        return Tensor(emb.data.copy())


def stub_example(i, value, label, group="g"):
    f = np.full((2, 2), value, dtype=np.float32)
    return SimpleNamespace(
        id=f"s{i}", features=f, label=label, label_name=str(label), group=group
    )


# -- evaluate -------------------------------------------------------------------


def test_evaluate_exact_counts_with_stub():
    # labels 0 at +1 (pred 0), labels 1 at -1 (pred 1), one planted error
    ds = [stub_example(0, 1.0, 0, "a"), stub_example(1, 1.0, 0, "a"),
          stub_example(2, -1.0, 1, "b"), stub_example(3, 1.0, 1, "b")]
    res = evaluate(StubModel(), ds, ["zero", "one"], batch_size=2)
    assert res.n_examples == 4
    assert res.accuracy == 0.75
    np.testing.assert_array_equal(res.confusion.counts, [[2, 0], [1, 1]])
    assert res.groups.accuracies == {"a": 1.0, "b": 0.5}
    assert res.groups.counts == {"a": 2, "b": 2}
    assert res.mining_calls == 2  # one per batch


def test_evaluate_mean_triplet_matches_hand_sum():
    from oracles import brute_force_mine

    ds = [stub_example(0, 0.0, 0), stub_example(1, 0.1, 0),
          stub_example(2, 0.5, 1), stub_example(3, 0.6, 1)]
    margin = 0.6
    res = evaluate(StubModel(), ds, ["a", "b"], batch_size=4, margin=margin)
    emb = StubModel().embed(np.stack([e.features for e in ds])[:, None]).data
    triples = brute_force_mine(emb, np.array([0, 0, 1, 1]), margin, "semi_hard")
    hinges = []
    for a, p, n in triples:
        d_ap = ((emb[a] - emb[p]) ** 2).sum()
        d_an = ((emb[a] - emb[n]) ** 2).sum()
        hinges.append(max(d_ap - d_an + margin, 0.0))
    assert res.mined_triplets == len(triples) > 0
    assert res.mean_triplet == pytest.approx(sum(hinges) / len(triples), rel=1e-6)
    assert res.active_triplets == sum(h > 0 for h in hinges)


def test_evaluate_single_class_has_no_triplets():
    ds = [stub_example(i, 1.0, 0) for i in range(4)]
    res = evaluate(StubModel(), ds, ["a", "b"], batch_size=4)
    assert res.mined_triplets == 0 and res.mean_triplet == 0.0


def test_evaluate_real_model_structural_invariants():
    ds = make_dataset(20, 3)
    m = tiny_model()
    res = evaluate(m, ds, ["a", "b", "c"], batch_size=8)
    assert res.confusion.counts.sum() == 20
    assert res.accuracy == pytest.approx(np.trace(res.confusion.counts) / 20)
    assert res.mean_cel > 0
    assert sum(res.groups.counts.values()) == 20
    assert res.groups.overall == pytest.approx(res.accuracy)  # groups partition the set


def test_evaluate_rejects_empty_and_mismatched():
    m = tiny_model()
    with pytest.raises(DataError):
        evaluate(m, [], ["a", "b", "c"])
    with pytest.raises(ShapeError):
        evaluate(m, make_dataset(4, 2), ["a", "b"])


# -- reports --------------------------------------------------------------------


def test_group_report_weighted_mean():
    g = GroupReport({"m": 0.8, "f": 0.9}, {"m": 10, "f": 10})
    assert g.overall == pytest.approx(0.85, abs=1e-12)
    g2 = GroupReport({"m": 1.0, "f": 0.0}, {"m": 3, "f": 1})
    assert g2.overall == pytest.approx(0.75, abs=1e-12)
    assert GroupReport({}, {}).overall == 0.0


def test_confusion_accuracy_and_save(tmp_path):
    cm = ConfusionMatrix(np.array([[3, 1], [0, 4]]), ["x", "y"])
    assert cm.accuracy == pytest.approx(7 / 8)
    cm.save(tmp_path / "cm.csv")
    rows = list(csv.reader((tmp_path / "cm.csv").open()))
    assert rows == [["", "x", "y"], ["x", "3", "1"], ["y", "0", "4"]]
    assert ConfusionMatrix(np.zeros((2, 2), dtype=np.int64), ["x", "y"]).accuracy == 0.0


# -- kNN ------------------------------------------------------------------------


def test_knn_matches_exhaustive_oracle(rng):
    ref = rng.standard_normal((30, 5))
    y = rng.integers(0, 4, size=30)
    q = rng.standard_normal((12, 5))
    for k in (1, 3, 5):
        got = knn_classify(ref, y, q, k=k)
        want = knn_predict(ref, y, q, k, "euclidean", False)
        np.testing.assert_array_equal(got, want)


def test_knn_self_match_and_leave_one_out():
    ref = np.array([[0.0, 0], [1, 0], [10, 0], [11, 0]])
    y = np.array([0, 0, 1, 1])
    np.testing.assert_array_equal(knn_classify(ref, y, ref, k=1), y)
    # leave-one-out still finds the in-class twin
    np.testing.assert_array_equal(knn_classify(ref, y, ref, k=1, exclude_self=True), y)


def test_knn_distance_tie_takes_lowest_index():
    ref = np.array([[1.0, 0], [-1.0, 0]])
    y = np.array([7, 3])
    got = knn_classify(ref, y, np.array([[0.0, 0]]), k=1)
    assert got[0] == 7


def test_knn_vote_tie_takes_smallest_label():
    ref = np.array([[0.9, 0], [1.1, 0], [-0.9, 0], [-1.1, 0]])
    y = np.array([5, 5, 2, 2])
    got = knn_classify(ref, y, np.array([[0.0, 0]]), k=4)
    assert got[0] == 2


def test_knn_cosine_ignores_scale(rng):
    ref = rng.standard_normal((20, 4))
    y = rng.integers(0, 3, size=20)
    q = rng.standard_normal((8, 4))
    base = knn_classify(ref, y, q, k=3, metric="cosine")
    scaled = knn_classify(ref * 100.0, y, q * 0.01, k=3, metric="cosine")
    np.testing.assert_array_equal(base, scaled)


def test_knn_validation_errors(rng):
    ref = rng.standard_normal((4, 3))
    y = np.arange(4)
    with pytest.raises(ShapeError):
        knn_classify(ref, y, rng.standard_normal((2, 5)), k=1)
    with pytest.raises(ShapeError):
        knn_classify(ref, y[:3], ref, k=1)
    with pytest.raises(ShapeError):
        knn_classify(ref, y, ref, k=5)
    with pytest.raises(ShapeError):
        knn_classify(ref, y, ref, k=4, exclude_self=True)
    with pytest.raises(ShapeError):
        knn_classify(ref, y, rng.standard_normal((3, 3)), k=1, exclude_self=True)
    with pytest.raises(ShapeError):
        knn_classify(ref, y, ref, k=1, metric="manhattan")


# -- embedding export -------------------------------------------------------------


def test_embed_dataset_order_and_empty():
    ds = [stub_example(i, float(i), 0) for i in range(5)]
    emb = embed_dataset(StubModel(), ds, batch_size=2)
    np.testing.assert_allclose(emb[:, 0], np.arange(5.0))
    empty = embed_dataset(tiny_model(dim=8), [])
    assert empty.shape == (0, 8)


def test_export_embeddings_format(tmp_path):
    ds = make_dataset(6, 2, shape=(12, 16))
    m = tiny_model(n_classes=2, dim=4)
    p = tmp_path / "emb.tsv"
    export_embeddings(m, ds, p, batch_size=4)
    lines = p.read_text().splitlines()
    assert len(lines) == 7
    assert lines[0].split("\t") == ["id", "label", "group", "e0", "e1", "e2", "e3"]
    emb = embed_dataset(m, ds)
    for ln, ex, row in zip(lines[1:], ds, emb):
        cells = ln.split("\t")
        assert cells[:3] == [ex.id, ex.label_name, ex.group]
        back = np.array([np.float32(c) for c in cells[3:]])
        np.testing.assert_array_equal(back, row)  # 9 sig digits round-trips f32


def test_export_embeddings_empty_and_stable(tmp_path):
    m = tiny_model(n_classes=2, dim=3)
    p = tmp_path / "e.tsv"
    export_embeddings(m, [], p)
    assert p.read_text() == "id\tlabel\tgroup\te0\te1\te2\n"
    ds = make_dataset(4, 2)
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    export_embeddings(m, ds, a)
    export_embeddings(m, ds, b)
    assert a.read_bytes() == b.read_bytes()


# -- metrics artifacts -------------------------------------------------------------


def row(e, **kw):
    base = dict(
        epoch=e, train_total=1.0 / e, train_cel=0.5 / e, train_triplet=0.1,
        train_acc=min(0.1 * e, 1.0), train_active=3, train_mined=10,
        val_total=1.2 / e, val_cel=0.6 / e, val_triplet=0.2, val_acc=min(0.08 * e, 1.0),
        wall_s=3.3,
    )
    base.update(kw)
    return EpochRow(**base)


def test_metrics_csv_round_trips_and_omits_wall_time(tmp_path):
    rows = [row(e) for e in range(1, 6)]
    p = tmp_path / "metrics.csv"
    write_metrics_csv(rows, p)
    with p.open() as fh:
        recs = list(csv.DictReader(fh))
    assert len(recs) == 5
    assert "wall_s" not in recs[0]
    assert list(recs[0].keys()) == list(CSV_FIELDS)
    for r, rec in zip(rows, recs):
        assert int(rec["epoch"]) == r.epoch
        assert float(rec["val_total"]) == pytest.approx(r.val_total, rel=1e-9)
        assert int(rec["train_mined"]) == r.train_mined


def test_emit_curves_writes_both_artifacts(tmp_path):
    emit_curves(SimpleNamespace(rows=[row(1)]), tmp_path)
    csv_text = (tmp_path / "metrics.csv").read_text()
    assert len(csv_text.splitlines()) == 2
    svg = (tmp_path / "curves.svg").read_text()
    assert svg.count("<polyline") == 4
    assert svg.startswith("<svg") or svg.startswith("<?xml") or "<svg" in svg


def test_emit_curves_many_epochs(tmp_path):
    emit_curves([row(e) for e in range(1, 11)], tmp_path)
    svg = (tmp_path / "curves.svg").read_text()
    assert svg.count("<polyline") == 4
    assert svg.count("<circle") >= 4 * 10  # a marker per point plus legend dots
    assert "loss by epoch" in svg and "accuracy by epoch" in svg


def test_emit_curves_rejects_empty(tmp_path):
    with pytest.raises(DataError):
        emit_curves(SimpleNamespace(rows=[]), tmp_path)
