"""Evaluation passes and run artifact writers.

Everything here is deterministic given (model, dataset): batches walk the
dataset in order, no augmentation, no gradient graph.  Loss components are
reported separately (mean cross entropy per example, mean hinge per mined
triplet) so regimes stay comparable; how they combine into a stopping
criterion is the trainer's business.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .errors import DataError, NoValidTriplets, ShapeError
from .losses import cross_entropy, mine_triplets, pairwise_sq_dist, triplet_hinges


@dataclass
class EpochRow:
    """One line of the training log; wall time stays out of the on-disk CSV."""

    epoch: int
    train_total: float
    train_cel: float
    train_triplet: float
    train_acc: float
    train_active: int
    train_mined: int
    val_total: float
    val_cel: float
    val_triplet: float
    val_acc: float
    wall_s: float = 0.0


CSV_FIELDS = (
    "epoch", "train_total", "train_cel", "train_triplet", "train_acc",
    "train_active", "train_mined", "val_total", "val_cel", "val_triplet", "val_acc",
)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64, rows true, columns predicted
    class_names: list

    @property
    def accuracy(self):
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    def save(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([""] + list(self.class_names))
            for name, row in zip(self.class_names, self.counts):
                w.writerow([name] + [int(v) for v in row])


@dataclass
class GroupReport:
    """Accuracy split by the examples' group tag (speaker sex, genre, ...)."""

    accuracies: dict  # group -> accuracy
    counts: dict  # group -> number of examples

    @property
    def overall(self):
        """Size-weighted mean of the group accuracies."""
        total = sum(self.counts.values())
        if total == 0:
            return 0.0
        return sum(self.counts[g] * self.accuracies[g] for g in self.counts) / total


@dataclass
class EvalResult:
    n_examples: int
    accuracy: float
    mean_cel: float
    mean_triplet: float  # per mined triplet; 0.0 when nothing mined
    mined_triplets: int
    active_triplets: int
    mining_calls: int
    confusion: ConfusionMatrix
    groups: GroupReport = field(default_factory=lambda: GroupReport({}, {}))


def _batches(n, batch_size):
    return [np.arange(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def evaluate(model, dataset, class_names, batch_size=64, margin=0.2, mining="semi_hard"):
    """Forward the whole dataset and aggregate losses, accuracy, confusion.

    Triplet statistics are mined per batch exactly as training would see
    them; batches whose label mix cannot form a triplet contribute zero
    mined triplets rather than failing the pass.
    """
    if not dataset:
        raise DataError("cannot evaluate an empty dataset")
    c = len(class_names)
    if c != model.config.n_classes:
        raise ShapeError(f"model has {model.config.n_classes} classes, given {c} names")
    counts = np.zeros((c, c), dtype=np.int64)
    cel_sum = 0.0
    hinge_sum = 0.0
    mined = 0
    active = 0
    mining_calls = 0
    by_group = {}

    with no_grad():
        for idx in _batches(len(dataset), batch_size):
            x = np.stack([dataset[i].features for i in idx])[:, None]
            y = np.asarray([dataset[i].label for i in idx])
            emb = model.embed(x)
            logits = model.classify(emb)
            cel_sum += float(cross_entropy(logits, y, reduction="sum").data)
            preds = np.argmax(logits.data, axis=1)
            for yi, pi in zip(y, preds):
                counts[yi, pi] += 1
            for i, ok in zip(idx, preds == y):
                g = dataset[i].group
                n_g, k_g = by_group.get(g, (0, 0))
                by_group[g] = (n_g + 1, k_g + int(ok))
            mining_calls += 1
            try:
                tset = mine_triplets(emb.data, y, margin=margin, strategy=mining)
            except NoValidTriplets:
                continue
            hinges = triplet_hinges(emb, tset, margin=margin)
            hinge_sum += float(np.where(hinges > 0, hinges, 0.0).sum())
            mined += len(tset)
            active += int((hinges > 0).sum())

    n = len(dataset)
    return EvalResult(
        n_examples=n,
        accuracy=float(np.trace(counts) / n),
        mean_cel=cel_sum / n,
        mean_triplet=hinge_sum / mined if mined else 0.0,
        mined_triplets=mined,
        active_triplets=active,
        mining_calls=mining_calls,
        confusion=ConfusionMatrix(counts, list(class_names)),
        groups=GroupReport(
            accuracies={g: k_g / n_g for g, (n_g, k_g) in sorted(by_group.items())},
            counts={g: n_g for g, (n_g, _) in sorted(by_group.items())},
        ),
    )


def embed_dataset(model, dataset, batch_size=64):
    """All embeddings in dataset order, as one (N, D) float array.

    An empty dataset gives a (0, D) array rather than an error, so that
    exports of empty splits still produce a well-formed header.
    """
    if not dataset:
        return np.zeros((0, model.config.embedding_dim), dtype=np.float32)
    chunks = []
    with no_grad():
        for idx in _batches(len(dataset), batch_size):
            x = np.stack([dataset[i].features for i in idx])[:, None]
            chunks.append(model.embed(x).data)
    return np.concatenate(chunks, axis=0)


def knn_classify(ref_embeddings, ref_labels, query_embeddings, k=1,
                 metric="euclidean", exclude_self=False):
    """Nearest-neighbour labels for each query row.

    Votes over the k nearest references; vote ties go to the smallest
    label value, distance ties to the lowest reference index.  With
    ``exclude_self`` the diagonal is removed, for leave-one-out scoring of
    a set against itself.
    """
    ref = np.asarray(ref_embeddings, dtype=np.float64)
    q = np.asarray(query_embeddings, dtype=np.float64)
    labels = np.asarray(ref_labels)
    if ref.ndim != 2 or q.ndim != 2 or ref.shape[1] != q.shape[1]:
        raise ShapeError(f"embedding shapes do not align: {ref.shape} vs {q.shape}")
    if len(labels) != len(ref):
        raise ShapeError(f"{len(labels)} labels for {len(ref)} references")

    if metric == "euclidean":
        d = q @ ref.T
        d = (q * q).sum(1)[:, None] + (ref * ref).sum(1)[None, :] - 2.0 * d
        np.maximum(d, 0.0, out=d)
    elif metric == "cosine":
        qn = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
        rn = ref / np.maximum(np.linalg.norm(ref, axis=1, keepdims=True), 1e-12)
        d = 1.0 - qn @ rn.T
    else:
        raise ShapeError(f"unknown metric {metric!r}")

    if exclude_self:
        if len(q) != len(ref):
            raise ShapeError("exclude_self requires query and reference sets of equal size")
        np.fill_diagonal(d, np.inf)

    usable = d.shape[1] - (1 if exclude_self else 0)
    if k > usable:
        raise ShapeError(f"k={k} but only {usable} usable references")

    out = np.empty(len(q), dtype=labels.dtype)
    order = np.argsort(d, axis=1, kind="stable")  # stable: distance ties -> lowest index
    for i in range(len(q)):
        near = labels[order[i, :k]]
        values, votes = np.unique(near, return_counts=True)
        out[i] = values[np.argmax(votes)]  # unique sorts, argmax takes first max
    return out


def export_embeddings(model, dataset, path, batch_size=64):
    """Tab-separated embedding dump: id, label, group, then e0..e{D-1}.

    One row per example in dataset order; floats use 9 significant
    digits, enough to reconstruct float32 exactly.  An empty dataset
    yields a header-only file.
    """
    emb = embed_dataset(model, dataset, batch_size=batch_size)
    d = emb.shape[1]
    with Path(path).open("w") as fh:
        fh.write("\t".join(["id", "label", "group"] + [f"e{j}" for j in range(d)]) + "\n")
        for ex, row in zip(dataset, emb):
            rec = [str(ex.id), str(ex.label_name), str(ex.group)]
            rec += [format(float(v), ".9g") for v in row]
            fh.write("\t".join(rec) + "\n")


def emit_curves(report, out_dir):
    """Write metrics.csv and curves.svg for a finished run into out_dir.

    The CSV is a row-for-row copy of the report's epoch rows; the SVG
    charts loss and accuracy against epoch for the train and val series.
    """
    rows = getattr(report, "rows", report)
    if not rows:
        raise DataError("report has no epochs to emit")
    out_dir = Path(out_dir)
    write_metrics_csv(rows, out_dir / "metrics.csv")
    render_curves_svg(rows, out_dir / "curves.svg")


def write_metrics_csv(rows, path):
    """One CSV line per epoch; floats at 9 significant digits."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in rows:
            rec = []
            for name in CSV_FIELDS:
                v = getattr(r, name)
                rec.append(format(v, ".9g") if isinstance(v, float) else v)
            w.writerow(rec)


def _polyline(xs, ys, color, width=1.5):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    line = f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>'
    dots = "".join(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{color}"/>'
                   for x, y in zip(xs, ys))
    return line + dots


def render_curves_svg(rows, path):
    """Loss and accuracy curves as a small standalone SVG, two panels."""
    if not rows:
        raise DataError("no epochs to plot")
    w, h, pad = 840, 320, 45
    panel_w = (w - 3 * pad) / 2
    epochs = [r.epoch for r in rows]

    def scale_x(e, x0):
        if len(epochs) == 1:
            return x0 + panel_w / 2
        return x0 + (e - epochs[0]) / (epochs[-1] - epochs[0]) * panel_w

    def scale_y(v, lo, hi):
        if hi - lo < 1e-12:
            return pad + (h - 2 * pad) / 2
        return h - pad - (v - lo) / (hi - lo) * (h - 2 * pad)

    losses = [r.train_total for r in rows] + [r.val_total for r in rows]
    lo, hi = min(losses), max(losses)
    accs = [r.train_acc for r in rows] + [r.val_acc for r in rows]
    alo, ahi = min(accs + [0.0]), max(accs + [1.0])

    x_left, x_right = pad, 2 * pad + panel_w
    series = [
        (x_left, [r.train_total for r in rows], lo, hi, "#1f77b4", "train loss"),
        (x_left, [r.val_total for r in rows], lo, hi, "#d62728", "val loss"),
        (x_right, [r.train_acc for r in rows], alo, ahi, "#2ca02c", "train acc"),
        (x_right, [r.val_acc for r in rows], alo, ahi, "#9467bd", "val acc"),
    ]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}"'
        f' viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
    ]
    for x0, title in ((x_left, "loss"), (x_right, "accuracy")):
        parts.append(
            f'<rect x="{x0}" y="{pad}" width="{panel_w:.2f}" height="{h - 2 * pad}"'
            ' fill="none" stroke="#999"/>'
        )
        parts.append(
            f'<text x="{x0 + panel_w / 2:.2f}" y="{pad - 10}" text-anchor="middle"'
            f' font-family="sans-serif" font-size="13">{title} by epoch</text>'
        )
    for i, (x0, ys, vlo, vhi, color, label) in enumerate(series):
        xs = [scale_x(e, x0) for e in epochs]
        sy = [scale_y(v, vlo, vhi) for v in ys]
        parts.append(_polyline(xs, sy, color))
        lx = pad + 10 + (i % 2) * (panel_w + pad)
        ly = h - 12 - 14 * (i // 2)
        parts.append(
            f'<circle cx="{lx}" cy="{ly - 4}" r="3" fill="{color}"/>'
            f'<text x="{lx + 8}" y="{ly}" font-family="sans-serif" font-size="11">{label}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
