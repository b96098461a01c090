"""Classification and metric losses, and the triplet mining that feeds them.

The joint objective optimized here is a sum of a cross entropy term over
class logits and a margin hinge over embedding triplets,

    total = CE(logits, labels) + lambda * sum_t [ d(a,p)^2 - d(a,n)^2 + margin ]_+

with triplets (anchor, positive, negative) chosen from the current batch.
Selection compares plain (non-squared) embedding distances; the hinge is
computed on squared distances.  Mining is a discrete choice and carries no
gradient: gradients flow only through the embeddings of the selected
triplets, and only for triplets whose hinge is strictly positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _make, add, scale
from .errors import GraphError, NoValidTriplets, ShapeError

MINING_STRATEGIES = ("semi_hard", "paper_literal", "hardest")


def pairwise_sq_dist(embeddings):
    """All-pairs squared euclidean distances, shape (B, B).

    Uses the expansion ||a-b||^2 = ||a||^2 + ||b||^2 - 2 a.b, then fixes
    its float artifacts: the matrix is symmetrized by averaging with its
    transpose, clamped at zero, and the diagonal is pinned to exactly 0.
    """
    e = embeddings.data if isinstance(embeddings, Tensor) else np.asarray(embeddings)
    if e.ndim != 2:
        raise ShapeError(f"embeddings must be 2-d, got {e.shape}")
    gram = e @ e.T
    sq = np.diagonal(gram).copy()
    d = sq[:, None] + sq[None, :] - 2.0 * gram
    d = 0.5 * (d + d.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


@dataclass
class TripletSet:
    """Mined (anchor, positive, negative) index triples, shape (T, 3)."""

    triples: np.ndarray
    strategy: str

    def __len__(self):
        return len(self.triples)

    def validate(self, labels):
        """Sanity-check the structural invariants against ``labels``."""
        lab = np.asarray(labels)
        for a, p, n in self.triples:
            assert a != p, f"anchor {a} used as its own positive"
            assert lab[a] == lab[p], f"positive label mismatch at ({a},{p})"
            assert lab[a] != lab[n], f"negative shares label at ({a},{n})"


def _empty_triplets(strategy):
    return TripletSet(np.empty((0, 3), dtype=np.int64), strategy)


def mine_triplets(embeddings, labels, margin=0.2, strategy="semi_hard"):
    """Pick triplets from one batch by its current embedding distances.

    Anchors and positives are every ordered same-label pair (a, p), a != p.
    Distances are plain euclidean for selection.  Strategies:

    semi_hard
        For each (a, p): the negative minimizing d(a,n) subject to
        d(a,p) < d(a,n) < d(a,p) + margin.  If that band is empty but some
        negative violates d(a,n) <= d(a,p), take the largest such d(a,n)
        (the easiest violator).  If every negative is already beyond the
        margin the pair is satisfied and contributes nothing.
    paper_literal
        Every (a, p, n) with d(a,n) < d(a,p); one pair can yield several
        triplets and the count varies batch to batch.
    hardest
        One triplet per anchor: the farthest positive and the closest
        negative.

    Ties break toward the lowest index.  Raises NoValidTriplets when the
    batch cannot form any (a, p, n) at all, i.e. no label with two
    examples coexists with a different label; an empty result for a batch
    where every pair is satisfied is returned as an empty set instead.
    """
    if strategy not in MINING_STRATEGIES:
        raise GraphError(f"unknown mining strategy {strategy!r}")
    lab = np.asarray(labels)
    e = embeddings.data if isinstance(embeddings, Tensor) else np.asarray(embeddings)
    if e.ndim != 2 or len(lab) != e.shape[0]:
        raise ShapeError(f"embeddings {e.shape} do not pair with {len(lab)} labels")

    classes, counts = np.unique(lab, return_counts=True)
    structurally_ok = len(classes) >= 2 and counts.max() >= 2
    if not structurally_ok:
        raise NoValidTriplets(
            f"batch has {len(classes)} distinct labels with max count {counts.max() if len(counts) else 0};"
            " need a repeated label plus a different one"
        )

    dist = np.sqrt(pairwise_sq_dist(e))
    b = len(lab)
    triples = []

    for a in range(b):
        same = lab == lab[a]
        pos_idx = np.flatnonzero(same)
        pos_idx = pos_idx[pos_idx != a]
        neg_idx = np.flatnonzero(~same)
        if len(pos_idx) == 0 or len(neg_idx) == 0:
            continue
        d_neg = dist[a, neg_idx]

        if strategy == "hardest":
            p = pos_idx[int(np.argmax(dist[a, pos_idx]))]
            n = neg_idx[int(np.argmin(d_neg))]
            triples.append((a, p, n))
            continue

        for p in pos_idx:
            d_ap = dist[a, p]
            if strategy == "paper_literal":
                for n in neg_idx[d_neg < d_ap]:
                    triples.append((a, p, n))
                continue
            # semi_hard
            band = (d_neg > d_ap) & (d_neg < d_ap + margin)
            if band.any():
                cand = neg_idx[band]
                n = cand[int(np.argmin(d_neg[band]))]
            else:
                violating = d_neg <= d_ap
                if not violating.any():
                    continue  # pair already satisfied by margin
                cand = neg_idx[violating]
                n = cand[int(np.argmax(d_neg[violating]))]
            triples.append((a, int(p), int(n)))

    if not triples:
        return _empty_triplets(strategy)
    return TripletSet(np.asarray(triples, dtype=np.int64), strategy)


def cross_entropy(logits, labels, reduction="sum"):
    """Softmax cross entropy against integer labels, as one fused op.

    Stabilized by the usual max-shift; each per-example term is
    log-sum-exp(logits) - logit[label] and cannot go negative.
    """
    if reduction not in ("sum", "mean"):
        raise GraphError(f"unknown reduction {reduction!r}")
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.data.shape}")
    b, c = logits.data.shape
    if b == 0:
        raise ShapeError("cross entropy over an empty batch")
    lab = np.asarray(labels)
    if lab.shape != (b,):
        raise ShapeError(f"labels shape {lab.shape} does not match batch {b}")
    if not np.issubdtype(lab.dtype, np.integer):
        raise ShapeError(f"labels must be integers, got dtype {lab.dtype}")
    bad = (lab < 0) | (lab >= c)
    if bad.any():
        raise ShapeError(f"label {int(lab[bad][0])} outside [0, {c}) at position {int(np.flatnonzero(bad)[0])}")

    z = logits.data
    shift = z - z.max(axis=1, keepdims=True)
    expz = np.exp(shift)
    sumexp = expz.sum(axis=1, keepdims=True)
    rows = np.arange(b)
    per_example = np.log(sumexp[:, 0]) - shift[rows, lab]
    total = per_example.sum() if reduction == "sum" else per_example.mean()
    out = np.asarray(total, dtype=z.dtype)

    softmax = expz / sumexp

    def bw(g):
        gz = softmax.copy()
        gz[rows, lab] -= 1.0
        if reduction == "mean":
            gz /= b
        return ((logits, np.asarray(g * gz, dtype=z.dtype)),)

    return _make("cross_entropy", out, (logits,), bw)


def triplet_loss(embeddings, triplet_set, margin=0.2, reduction="sum"):
    """Margin hinge over mined triplets, on squared embedding distances.

    Per triplet: [ ||e_a - e_p||^2 - ||e_a - e_n||^2 + margin ]_+ .
    An empty set gives an exact 0.0 with no gradient into the embeddings.
    Only triplets with a strictly positive hinge receive gradient.
    """
    if reduction not in ("sum", "mean"):
        raise GraphError(f"unknown reduction {reduction!r}")
    e = embeddings.data
    if e.ndim != 2:
        raise ShapeError(f"embeddings must be 2-d, got {e.shape}")
    t = triplet_set.triples
    if len(t) == 0:
        return _make("triplet_loss", np.asarray(0.0, dtype=e.dtype), (), None)
    if t.min() < 0 or t.max() >= e.shape[0]:
        raise ShapeError(f"triplet index out of range for batch of {e.shape[0]}")

    ai, pi, ni = t[:, 0], t[:, 1], t[:, 2]
    dap = e[ai] - e[pi]
    dan = e[ai] - e[ni]
    hinge = (dap * dap).sum(axis=1) - (dan * dan).sum(axis=1) + margin
    active = hinge > 0.0
    per_triplet = np.where(active, hinge, 0.0)
    total = per_triplet.sum() if reduction == "sum" else per_triplet.mean()
    out = np.asarray(total, dtype=e.dtype)

    def bw(g):
        ge = np.zeros_like(e)
        coef = 2.0 * g * (1.0 / len(t) if reduction == "mean" else 1.0)
        act = np.flatnonzero(active)
        if len(act):
            np.add.at(ge, ai[act], (coef * (e[ni[act]] - e[pi[act]])).astype(e.dtype))
            np.add.at(ge, pi[act], (coef * (e[pi[act]] - e[ai[act]])).astype(e.dtype))
            np.add.at(ge, ni[act], (coef * (e[ai[act]] - e[ni[act]])).astype(e.dtype))
        return ((embeddings, ge),)

    return _make("triplet_loss", out, (embeddings,), bw)


@dataclass
class LossBreakdown:
    """Scalar view of one joint-loss evaluation."""

    total: float
    cel_term: float
    triplet_term: float
    active_triplets: int
    mined_triplets: int


def triplet_hinges(embeddings, triplet_set, margin=0.2):
    """The raw hinge values per mined triplet, as a plain array."""
    e = embeddings.data if isinstance(embeddings, Tensor) else np.asarray(embeddings)
    t = triplet_set.triples
    if len(t) == 0:
        return np.zeros(0, dtype=e.dtype)
    ai, pi, ni = t[:, 0], t[:, 1], t[:, 2]
    dap = e[ai] - e[pi]
    dan = e[ai] - e[ni]
    return (dap * dap).sum(axis=1) - (dan * dan).sum(axis=1) + margin


def tel_loss(logits, labels, embeddings, triplet_set, margin=0.2, lambda_triplet=1.0, reduction="sum"):
    """Joint cross entropy + weighted triplet hinge.

    Returns (total loss Tensor, LossBreakdown).  With lambda_triplet = 0
    or an empty triplet set, the returned tensor IS the cross entropy
    tensor, so a "joint" run with the triplet term disabled is bit-exactly
    a classification run.
    """
    cel = cross_entropy(logits, labels, reduction=reduction)
    hinges = triplet_hinges(embeddings, triplet_set, margin)
    active = int((hinges > 0.0).sum())
    raw = float(np.where(hinges > 0.0, hinges, 0.0).sum())
    if reduction == "mean" and len(triplet_set) > 0:
        raw /= len(triplet_set)

    if lambda_triplet == 0.0 or len(triplet_set) == 0:
        total = cel
    else:
        trip = triplet_loss(embeddings, triplet_set, margin=margin, reduction=reduction)
        total = add(cel, scale(trip, lambda_triplet))

    breakdown = LossBreakdown(
        total=float(total.data),
        cel_term=float(cel.data),
        triplet_term=raw,
        active_triplets=active,
        mined_triplets=len(triplet_set),
    )
    return total, breakdown
