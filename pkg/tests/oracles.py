"""Independent reimplementations used as test oracles.

Everything here is deliberately written the slow, obvious way (plain
loops, no shared code with the package) so that agreement means two
independent derivations landed on the same answer.
"""

import numpy as np


def euclidean_matrix(e):
    b = len(e)
    d = np.zeros((b, b))
    for i in range(b):
        for j in range(b):
            d[i, j] = np.sqrt(((e[i] - e[j]) ** 2).sum())
    return d


def brute_force_mine(embeddings, labels, margin, strategy):
    """Enumerate every strategy's defining condition with plain loops."""
    e = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels)
    d = euclidean_matrix(e)
    b = len(lab)
    triples = []

    if strategy == "hardest":
        for a in range(b):
            pos = [p for p in range(b) if p != a and lab[p] == lab[a]]
            neg = [n for n in range(b) if lab[n] != lab[a]]
            if not pos or not neg:
                continue
            # ties toward the lowest index: scan in order, strict comparisons
            best_p, best_pd = None, -1.0
            for p in pos:
                if d[a, p] > best_pd:
                    best_p, best_pd = p, d[a, p]
            best_n, best_nd = None, np.inf
            for n in neg:
                if d[a, n] < best_nd:
                    best_n, best_nd = n, d[a, n]
            triples.append((a, best_p, best_n))
        return triples

    for a in range(b):
        for p in range(b):
            if p == a or lab[p] != lab[a]:
                continue
            negs = [n for n in range(b) if lab[n] != lab[a]]
            if not negs:
                continue
            if strategy == "paper_literal":
                for n in negs:
                    if d[a, n] < d[a, p]:
                        triples.append((a, p, n))
                continue
            # semi_hard: nearest negative inside the (d_ap, d_ap + margin) band,
            # else the farthest violator with d_an <= d_ap, else nothing
            band = [n for n in negs if d[a, p] < d[a, n] < d[a, p] + margin]
            if band:
                best, bd = None, np.inf
                for n in band:
                    if d[a, n] < bd:
                        best, bd = n, d[a, n]
                triples.append((a, p, best))
                continue
            viol = [n for n in negs if d[a, n] <= d[a, p]]
            if viol:
                best, bd = None, -1.0
                for n in viol:
                    if d[a, n] > bd:
                        best, bd = n, d[a, n]
                triples.append((a, p, best))
    return triples


def cross_entropy_scalar(logits, labels):
    """High-precision per-example CE via mpmath-free longdouble softmax."""
    z = np.asarray(logits, dtype=np.longdouble)
    out = []
    for row, y in zip(z, labels):
        shift = row - row.max()
        out.append(float(np.log(np.exp(shift).sum()) - shift[y]))
    return out


def knn_predict(ref, ref_labels, queries, k, metric, exclude_self):
    """Exhaustive-scan nearest neighbour with explicit tie rules."""
    preds = []
    for qi, q in enumerate(np.asarray(queries, dtype=np.float64)):
        cand = []
        for ri, r in enumerate(np.asarray(ref, dtype=np.float64)):
            if exclude_self and ri == qi:
                continue
            if metric == "euclidean":
                dist = ((q - r) ** 2).sum()
            else:
                qn = q / max(np.linalg.norm(q), 1e-12)
                rn = r / max(np.linalg.norm(r), 1e-12)
                dist = 1.0 - qn @ rn
            cand.append((dist, ri))
        cand.sort(key=lambda t: (t[0], t[1]))
        votes = {}
        for _, ri in cand[:k]:
            votes[ref_labels[ri]] = votes.get(ref_labels[ri], 0) + 1
        top = max(votes.values())
        preds.append(min(lab for lab, v in votes.items() if v == top))
    return np.asarray(preds)
