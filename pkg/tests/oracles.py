"""Independent brute-force references used by the tests."""

import itertools
import math

import numpy as np


def zscore(feats):
    """Plain z-score, with (numerically) constant columns set to zero."""
    feats = np.asarray(feats, dtype=float)
    out = np.zeros_like(feats)
    for j in range(feats.shape[1]):
        col = feats[:, j]
        mu = sum(col) / len(col)
        sd = math.sqrt(sum((v - mu) ** 2 for v in col) / len(col))
        if sd > 1e-9 * max(1.0, abs(mu)):
            out[:, j] = (col - mu) / sd
    return out


def best_contiguous_partition(z, k):
    """Exhaustive search over all contiguous k-partitions; minimum within-chunk sum of squares.

    Returns (boundaries, cost). Ties keep the lexicographically first cut vector.
    """
    n = len(z)
    best, best_cost = None, math.inf
    for cuts in itertools.combinations(range(1, n), k - 1):
        edges = (0, *cuts, n)
        cost = 0.0
        for s, e in zip(edges, edges[1:]):
            seg = z[s:e]
            cost += float(((seg - seg.mean(axis=0)) ** 2).sum())
        if cost < best_cost - 1e-9:
            best, best_cost = [(edges[i], edges[i + 1]) for i in range(k)], cost
    return best, best_cost


def ranks_by_counting(scores):
    """Rank position of every id: the number of ids that beat it (higher score, or equal score and smaller id)."""
    scores = list(map(float, scores))
    return [sum(1 for j, s in enumerate(scores) if s > scores[i] or (s == scores[i] and j < i))
            for i in range(len(scores))]


# ---- recognition head, written with plain lists and loops

def outer_bf(pv, pn):
    return [[float(a) * float(b) for b in pn] for a in pv]


def hadamard_bf(a, prior):
    return [[x * y for x, y in zip(ra, rp)] for ra, rp in zip(a, prior)]


def loss_bf(pv, pn, masked, v, n, include_action=True):
    total = sum(sum(row) for row in masked)
    lv = -math.log(pv[v])
    ln = -math.log(pn[n])
    la = -math.log(masked[v][n] / total)
    return (lv + ln + (la if include_action else 0.0), lv, ln, la)


def topk_bf(samples, k):
    """samples: list of (score list, true id). Percentage of truths ranked within k."""
    hits = 0
    for scores, truth in samples:
        if ranks_by_counting(scores)[truth] < k:
            hits += 1
    return 100.0 * hits / len(samples)


def macro_pr_bf(samples):
    preds = [ranks_by_counting(s).index(0) for s, _ in samples]
    truths = [t for _, t in samples]
    classes = sorted(set(truths))
    prec, rec = [], []
    for c in classes:
        tp = sum(1 for p, t in zip(preds, truths) if p == c and t == c)
        fp = sum(1 for p, t in zip(preds, truths) if p == c and t != c)
        fn = sum(1 for p, t in zip(preds, truths) if p != c and t == c)
        prec.append(tp / (tp + fp) if tp + fp else 0.0)
        rec.append(tp / (tp + fn))
    return 100.0 * sum(prec) / len(prec), 100.0 * sum(rec) / len(rec)
