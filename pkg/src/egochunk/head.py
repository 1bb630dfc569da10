"""Verb/noun/action score fusion, training priors, multi-task NLL and challenge metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    EmptyList,
    InvalidDistribution,
    LabelOutOfRange,
    MissingSample,
    ParseError,
    ShapeMismatch,
    ZeroProbabilityTruth,
)

SUM_TOL = 1e-6
TARGETS = ("verb", "noun", "action")


def _check_distribution(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidDistribution(f"{name} must be a non-empty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidDistribution(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > SUM_TOL:
        raise InvalidDistribution(f"{name} sums to {p.sum():.9f}, not 1")
    return p


@dataclass(frozen=True)
class ClassScores:
    p_v: np.ndarray
    p_n: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_v", _check_distribution(self.p_v, "p_v"))
        object.__setattr__(self, "p_n", _check_distribution(self.p_n, "p_n"))


def action_outer(s: ClassScores) -> np.ndarray:
    """Action scores ``a[v, n] = p_v[v] * p_n[n]``."""
    return np.outer(s.p_v, s.p_n)


def validate_prior(prior) -> np.ndarray:
    prior = np.asarray(prior, dtype=float)
    if prior.ndim != 2:
        raise ShapeMismatch(f"prior must be a V x N matrix, got shape {prior.shape}")
    if np.any(~np.isfinite(prior)) or np.any(prior < 0) or np.any(prior > 1):
        raise ValueError("prior entries must lie in [0, 1]")
    if not np.any(prior > 0):
        raise ValueError("prior has no nonzero entry")
    return prior


def apply_prior(a: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """Elementwise product with the prior. The result is not renormalized."""
    a = np.asarray(a, dtype=float)
    prior = np.asarray(prior, dtype=float)
    if a.shape != prior.shape:
        raise ShapeMismatch(f"action scores {a.shape} vs prior {prior.shape}")
    return a * prior


def build_prior(labels: Sequence[tuple[int, int]], n_verbs: int | None = None,
                n_nouns: int | None = None, mode: str = "binary") -> np.ndarray:
    """Verb-noun prior from training ``(verb, noun)`` pairs.

    ``binary`` marks every observed pair with 1. ``frequency`` uses each pair's
    share of the training labels instead.
    """
    if len(labels) == 0:
        raise EmptyList("no training labels")
    pairs = np.asarray(labels, dtype=int).reshape(-1, 2)
    V = int(pairs[:, 0].max()) + 1 if n_verbs is None else n_verbs
    N = int(pairs[:, 1].max()) + 1 if n_nouns is None else n_nouns
    if pairs.min() < 0 or pairs[:, 0].max() >= V or pairs[:, 1].max() >= N:
        raise LabelOutOfRange(f"label outside {V} verbs x {N} nouns")
    counts = np.zeros((V, N))
    np.add.at(counts, (pairs[:, 0], pairs[:, 1]), 1.0)
    if mode == "binary":
        return (counts > 0).astype(float)
    if mode == "frequency":
        return counts / counts.sum()
    raise ValueError(f"unknown prior mode {mode!r}")


class LossTerms(NamedTuple):
    total: float
    verb: float
    noun: float
    action: float


def _nll(logp: float) -> float:
    return math.inf if logp == -math.inf else max(0.0, -float(logp))


def multitask_loss(log_pv, log_pn, masked_pa, verb: int, noun: int,
                   include_action: bool = True) -> LossTerms:
    """Sum of verb, noun and (optionally) action negative log-likelihoods.

    The masked action matrix is renormalized to a distribution before its NLL
    is taken. A zero log-probability input yields an infinite term instead of
    an exception.

    Raises:
        LabelOutOfRange: a label does not index the score vectors.
        ZeroProbabilityTruth: the prior removed the true (verb, noun) pair.
    """
    log_pv = np.asarray(log_pv, dtype=float)
    log_pn = np.asarray(log_pn, dtype=float)
    pa = np.asarray(masked_pa, dtype=float)
    if pa.shape != (len(log_pv), len(log_pn)):
        raise ShapeMismatch(f"action matrix {pa.shape} vs ({len(log_pv)}, {len(log_pn)})")
    if not 0 <= verb < len(log_pv):
        raise LabelOutOfRange(f"verb {verb} outside [0, {len(log_pv)})")
    if not 0 <= noun < len(log_pn):
        raise LabelOutOfRange(f"noun {noun} outside [0, {len(log_pn)})")
    lv = _nll(log_pv[verb])
    ln = _nll(log_pn[noun])
    if pa[verb, noun] <= 0:
        raise ZeroProbabilityTruth(verb, noun)
    la = _nll(math.log(pa[verb, noun]) - math.log(pa.sum()))
    total = lv + ln + (la if include_action else 0.0)
    return LossTerms(total, lv, ln, la)


def average_views(views: Sequence[ClassScores]) -> ClassScores:
    """Entrywise mean of per-view verb and noun distributions."""
    if len(views) == 0:
        raise EmptyList("no views to average")
    V, N = len(views[0].p_v), len(views[0].p_n)
    for v in views:
        if len(v.p_v) != V or len(v.p_n) != N:
            raise ShapeMismatch(f"view has shapes ({len(v.p_v)}, {len(v.p_n)}), expected ({V}, {N})")
    pv = np.mean([v.p_v for v in views], axis=0)
    pn = np.mean([v.p_n for v in views], axis=0)
    return ClassScores(pv, pn)


# ------------------------------------------------------------------ metrics

@dataclass
class LabeledPrediction:
    verb_scores: np.ndarray
    noun_scores: np.ndarray
    action_scores: np.ndarray  # (V, N), possibly prior-masked
    verb: int
    noun: int

    def __post_init__(self):
        V, N = len(self.verb_scores), len(self.noun_scores)
        if np.shape(self.action_scores) != (V, N):
            raise ShapeMismatch(f"action scores {np.shape(self.action_scores)} vs ({V}, {N})")
        if not (0 <= self.verb < V and 0 <= self.noun < N):
            raise LabelOutOfRange(f"labels ({self.verb}, {self.noun}) outside ({V}, {N})")

    def scores(self, target: str) -> np.ndarray:
        if target == "verb":
            return np.asarray(self.verb_scores, dtype=float)
        if target == "noun":
            return np.asarray(self.noun_scores, dtype=float)
        if target == "action":
            return np.asarray(self.action_scores, dtype=float).ravel()
        raise ValueError(f"target must be one of {TARGETS}, got {target!r}")

    def truth(self, target: str) -> int:
        if target == "verb":
            return self.verb
        if target == "noun":
            return self.noun
        if target == "action":
            return self.verb * len(self.noun_scores) + self.noun
        raise ValueError(f"target must be one of {TARGETS}, got {target!r}")


def make_prediction(scores: ClassScores, verb: int, noun: int, prior=None) -> LabeledPrediction:
    a = action_outer(scores)
    if prior is not None:
        a = apply_prior(a, prior)
    return LabeledPrediction(scores.p_v, scores.p_n, a, verb, noun)


def ranking(scores: np.ndarray) -> np.ndarray:
    """Class ids by descending score; equal scores keep ascending id order."""
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def topk_accuracy(preds: Sequence[LabeledPrediction], k: int, target: str) -> float:
    """Percentage of samples whose true id is among the ``k`` best-ranked ids."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not preds:
        return 0.0
    hits = sum(p.truth(target) in ranking(p.scores(target))[:k] for p in preds)
    return 100.0 * hits / len(preds)


def macro_precision_recall(preds: Sequence[LabeledPrediction], target: str) -> tuple[float, float]:
    """Top-1 precision and recall, macro-averaged over classes present in the ground truth."""
    if not preds:
        return 0.0, 0.0
    truth = np.array([p.truth(target) for p in preds])
    top1 = np.array([ranking(p.scores(target))[0] for p in preds])
    precisions, recalls = [], []
    for c in np.unique(truth):
        tp = np.sum((top1 == c) & (truth == c))
        predicted = np.sum(top1 == c)
        precisions.append(tp / predicted if predicted else 0.0)
        recalls.append(tp / np.sum(truth == c))
    return 100.0 * float(np.mean(precisions)), 100.0 * float(np.mean(recalls))


def metrics_report(preds: Sequence[LabeledPrediction], decimals: int | None = 2) -> dict:
    """Top@1, Top@5, precision and recall for verb, noun and action."""
    rnd = (lambda v: round(v, decimals)) if decimals is not None else (lambda v: v)
    report = {"top1": {}, "top5": {}, "precision": {}, "recall": {}}
    for target in TARGETS:
        report["top1"][target] = rnd(topk_accuracy(preds, 1, target))
        report["top5"][target] = rnd(topk_accuracy(preds, 5, target))
        p, r = macro_precision_recall(preds, target)
        report["precision"][target] = rnd(p)
        report["recall"][target] = rnd(r)
    return report


def format_report(report: dict) -> str:
    groups = [("Top@1", "top1"), ("Top@5", "top5"), ("Precision", "precision"), ("Recall", "recall")]
    head1 = "".join(f"{title:^27}" for title, _ in groups)
    head2 = "".join(f"{'Verb':>9}{'Noun':>9}{'Action':>9}" for _ in groups)
    row = "".join("".join(f"{report[key][t]:>9.2f}" for t in TARGETS) for _, key in groups)
    return "\n".join([head1, head2, row]) + "\n"


# ------------------------------------------------------------------ file formats

def load_probabilities(path) -> tuple[dict[str, list[np.ndarray]], int]:
    """Per-sample lists of view probability vectors, ordered by ``view_id``.

    Returns the mapping and the number of classes.
    """
    path = Path(path)
    views: dict[str, dict[int, np.ndarray]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or len(header) < 3 or [h.strip() for h in header[:2]] != ["sample_id", "view_id"]:
            raise ParseError("expected header sample_id,view_id,cls_0,...", path, 1)
        K = len(header) - 2
        for row in reader:
            if not row:
                continue
            if len(row) != K + 2:
                raise ShapeMismatch(f"{path}:{reader.line_num}: {len(row) - 2} scores, header has {K}")
            try:
                vid = int(row[1])
                vec = np.array([float(v) for v in row[2:]])
            except ValueError:
                raise ParseError("non-numeric field", path, reader.line_num) from None
            sample = views.setdefault(row[0].strip(), {})
            if vid in sample:
                raise ParseError(f"duplicate view {vid} for sample {row[0]!r}", path, reader.line_num)
            sample[vid] = vec
    return {sid: [v[i] for i in sorted(v)] for sid, v in views.items()}, K


def save_probabilities(path, probs: dict[str, Sequence[np.ndarray]]) -> None:
    K = len(next(iter(probs.values()))[0])
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "view_id", *[f"cls_{i}" for i in range(K)]])
        for sid, vs in probs.items():
            for vid, vec in enumerate(vs):
                w.writerow([sid, vid, *[repr(float(x)) for x in vec]])


def load_labels(path) -> list[tuple[str, int, int]]:
    path = Path(path)
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["sample_id", "verb_id", "noun_id"]:
            raise ParseError("expected header sample_id,verb_id,noun_id", path, 1)
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"row has {len(row)} fields, expected 3", path, reader.line_num)
            try:
                out.append((row[0].strip(), int(row[1]), int(row[2])))
            except ValueError:
                raise ParseError("non-integer label", path, reader.line_num) from None
    return out


def save_labels(path, labels: Sequence[tuple[str, int, int]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "verb_id", "noun_id"])
        w.writerows(labels)


def load_prior(path) -> np.ndarray:
    path = Path(path)
    try:
        prior = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ParseError(str(exc), path) from None
    try:
        return validate_prior(prior)
    except (ValueError, ShapeMismatch) as exc:
        raise ParseError(str(exc), path) from None


def save_prior(path, prior: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        for row in np.asarray(prior, dtype=float):
            w.writerow([repr(float(v)) for v in row])


def fuse_samples(verb_probs: dict[str, list[np.ndarray]], noun_probs: dict[str, list[np.ndarray]],
                 sample_ids: Sequence[str]) -> dict[str, ClassScores]:
    """View-averaged scores for each requested sample."""
    out = {}
    for sid in sample_ids:
        if sid not in verb_probs or sid not in noun_probs:
            raise MissingSample(f"sample {sid!r} missing from the verb or noun probability file")
        pv, pn = verb_probs[sid], noun_probs[sid]
        if len(pv) != len(pn):
            raise ShapeMismatch(f"sample {sid!r}: {len(pv)} verb views vs {len(pn)} noun views")
        out[sid] = average_views([ClassScores(a, b) for a, b in zip(pv, pn)])
    return out
