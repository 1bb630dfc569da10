"""Robust frame-to-reference homographies, the camera midpoint trajectory,
and its partition into temporally contiguous chunks via KMeans.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DegenerateProjection,
    NoConsensus,
    ParseError,
    TooFewMatches,
    TooShortSequence,
)
from .features import MatchSet
from .geometry import Homography, fit_dlt, project, reprojection_errors

logger = logging.getLogger(__name__)

SAMPLE_SIZE = 4


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 2000
    inlier_threshold: float = 3.0
    min_inliers: int = 8
    seed: int = 0
    # adaptive early exit; 1.0 disables it
    confidence: float = 0.999
    refine_passes: int = 10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be > 0")
        if self.min_inliers < 4:
            raise ValueError("min_inliers must be >= 4")
        if not 0 < self.confidence <= 1:
            raise ValueError("confidence must lie in (0, 1]")


def canonical_order(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Indices sorting matches by (xa, ya, xb, yb)."""
    return np.lexsort((dst[:, 1], dst[:, 0], src[:, 1], src[:, 0]))


def _required_iterations(inlier_ratio: float, confidence: float) -> float:
    if confidence >= 1.0:
        return math.inf
    p_good = inlier_ratio**SAMPLE_SIZE
    if p_good >= 1.0:
        return 0
    if p_good <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - p_good)


def ransac_homography(matches: MatchSet, cfg: RansacConfig = RansacConfig()) -> tuple[Homography, np.ndarray]:
    """Fit a homography ``src -> dst`` robustly.

    Matches are put in canonical order before sampling, so the result does
    not depend on the order of the input rows. The best minimal-sample model
    (most inliers, then lowest inlier error) is refit on its inliers until
    the inlier set stops changing.

    Returns:
        The homography and a boolean inlier mask aligned with the input order.

    Raises:
        TooFewMatches: fewer than 4 matches.
        NoConsensus: no model reaches ``cfg.min_inliers`` inliers.
    """
    n = len(matches)
    if n < SAMPLE_SIZE:
        raise TooFewMatches(f"need at least {SAMPLE_SIZE} matches, got {n}")
    order = canonical_order(matches.src, matches.dst)
    src = matches.src[order]
    dst = matches.dst[order]
    thr = cfg.inlier_threshold
    rng = np.random.default_rng(cfg.seed)

    best_h, best_mask, best_key = None, None, (-1, 0.0)
    needed = math.inf
    it = 0
    while it < cfg.max_iterations and it < needed:
        it += 1
        idx = rng.choice(n, size=SAMPLE_SIZE, replace=False)
        try:
            h = fit_dlt(src[idx], dst[idx])
        except DegenerateConfiguration:
            continue
        err = reprojection_errors(h, src, dst)
        mask = err < thr
        count = int(mask.sum())
        key = (count, -float(np.sum(err[mask] ** 2)))
        if key > best_key:
            best_h, best_mask, best_key = h, mask, key
            needed = _required_iterations(count / n, cfg.confidence)

    if best_h is None or best_key[0] < cfg.min_inliers:
        raise NoConsensus(
            f"best model has {max(best_key[0], 0)} inliers, need {cfg.min_inliers} ({it} iterations)"
        )

    h, mask = best_h, best_mask
    for _ in range(cfg.refine_passes):
        try:
            h_new = fit_dlt(src[mask], dst[mask])
        except DegenerateConfiguration:
            break
        mask_new = reprojection_errors(h_new, src, dst) < thr
        if mask_new.sum() < cfg.min_inliers:
            break
        h = h_new
        if np.array_equal(mask_new, mask):
            break
        mask = mask_new

    out = np.zeros(n, dtype=bool)
    out[order] = mask
    return h, out


def resolve_reference(policy, n_frames: int) -> int:
    """Map a reference policy (``"first"``, ``"last"`` or an index) to a frame index."""
    if policy == "last":
        return n_frames - 1
    if policy == "first":
        return 0
    idx = int(policy)
    if idx < 0:
        idx += n_frames
    if not 0 <= idx < n_frames:
        raise ValueError(f"reference index {policy} outside sequence of {n_frames} frames")
    return idx


def estimate_homographies(matchsets: Mapping[int, MatchSet], n_frames: int, reference_index: int,
                          cfg: RansacConfig = RansacConfig()) -> tuple[list[Homography], list[int]]:
    """Per-frame homographies to the reference frame.

    ``matchsets`` maps a frame index to its matches against the reference.
    A frame without a usable model inherits the homography of its neighbour
    on the side of the reference; such frames are returned as failures.
    """
    homs: list[Homography | None] = [None] * n_frames
    homs[reference_index] = Homography.identity()
    failed = []
    # walk outwards from the reference so neighbours are always resolved first
    outward = sorted(range(n_frames), key=lambda i: (abs(i - reference_index), i))
    for i in outward:
        if i == reference_index:
            continue
        ms = matchsets.get(i)
        try:
            if ms is None:
                raise TooFewMatches("no matches")
            if ms.frame_b != reference_index:
                raise ValueError(f"frame {i} matched against {ms.frame_b}, not the reference")
            homs[i], _ = ransac_homography(ms, cfg)
        except (TooFewMatches, NoConsensus, DegenerateConfiguration) as exc:
            logger.warning("frame %d: %s; inheriting neighbour homography", i, exc)
            failed.append(i)
            homs[i] = homs[i + 1] if i < reference_index else homs[i - 1]
    return homs, sorted(failed)


@dataclass
class Trajectory:
    """Normalized midpoint positions ``(x, y)`` per frame ``t``."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    reference_index: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        if not (len(self.x) == len(self.y) == len(self.t)):
            raise ValueError("x, y, t must have equal length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("t must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def features(self) -> np.ndarray:
        return np.column_stack([self.x, self.y, self.t])


def build_trajectory(homographies: Sequence[Homography], frame_size: tuple[int, int],
                     reference_index: int) -> Trajectory:
    """Project every frame's centre into the reference view, normalized by frame size."""
    w, h = frame_size
    mid = (w / 2.0, h / 2.0)
    xs, ys = [], []
    for i, hom in enumerate(homographies):
        if i == reference_index:
            xs.append(0.5)
            ys.append(0.5)
            continue
        try:
            p = project(hom, mid)
        except DegenerateProjection as exc:
            raise DegenerateProjection(f"frame {i}: {exc}") from None
        xs.append(p.x / w)
        ys.append(p.y / h)
    return Trajectory(np.array(xs), np.array(ys), np.arange(len(homographies)), reference_index)


@dataclass
class ChunkPartition:
    k: int
    boundaries: list[tuple[int, int]]
    centers: np.ndarray  # (k, 3) mean (x, y, t) of each chunk's members
    raw_labels: np.ndarray | None = None
    objective_history: list[float] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.boundaries[-1][1]

    @property
    def assignment(self) -> np.ndarray:
        out = np.empty(self.n_frames, dtype=int)
        for c, (s, e) in enumerate(self.boundaries):
            out[s:e] = c
        return out

    @property
    def lengths(self) -> list[int]:
        return [e - s for s, e in self.boundaries]


# columns whose spread is below this (relative to their magnitude) count as constant;
# keeps floating-point jitter in a static coordinate from being blown up to unit variance
CONSTANT_RTOL = 1e-9


def standardize(feats: np.ndarray) -> np.ndarray:
    """Z-score each column; (numerically) constant columns become zero."""
    mu = feats.mean(axis=0)
    sd = feats.std(axis=0)
    const = sd <= CONSTANT_RTOL * np.maximum(1.0, np.abs(mu))
    z = (feats - mu) / np.where(const, 1.0, sd)
    z[:, const] = 0.0
    return z


def farthest_point_init(z: np.ndarray, k: int, first: int) -> np.ndarray:
    """Greedy k-centre seeding starting at index ``first`` (ties go to the lowest index)."""
    chosen = [int(first)]
    d = np.sum((z - z[first]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.sum((z - z[nxt]) ** 2, axis=1))
    return z[chosen].copy()


def wcss(z: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    return float(np.sum((z - centers[labels]) ** 2))


def lloyd(z: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations from ``centers``.

    Empty clusters keep their previous centre. Returns labels, centres and the
    objective after every assignment and every update step.
    """
    centers = centers.copy()
    labels = None
    history = []
    for _ in range(max_iter):
        d = np.sum((z[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(d, axis=1)
        history.append(wcss(z, new, centers))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(len(centers)):
            members = labels == c
            if members.any():
                centers[c] = z[members].mean(axis=0)
        history.append(wcss(z, labels, centers))
    return labels, centers, history


def repair_contiguity(labels: np.ndarray, t: np.ndarray, k: int) -> list[tuple[int, int]]:
    """Turn (possibly interleaved) cluster labels into k contiguous frame intervals.

    Clusters are ordered by mean time; each cut sits at the rounded-up midpoint
    between the last member of one cluster and the first member of the next.
    """
    n = len(labels)
    frames = np.arange(n)
    groups = [frames[labels == c] for c in np.unique(labels)]
    groups.sort(key=lambda g: (t[g].mean(), g[0]))
    cuts = []
    for a, b in zip(groups[:-1], groups[1:]):
        cuts.append(math.ceil((a.max() + b.min()) / 2))
    cuts.sort()
    # keep every chunk non-empty
    for j in range(len(cuts)):
        lo = cuts[j - 1] + 1 if j else 1
        cuts[j] = max(cuts[j], lo)
    for j in reversed(range(len(cuts))):
        hi = cuts[j + 1] - 1 if j + 1 < len(cuts) else n - 1
        cuts[j] = min(cuts[j], hi)
    edges = [0, *cuts, n]
    bounds = [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]
    # a cluster can end up empty; split the longest chunk until there are k
    while len(bounds) < k:
        j = max(range(len(bounds)), key=lambda i: (bounds[i][1] - bounds[i][0], -i))
        s, e = bounds[j]
        m = s + (e - s + 1) // 2
        bounds[j:j + 1] = [(s, m), (m, e)]
    return bounds


def hartigan_refine(z: np.ndarray, labels: np.ndarray, k: int, max_passes: int = 50,
                    history: list[float] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Single-point transfers that strictly lower the within-cluster sum of squares.

    Escapes Lloyd fixed points that are only stable because of distance ties.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(float)
    centers = np.zeros((k, z.shape[1]))
    for c in range(k):
        if counts[c]:
            centers[c] = z[labels == c].mean(axis=0)
    for _ in range(max_passes):
        moved = False
        for i in range(len(z)):
            a = labels[i]
            if counts[a] <= 1:
                continue
            d = np.sum((centers - z[i]) ** 2, axis=1)
            stay = counts[a] / (counts[a] - 1) * d[a]
            move = np.where(counts > 0, counts / (counts + 1) * d, np.inf)
            move[a] = np.inf
            b = int(np.argmin(move))
            if move[b] < stay * (1 - 1e-12) - 1e-15:
                centers[a] = (centers[a] * counts[a] - z[i]) / (counts[a] - 1)
                centers[b] = (centers[b] * counts[b] + z[i]) / (counts[b] + 1)
                counts[a] -= 1
                counts[b] += 1
                labels[i] = b
                moved = True
        if history is not None:
            history.append(wcss(z, labels, centers))
        if not moved:
            break
    return labels, centers


def kmeans(z: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, n_init: int = 32,
           refine: bool = True) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """KMeans on the rows of ``z`` with deterministic farthest-point restarts.

    Each restart begins farthest-point seeding from a distinct row drawn by the
    seeded generator, runs Lloyd iterations and (optionally) Hartigan
    transfers. The restart with the lowest objective wins; its objective trace
    is returned alongside labels and centres.
    """
    rng = np.random.default_rng(seed)
    firsts = rng.permutation(len(z))[:max(1, n_init)]
    best = None
    for first in firsts:
        labels, centers, history = lloyd(z, farthest_point_init(z, k, first), max_iter)
        if refine:
            labels, centers = hartigan_refine(z, labels, k, history=history)
        obj = history[-1]
        if best is None or obj < best[2][-1] - 1e-12:
            best = (labels, centers, history)
    return best


def kmeans_chunks(traj: Trajectory, k: int = 4, seed: int = 0, max_iter: int = 100,
                  standardize_features: bool = True, n_init: int = 32,
                  refine: bool = True) -> ChunkPartition:
    """Partition the trajectory into ``k`` temporally contiguous chunks.

    KMeans runs on the z-scored ``(x, y, t)`` features; the labels are then
    made contiguous in time. ``centers`` holds each final chunk's mean
    ``(x, y, t)`` in trajectory units.
    """
    n = len(traj)
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise TooShortSequence(f"sequence has {n} frames, fewer than k={k} chunks")
    feats = traj.features()
    z = standardize(feats) if standardize_features else feats
    labels, _, history = kmeans(z, k, seed, max_iter, n_init, refine)
    bounds = repair_contiguity(labels, traj.t, k)
    centers = np.array([feats[s:e].mean(axis=0) for s, e in bounds])
    return ChunkPartition(k, bounds, centers, raw_labels=labels, objective_history=history)


# ---------------------------------------------------------------- file formats

def save_trajectory(path, traj: Trajectory) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t", "x", "y"])
        for t, x, y in zip(traj.t, traj.x, traj.y):
            w.writerow([int(t), repr(float(x)), repr(float(y))])


def load_trajectory(path, reference_index: int | None = None) -> Trajectory:
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", "x", "y"]:
            raise ParseError("expected header t,x,y", path, 1)
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"row has {len(row)} fields, expected 3", path, reader.line_num)
            try:
                rows.append((int(row[0]), float(row[1]), float(row[2])))
            except ValueError:
                raise ParseError("non-numeric field", path, reader.line_num) from None
    if not rows:
        raise ParseError("trajectory has no rows", path)
    t, x, y = (np.array(c) for c in zip(*rows))
    if reference_index is None:
        hits = np.flatnonzero((x == 0.5) & (y == 0.5))
        reference_index = int(hits[-1]) if len(hits) else len(t) - 1
    try:
        return Trajectory(x, y, t, reference_index)
    except ValueError as exc:
        raise ParseError(str(exc), path) from None


def save_chunk_manifest(path, partition: ChunkPartition, reference_index: int,
                        failed_frames: Sequence[int] = ()) -> None:
    doc = {
        "k": partition.k,
        "reference_index": int(reference_index),
        "boundaries": [[int(s), int(e)] for s, e in partition.boundaries],
        "centers": [[float(v) for v in c] for c in partition.centers],
        "failed_frames": [int(i) for i in failed_frames],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_chunk_manifest(path) -> tuple[ChunkPartition, int, list[int]]:
    """Returns the partition, the global reference index and the failed frames."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        bounds = [(int(s), int(e)) for s, e in doc["boundaries"]]
        centers = np.array(doc["centers"], dtype=float).reshape(-1, 3)
        part = ChunkPartition(int(doc["k"]), bounds, centers)
        ref = int(doc["reference_index"])
        failed = [int(i) for i in doc.get("failed_frames", [])]
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"invalid chunk manifest: {exc}", path) from None
    if len(bounds) != part.k or len(centers) != part.k or not bounds or bounds[0][0] != 0:
        raise ParseError("boundaries/centers do not describe k chunks starting at frame 0", path)
    if any(a[1] != b[0] for a, b in zip(bounds, bounds[1:])) or any(s >= e for s, e in bounds):
        raise ParseError("boundaries must be contiguous non-empty intervals", path)
    return part, ref, failed


def save_homographies(path, homographies: Sequence[Homography], reference_index: int,
                      failed_frames: Sequence[int] = ()) -> None:
    doc = {
        "reference_index": int(reference_index),
        "failed_frames": [int(i) for i in failed_frames],
        "homographies": [h.to_json() for h in homographies],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_homographies(path) -> tuple[list[Homography], int, list[int]]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        homs = [Homography.from_json(o) for o in doc["homographies"]]
        return homs, int(doc["reference_index"]), [int(i) for i in doc.get("failed_frames", [])]
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"invalid homography file: {exc}", path) from None
