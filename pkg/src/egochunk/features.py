"""Classical correspondence extraction: Harris corners, BRIEF descriptors,
mutual ratio-test matching, and the match CSV exchange format.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyImage, IndexOutOfRange, ParseError
from .geometry import Correspondence, Point2

HARRIS_K = 0.04
HARRIS_SIGMA = 1.0
NMS_RADIUS = 5
# candidates weaker than this fraction of the strongest response are ignored
REL_THRESHOLD = 0.01
BORDER = 3

PATCH_MARGIN = 16
BRIEF_SIGMA = 1.0
DESCRIPTOR_BITS = 256

MATCH_HEADER = ["frame_a", "frame_b", "xa", "ya", "xb", "yb"]


class Keypoint(NamedTuple):
    x: float
    y: float
    score: float

    @property
    def pos(self) -> Point2:
        return Point2(self.x, self.y)


@dataclass
class FrameFeatures:
    """Keypoints that survived description plus their packed 256-bit descriptors."""

    keypoints: list[Keypoint]
    descriptors: np.ndarray  # (N, 32) uint8
    dropped: list[int] = field(default_factory=list)

    @property
    def points(self) -> np.ndarray:
        return np.array([(k.x, k.y) for k in self.keypoints], dtype=float).reshape(-1, 2)


@dataclass
class MatchSet:
    """Correspondences from ``frame_a`` (src) to ``frame_b`` (dst)."""

    frame_a: int
    frame_b: int
    src: np.ndarray
    dst: np.ndarray

    def __post_init__(self):
        if self.frame_a == self.frame_b:
            raise ValueError(f"a match set needs two distinct frames, got {self.frame_a} twice")
        self.src = np.asarray(self.src, dtype=float).reshape(-1, 2)
        self.dst = np.asarray(self.dst, dtype=float).reshape(-1, 2)
        if len(self.src) != len(self.dst):
            raise ValueError("src and dst must have equal length")

    def __len__(self):
        return len(self.src)

    @property
    def matches(self) -> list[Correspondence]:
        return [
            Correspondence(Point2(*map(float, s)), Point2(*map(float, d)))
            for s, d in zip(self.src, self.dst)
        ]

    @classmethod
    def from_correspondences(cls, frame_a, frame_b, matches: Sequence[Correspondence]):
        src = [c.src for c in matches]
        dst = [c.dst for c in matches]
        return cls(frame_a, frame_b, np.array(src, dtype=float), np.array(dst, dtype=float))


def to_gray(image) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.ndim == 3:
        if img.shape[2] == 1:
            img = img[..., 0]
        else:
            img = img[..., :3] @ np.array([0.299, 0.587, 0.114])
    if img.ndim != 2 or img.size == 0:
        raise EmptyImage(f"expected a non-empty 2-D raster, got shape {np.shape(image)}")
    return img


def harris_response(img: np.ndarray, k: float = HARRIS_K, sigma: float = HARRIS_SIGMA) -> np.ndarray:
    ix = ndimage.sobel(img, axis=1, mode="reflect")
    iy = ndimage.sobel(img, axis=0, mode="reflect")
    sxx = ndimage.gaussian_filter(ix * ix, sigma)
    syy = ndimage.gaussian_filter(iy * iy, sigma)
    sxy = ndimage.gaussian_filter(ix * iy, sigma)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect(image, max_keypoints: int = 500, *, k: float = HARRIS_K, sigma: float = HARRIS_SIGMA,
           nms_radius: int = NMS_RADIUS, rel_threshold: float = REL_THRESHOLD) -> list[Keypoint]:
    """Harris corners, strongest first, greedily suppressed within ``nms_radius`` pixels."""
    img = to_gray(image)
    if max_keypoints < 1:
        raise ValueError("max_keypoints must be >= 1")
    R = harris_response(img, k, sigma)
    rmax = R.max()
    if rmax <= 0:
        return []

    yy, xx = np.mgrid[-nms_radius:nms_radius + 1, -nms_radius:nms_radius + 1]
    disk = xx**2 + yy**2 <= nms_radius**2
    peak = (R == ndimage.maximum_filter(R, footprint=disk, mode="constant", cval=-np.inf))
    peak &= R > rel_threshold * rmax
    peak[:BORDER, :] = False
    peak[-BORDER:, :] = False
    peak[:, :BORDER] = False
    peak[:, -BORDER:] = False

    ys, xs = np.nonzero(peak)
    scores = R[ys, xs]
    order = np.lexsort((xs, ys, -scores))
    kept: list[int] = []
    kx = np.empty(0)
    ky = np.empty(0)
    r2 = nms_radius**2
    for i in order:
        if len(kept) and np.any((kx - xs[i]) ** 2 + (ky - ys[i]) ** 2 <= r2):
            continue
        kept.append(i)
        kx = np.append(kx, xs[i])
        ky = np.append(ky, ys[i])
        if len(kept) == max_keypoints:
            break
    return [Keypoint(float(xs[i]), float(ys[i]), float(scores[i])) for i in kept]


@lru_cache(maxsize=1)
def brief_pattern() -> np.ndarray:
    """The shipped ``(256, 4)`` table of ``(dx1, dy1, dx2, dy2)`` offsets."""
    text = resources.files("egochunk").joinpath("data/brief_pattern.txt").read_text()
    table = np.loadtxt(text.splitlines(), dtype=int, comments="#")
    assert table.shape == (DESCRIPTOR_BITS, 4)
    table.setflags(write=False)
    return table


def describe(image, kps: Sequence[Keypoint]) -> FrameFeatures:
    """BRIEF descriptors for keypoints at least 16 px away from every border.

    Keypoints closer to the border are dropped; their input indices are
    listed in ``FrameFeatures.dropped``.
    """
    img = to_gray(image)
    h, w = img.shape
    smooth = ndimage.gaussian_filter(img, BRIEF_SIGMA, mode="reflect")
    pat = brief_pattern()

    keep, dropped = [], []
    for i, kp in enumerate(kps):
        cx, cy = int(round(kp.x)), int(round(kp.y))
        if PATCH_MARGIN <= cx < w - PATCH_MARGIN and PATCH_MARGIN <= cy < h - PATCH_MARGIN:
            keep.append(i)
        else:
            dropped.append(i)
    if not keep:
        return FrameFeatures([], np.zeros((0, DESCRIPTOR_BITS // 8), np.uint8), dropped)

    cx = np.array([int(round(kps[i].x)) for i in keep])[:, None]
    cy = np.array([int(round(kps[i].y)) for i in keep])[:, None]
    a = smooth[cy + pat[:, 1], cx + pat[:, 0]]
    b = smooth[cy + pat[:, 3], cx + pat[:, 2]]
    bits = np.packbits(a < b, axis=1)
    return FrameFeatures([kps[i] for i in keep], bits, dropped)


def extract(image, max_keypoints: int = 500) -> FrameFeatures:
    return describe(image, detect(image, max_keypoints))


_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint16)


def hamming_matrix(da: np.ndarray, db: np.ndarray) -> np.ndarray:
    x = np.bitwise_xor(da[:, None, :], db[None, :, :])
    return _POPCOUNT[x].sum(axis=2, dtype=np.int64)


def _ratio_ok(d: np.ndarray, ratio: float) -> np.ndarray:
    """Per row: best distance < ratio * second best (a lone candidate always passes)."""
    if d.shape[1] == 1:
        return np.ones(d.shape[0], dtype=bool)
    part = np.partition(d, 1, axis=1)
    return part[:, 0] < ratio * part[:, 1]


def match(a: FrameFeatures, b: FrameFeatures, ratio: float = 0.8,
          frame_a: int = 0, frame_b: int = 1) -> MatchSet:
    """Mutual nearest neighbours in Hamming space that pass the ratio test both ways.

    Applying the ratio test in both directions keeps ``match(a, b)`` and
    ``match(b, a)`` symmetric.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if len(a.keypoints) == 0 or len(b.keypoints) == 0:
        return MatchSet(frame_a, frame_b, np.zeros((0, 2)), np.zeros((0, 2)))
    d = hamming_matrix(a.descriptors, b.descriptors)
    best_b = np.argmin(d, axis=1)
    best_a = np.argmin(d, axis=0)
    ok_a = _ratio_ok(d, ratio)
    ok_b = _ratio_ok(d.T, ratio)
    ia = np.arange(d.shape[0])
    sel = (best_a[best_b] == ia) & ok_a & ok_b[best_b]
    ia = ia[sel]
    ib = best_b[sel]
    return MatchSet(frame_a, frame_b, a.points[ia], b.points[ib])


def load_matches(path, n_frames: int | None = None) -> list[MatchSet]:
    """Parse a match CSV into match sets grouped by ``(frame_a, frame_b)``.

    Groups keep the order in which they first appear. With ``n_frames`` set,
    frame indices outside ``[0, n_frames)`` raise :class:`IndexOutOfRange`.
    """
    path = Path(path)
    groups: dict[tuple[int, int], list[list[float]]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ParseError("missing header", path, 1)
        if [h.strip() for h in header] != MATCH_HEADER:
            raise ParseError(f"expected header {','.join(MATCH_HEADER)}", path, 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 6:
                raise ParseError(f"row has {len(row)} fields, expected 6: {','.join(row)}", path, line)
            try:
                fa, fb = int(row[0]), int(row[1])
                coords = [float(c) for c in row[2:]]
            except ValueError:
                raise ParseError(f"non-numeric field in row: {','.join(row)}", path, line) from None
            if not all(np.isfinite(coords)):
                raise ParseError("non-finite coordinate", path, line)
            if fa == fb:
                raise ParseError(f"frame_a equals frame_b ({fa})", path, line)
            if n_frames is not None:
                for fi in (fa, fb):
                    if not 0 <= fi < n_frames:
                        raise IndexOutOfRange(f"{path}:{line}: frame {fi} outside [0, {n_frames})")
            groups.setdefault((fa, fb), []).append(coords)
    out = []
    for (fa, fb), rows in groups.items():
        arr = np.array(rows, dtype=float)
        out.append(MatchSet(fa, fb, arr[:, 0:2], arr[:, 2:4]))
    return out


def save_matches(path, matchsets: Sequence[MatchSet]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MATCH_HEADER)
        for ms in matchsets:
            for (xa, ya), (xb, yb) in zip(ms.src, ms.dst):
                w.writerow([ms.frame_a, ms.frame_b, repr(float(xa)), repr(float(ya)),
                            repr(float(xb)), repr(float(yb))])
