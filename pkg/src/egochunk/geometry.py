"""Planar projective geometry: homographies, projection, composition and DLT fitting.

Convention: a homography attached to a frame maps that frame's pixel
coordinates (src) into the reference frame's pixel coordinates (dst).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DegenerateProjection,
    DegenerateResult,
    SingularMatrix,
    TooFewMatches,
)

DET_EPS = 1e-12
SCALE_EPS = 1e-9
W_EPS = 1e-12
# relative gap between the two smallest singular values of the DLT system
TIE_RTOL = 1e-10
# ratio of singular values of the centred point cloud below which it is a line
COLLINEAR_RTOL = 1e-8


class Point2(NamedTuple):
    x: float
    y: float


class Correspondence(NamedTuple):
    src: Point2
    dst: Point2


def canonical_scale(m) -> np.ndarray:
    """Return ``m`` rescaled to the canonical representative of its projective class.

    Lower-right entry 1 when it is not tiny, otherwise unit Frobenius norm with
    the first nonzero entry positive.
    """
    m = np.array(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DegenerateResult("homography has non-finite entries")
    if abs(m[2, 2]) > SCALE_EPS:
        return m / m[2, 2]
    norm = np.linalg.norm(m)
    if norm == 0.0:
        raise DegenerateResult("zero matrix is not a homography")
    m = m / norm
    flat = m.ravel()
    first = flat[np.flatnonzero(flat)[0]]
    return m if first > 0 else -m


@dataclass(frozen=True, eq=False)
class Homography:
    """Invertible 3x3 projective transform stored in canonical scale."""

    m: np.ndarray

    def __post_init__(self):
        m = canonical_scale(self.m)
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise DegenerateResult(f"homography is singular (det={np.linalg.det(m):.3e})")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    def allclose(self, other: "Homography", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.m, other.m, rtol=0.0, atol=atol))

    def to_json(self) -> dict:
        return {"m": self.m.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Homography":
        return cls(np.asarray(obj["m"], dtype=float))

    def __repr__(self):
        rows = ", ".join("[" + ", ".join(f"{v:.6g}" for v in row) + "]" for row in self.m)
        return f"Homography([{rows}])"


def project(h: Homography, p) -> Point2:
    """Map a single point through ``h``."""
    x, y = float(p[0]), float(p[1])
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError(f"point must be finite, got ({x}, {y})")
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) < W_EPS:
        raise DegenerateProjection(f"point ({x}, {y}) maps to the line at infinity")
    return Point2(
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w,
    )


def project_points(h: Homography | np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Vectorised :func:`project` for an ``(N, 2)`` array. Raises on any degenerate point."""
    m = h.m if isinstance(h, Homography) else np.asarray(h, dtype=float)
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    w = pts @ m[2, :2] + m[2, 2]
    if np.any(np.abs(w) < W_EPS):
        raise DegenerateProjection("at least one point maps to the line at infinity")
    xy = pts @ m[:2, :2].T + m[:2, 2]
    return xy / w[:, None]


def compose(a: Homography, b: Homography) -> Homography:
    """Homography equivalent to applying ``b`` first, then ``a``."""
    try:
        return Homography(a.m @ b.m)
    except DegenerateResult as exc:
        raise DegenerateResult(f"composition is degenerate: {exc}") from None


def inverse(h: Homography) -> Homography:
    try:
        inv = np.linalg.inv(h.m)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from None
    try:
        return Homography(inv)
    except DegenerateResult as exc:
        raise SingularMatrix(str(exc)) from None


def hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Similarity moving the centroid to the origin with mean distance sqrt(2).

    Returns the normalized points and the 3x3 transform ``T`` with ``T @ [p, 1]``.
    """
    pts = np.asarray(pts, dtype=float)
    c = pts.mean(axis=0)
    d = np.linalg.norm(pts - c, axis=1).mean()
    if d < 1e-12:
        raise DegenerateConfiguration("points are coincident")
    s = np.sqrt(2.0) / d
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return (pts - c) * s, T


def _check_spread(pts_n: np.ndarray, which: str):
    sv = np.linalg.svd(pts_n, compute_uv=False)
    if sv[1] <= COLLINEAR_RTOL * sv[0]:
        raise DegenerateConfiguration(f"{which} points are collinear")


def _dlt_system(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    n = len(src)
    A = np.zeros((2 * n, 9))
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    one = np.ones(n)
    A[0::2, 0:3] = np.column_stack([x, y, one])
    A[0::2, 6:9] = -u[:, None] * np.column_stack([x, y, one])
    A[1::2, 3:6] = np.column_stack([x, y, one])
    A[1::2, 6:9] = -v[:, None] * np.column_stack([x, y, one])
    return A


def fit_dlt(src, dst) -> Homography:
    """Least-squares homography mapping ``src`` onto ``dst`` (normalized DLT).

    Args:
        src: ``(N, 2)`` source points, N >= 4.
        dst: ``(N, 2)`` destination points.

    Raises:
        TooFewMatches: fewer than 4 correspondences.
        DegenerateConfiguration: coincident/collinear points, or a solution
            that is not unique or not invertible.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError(f"src and dst differ in length: {len(src)} vs {len(dst)}")
    if len(src) < 4:
        raise TooFewMatches(f"need at least 4 correspondences, got {len(src)}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("correspondences must be finite")

    src_n, T_src = hartley_normalize(src)
    dst_n, T_dst = hartley_normalize(dst)
    _check_spread(src_n, "source")
    _check_spread(dst_n, "destination")

    A = _dlt_system(src_n, dst_n)
    _, s, vt = np.linalg.svd(A)
    if len(s) < 9:
        s = np.concatenate([s, np.zeros(9 - len(s))])
    if s[7] - s[8] <= TIE_RTOL * s[0]:
        raise DegenerateConfiguration("DLT null space is not one-dimensional")
    Hn = vt[-1].reshape(3, 3)

    sv = np.linalg.svd(Hn, compute_uv=False)
    if sv[2] <= 1e-10 * sv[0]:
        raise DegenerateConfiguration("fitted homography is rank deficient")
    m = np.linalg.inv(T_dst) @ Hn @ T_src
    try:
        return Homography(m)
    except DegenerateResult as exc:
        raise DegenerateConfiguration(str(exc)) from None


def fit_dlt_matches(matches: Sequence[Correspondence]) -> Homography:
    """:func:`fit_dlt` on a list of :class:`Correspondence`."""
    if len(matches) == 0:
        raise TooFewMatches("no correspondences")
    src = np.array([c.src for c in matches], dtype=float)
    dst = np.array([c.dst for c in matches], dtype=float)
    return fit_dlt(src, dst)


def reprojection_errors(h: Homography, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Euclidean distance between ``h(src)`` and ``dst``; inf where projection degenerates."""
    m = h.m
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    w = src @ m[2, :2] + m[2, 2]
    ok = np.abs(w) >= W_EPS
    out = np.full(len(src), np.inf)
    xy = (src[ok] @ m[:2, :2].T + m[:2, 2]) / w[ok, None]
    out[ok] = np.linalg.norm(xy - dst[ok], axis=1)
    return out
