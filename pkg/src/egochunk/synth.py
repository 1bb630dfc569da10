"""Synthetic sequences with known camera motion, plus toy score files.

A sequence is cut from a procedural canvas: frame ``i`` shows the canvas
through the motion homography ``M_i`` (frame-``i`` pixels -> frame-0 pixels),
so every frame-to-reference homography is known exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .compensation import bilinear_sample
from .features import MatchSet, save_matches
from .geometry import Homography, compose, inverse, project_points
from .head import build_prior, save_labels, save_prior, save_probabilities
from .io import load_image, save_frames

TEXTURES = ("mosaic", "checker", "noise")


@dataclass
class SyntheticSpec:
    width: int = 320
    height: int = 240
    n_frames: int = 20
    texture: str = "mosaic"  # built-in id or a path to an image file
    # motion per frame
    dx: float = 4.0
    dy: float = 0.0
    rotation_deg: float = 0.0
    scale: float = 0.0
    perspective: tuple[float, float] = (0.0, 0.0)
    profile: str = "linear"  # or "there_and_back"
    # match corruption
    match_grid: int = 10
    noise_sigma: float = 0.0
    outlier_rate: float = 0.0
    reference: str = "last"
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("a synthetic sequence needs at least 2 frames")
        if self.width < 8 or self.height < 8:
            raise ValueError("frames must be at least 8x8")
        if self.profile not in ("linear", "there_and_back"):
            raise ValueError(f"unknown motion profile {self.profile!r}")
        vals = [self.dx, self.dy, self.rotation_deg, self.scale, *self.perspective, self.noise_sigma]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("motion parameters must be finite")
        if not 0 <= self.outlier_rate <= 1:
            raise ValueError("outlier_rate must lie in [0, 1]")
        self.perspective = tuple(float(v) for v in self.perspective)


def motion_amount(spec: SyntheticSpec, i: int) -> float:
    if spec.profile == "linear":
        return float(i)
    half = (spec.n_frames - 1) / 2
    return float(i) if i <= half else float(spec.n_frames - 1 - i)


def motion_homography(spec: SyntheticSpec, i: int) -> Homography:
    """Frame-``i`` pixels -> frame-0 pixels."""
    s = motion_amount(spec, i)
    cx, cy = spec.width / 2, spec.height / 2
    th = math.radians(spec.rotation_deg * s)
    sc = 1.0 + spec.scale * s
    c, sn = sc * math.cos(th), sc * math.sin(th)
    # rotate/scale about the frame centre, then translate
    A = np.array([[c, -sn, cx - c * cx + sn * cy + spec.dx * s],
                  [sn, c, cy - sn * cx - c * cy + spec.dy * s],
                  [0.0, 0.0, 1.0]])
    px, py = spec.perspective
    if px or py:
        P = np.array([[1.0, 0, 0], [0, 1.0, 0], [px * s, py * s, 1.0]])
        to_c = np.array([[1.0, 0, -cx], [0, 1.0, -cy], [0, 0, 1.0]])
        A = A @ np.linalg.inv(to_c) @ P @ to_c
    return Homography(A)


def make_texture(kind: str, width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """Procedural gray texture in [0, 255]."""
    if kind == "checker":
        ys, xs = np.mgrid[0:height, 0:width]
        base = np.where(((xs // 16) + (ys // 16)) % 2 == 0, 60.0, 190.0)
        noise = ndimage.gaussian_filter(rng.normal(size=(height, width)), 2.0)
        return np.clip(base + 25 * noise / (noise.std() + 1e-12), 0, 255)
    if kind == "noise":
        noise = ndimage.gaussian_filter(rng.normal(size=(height, width)), 2.0)
        return np.clip(128 + 50 * noise / (noise.std() + 1e-12), 0, 255)
    if kind == "mosaic":
        cell = 12
        levels = rng.uniform(30, 225, size=(height // cell + 2, width // cell + 2))
        ys, xs = np.mgrid[0:height, 0:width]
        base = levels[ys // cell, xs // cell]
        noise = ndimage.gaussian_filter(rng.normal(size=(height, width)), 2.0)
        return np.clip(base + 10 * noise / (noise.std() + 1e-12), 0, 255)
    raise ValueError(f"unknown texture {kind!r}; built-ins are {TEXTURES}")


@dataclass
class SyntheticSequence:
    spec: SyntheticSpec
    frames: list[np.ndarray]
    motions: list[Homography]  # frame i -> frame 0
    to_reference: list[Homography]  # frame i -> reference frame
    reference_index: int
    matches: list[MatchSet]


def _reference_index(spec: SyntheticSpec) -> int:
    if spec.reference == "first":
        return 0
    if spec.reference == "last":
        return spec.n_frames - 1
    return int(spec.reference)


def generate(spec: SyntheticSpec) -> SyntheticSequence:
    rng = np.random.default_rng(spec.seed)
    w, h = spec.width, spec.height
    motions = [motion_homography(spec, i) for i in range(spec.n_frames)]
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=float)
    reach = np.vstack([project_points(m, corners) for m in motions])
    lo = np.floor(reach.min(axis=0)) - 2
    hi = np.ceil(reach.max(axis=0)) + 2
    cw, ch = int(hi[0] - lo[0]) + 1, int(hi[1] - lo[1]) + 1

    if spec.texture in TEXTURES:
        canvas = make_texture(spec.texture, cw, ch, rng)
    else:
        src = load_image(spec.texture)
        if src.ndim == 3:
            src = src @ np.array([0.299, 0.587, 0.114])
        reps = (math.ceil(ch / src.shape[0]), math.ceil(cw / src.shape[1]))
        canvas = np.tile(src, reps)[:ch, :cw]

    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    grid = np.column_stack([xs.ravel(), ys.ravel()])
    frames = []
    for m in motions:
        p = project_points(m, grid) - lo
        frames.append(bilinear_sample(canvas, p[:, 0], p[:, 1]).reshape(h, w))

    ref = _reference_index(spec)
    to_ref_base = inverse(motions[ref])
    to_reference = [Homography.identity() if i == ref else compose(to_ref_base, motions[i])
                    for i in range(spec.n_frames)]

    g = spec.match_grid
    gx, gy = np.meshgrid(np.linspace(0.1 * w, 0.9 * w, g), np.linspace(0.1 * h, 0.9 * h, g))
    src_pts = np.column_stack([gx.ravel(), gy.ravel()])
    matchsets = []
    for i in range(spec.n_frames):
        if i == ref:
            continue
        dst = project_points(to_reference[i], src_pts)
        src = src_pts.copy()
        if spec.noise_sigma > 0:
            dst = dst + rng.normal(0, spec.noise_sigma, dst.shape)
        if spec.outlier_rate > 0:
            bad = rng.random(len(dst)) < spec.outlier_rate
            dst[bad] = rng.uniform([0, 0], [w, h], size=(int(bad.sum()), 2))
        matchsets.append(MatchSet(i, ref, src, dst))
    return SyntheticSequence(spec, frames, motions, to_reference, ref, matchsets)


def write_sequence(seq: SyntheticSequence, directory) -> Path:
    """Frames + manifest, ``ground_truth.json`` and the exact ``matches.csv``."""
    directory = Path(directory)
    save_frames(directory, seq.frames)
    doc = {
        "reference_index": seq.reference_index,
        "width": seq.spec.width,
        "height": seq.spec.height,
        "spec": asdict(seq.spec),
        "homographies": [m.to_json() for m in seq.motions],
        "to_reference": [m.to_json() for m in seq.to_reference],
    }
    (directory / "ground_truth.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    save_matches(directory / "matches.csv", seq.matches)
    return directory


def read_ground_truth(directory) -> dict:
    doc = json.loads((Path(directory) / "ground_truth.json").read_text(encoding="utf-8"))
    doc["homographies"] = [Homography.from_json(o) for o in doc["homographies"]]
    doc["to_reference"] = [Homography.from_json(o) for o in doc["to_reference"]]
    return doc


def generate_scores(n_samples: int = 50, n_verbs: int = 8, n_nouns: int = 10, n_views: int = 4,
                    n_pairs: int = 20, confidence: float = 2.0, seed: int = 0):
    """Toy per-view softmax scores whose argmax tends towards the true label.

    Returns ``(verb_probs, noun_probs, labels, train_labels)``.
    """
    rng = np.random.default_rng(seed)
    all_pairs = [(v, n) for v in range(n_verbs) for n in range(n_nouns)]
    pick = rng.choice(len(all_pairs), size=min(n_pairs, len(all_pairs)), replace=False)
    pairs = [all_pairs[i] for i in sorted(pick)]
    train = [pairs[i] for i in rng.integers(len(pairs), size=4 * n_samples)]
    train += pairs
    labels, vp, np_ = [], {}, {}
    for s in range(n_samples):
        v, n = pairs[int(rng.integers(len(pairs)))]
        sid = f"s{s:04d}"
        labels.append((sid, v, n))
        vp[sid], np_[sid] = [], []
        for _ in range(n_views):
            for logits_len, truth, store in ((n_verbs, v, vp), (n_nouns, n, np_)):
                z = rng.normal(size=logits_len)
                z[truth] += confidence
                e = np.exp(z - z.max())
                store[sid].append(e / e.sum())
    return vp, np_, labels, train


def write_scores(directory, n_samples=50, n_verbs=8, n_nouns=10, n_views=4, n_pairs=20,
                 confidence=2.0, seed=0) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    vp, np_, labels, train = generate_scores(n_samples, n_verbs, n_nouns, n_views, n_pairs, confidence, seed)
    save_probabilities(directory / "verb_probs.csv", vp)
    save_probabilities(directory / "noun_probs.csv", np_)
    save_labels(directory / "labels.csv", labels)
    save_labels(directory / "train_labels.csv", [(f"t{i:05d}", v, n) for i, (v, n) in enumerate(train)])
    save_prior(directory / "prior.csv", build_prior(train, n_verbs, n_nouns))
    return directory
