"""Per-chunk motion compensation and the train/inference sampling schedules."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .chunking import ChunkPartition
from .errors import ChunkTooShort, EgoChunkError, ParseError, SingularMatrix
from .geometry import Homography, compose, inverse

BOUND_EPS = 1e-9


def chunk_reference(start: int, end: int, policy: str = "middle") -> int:
    """Frame of ``[start, end)`` that the chunk is warped onto."""
    if policy == "middle":
        return start + (end - start) // 2
    if policy == "first":
        return start
    if policy == "last":
        return end - 1
    raise ValueError(f"unknown chunk reference policy {policy!r}")


def rebase_homographies(global_homs: Sequence[Homography], chunk: tuple[int, int],
                        chunk_ref: int) -> list[Homography]:
    """Re-express frame->global-reference homographies relative to ``chunk_ref``.

    Returns one homography per frame in ``chunk``; the entry for ``chunk_ref``
    is exactly the identity.
    """
    start, end = chunk
    if not start <= chunk_ref < end:
        raise ValueError(f"chunk reference {chunk_ref} outside chunk [{start}, {end})")
    to_chunk = inverse(global_homs[chunk_ref])
    out = []
    for i in range(start, end):
        if i == chunk_ref:
            out.append(Homography.identity())
        else:
            out.append(compose(to_chunk, global_homs[i]))
    return out


def bilinear_sample(image: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample ``image`` at float coordinates already clipped to the valid rectangle."""
    h, w = image.shape[:2]
    x0 = np.clip(np.floor(sx).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(sy).astype(np.intp), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bottom = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def warp_frame(image, h: Homography, out_size: tuple[int, int] | None = None,
               fill: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-warp ``image`` into the reference view described by ``h``.

    Each output pixel ``q`` takes the bilinear sample of ``image`` at
    ``h^-1(q)``. Samples falling outside the source rectangle get ``fill``
    and a ``False`` mask entry.

    Args:
        image: ``(H, W)`` or ``(H, W, C)`` raster.
        h: homography mapping source pixels into output pixels.
        out_size: ``(width, height)`` of the output; defaults to the input size.
        fill: value for pixels without a source sample.

    Returns:
        The warped float64 raster and its boolean validity mask.
    """
    img = np.asarray(image, dtype=float)
    hin, win = img.shape[:2]
    wout, hout = out_size if out_size is not None else (win, hin)
    hinv = inverse(h).m

    ys, xs = np.mgrid[0:hout, 0:wout].astype(float)
    den = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    ok = np.abs(den) > 1e-12
    den = np.where(ok, den, 1.0)
    sx = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / den
    sy = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / den

    mask = ok & (sx >= -BOUND_EPS) & (sx <= win - 1 + BOUND_EPS) \
        & (sy >= -BOUND_EPS) & (sy <= hin - 1 + BOUND_EPS)
    sx = np.clip(np.where(mask, sx, 0.0), 0, win - 1)
    sy = np.clip(np.where(mask, sy, 0.0), 0, hin - 1)

    out = bilinear_sample(img, sx, sy)
    m = mask[..., None] if out.ndim == 3 else mask
    out = np.where(m, out, fill)
    return out, mask


@dataclass
class CompensatedChunk:
    chunk_id: int
    reference_index: int
    frame_indices: list[int]
    frames: list[np.ndarray]
    validity_masks: list[np.ndarray]

    def valid_intersection(self) -> np.ndarray:
        return np.logical_and.reduce(self.validity_masks)


def compensate_chunk(frames: Sequence[np.ndarray], homographies: Sequence[Homography],
                     chunk_ref: int, chunk_id: int = 0, first_index: int = 0,
                     fill: float = 0.0) -> CompensatedChunk:
    """Warp every frame of a chunk onto its reference frame.

    ``frames`` and ``homographies`` cover the chunk in order; ``chunk_ref``
    and ``first_index`` are absolute frame indices.
    """
    if len(frames) != len(homographies):
        raise ValueError(f"{len(frames)} frames but {len(homographies)} homographies")
    pos = chunk_ref - first_index
    if not 0 <= pos < len(frames):
        raise ValueError(f"chunk reference {chunk_ref} not among the chunk's frames")
    ref = np.asarray(frames[pos], dtype=float)
    size = (ref.shape[1], ref.shape[0])
    warped, masks = [], []
    for j, (img, hom) in enumerate(zip(frames, homographies)):
        if j == pos:
            warped.append(ref.copy())
            masks.append(np.ones(ref.shape[:2], dtype=bool))
            continue
        if np.shape(img)[:2] != ref.shape[:2]:
            raise ValueError(f"frame {first_index + j} has shape {np.shape(img)}, reference {ref.shape}")
        try:
            out, mask = warp_frame(img, hom, size, fill)
        except SingularMatrix as exc:
            raise SingularMatrix(f"frame {first_index + j}: {exc}") from None
        warped.append(out)
        masks.append(mask)
    indices = list(range(first_index, first_index + len(frames)))
    return CompensatedChunk(chunk_id, chunk_ref, indices, warped, masks)


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None, peak: float = 255.0) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = (a - b) ** 2
    if mask is not None:
        diff = diff[mask]
    mse = float(diff.mean()) if diff.size else 0.0
    return math.inf if mse == 0 else 10.0 * math.log10(peak**2 / mse)


def temporal_variance(frames: Sequence[np.ndarray], mask: np.ndarray) -> float:
    """Mean over masked pixels of the per-pixel variance across frames."""
    stack = np.stack([np.asarray(f, dtype=float) for f in frames])
    var = stack.var(axis=0)
    if var.ndim == 3:
        var = var.mean(axis=2)
    return float(var[mask].mean())


# ------------------------------------------------------------------ sampling

@dataclass
class SamplingSettings:
    frames_per_chunk: int = 6
    clips_per_chunk: int = 5
    crops_per_clip: int = 5
    resize_short: int = 256
    crop: int = 224
    flip_prob: float = 0.5

    def __post_init__(self):
        if self.frames_per_chunk < 1 or self.clips_per_chunk < 1:
            raise ValueError("frames_per_chunk and clips_per_chunk must be >= 1")
        if self.crops_per_clip not in (1, 5):
            raise ValueError("crops_per_clip must be 1 (centre) or 5 (corners + centre)")
        if not 0 < self.crop <= self.resize_short:
            raise ValueError("crop must lie in (0, resize_short]")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must lie in [0, 1]")


def scaled_size(frame_size: tuple[int, int], resize_short: int) -> tuple[int, int]:
    """Size after resizing the shorter side to ``resize_short`` (aspect kept)."""
    w, h = frame_size
    if w <= h:
        return resize_short, int(math.floor(h * resize_short / w + 0.5))
    return int(math.floor(w * resize_short / h + 0.5)), resize_short


def five_crops(size: tuple[int, int], crop: int) -> list[tuple[int, int, int, int]]:
    """Four corner crops then the centre crop, as ``(x, y, w, h)``."""
    w, h = size
    return [
        (0, 0, crop, crop),
        (w - crop, 0, crop, crop),
        (0, h - crop, crop, crop),
        (w - crop, h - crop, crop, crop),
        ((w - crop) // 2, (h - crop) // 2, crop, crop),
    ]


@dataclass
class TrainSelection:
    chunk_id: int
    start: int
    frames: list[int]
    crop: tuple[int, int, int, int]
    flip: bool


@dataclass
class InferenceSelection:
    chunk_id: int
    clips: list[list[int]]
    crops: list[tuple[int, int, int, int]]

    @property
    def views(self) -> list[tuple[list[int], tuple[int, int, int, int]]]:
        """Every (clip, crop) pair; each crop applies to all frames of its clip."""
        return [(clip, crop) for clip in self.clips for crop in self.crops]


@dataclass
class SamplingPlan:
    mode: str
    seed: int
    frame_size: tuple[int, int]
    scaled_size: tuple[int, int]
    boundaries: list[tuple[int, int]]
    settings: SamplingSettings = field(default_factory=SamplingSettings)
    train: list[TrainSelection] = field(default_factory=list)
    inference: list[InferenceSelection] = field(default_factory=list)

    @property
    def total_frames(self) -> int:
        return sum(len(sel.frames) for sel in self.train)

    @property
    def total_views(self) -> int:
        return sum(len(sel.views) for sel in self.inference)

    def to_json(self) -> dict:
        s = self.settings
        doc = {
            "mode": self.mode,
            "seed": self.seed,
            "frame_size": list(self.frame_size),
            "scaled_size": list(self.scaled_size),
            "resize_short": s.resize_short,
            "crop_size": s.crop,
            "boundaries": [list(b) for b in self.boundaries],
        }
        if self.mode == "train":
            doc["frames_per_chunk"] = s.frames_per_chunk
            doc["flip_prob"] = s.flip_prob
            doc["total_frames"] = self.total_frames
            doc["chunks"] = [
                {"chunk_id": c.chunk_id, "start": c.start, "frames": c.frames,
                 "crop": list(c.crop), "flip": c.flip}
                for c in self.train
            ]
        else:
            doc["clip_length"] = s.frames_per_chunk
            doc["total_views"] = self.total_views
            doc["chunks"] = [
                {"chunk_id": c.chunk_id, "clips": c.clips, "crops": [list(r) for r in c.crops],
                 "n_views": len(c.views)}
                for c in self.inference
            ]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SamplingPlan":
        mode = doc["mode"]
        per = doc.get("frames_per_chunk", doc.get("clip_length", 6))
        settings = SamplingSettings(frames_per_chunk=per, resize_short=doc["resize_short"],
                                    crop=doc["crop_size"], flip_prob=doc.get("flip_prob", 0.5))
        plan = cls(mode, doc["seed"], tuple(doc["frame_size"]), tuple(doc["scaled_size"]),
                   [tuple(b) for b in doc["boundaries"]], settings)
        for c in doc["chunks"]:
            if mode == "train":
                plan.train.append(TrainSelection(c["chunk_id"], c["start"], list(c["frames"]),
                                                 tuple(c["crop"]), bool(c["flip"])))
            else:
                plan.inference.append(InferenceSelection(c["chunk_id"], [list(x) for x in c["clips"]],
                                                         [tuple(r) for r in c["crops"]]))
        if plan.inference:
            plan.settings.clips_per_chunk = len(plan.inference[0].clips)
            plan.settings.crops_per_clip = len(plan.inference[0].crops)
        return plan


def uniform_clip_starts(start: int, end: int, n_clips: int, clip_len: int) -> list[int]:
    span = max(end - start - clip_len, 0)
    if n_clips == 1:
        return [start + span // 2]
    return [start + int(math.floor(j * span / (n_clips - 1) + 0.5)) for j in range(n_clips)]


def make_sampling_plan(partition: ChunkPartition | Sequence[tuple[int, int]], mode: str,
                       seed: int = 0, frame_size: tuple[int, int] = (456, 256),
                       settings: SamplingSettings | None = None) -> SamplingPlan:
    """Frame/crop selections for training or multi-view inference.

    Train: per chunk, one seeded start with ``frames_per_chunk`` consecutive
    frames, one random square crop on the rescaled frame and a flip flag.
    Inference: per chunk, ``clips_per_chunk`` temporally uniform clips
    (indices clamp at the chunk end) times the five fixed crops.
    """
    settings = settings or SamplingSettings()
    bounds = list(partition.boundaries if isinstance(partition, ChunkPartition) else partition)
    size = scaled_size(frame_size, settings.resize_short)
    c = settings.crop
    plan = SamplingPlan(mode, seed, tuple(frame_size), size, [tuple(b) for b in bounds], settings)
    rng = np.random.default_rng(seed)
    L = settings.frames_per_chunk

    if mode == "train":
        for cid, (s, e) in enumerate(bounds):
            if e - s < L:
                raise ChunkTooShort(f"chunk {cid} [{s}, {e}) has {e - s} frames, need {L}")
            start = int(rng.integers(s, e - L + 1))
            x = int(rng.integers(0, size[0] - c + 1))
            y = int(rng.integers(0, size[1] - c + 1))
            flip = bool(rng.random() < settings.flip_prob)
            plan.train.append(TrainSelection(cid, start, list(range(start, start + L)), (x, y, c, c), flip))
    elif mode == "inference":
        crops = five_crops(size, c) if settings.crops_per_clip == 5 else [five_crops(size, c)[4]]
        for cid, (s, e) in enumerate(bounds):
            if e <= s:
                raise ChunkTooShort(f"chunk {cid} is empty")
            starts = uniform_clip_starts(s, e, settings.clips_per_chunk, L)
            clips = [[min(st + j, e - 1) for j in range(L)] for st in starts]
            plan.inference.append(InferenceSelection(cid, clips, list(crops)))
    else:
        raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")
    return plan


def save_plan(path, plan: SamplingPlan) -> None:
    Path(path).write_text(json.dumps(plan.to_json(), indent=1) + "\n", encoding="utf-8")


def load_plan(path) -> SamplingPlan:
    path = Path(path)
    try:
        return SamplingPlan.from_json(json.loads(path.read_text(encoding="utf-8")))
    except (ValueError, KeyError, TypeError, EgoChunkError) as exc:
        raise ParseError(f"invalid sampling plan: {exc}", path) from None
