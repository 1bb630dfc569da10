"""Frame-directory I/O: lexicographically ordered PNGs plus ``manifest.json``."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ParseError

MANIFEST = "manifest.json"
MASK_SUFFIX = ".mask.png"


def frame_names(n: int) -> list[str]:
    return [f"frame_{i:05d}.png" for i in range(n)]


def mask_name(frame_name: str) -> str:
    stem = frame_name[:-4] if frame_name.lower().endswith(".png") else frame_name
    return stem + MASK_SUFFIX


def read_manifest(directory) -> dict:
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.exists():
        raise ParseError("missing frame manifest", path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if "frames" not in doc:
        doc["frames"] = sorted(p.name for p in directory.glob("*.png") if not p.name.endswith(MASK_SUFFIX))
    for key in ("width", "height"):
        if not isinstance(doc.get(key), int) or doc[key] < 1:
            raise ParseError(f"manifest field {key!r} must be a positive integer", path)
    if not doc["frames"]:
        raise ParseError("manifest lists no frames", path)
    return doc


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if "A" in im.mode or im.mode in ("P", "CMYK") else "L")
        return np.asarray(im, dtype=float)


def load_frames(directory) -> tuple[list[str], list[np.ndarray], tuple[int, int]]:
    """Read every frame listed in the manifest, checking it against the stated size."""
    directory = Path(directory)
    doc = read_manifest(directory)
    names = list(doc["frames"])
    size = (doc["width"], doc["height"])
    frames = []
    for name in names:
        path = directory / name
        if not path.exists():
            raise ParseError(f"frame {name!r} listed in manifest does not exist", directory / MANIFEST)
        img = load_image(path)
        if (img.shape[1], img.shape[0]) != size:
            raise ParseError(f"frame is {img.shape[1]}x{img.shape[0]}, manifest says {size[0]}x{size[1]}", path)
        frames.append(img)
    return names, frames, size


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(img, dtype=float) + 0.5), 0, 255).astype(np.uint8)


def save_image(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def save_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


def save_frames(directory, frames: Sequence[np.ndarray], names: Sequence[str] | None = None,
                masks: Sequence[np.ndarray] | None = None, extra: dict | None = None) -> list[str]:
    """Write frames (and optional masks) plus the manifest; returns the frame names."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = list(names) if names is not None else frame_names(len(frames))
    for i, (name, img) in enumerate(zip(names, frames)):
        save_image(directory / name, img)
        if masks is not None:
            save_mask(directory / mask_name(name), masks[i])
    h, w = np.shape(frames[0])[:2]
    doc = {"frames": names, "width": int(w), "height": int(h)}
    if extra:
        doc.update(extra)
    (directory / MANIFEST).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return names
