"""End-to-end orchestration: match -> ransac -> trajectory -> chunk -> compensate -> sample."""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .chunking import (
    ChunkPartition,
    build_trajectory,
    estimate_homographies,
    kmeans_chunks,
    resolve_reference,
    save_chunk_manifest,
    save_homographies,
    save_trajectory,
)
from .compensation import (
    CompensatedChunk,
    chunk_reference,
    compensate_chunk,
    make_sampling_plan,
    rebase_homographies,
    save_plan,
)
from .config import PipelineConfig
from .errors import ChunkTooShort, EgoChunkError, StageError
from .features import MatchSet, extract, load_matches, match, save_matches
from .geometry import Homography
from .io import load_frames, save_frames
from .plot import write_plots

logger = logging.getLogger(__name__)


def match_to_reference(frames: Sequence[np.ndarray], reference_index: int,
                       cfg: PipelineConfig) -> list[MatchSet]:
    """Detect, describe and match every frame against the reference frame."""
    fcfg = cfg["features"]
    feats = [extract(f, fcfg["max_keypoints"]) for f in frames]
    ref = feats[reference_index]
    return [
        match(feats[i], ref, fcfg["ratio"], frame_a=i, frame_b=reference_index)
        for i in range(len(frames)) if i != reference_index
    ]


def matches_from_file(path, n_frames: int, reference_index: int) -> list[MatchSet]:
    sets = load_matches(path, n_frames)
    other = sorted({ms.frame_b for ms in sets} - {reference_index})
    if other:
        raise ValueError(f"{path}: matches target frames {other}, but the reference frame is {reference_index}")
    return sets


def compensate_all(frames: Sequence[np.ndarray], homographies: Sequence[Homography],
                   partition: ChunkPartition, cfg: PipelineConfig) -> list[CompensatedChunk]:
    ccfg = cfg["compensation"]
    out = []
    for cid, (s, e) in enumerate(partition.boundaries):
        ref = chunk_reference(s, e, ccfg["chunk_reference"])
        rebased = rebase_homographies(homographies, (s, e), ref)
        out.append(compensate_chunk(frames[s:e], rebased, ref, cid, s, ccfg["fill"]))
    return out


def write_compensated(directory, chunks: Sequence[CompensatedChunk], names: Sequence[str]) -> list[Path]:
    directory = Path(directory)
    dirs = []
    for ch in chunks:
        d = directory / f"chunk_{ch.chunk_id:02d}"
        chunk_names = [names[i] for i in ch.frame_indices]
        save_frames(d, ch.frames, chunk_names, ch.validity_masks, extra={
            "chunk_id": ch.chunk_id,
            "reference_index": ch.reference_index,
            "frame_indices": ch.frame_indices,
        })
        dirs.append(d)
    return dirs


class _Run:
    def __init__(self, cfg: PipelineConfig, input_dir: Path, output_dir: Path):
        self.manifest = {
            "version": __version__,
            "config_hash": cfg.hash(),
            "input_dir": str(input_dir),
            "started_at": datetime.now(timezone.utc).isoformat(),
            "status": "running",
            "stages": [],
            "outputs": [],
            "warnings": [],
            "failed_frames": [],
        }
        self.output_dir = output_dir

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except (EgoChunkError, ValueError, OSError) as exc:
            raise StageError(name, exc) from exc
        finally:
            self.manifest["stages"].append({"name": name, "seconds": round(time.perf_counter() - t0, 6)})

    def output(self, path: Path):
        self.manifest["outputs"].append(str(Path(path).relative_to(self.output_dir)))

    def write(self):
        self.manifest["finished_at"] = datetime.now(timezone.utc).isoformat()
        path = self.output_dir / "run_manifest.json"
        path.write_text(json.dumps(self.manifest, indent=1) + "\n", encoding="utf-8")


def run_pipeline(cfg: PipelineConfig, input_dir, output_dir) -> dict:
    """Run every stage, writing each intermediate artifact under ``output_dir``.

    Returns the run manifest. On failure the manifest (with the error) and
    all outputs produced so far are kept, and :class:`StageError` is raised.
    """
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, input_dir, output_dir)
    (output_dir / "config.toml").write_text(cfg.to_toml(), encoding="utf-8")
    run.output(output_dir / "config.toml")
    try:
        with run.stage("load"):
            names, frames, size = load_frames(input_dir)
            n = len(frames)
            ref = resolve_reference(cfg["trajectory"]["reference"], n)
            run.manifest.update(n_frames=n, width=size[0], height=size[1], reference_index=ref)

        with run.stage("match"):
            src = cfg["features"]["matches"]
            if src:
                path = Path(src)
                if not path.is_absolute() and not path.exists():
                    path = input_dir / path
                sets = matches_from_file(path, n, ref)
            else:
                sets = match_to_reference(frames, ref, cfg)
            save_matches(output_dir / "matches.csv", sets)
            run.output(output_dir / "matches.csv")

        with run.stage("ransac"):
            homs, failed = estimate_homographies({ms.frame_a: ms for ms in sets}, n, ref, cfg.ransac())
            save_homographies(output_dir / "homographies.json", homs, ref, failed)
            run.output(output_dir / "homographies.json")
            run.manifest["failed_frames"] = failed

        with run.stage("trajectory"):
            traj = build_trajectory(homs, size, ref)
            save_trajectory(output_dir / "trajectory.csv", traj)
            run.output(output_dir / "trajectory.csv")

        with run.stage("chunk"):
            c = cfg["chunking"]
            part = kmeans_chunks(traj, c["k"], c["seed"], c["max_iter"], c["standardize"], c["n_init"])
            save_chunk_manifest(output_dir / "chunks.json", part, ref, failed)
            run.output(output_dir / "chunks.json")

        with run.stage("compensate"):
            chunks = compensate_all(frames, homs, part, cfg)
            for d in write_compensated(output_dir / "compensated", chunks, names):
                run.output(d)

        with run.stage("sample"):
            s = cfg["sampling"]
            modes = ["train", "inference"] if s["mode"] == "both" else [s["mode"]]
            for mode in modes:
                try:
                    plan = make_sampling_plan(part, mode, s["seed"], size, cfg.sampling())
                except ChunkTooShort as exc:
                    if s["mode"] != "both":
                        raise
                    run.manifest["warnings"].append(f"{mode} plan skipped: {exc}")
                    continue
                save_plan(output_dir / f"plan_{mode}.json", plan)
                run.output(output_dir / f"plan_{mode}.json")

        with run.stage("plot"):
            for p in write_plots(output_dir / "plots", traj, part):
                run.output(p)
    except StageError as exc:
        run.manifest["status"] = "failed"
        run.manifest["error"] = {"stage": exc.stage, "type": type(exc.cause).__name__, "message": str(exc.cause)}
        run.write()
        raise
    run.manifest["status"] = "ok"
    run.write()
    return run.manifest
