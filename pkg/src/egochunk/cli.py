"""``egochunk`` command line.

Exit codes: 0 success, 1 stage error, 2 configuration or parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .chunking import (
    build_trajectory,
    estimate_homographies,
    kmeans_chunks,
    load_chunk_manifest,
    load_homographies,
    load_trajectory,
    resolve_reference,
    save_chunk_manifest,
    save_homographies,
    save_trajectory,
)
from .compensation import make_sampling_plan, save_plan
from .config import PipelineConfig
from .errors import ConfigError, EgoChunkError, MissingSample, ParseError, StageError
from .features import load_matches, save_matches
from .head import (
    apply_prior,
    action_outer,
    build_prior,
    format_report,
    fuse_samples,
    load_labels,
    load_prior,
    load_probabilities,
    make_prediction,
    metrics_report,
    ranking,
    save_probabilities,
)
from .io import load_frames, read_manifest
from .pipeline import compensate_all, match_to_reference, run_pipeline, write_compensated
from .plot import write_plots
from .synth import SyntheticSpec, generate, write_scores, write_sequence

logger = logging.getLogger("egochunk")


def _config(args) -> PipelineConfig:
    return PipelineConfig.load(getattr(args, "config", None), getattr(args, "set", None) or ())


def cmd_synth(args) -> int:
    out = Path(args.output)
    if args.kind == "scores":
        write_scores(out, args.samples, args.verbs, args.nouns, args.views, args.pairs,
                     args.confidence, args.seed)
        print(f"wrote toy score files to {out}")
        return 0
    spec = SyntheticSpec(
        width=args.width, height=args.height, n_frames=args.frames, texture=args.texture,
        dx=args.dx, dy=args.dy, rotation_deg=args.rotation, scale=args.scale,
        perspective=tuple(args.perspective), profile=args.profile, match_grid=args.grid,
        noise_sigma=args.noise, outlier_rate=args.outliers, reference=args.reference, seed=args.seed,
    )
    write_sequence(generate(spec), out)
    print(f"wrote {spec.n_frames} frames, ground_truth.json and matches.csv to {out}")
    return 0


def cmd_match(args) -> int:
    cfg = _config(args)
    _, frames, _ = load_frames(args.input)
    ref = resolve_reference(cfg["trajectory"]["reference"], len(frames))
    sets = match_to_reference(frames, ref, cfg)
    save_matches(args.output, sets)
    print(f"{sum(len(s) for s in sets)} matches over {len(sets)} frame pairs -> {args.output}")
    return 0


def cmd_estimate(args) -> int:
    cfg = _config(args)
    doc = read_manifest(args.input)
    n, size = len(doc["frames"]), (doc["width"], doc["height"])
    ref = resolve_reference(cfg["trajectory"]["reference"], n)
    sets = load_matches(args.matches, n)
    homs, failed = estimate_homographies({s.frame_a: s for s in sets if s.frame_b == ref}, n, ref, cfg.ransac())
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_homographies(out / "homographies.json", homs, ref, failed)
    save_trajectory(out / "trajectory.csv", build_trajectory(homs, size, ref))
    print(f"homographies and trajectory -> {out} (failed frames: {failed or 'none'})")
    return 0


def cmd_chunk(args) -> int:
    cfg = _config(args)
    ref, failed = None, []
    if args.homographies:
        _, ref, failed = load_homographies(args.homographies)
    traj = load_trajectory(args.trajectory, ref)
    c = cfg["chunking"]
    part = kmeans_chunks(traj, c["k"], c["seed"], c["max_iter"], c["standardize"], c["n_init"])
    save_chunk_manifest(args.output, part, traj.reference_index, failed)
    print(f"boundaries {part.boundaries} -> {args.output}")
    return 0


def cmd_compensate(args) -> int:
    cfg = _config(args)
    names, frames, _ = load_frames(args.input)
    homs, _, _ = load_homographies(args.homographies)
    part, _, _ = load_chunk_manifest(args.chunks)
    if len(homs) != len(frames) or part.n_frames != len(frames):
        raise ParseError(f"{len(frames)} frames, {len(homs)} homographies, chunks cover {part.n_frames}")
    write_compensated(args.output, compensate_all(frames, homs, part, cfg), names)
    print(f"{part.k} compensated chunks -> {args.output}")
    return 0


def cmd_sample(args) -> int:
    cfg = _config(args)
    part, _, _ = load_chunk_manifest(args.chunks)
    if args.input:
        doc = read_manifest(args.input)
        size = (doc["width"], doc["height"])
    else:
        size = (args.width, args.height)
    mode = args.mode or cfg["sampling"]["mode"]
    if mode == "both":
        raise ConfigError("sample needs a single mode: --mode train or --mode inference")
    plan = make_sampling_plan(part, mode, cfg["sampling"]["seed"], size, cfg.sampling())
    save_plan(args.output, plan)
    total = plan.total_frames if mode == "train" else plan.total_views
    print(f"{mode} plan with {total} {'frames' if mode == 'train' else 'views'} -> {args.output}")
    return 0


def _load_scores(args, cfg):
    verb, _ = load_probabilities(args.verb_probs)
    noun, _ = load_probabilities(args.noun_probs)
    prior = None
    if not getattr(args, "no_prior", False):
        if args.prior:
            prior = load_prior(args.prior)
        elif args.train_labels:
            pairs = [(v, n) for _, v, n in load_labels(args.train_labels)]
            V = len(next(iter(verb.values()))[0])
            N = len(next(iter(noun.values()))[0])
            prior = build_prior(pairs, V, N, cfg["head"]["prior_mode"])
    return verb, noun, prior


def cmd_fuse(args) -> int:
    cfg = _config(args)
    verb, noun, prior = _load_scores(args, cfg)
    fused = fuse_samples(verb, noun, list(verb))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_probabilities(out / "verb_fused.csv", {s: [c.p_v] for s, c in fused.items()})
    save_probabilities(out / "noun_fused.csv", {s: [c.p_n] for s, c in fused.items()})
    with open(out / "actions_top.csv", "w", encoding="utf-8") as f:
        f.write("sample_id,rank,verb_id,noun_id,score\n")
        for sid, scores in fused.items():
            a = action_outer(scores)
            if prior is not None:
                a = apply_prior(a, prior)
            N = a.shape[1]
            for r, flat in enumerate(ranking(a.ravel())[:args.top]):
                f.write(f"{sid},{r + 1},{flat // N},{flat % N},{float(a.ravel()[flat])!r}\n")
    print(f"fused {len(fused)} samples -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    verb, noun, prior = _load_scores(args, cfg)
    labels = load_labels(args.labels)
    ids = [sid for sid, _, _ in labels]
    extra = (set(verb) | set(noun)) - set(ids)
    if extra:
        raise MissingSample(f"no labels for samples {sorted(extra)[:5]}")
    fused = fuse_samples(verb, noun, ids)
    preds = [make_prediction(fused[sid], v, n, prior) for sid, v, n in labels]
    report = metrics_report(preds)
    text = format_report(report)
    Path(args.output).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    if args.table:
        Path(args.table).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_plot(args) -> int:
    part, ref, _ = load_chunk_manifest(args.chunks) if args.chunks else (None, None, [])
    traj = load_trajectory(args.trajectory, ref)
    for p in write_plots(args.output, traj, part):
        print(p)
    return 0


def cmd_pipeline(args) -> int:
    overrides = list(args.set or ())
    if args.matches:
        overrides.append(f'features.matches="{Path(args.matches).as_posix()}"')
    cfg = PipelineConfig.load(args.config, overrides)
    manifest = run_pipeline(cfg, args.input, args.output)
    print(f"pipeline ok: {manifest['n_frames']} frames, failed frames {manifest['failed_frames'] or 'none'}"
          f" -> {args.output}")
    for w in manifest["warnings"]:
        print(f"warning: {w}")
    return 0


def _add_config(p):
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one setting")


def _add_scores(p):
    p.add_argument("--verb-probs", required=True)
    p.add_argument("--noun-probs", required=True)
    p.add_argument("--prior", help="V x N prior matrix CSV")
    p.add_argument("--train-labels", help="build a prior from these training labels")
    p.add_argument("--no-prior", action="store_true", help="skip prior masking")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egochunk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"egochunk {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sequence or toy score files")
    p.add_argument("output")
    p.add_argument("--kind", choices=["sequence", "scores"], default="sequence")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--texture", default="mosaic")
    p.add_argument("--dx", type=float, default=4.0)
    p.add_argument("--dy", type=float, default=0.0)
    p.add_argument("--rotation", type=float, default=0.0, help="degrees per frame")
    p.add_argument("--scale", type=float, default=0.0, help="relative zoom per frame")
    p.add_argument("--perspective", type=float, nargs=2, default=(0.0, 0.0))
    p.add_argument("--profile", choices=["linear", "there_and_back"], default="linear")
    p.add_argument("--grid", type=int, default=10, help="match grid size per axis")
    p.add_argument("--noise", type=float, default=0.0, help="match noise sigma (px)")
    p.add_argument("--outliers", type=float, default=0.0, help="match outlier rate")
    p.add_argument("--reference", default="last")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--verbs", type=int, default=8)
    p.add_argument("--nouns", type=int, default=10)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--confidence", type=float, default=2.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="detect and match every frame against the reference")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("estimate", help="RANSAC homographies and the midpoint trajectory")
    p.add_argument("input")
    p.add_argument("--matches", required=True)
    p.add_argument("-o", "--output", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("chunk", help="partition a trajectory into temporal chunks")
    p.add_argument("trajectory")
    p.add_argument("--homographies", help="homographies.json (reference and failed frames)")
    p.add_argument("-o", "--output", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_chunk)

    p = sub.add_parser("compensate", help="warp each chunk onto its reference frame")
    p.add_argument("input")
    p.add_argument("--homographies", required=True)
    p.add_argument("--chunks", required=True)
    p.add_argument("-o", "--output", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("sample", help="write a train or inference sampling plan")
    p.add_argument("--chunks", required=True)
    p.add_argument("--mode", choices=["train", "inference"])
    p.add_argument("--input", help="frame directory (for the frame size)")
    p.add_argument("--width", type=int, default=456)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("-o", "--output", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fuse", help="average views and rank verb-noun actions")
    _add_scores(p)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("-o", "--output", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="Top@1/Top@5/precision/recall report")
    _add_scores(p)
    p.add_argument("--labels", required=True)
    p.add_argument("-o", "--output", required=True, help="metrics JSON")
    p.add_argument("--table", help="also write the plain-text table here")
    _add_config(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="SVG plots of a trajectory and its chunks")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--chunks")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--matches", help="use precomputed matches instead of detection")
    _add_config(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc.cause, (ConfigError, ParseError)) else 1
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EgoChunkError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
