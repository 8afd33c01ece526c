"""Command-line entry points: features, caption, eval, baseline, timeline.

Exit codes: 0 success, 1 partial failure (some videos failed), 2 input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path

import torch

from . import __version__
from .backends.registry import load_backend, load_registry
from .config import RunConfig, load_config
from .data_io import (
    CACHE_SUFFIX,
    FeatureCache,
    atomic_write_text,
    extract_features,
    load_ground_truth,
    read_feature_cache,
    sidecar_path,
    write_feature_cache,
)
from .errors import FormatError, RunError, ScorerMismatchError, ZsdvcError
from .evaluation import evaluate, load_predictions
from .optimizer import DenseCaptioner

log = logging.getLogger("zsdvc")

EXIT_OK, EXIT_PARTIAL, EXIT_INPUT = 0, 1, 2
VIDEO_SUFFIXES = {".mp4", ".avi", ".mkv", ".mov", ".webm", ".m4v", ".mpg", ".mpeg"}


class InputError(Exception):
    """Bad command-line input, detected before any work starts."""


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def meta_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".meta.json")


def _collect(paths, suffixes, what) -> list[Path]:
    found = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            found.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in suffixes and q.is_file()))
        elif p.is_file():
            found.append(p)
        else:
            raise InputError(f"{p}: no such {what} file or directory")
    return found


def _run_config(args) -> RunConfig:
    overrides = {"seed": args.seed}
    if args.config:
        if not Path(args.config).is_file():
            raise InputError(f"{args.config}: config file not found")
        return load_config(args.config, **overrides)
    return RunConfig(**{k: v for k, v in overrides.items() if v is not None})


@lru_cache(maxsize=None)
def _backends(scorer_id: str, lm_id: str | None, registry_path: str | None):
    registry = load_registry(registry_path)
    scorer = load_backend(scorer_id, "scorer", registry)
    lm = load_backend(lm_id, "lm", registry) if lm_id else None
    return scorer, lm


def _map(fn, jobs: int, items: list):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- features ---------------------------------------------------------------

def _features_one(task):
    video, out_dir, scorer_id, registry_path = task
    target = Path(out_dir) / (video.stem + CACHE_SUFFIX)
    try:
        if target.exists() and sidecar_path(target).exists() and target.stat().st_mtime >= video.stat().st_mtime:
            cached = json.loads(sidecar_path(target).read_text())
            if cached.get("scorer_id") == scorer_id:
                return str(video), "skipped", None
        scorer, _ = _backends(scorer_id, None, registry_path)
        cache = extract_features(video, scorer, video_id=video.stem)
        write_feature_cache(target, cache)
        return str(video), "written", None
    except Exception as exc:
        return str(video), "failed", f"{type(exc).__name__}: {exc}"


def cmd_features(args) -> int:
    videos = _collect(args.inputs, VIDEO_SUFFIXES, "video")
    scorer_id = args.scorer or _run_config(args).scorer
    load_registry(args.registry)  # fail early on a malformed registry
    tasks = [(v, args.out, scorer_id, args.registry) for v in videos]
    results = _map(_features_one, args.jobs, tasks)
    failures = [(v, err) for v, status, err in results if status == "failed"]
    for v, status, _ in results:
        log.info("%s: %s", v, status)
    written = sum(s == "written" for _, s, _ in results)
    skipped = sum(s == "skipped" for _, s, _ in results)
    print(f"features: {written} written, {skipped} up to date, {len(failures)} failed")
    for v, err in failures:
        print(f"  FAILED {v}: {err}", file=sys.stderr)
    return EXIT_PARTIAL if failures else EXIT_OK


# -- caption ----------------------------------------------------------------

def _caption_one(task):
    path, config_dict, registry_path = task
    config = RunConfig.from_dict({k: tuple(v) if k == "hard_prompts" else v for k, v in config_dict.items()})
    cache = read_feature_cache(path)
    vid = cache.video_id
    try:
        scorer, lm = _backends(config.scorer, config.lm, registry_path)
        captioner = DenseCaptioner(torch.from_numpy(cache.features), cache.duration, config, scorer, lm)
        result = captioner.run()
    except RunError as exc:
        partial = exc.partial.to_predictions() if exc.partial is not None else []
        return vid, None, {"error": str(exc), "iteration": exc.iteration, "step": exc.step,
                           "partial": partial, "history": exc.partial.history if exc.partial else []}
    except Exception as exc:
        return vid, None, {"error": f"{type(exc).__name__}: {exc}"}
    return vid, {"predictions": result.to_predictions(), "losses": result.losses,
                 "history": result.history}, None


def cmd_caption(args) -> int:
    config = _run_config(args)
    if config.seed is None:
        raise InputError("a seed is required: pass --seed or set seed in the config file")
    caches = _collect(args.inputs, {CACHE_SUFFIX}, "cache")
    if not caches:
        raise InputError("no feature caches found")
    load_registry(args.registry)
    seen = {}
    for path in caches:
        cache = read_feature_cache(path, scorer_id=config.scorer, strict=args.strict)
        if cache.video_id in seen:
            raise InputError(f"video id {cache.video_id!r} appears in both {seen[cache.video_id]} and {path}")
        seen[cache.video_id] = path

    config_dict = config.to_dict()
    results = _map(_caption_one, args.jobs, [(p, config_dict, args.registry) for p in caches])
    results.sort(key=lambda r: r[0])
    chash = config.config_hash()
    predictions = {vid: r["predictions"] for vid, r, _ in results if r is not None}
    failures = {vid: f for vid, _, f in results if f is not None}
    out = {
        "version": "VERSION 1.0",
        "results": predictions,
        "external_data": {"used": False, "details": f"zsdvc {__version__} config {chash} seed {config.seed}"},
    }
    meta = {
        "config": config_dict,
        "config_hash": chash,
        "seed": config.seed,
        "videos": {vid: {"losses": r["losses"], "history": r["history"]} for vid, r, _ in results if r},
        "failures": failures,
    }
    atomic_write_text(args.out, _json(out))
    atomic_write_text(meta_path(args.out), _json(meta))
    print(f"caption: {len(predictions)} videos captioned, {len(failures)} failed -> {args.out}")
    for vid, f in failures.items():
        print(f"  FAILED {vid}: {f['error']}", file=sys.stderr)
    return EXIT_PARTIAL if failures else EXIT_OK


# -- eval -------------------------------------------------------------------

def cmd_eval(args) -> int:
    predictions = load_predictions(args.predictions)
    gt = load_ground_truth(args.ground_truth, strict=args.strict)
    report = evaluate(predictions, gt)
    print(report.table())
    if args.out:
        atomic_write_text(args.out, _json(report.to_dict()))
    return EXIT_OK


# -- baseline ---------------------------------------------------------------

def cmd_baseline(args) -> int:
    from .baselines import caption_then_match, ingest_external_predictions, uniform_segments

    if args.method == "ingest":
        if len(args.inputs) != 1:
            raise InputError("ingest takes exactly one predictions file")
        preds = ingest_external_predictions(args.inputs[0])
    else:
        caches: list[FeatureCache] = [read_feature_cache(p) for p in _collect(args.inputs, {CACHE_SUFFIX}, "cache")]
        captions = {}
        if args.captions:
            try:
                captions = json.loads(Path(args.captions).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise FormatError(f"cannot read captions: {exc}", args.captions) from exc
            if not isinstance(captions, dict):
                raise FormatError("captions must map video id to a list of sentences", args.captions)
        elif args.method == "caption-then-match":
            raise InputError("caption-then-match needs --captions")
        preds = {}
        for cache in caches:
            sents = captions.get(cache.video_id, [])
            if args.method == "uniform":
                segs = uniform_segments(cache.duration, args.n)
                preds[cache.video_id] = [
                    {"timestamp": [s, e], "sentence": sents[k] if k < len(sents) else ""}
                    for k, (s, e) in enumerate(segs)
                ]
            else:
                if not sents:
                    raise FormatError(f"no captions for video {cache.video_id!r}", args.captions)
                scorer, _ = _backends(args.scorer or cache.scorer_id, None, args.registry)
                result = caption_then_match(sents, torch.from_numpy(cache.features), cache.duration, scorer,
                                            args.width_fraction)
                preds[cache.video_id] = result.to_predictions()
    out = {"version": "VERSION 1.0", "results": {k: preds[k] for k in sorted(preds)},
           "external_data": {"used": True, "details": f"baseline {args.method}"}}
    atomic_write_text(args.out, _json(out))
    print(f"baseline {args.method}: {len(preds)} videos -> {args.out}")
    return EXIT_OK


# -- timeline ---------------------------------------------------------------

def cmd_timeline(args) -> int:
    from .timeline import build_tracks, render_svg, render_text

    predictions = load_predictions(args.predictions)
    gt = load_ground_truth(args.ground_truth, strict=args.strict)
    if args.video_id not in gt:
        raise InputError(f"video {args.video_id!r} not in ground truth")
    ann = gt[args.video_id]
    tracks = build_tracks(predictions.get(args.video_id, []), ann)
    text = render_text(tracks, ann.duration, args.video_id)
    print(text, end="")
    if args.out:
        atomic_write_text(f"{args.out}.txt", text)
        atomic_write_text(f"{args.out}.svg", render_svg(tracks, ann.duration, args.video_id))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat TOML run config (keys are RunConfig fields)")
    common.add_argument("--seed", type=int, help="random seed (overrides the config file)")
    common.add_argument("--jobs", type=int, default=1, help="videos processed in parallel")
    common.add_argument("--strict", action="store_true",
                        help="reject out-of-range ground truth and scorer-id mismatches")
    common.add_argument("--registry", help="TOML file mapping model ids to adapters and checkpoints")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="zsdvc", description="Zero-shot dense video captioning.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", parents=[common], help="embed sampled frames into feature caches")
    p.add_argument("inputs", nargs="+", help="video files or directories")
    p.add_argument("--scorer", help="scorer model id (default: the config's scorer)")
    p.add_argument("--out", required=True, help="output directory for caches")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("caption", parents=[common], help="localize and caption moments")
    p.add_argument("inputs", nargs="+", help="feature caches or directories of caches")
    p.add_argument("--out", required=True, help="predictions JSON; run metadata goes next to it")
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("predictions")
    p.add_argument("ground_truth")
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", parents=[common], help="zero-shot comparison baselines")
    p.add_argument("method", choices=("caption-then-match", "uniform", "ingest"))
    p.add_argument("inputs", nargs="+", help="feature caches (or one predictions file for ingest)")
    p.add_argument("--captions", help="JSON mapping video id to externally produced captions")
    p.add_argument("--scorer", help="scorer id (default: the id recorded in each cache)")
    p.add_argument("--width-fraction", type=float, default=0.3)
    p.add_argument("-n", type=int, default=4, help="segment count for the uniform baseline")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("timeline", parents=[common], help="render predicted vs ground-truth intervals")
    p.add_argument("predictions")
    p.add_argument("ground_truth")
    p.add_argument("video_id")
    p.add_argument("--out", help="output prefix; writes PREFIX.txt and PREFIX.svg")
    p.set_defaults(func=cmd_timeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except (InputError, FormatError, ScorerMismatchError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ZsdvcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT if isinstance(exc, ValueError) else EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
