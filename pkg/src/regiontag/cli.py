"""Command line interface.

Subcommands cover the full workflow: ``simulate`` renders a dataset,
``extract`` dumps a feature stack for one clip, ``train`` fits a model,
``eval`` scores a manifest split under one of the harnesses, ``tag``
prints class probabilities for a clip, and ``acs-expand`` augments a
dataset by channel swapping.

Exit codes: 0 success, 2 usage error, 3 bad input data, 4 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import read_clip
from .augment import ACS_TRANSFORMS, expand_manifest
from .dsp import stft
from .evaluation import HARNESS_MODES, run_harness
from .features import FeatureRecipe, build_feature_stack, write_feature_dump
from .geometry import default_geometry
from .kernels import backend_name
from .model import QUERY_MODES, forward_batch, load_model, save_model
from .regionfeat import AngularRegion, DistanceQuery
from .scenesim import CLASS_NAMES, generate_dataset, read_manifest
from .training import TrainConfig, train

USAGE_ERROR = 2
DATA_ERROR = 3
RUNTIME_ERROR = 4


def _parse_region(text: str) -> AngularRegion:
    """Parse 'begin:end' in degrees into an angular region."""
    parts = text.split(":")
    if len(parts) != 2:
        raise ValueError(f"region must look like 'begin:end', got {text!r}")
    return AngularRegion(float(parts[0]), float(parts[1]))


def _provenance(args: argparse.Namespace) -> dict:
    return {
        "tool": "regiontag",
        "version": __version__,
        "backend": backend_name(),
        "numpy": np.__version__,
        "argv": sys.argv[1:],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "command": args.command,
    }


def _write_run_record(directory: Path, args: argparse.Namespace) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "run.json").open("w") as fh:
        json.dump(_provenance(args), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _add_simulate(sub) -> None:
    p = sub.add_parser("simulate", help="render a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clips", type=int, required=True, help="number of clips")
    p.add_argument("--length", type=float, default=10.0, help="clip length in s")
    p.add_argument("--classes", type=int, default=len(CLASS_NAMES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr", type=float, default=30.0, help="noise SNR in dB")
    p.add_argument("--jobs", type=int, default=1, help="parallel render workers")
    p.add_argument(
        "--acs",
        action="store_true",
        help="expand the rendered set eightfold by channel swapping",
    )


def _add_extract(sub) -> None:
    p = sub.add_parser("extract", help="dump a feature stack for one clip")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True, help="output feature dump path")
    p.add_argument("--features", required=True, help="comma list, e.g. lps,ipd,df")
    p.add_argument("--region", help="angular query as 'begin:end' degrees")
    p.add_argument("--distance", type=float, help="distance query in metres")


def _add_train(sub) -> None:
    p = sub.add_parser("train", help="train a tagging model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--features", required=True)
    p.add_argument("--mode", choices=QUERY_MODES, default="angular")
    p.add_argument("--config", help="key=value file of training settings")
    p.add_argument("--log", help="CSV training log path")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one training setting (repeatable)",
    )
    p.add_argument(
        "--acs",
        action="store_true",
        help="train on the eightfold channel-swap expansion of the manifest",
    )


def _add_eval(sub) -> None:
    p = sub.add_parser("eval", help="score a manifest split under a harness")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--harness", choices=HARNESS_MODES, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--width", type=float, default=60.0, help="region width in deg")
    p.add_argument("--crop", type=float, default=2.0, help="crop length in s")
    p.add_argument("--json", dest="json_out", help="write results to this path")


def _add_tag(sub) -> None:
    p = sub.add_parser("tag", help="print class probabilities for one clip")
    p.add_argument("--model", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--region", help="angular query as 'begin:end' degrees")
    p.add_argument("--distance", type=float, help="distance query in metres")
    p.add_argument("--start", type=float, default=0.0, help="crop start in s")
    p.add_argument("--duration", type=float, help="crop length in s (default all)")
    p.add_argument("--top", type=int, help="print only the top N classes")


def _add_acs_expand(sub) -> None:
    p = sub.add_parser(
        "acs-expand", help="augment a dataset by swapping array channels"
    )
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--transforms",
        help="comma list of transform ids 0-7 (default: all eight)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regiontag",
        description="region-conditioned audio tagging for a tetrahedral array",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_simulate(sub)
    _add_extract(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_tag(sub)
    _add_acs_expand(sub)
    return parser


def _query_from_args(args) -> AngularRegion | DistanceQuery | None:
    if getattr(args, "region", None) and getattr(args, "distance", None) is not None:
        raise ValueError("give either --region or --distance, not both")
    if getattr(args, "region", None):
        return _parse_region(args.region)
    if getattr(args, "distance", None) is not None:
        return DistanceQuery(args.distance)
    return None


def _cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    manifest = generate_dataset(
        out_dir,
        n_clips=args.clips,
        clip_length_s=args.length,
        n_classes=args.classes,
        seed=args.seed,
        snr_db=args.snr,
        jobs=args.jobs,
    )
    n_rows = args.clips
    if args.acs:
        originals = read_manifest(manifest)
        manifest = expand_manifest(manifest, out_dir)
        # The expansion rewrote the manifest with _acs{id} copies (id 0 is
        # the identity), so the unsuffixed renders are no longer referenced.
        for _, wav_path, csv_path in originals:
            Path(wav_path).unlink()
            Path(csv_path).unlink()
        n_rows = args.clips * len(ACS_TRANSFORMS)
    _write_run_record(out_dir, args)
    print(f"wrote {n_rows} clips, manifest at {manifest}")
    return 0


def _cmd_extract(args) -> int:
    geometry = default_geometry()
    recipe = FeatureRecipe.parse(args.features)
    query = _query_from_args(args)
    clip = read_clip(args.wav, geometry.sample_rate)
    spec = stft(clip, geometry.sample_rate)
    stack = build_feature_stack(spec, geometry, recipe, query=query)
    write_feature_dump(args.out, stack)
    print(
        f"wrote {stack.data.shape[0]} planes of {stack.data.shape[1]}x"
        f"{stack.data.shape[2]} to {args.out}"
    )
    return 0


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override must look like key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _read_config_file(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"bad config line (want key = value): {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


_CONFIG_TYPES = {
    "learning_rate": float,
    "batch_size": int,
    "max_epochs": int,
    "patience": int,
    "steps_per_epoch": int,
    "crop_s": float,
    "query_width_deg": float,
    "event_centered_prob": float,
    "val_crops_per_clip": int,
    "seed": int,
}


def _train_config(args) -> TrainConfig:
    raw: dict = {}
    if args.config:
        raw.update(_read_config_file(args.config))
    raw.update(_parse_overrides(args.set))
    kwargs = {}
    for key, value in raw.items():
        if key not in _CONFIG_TYPES:
            raise ValueError(f"unknown training setting {key!r}")
        kwargs[key] = _CONFIG_TYPES[key](value)
    return TrainConfig(**kwargs)


def _cmd_train(args) -> int:
    config = _train_config(args)
    manifest_path = Path(args.manifest)
    if args.acs:
        manifest_path = expand_manifest(
            manifest_path, manifest_path.parent / "acs_expanded"
        )
        print(f"channel-swap expansion at {manifest_path}")
    result = train(
        args.features,
        manifest_path,
        config=config,
        query_mode=args.mode,
        log_path=args.log,
    )
    out_path = Path(args.out)
    save_model(out_path, result.model)
    _write_run_record(out_path.parent, args)
    print(
        f"trained {args.features!r} ({args.mode}) for "
        f"{len(result.history)} epochs, best val mAP "
        f"{result.best_val_map:.4f} at epoch {result.best_epoch}; "
        f"saved to {out_path}"
    )
    return 0


def _cmd_eval(args) -> int:
    model = load_model(args.model)
    result = run_harness(
        model,
        args.manifest,
        mode=args.harness,
        split=args.split,
        crop_s=args.crop,
        region_width_deg=args.width,
    )
    summary = {
        "harness": result.mode,
        "split": args.split,
        "n_examples": result.n_examples,
        "mAP": result.mean_ap,
        "EER": result.eer,
        "per_class_AP": {
            CLASS_NAMES[c]: ap
            for c, ap in enumerate(result.per_class_ap)
            if c < len(CLASS_NAMES)
        },
        "skipped_classes": [
            CLASS_NAMES[c] for c in result.skipped_classes if c < len(CLASS_NAMES)
        ],
    }
    if args.json_out:
        with Path(args.json_out).open("w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    print(
        f"{result.mode}: {result.n_examples} examples, "
        f"mAP {result.mean_ap:.4f}, EER {result.eer:.4f}"
    )
    if result.skipped_classes:
        names = ", ".join(summary["skipped_classes"])
        print(f"skipped classes without positives: {names}")
    return 0


def _cmd_tag(args) -> int:
    geometry = default_geometry()
    model = load_model(args.model)
    query = _query_from_args(args)
    if model.recipe.needs_query and query is None:
        raise ValueError(
            f"model with features {model.recipe} needs --region or --distance"
        )
    clip = read_clip(args.wav, geometry.sample_rate)
    i0 = int(round(args.start * geometry.sample_rate))
    if args.duration is not None:
        i1 = i0 + int(round(args.duration * geometry.sample_rate))
    else:
        i1 = clip.shape[1]
    spec = stft(clip[:, i0:i1], geometry.sample_rate, model.n_fft, model.hop)
    stack = build_feature_stack(
        spec,
        geometry,
        model.recipe,
        query=query,
        pairs=model.pairs,
        gcc_max_lag=model.gcc_max_lag,
    )
    queries = [query] if model.recipe.wants_embedding else None
    probs = forward_batch(model, stack.data[None], queries)[0]
    order = np.argsort(-probs, kind="stable")
    if args.top is not None:
        order = order[: args.top]
    entries = [
        {
            "class": CLASS_NAMES[c] if c < len(CLASS_NAMES) else str(c),
            "index": int(c),
            "probability": float(probs[c]),
        }
        for c in order
    ]
    print(json.dumps({"tags": entries}, indent=2))
    return 0


def _cmd_acs_expand(args) -> int:
    if args.transforms:
        wanted = sorted({int(t) for t in args.transforms.split(",")})
        for t in wanted:
            if not 0 <= t < len(ACS_TRANSFORMS):
                raise ValueError(f"transform id out of range: {t}")
        transforms = tuple(ACS_TRANSFORMS[t] for t in wanted)
    else:
        transforms = None
    manifest = expand_manifest(args.manifest, args.out, transforms=transforms)
    n = len(transforms) if transforms is not None else len(ACS_TRANSFORMS)
    print(f"expanded by {n} channel-swap transforms, manifest at {manifest}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "tag": _cmd_tag,
    "acs-expand": _cmd_acs_expand,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = _COMMANDS[args.command]
    try:
        return handler(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
