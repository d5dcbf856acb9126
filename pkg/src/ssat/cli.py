"""Command line entry point: ``ssat <subcommand> [--flags]``.

Exit codes: 0 success, 1 bad input data, 2 usage error, 3 missing file,
4 a check or invariant failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .datagen.io import read_image, read_parsing, write_dataset, write_image
from .network import PartialMaskSet, SSATModel
from .tensor import no_grad

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_MISSING, EXIT_INVARIANT = 0, 1, 2, 3, 4

log = logging.getLogger("ssat")


class MissingInput(FileNotFoundError):
    pass


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"no such file: {path}")
    return path


# -- shared helpers ------------------------------------------------------------


def _model(args) -> SSATModel:
    from .trainer import TrainConfig, load_model

    if args.checkpoint:
        model, _ = load_model(_require(args.checkpoint))
        return model
    cfg = TrainConfig.paper() if args.preset == "paper" else TrainConfig.desk()
    log.warning("no --checkpoint given; using an untrained %s model (seed %d)", args.preset, args.seed)
    return SSATModel(cfg.widths, cfg.sigma, args.seed)


def _face(image_path, parsing_path, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    rgb = read_image(_require(image_path))
    parsing = read_parsing(_require(parsing_path), n_classes)
    if parsing.shape[1:] != rgb.shape[1:]:
        raise ValueError(f"{parsing_path}: parsing size {parsing.shape[1:]} differs from image {rgb.shape[1:]}")
    return rgb, parsing


def _references(args, n_classes: int) -> list[tuple[np.ndarray, np.ndarray]]:
    if len(args.reference) != len(args.reference_parsing):
        raise argparse.ArgumentTypeError("each --reference needs a matching --reference-parsing")
    return [_face(i, p, n_classes) for i, p in zip(args.reference, args.reference_parsing)]


def _apply_manifest(args) -> None:
    """Fill unset inference flags from a JSON manifest; flags given on the command line win.

    Manifest keys: ``mode``, ``target`` and ``references`` (objects with
    ``rgb`` and ``parsing`` paths, relative to the manifest), ``alpha``,
    ``assignment`` (region to reference index) and ``out``.
    """
    if not getattr(args, "manifest", None):
        return
    path = _require(args.manifest)
    job = json.loads(path.read_text())
    mode = job.get("mode", args.command)
    if mode != args.command:
        raise argparse.ArgumentTypeError(f"manifest mode {mode!r} does not match subcommand {args.command!r}")
    root = path.parent

    def resolve(p):
        return str(p if Path(p).is_absolute() else root / p)

    if args.target is None and "target" in job:
        args.target = resolve(job["target"]["rgb"])
        args.target_parsing = resolve(job["target"]["parsing"])
    if not args.reference and "references" in job:
        args.reference = [resolve(r["rgb"]) for r in job["references"]]
        args.reference_parsing = [resolve(r["parsing"]) for r in job["references"]]
    if args.out is None and "out" in job:
        args.out = resolve(job["out"])
    if hasattr(args, "alpha") and args.alpha is None and "alpha" in job:
        args.alpha = float(job["alpha"])
    if hasattr(args, "assign") and not args.assign and "assignment" in job:
        args.assign = [f"{k}={int(v)}" for k, v in job["assignment"].items()]


def _check_inference_args(args) -> None:
    _apply_manifest(args)
    needed = ["target", "target_parsing", "reference", "reference_parsing", "out"]
    if hasattr(args, "alpha"):
        needed.append("alpha")
    missing = [n for n in needed if not getattr(args, n, None) and getattr(args, n, None) != 0]
    if missing:
        raise argparse.ArgumentTypeError("missing " + ", ".join("--" + n.replace("_", "-") for n in missing) + " (flag or --manifest)")


def _inset_path(out: Path, inset: str | None) -> Path:
    return Path(inset) if inset else out.with_name(out.stem + "_corr" + out.suffix)


def _transfer_one(model, target, reference, out: Path, inset: Path | None) -> None:
    from .correspondence import correspondence_visualization

    with no_grad():
        res = model.forward_transfer(target[0], target[1], reference[0], reference[1])
    write_image(out, res.y_hat_t.data)
    if inset is not None:
        write_image(inset, correspondence_visualization(res.corr, reference[0]))


# -- subcommands ---------------------------------------------------------------


def cmd_datagen(args) -> int:
    from .datagen.faces import FaceConfig
    from .datagen.pairs import grid_for_pairs

    try:
        grid_for_pairs(args.pairs)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--pairs: {exc}") from None
    ext = ".ppm" if args.format == "ppm" else ".png"
    path = write_dataset(args.out, args.pairs, args.seed, FaceConfig(size=args.size), ext, args.workers)
    print(f"wrote {args.pairs} pairs to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from dataclasses import replace

    from .datagen.io import ManifestDataset
    from .datagen.pairs import FaceBank, SyntheticPairs
    from .trainer import TrainConfig, load_training_state, train_loop

    if args.resume:
        model, opts, config, start = load_training_state(_require(args.resume))
    else:
        config = TrainConfig.from_json(_require(args.config)) if args.config else (TrainConfig.paper() if args.preset == "paper" else TrainConfig.desk())
        model, opts, start = None, None, 0
    overrides = {
        "seed": args.seed,
        "total_iterations": args.iterations,
        "lr_initial": args.lr,
        "checkpoint_every": args.checkpoint_every,
        "clip_norm": args.clip_norm,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.no_augment:
        overrides["augment"] = False
    if overrides:
        config = replace(config, **overrides)
    if model is None:
        model = SSATModel(config.widths, config.sigma, config.seed)
    if args.data:
        dataset = ManifestDataset(_require(args.data))
    else:
        dataset = SyntheticPairs(FaceBank(config.n_bare, config.n_makeup, config.seed))
    final = train_loop(model, dataset, config, args.out, opts, start)
    print(f"final checkpoint: {final}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    _check_inference_args(args)
    model = _model(args)
    n = model.widths.n_classes
    target = _face(args.target, args.target_parsing, n)
    (reference,) = _references(args, n)
    out = Path(args.out)
    _transfer_one(model, target, reference, out, None if args.no_inset else _inset_path(out, args.inset))
    print(f"wrote {out}")
    return EXIT_OK


def _parse_assign(items: list[str]) -> dict[str, int]:
    out = {}
    for item in items:
        region, _, idx = item.partition("=")
        if not idx.isdigit():
            raise argparse.ArgumentTypeError(f"--assign expects REGION=INDEX, got {item!r}")
        out[region] = int(idx)
    return out


def cmd_partial(args) -> int:
    _check_inference_args(args)
    model = _model(args)
    n = model.widths.n_classes
    target = _face(args.target, args.target_parsing, n)
    refs = _references(args, n)
    assignment = _parse_assign(args.assign)
    for region, idx in assignment.items():
        if idx >= len(refs):
            raise argparse.ArgumentTypeError(f"--assign {region}={idx}: only {len(refs)} references given")
    with no_grad():
        small = model.encode(target[0], target[1]).parsing_small.data
        masks = PartialMaskSet.from_parsing(small, complete=args.complete)
        unknown = set(assignment) - set(masks.masks)
        if unknown:
            raise argparse.ArgumentTypeError(f"unknown regions {sorted(unknown)}; choose from {sorted(masks.masks)}")
        out = model.partial_transfer(target[0], target[1], refs, assignment, masks)
    write_image(args.out, out.data)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_interpolate(args) -> int:
    _check_inference_args(args)
    if not 0.0 <= args.alpha <= 1.0:
        raise argparse.ArgumentTypeError("--alpha must lie in [0, 1]")
    model = _model(args)
    n = model.widths.n_classes
    target = _face(args.target, args.target_parsing, n)
    refs = _references(args, n)
    if len(refs) not in (1, 2):
        raise argparse.ArgumentTypeError("interpolate takes one or two references")
    ref2 = refs[1] if len(refs) == 2 else refs[0]
    with no_grad():
        out = model.interpolate_styles(target[0], target[1], refs[0], ref2, args.alpha)
    write_image(args.out, out.data)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_video(args) -> int:
    if not args.reference or not args.reference_parsing:
        raise argparse.ArgumentTypeError("video needs --reference and --reference-parsing")
    model = _model(args)
    n = model.widths.n_classes
    (reference,) = _references(args, n)
    frames_dir = _require(args.frames)
    frames = sorted(p for p in frames_dir.iterdir() if p.stem.endswith("_rgb") and p.suffix.lower() in (".png", ".ppm"))
    if not frames:
        raise MissingInput(f"{frames_dir}: no *_rgb.png or *_rgb.ppm frames")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for frame in frames:
        stem = frame.stem[: -len("_rgb")]
        target = _face(frame, frame.with_name(stem + "_parsing.png"), n)
        _transfer_one(model, target, reference, out_dir / f"{stem}_out{frame.suffix}", None)
    print(f"wrote {len(frames)} frames to {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import format_table, run_gradchecks

    results = run_gradchecks(seeds=range(args.seed, args.seed + args.seeds), names=args.only or None)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


def cmd_selfcheck(args) -> int:
    from .checks import format_table, run_selfchecks

    with tempfile.TemporaryDirectory() as tmp:
        results = run_selfchecks(tmp, args.seed)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


# -- parser --------------------------------------------------------------------


def _add_model_flags(p) -> None:
    p.add_argument("--checkpoint", help="trained checkpoint (.ssat)")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk", help="architecture when no checkpoint is given")
    p.add_argument("--seed", type=int, default=0)


def _add_target(p) -> None:
    p.add_argument("--target", help="target image (PNG or PPM)")
    p.add_argument("--target-parsing", help="target parsing PNG of class indices")
    p.add_argument("--manifest", help="JSON inference job; explicit flags override its fields")


def _add_references(p, many: bool) -> None:
    kw = {"action": "append"} if many else {"type": lambda s: [s]}
    p.add_argument("--reference", help="reference image" + (" (repeatable)" if many else ""), **kw)
    p.add_argument("--reference-parsing", help="reference parsing PNG" + (" (repeatable)" if many else ""), **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssat", description="Makeup transfer and removal with semantic correspondence.", allow_abbrev=False)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="render synthetic faces and pseudo pairs", allow_abbrev=False)
    p.add_argument("--pairs", type=int, required=True, help="number of pairs, 2*n*n")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--format", choices=("png", "ppm"), default="png")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train on a dataset directory or on in-memory synthetic pairs", allow_abbrev=False)
    p.add_argument("--data", help="dataset directory written by datagen")
    p.add_argument("--config", help="JSON training config; flags override it")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--no-augment", action="store_true")
    p.set_defaults(func=cmd_train)

    for name, help_text in (("transfer", "apply a reference's makeup to a target"), ("removal", "remove makeup using a bare-faced reference")):
        p = sub.add_parser(name, help=help_text, allow_abbrev=False)
        _add_model_flags(p)
        _add_target(p)
        _add_references(p, many=False)
        p.add_argument("--out")
        p.add_argument("--inset", help="correspondence visualization path (default <out>_corr)")
        p.add_argument("--no-inset", action="store_true")
        p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("partial", help="per-region makeup from several references", allow_abbrev=False)
    _add_model_flags(p)
    _add_target(p)
    _add_references(p, many=True)
    p.add_argument("--assign", action="append", default=[], help="REGION=INDEX, e.g. Lip=0 (repeatable)")
    p.add_argument("--complete", action="store_true", help="add an 'Other' region so masks tile the image")
    p.add_argument("--out")
    p.set_defaults(func=cmd_partial)

    p = sub.add_parser("interpolate", help="blend the makeup of two references", allow_abbrev=False)
    _add_model_flags(p)
    _add_target(p)
    _add_references(p, many=True)
    p.add_argument("--alpha", type=float, help="weight of the first reference")
    p.add_argument("--out")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("video", help="transfer onto every frame in a directory", allow_abbrev=False)
    _add_model_flags(p)
    _add_references(p, many=False)
    p.add_argument("--frames", required=True, help="directory of <name>_rgb.png and <name>_parsing.png")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_video)

    p = sub.add_parser("gradcheck", help="finite-difference check of every registered op", allow_abbrev=False)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", action="append", help="restrict to a case name (repeatable)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selfcheck", help="correspondence, exactness and pseudo-pair invariants", allow_abbrev=False)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.print_usage(sys.stderr)
        print(f"ssat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"ssat: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (CheckpointError, ValueError, json.JSONDecodeError) as exc:
        print(f"ssat: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
