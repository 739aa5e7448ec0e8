#!/usr/bin/env python3
"""
GeleNet CLI -- train, run and evaluate the saliency detector from the terminal.

Usage::

    python gelenet.py train --preset desk --out runs/desk
    python gelenet.py train --config exp.cfg --set epochs=10 --seed 3
    python gelenet.py infer --checkpoint runs/desk/checkpoint.bin img1.png photos/
    python gelenet.py infer --checkpoint runs/desk/checkpoint.bin --debug-maps img1.png
    python gelenet.py eval --pred runs/desk/maps --gt data/manifest.tsv
    python gelenet.py gradcheck --tolerance 1e-3
    python gelenet.py ablate --preset desk --variants baseline,full --repeats 3
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

from rich.logging import RichHandler

from saliency.ablation import resolve_variants, run_ablation
from saliency.checkpoint import load_checkpoint, save_checkpoint
from saliency.config import PRESETS, ExperimentConfig, resolve_config, thread_limit, write_resolved
from saliency.constants import (
    CHECKPOINT_FILE,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_VALIDATION,
    GRADCHECK_SAMPLES,
    GRADCHECK_TOLERANCE,
    LOSS_TRACE_FILE,
    RESOLVED_CONFIG_FILE,
)
from saliency.data import (
    METADATA_FILE,
    image_size,
    load_image,
    load_map,
    load_mask,
    normalize_heatmap,
    read_manifest,
    resize_map,
    save_map,
    write_metadata,
)
from saliency.errors import DataError, GeleNetError, NumericalError
from saliency.gradcheck import all_passed, run_suite
from saliency.metrics import MetricReport, aggregate, evaluate
from saliency.network import GeleNet, model_from_config
from saliency.tensor import Tensor, no_grad
from saliency.training import Trainer, evaluate_model, load_dataset, predict
from ui.dashboard import (
    ProgressDisplay,
    console,
    print_ablation,
    print_config,
    print_gradcheck,
    print_header,
    print_metric_report,
    print_saved,
    print_training_summary,
    print_unmatched,
)
from ui.output import save_json, write_loss_trace, write_report_bundle

logger = logging.getLogger("gelenet")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False, rich_tracebacks=verbose)],
        force=True,
    )


def _parse_sets(pairs: Sequence[str]) -> Dict[str, str]:
    """``--set key=value`` pairs; values are coerced by the config layer."""
    out: Dict[str, str] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise GeleNetError(f"--set expects KEY=VALUE, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args: argparse.Namespace) -> ExperimentConfig:
    """CLI flag wins, then config file, then preset, then defaults."""
    overrides: Dict[str, object] = dict(_parse_sets(args.set))
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    return resolve_config(args.config, args.preset, overrides)


def _image_files(paths: Sequence[str]) -> List[str]:
    files: List[str] = []
    for path in paths:
        if os.path.isdir(path):
            files.extend(
                os.path.join(path, name) for name in sorted(os.listdir(path))
                if name.lower().endswith(IMAGE_SUFFIXES)
            )
        elif os.path.isfile(path):
            files.append(path)
        else:
            raise DataError(f"No such image or directory: {path}")
    if not files:
        raise DataError("No input images found")
    return files


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _ground_truth(source: str) -> Dict[str, str]:
    """Stem -> mask path from a mask directory or an image/mask manifest."""
    if os.path.isdir(source):
        return {_stem(p): p for p in _image_files([source])}
    return {_stem(image): mask for image, mask in read_manifest(source)}


def _train_progress(trainer: Trainer, description: str) -> Optional[ProgressDisplay]:
    if not console.is_terminal:
        return None
    progress = ProgressDisplay()
    progress.start(description, trainer.total_steps)
    trainer.on_progress = progress.update
    return progress


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    print_header("Training")
    print_config(cfg)

    samples = load_dataset(cfg)
    out = cfg.out_dir
    saved = {"Config": write_resolved(cfg, os.path.join(out, RESOLVED_CONFIG_FILE))}
    if not cfg.manifest:
        saved["Dataset metadata"] = write_metadata(samples, os.path.join(out, METADATA_FILE))

    trainer = Trainer(cfg, samples)
    progress = _train_progress(trainer, "Training")
    try:
        result = trainer.fit()
    finally:
        if progress is not None:
            progress.stop()

    saved["Checkpoint"] = save_checkpoint(os.path.join(out, CHECKPOINT_FILE), trainer.model.parameters())
    saved["Loss trace"] = write_loss_trace(
        os.path.join(out, LOSS_TRACE_FILE), result.losses, result.learning_rates
    )
    print_training_summary(result)

    if cfg.eval_train:
        per_image, report = evaluate_model(trainer.model, samples, cfg.batch_size)
        print_metric_report(report, "Training set")
        bundle = write_report_bundle(os.path.join(out, "train_eval"), report, per_image, "Training set")
        saved["Training report"] = bundle["text"]
    print_saved(saved)
    return EXIT_OK


def _load_model(cfg: ExperimentConfig, checkpoint: str) -> GeleNet:
    model = model_from_config(cfg)
    load_checkpoint(checkpoint, model.parameters())
    return model


def _debug_exports(model: GeleNet, directory: str, stem: str) -> None:
    for label, values in model.debug_maps().items():
        heat = values[0] if label == "ktm_correlation" else values[0, 0]
        save_map(normalize_heatmap(heat), os.path.join(directory, f"{stem}_{label}.png"))


def cmd_infer(args: argparse.Namespace) -> int:
    cfg = _config(args)
    files = _image_files(args.images)
    model = _load_model(cfg, args.checkpoint)
    maps_dir = os.path.join(cfg.out_dir, "maps")
    debug_dir = os.path.join(cfg.out_dir, "debug")

    for path in files:
        stem = _stem(path)
        image = load_image(path, cfg.input_size)[None]
        if args.debug_maps:
            with no_grad():
                saliency = model(Tensor(image)).data[0, 0]
            _debug_exports(model, debug_dir, stem)
        else:
            saliency = predict(model, image)[0]
        height, width = image_size(path)
        save_map(resize_map(saliency, height, width), os.path.join(maps_dir, f"{stem}.png"))
        logger.info("Saved map for %s (%dx%d)", stem, width, height)

    console.print(f"[green]Saved {len(files)} map{'s' if len(files) != 1 else ''} to:[/green] {maps_dir}")
    if args.debug_maps:
        console.print(f"[green]Debug maps:[/green] {debug_dir}")
    return EXIT_OK


def _evaluate_pair(pair: Tuple[str, str, str]) -> Tuple[str, MetricReport]:
    stem, pred_path, gt_path = pair
    gt = load_mask(gt_path)[0]
    pred = load_map(pred_path)
    if pred.shape != gt.shape:
        pred = resize_map(pred, *gt.shape)
    return stem, evaluate(pred, gt)


def cmd_eval(args: argparse.Namespace) -> int:
    preds = {_stem(p): p for p in _image_files([args.pred])}
    truths = _ground_truth(args.gt)
    missing_gt = sorted(set(preds) - set(truths))
    missing_pred = sorted(set(truths) - set(preds))
    if missing_gt or missing_pred:
        print_unmatched("predictions", missing_gt)
        print_unmatched("ground truths", missing_pred)
        raise DataError(f"{len(missing_gt) + len(missing_pred)} file(s) have no counterpart")

    pairs = [(stem, preds[stem], truths[stem]) for stem in sorted(preds)]
    with ThreadPoolExecutor(max_workers=thread_limit()) as pool:
        per_image = list(pool.map(_evaluate_pair, pairs))
    report = aggregate([r for _, r in per_image])

    print_metric_report(report, "Evaluation")
    out = args.out or os.path.normpath(os.path.join(args.pred, os.pardir, "eval"))
    bundle = write_report_bundle(out, report, per_image, "Evaluation")
    print_saved({"Report": bundle["text"], "Curves": bundle["curves"], "JSON": bundle["json"]})
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    print_header("Gradient check")
    results = run_suite(
        tolerance=args.tolerance,
        samples=args.samples,
        seed=args.seed or 0,
        full_model=args.full,
    )
    print_gradcheck(results)
    if args.out:
        path = os.path.join(args.out, "gradcheck.json")
        save_json({"tolerance": args.tolerance, "modules": [r.to_dict() for r in results]}, path)
        print_saved({"Report": path})
    if not all_passed(results):
        failed = [r.module for r in results if not r.passed]
        console.print(f"[bold red]Gradient check failed:[/bold red] {', '.join(failed)}")
        return EXIT_NUMERICAL
    console.print("[green]All modules passed.[/green]")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    names = resolve_variants([v for v in args.variants.split(",") if v.strip()])
    print_header("Ablation")
    print_config(cfg)
    samples = load_dataset(cfg)

    progress: Optional[ProgressDisplay] = None
    if console.is_terminal:
        progress = ProgressDisplay()
        progress.start("Ablation", 1)

    def on_variant(name: str, index: int, total: int) -> None:
        if progress is not None:
            progress.describe(f"{name} ({index}/{total})")
        else:
            logger.info("Variant %d/%d: %s", index, total, name)

    try:
        rows = run_ablation(
            cfg, names, samples, repeats=args.repeats,
            on_variant=on_variant,
            on_progress=progress.update if progress is not None else None,
        )
    finally:
        if progress is not None:
            progress.stop()

    print_ablation(rows)
    path = os.path.join(cfg.out_dir, "ablation.json")
    save_json({"repeats": args.repeats, "seed": cfg.seed, "variants": [r.to_dict() for r in rows]}, path)
    print_saved({"Table": path})
    return EXIT_OK


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, metavar="PATH", help="Experiment config file (key = value)")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="Built-in preset applied before the config file")
    parser.add_argument("--out", type=str, metavar="DIR", help="Output directory")
    parser.add_argument("--seed", type=int, metavar="N", help="Random seed")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config key (repeatable)")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gelenet",
        description="GeleNet -- salient object detection for remote-sensing imagery",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Train a model and write checkpoint, loss trace and report")
    _add_common(train)
    train.set_defaults(func=cmd_train)

    infer = sub.add_parser("infer", help="Write saliency maps for images")
    _add_common(infer)
    infer.add_argument("--checkpoint", required=True, metavar="FILE", help="Checkpoint written by train")
    infer.add_argument("--debug-maps", action="store_true", help="Also export attention maps and KTM correlation")
    infer.add_argument("images", nargs="+", help="Image files or directories")
    infer.set_defaults(func=cmd_infer)

    evaluate_p = sub.add_parser("eval", help="Score saliency maps against ground truth")
    evaluate_p.add_argument("--pred", required=True, metavar="DIR", help="Directory of predicted maps")
    evaluate_p.add_argument("--gt", required=True, metavar="PATH", help="Mask directory or manifest")
    evaluate_p.add_argument("--out", type=str, metavar="DIR", help="Report directory (default: <pred>/../eval)")
    evaluate_p.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    evaluate_p.set_defaults(func=cmd_eval)

    grad = sub.add_parser("gradcheck", help="Finite-difference check of every module")
    grad.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE, metavar="TOL",
                      help=f"Maximum relative error (default: {GRADCHECK_TOLERANCE:g})")
    grad.add_argument("--samples", type=int, default=GRADCHECK_SAMPLES, metavar="N",
                      help=f"Coordinates probed per tensor (default: {GRADCHECK_SAMPLES})")
    grad.add_argument("--full", action="store_true", help="Also check the assembled model end to end")
    grad.add_argument("--seed", type=int, metavar="N", help="Random seed")
    grad.add_argument("--out", type=str, metavar="DIR", help="Write gradcheck.json here")
    grad.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    grad.set_defaults(func=cmd_gradcheck)

    ablate = sub.add_parser("ablate", help="Train module variants under one seed and compare")
    _add_common(ablate)
    ablate.add_argument("--variants", default="baseline,full", metavar="LIST",
                        help="Comma-separated variants or groups (default: baseline,full)")
    ablate.add_argument("--repeats", type=int, default=1, metavar="N", help="Seeds averaged per variant")
    ablate.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which would read as a numerical failure
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    _setup_logging(args.verbose)

    try:
        return args.func(args)
    except KeyboardInterrupt:
        console.print("\n[yellow]Run cancelled by user[/yellow]")
        return EXIT_VALIDATION
    except NumericalError as exc:
        console.print(f"\n[bold red]Numerical failure: {exc}[/bold red]")
        return EXIT_NUMERICAL
    except (GeleNetError, OSError) as exc:
        console.print(f"\n[red]Error: {exc}[/red]")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
