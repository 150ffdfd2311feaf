"""Unified command-line entry point.

Every subcommand is a thin wrapper over one library operation.  A ``--config``
file provides defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (CONFIG_SCHEMA_VERSION, RunConfig, load_run_config,
                     write_sidecar)
from .dataset import generate_dataset, load_arrays, load_labeled_dir
from .errors import ConfigError, LisaliencyError
from .experiments import BlurConfig, run_blur_experiment
from .imageio import load_image, save_map_csv, save_map_png
from .network import TAP_AFTER, TAP_BEFORE, forward, load_network_spec, top_k_indices
from .preprocess import preprocess
from .saliency import attention_map, saliency_map
from .sanity import RandomizationPlan, run_randomization_test
from .training import TrainConfig, train
from .weights_io import load_weights, save_weights

_TAP_FLAGS = {"after": TAP_AFTER, "before": TAP_BEFORE}


def _li_flags(p) -> None:
    p.add_argument("--li-a", type=float, help="inhibition average-term coefficient")
    p.add_argument("--li-b", type=float, help="inhibition differential-term coefficient")
    p.add_argument("--li-k", type=int, help="inhibition zone side length (odd)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lisaliency",
        description="Lateral-inhibition saliency maps, sanity checks, and "
                    "background-blur experiments.",
    )
    parser.add_argument(
        "--version", action="version",
        version=f"lisaliency {__version__} (config schema {CONFIG_SCHEMA_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration file; flags override it")

    p = sub.add_parser("gen-data", help="generate the shapes-on-scenes corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--train", type=int, default=512)
    p.add_argument("--test", type=int, default=256)
    p.add_argument("--adversarial", type=int, default=256)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a classifier on a dataset split")
    common(p)
    p.add_argument("--dataset", help="split directory with images/ and labels.csv")
    p.add_argument("--spec")
    p.add_argument("--out", help="weight file to write")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="print top-5 predictions for an image")
    common(p)
    p.add_argument("--image")
    p.add_argument("--weights")
    p.add_argument("--spec")
    p.set_defaults(func=cmd_classify)

    for name, help_text in (("attention", "category-specific attention map"),
                            ("saliency", "top-5 fused saliency map")):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.add_argument("--image")
        p.add_argument("--weights")
        p.add_argument("--spec")
        if name == "attention":
            p.add_argument("--category", type=int, required=True)
        p.add_argument("--tap", choices=sorted(_TAP_FLAGS))
        p.add_argument("--li-source", choices=["gradient", "activation"])
        _li_flags(p)
        p.add_argument("--out", help="grayscale PNG rendering")
        p.add_argument("--out-raw", help="raw CSV map (canonical)")
        p.set_defaults(func=cmd_attention if name == "attention" else cmd_saliency)

    p = sub.add_parser("sanity", help="model-parameter randomization test")
    common(p)
    p.add_argument("--mode", choices=["cascading", "independent"], required=True)
    p.add_argument("--image")
    p.add_argument("--weights")
    p.add_argument("--spec")
    p.add_argument("--tap", choices=sorted(_TAP_FLAGS))
    p.add_argument("--li-source", choices=["gradient", "activation"])
    _li_flags(p)
    p.add_argument("--seeds", type=int)
    p.add_argument("--out", help="CSV of similarity records")
    p.set_defaults(func=cmd_sanity)

    p = sub.add_parser("blur-exp", help="background/foreground blur experiment")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--weights")
    p.add_argument("--spec")
    p.add_argument("--tap", choices=sorted(_TAP_FLAGS))
    p.add_argument("--li-source", choices=["gradient", "activation"])
    _li_flags(p)
    p.add_argument("--radii", help="comma-separated blur radii, default 2,5,10")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", help="accuracy report CSV")
    p.add_argument("--flips", help="per-image flip list CSV")
    p.set_defaults(func=cmd_blur_exp)

    return parser


def _resolve(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    updates = {}
    for flag, key in (("spec", "spec"), ("weights", "weights"), ("dataset", "dataset"),
                      ("image", "image"), ("out", "out"), ("seed", "seed"),
                      ("lr", "train_lr"), ("epochs", "train_epochs"),
                      ("batch", "train_batch"), ("threshold", "mask_threshold"),
                      ("li_source", "li_source"), ("seeds", "sanity_seeds"),
                      ("li_a", "li_a"), ("li_b", "li_b"), ("li_k", "li_k")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[key] = value
    if getattr(args, "tap", None) is not None:
        updates["tap"] = _TAP_FLAGS[args.tap]
    if getattr(args, "radii", None) is not None:
        updates["blur_radii"] = tuple(float(r) for r in args.radii.split(","))
    return replace(cfg, **updates)


def _require(cfg: RunConfig, *keys):
    for key in keys:
        if not getattr(cfg, key):
            raise ConfigError(f"missing required setting {key!r} (flag or config file)")


def _load_net(cfg: RunConfig):
    spec = load_network_spec(cfg.spec)
    weights = load_weights(cfg.weights, spec)
    return spec, weights


def _load_net_input(cfg: RunConfig, spec):
    return preprocess(load_image(cfg.image), cfg.preprocess_config(spec))


# ------------------------------------------------------------- subcommands

def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    counts = {"train": args.train, "test": args.test, "adversarial": args.adversarial}
    written = generate_dataset(cfg.out, cfg.seed, counts)
    for split, n in written.items():
        print(f"{split}: {n} images")
    write_sidecar(Path(cfg.out) / "dataset", cfg, seed=cfg.seed, extra=written)
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    _require(cfg, "dataset", "spec", "out")
    spec = load_network_spec(cfg.spec)
    images, labels = load_arrays(cfg.dataset, cfg.preprocess_config(spec))
    tcfg = TrainConfig(cfg.train_lr, cfg.train_epochs, cfg.train_batch, cfg.seed)
    weights, curve = train(
        spec, images, labels, tcfg,
        log=lambda e, loss: print(f"epoch {e + 1}/{tcfg.epochs}: loss {loss:.4f}"),
    )
    save_weights(weights, cfg.out)
    write_sidecar(cfg.out, cfg, seed=cfg.seed, weights_path=cfg.out,
                  extra={"final_loss": f"{curve[-1]:.6f}"})
    print(f"saved weights to {cfg.out}")
    return 0


def cmd_classify(args) -> int:
    cfg = _resolve(args)
    _require(cfg, "image", "weights", "spec")
    spec, weights = _load_net(cfg)
    probs = forward(spec, weights, _load_net_input(cfg, spec))
    for rank, idx in enumerate(top_k_indices(probs, min(5, spec.num_classes)), start=1):
        print(f"{rank},{idx},{spec.class_names[idx]},{probs[idx]:.6f}")
    return 0


def cmd_attention(args) -> int:
    cfg = _resolve(args)
    _require(cfg, "image", "weights", "spec")
    spec, weights = _load_net(cfg)
    amap = attention_map(spec, weights, _load_net_input(cfg, spec), args.category,
                         cfg.li_params(), cfg.tap, cfg.li_source,
                         cfg.spatial_layers_only)
    _emit_map(cfg, amap.values, args.out_raw)
    if amap.degenerate:
        print("warning: degenerate (all-zero) attention map", file=sys.stderr)
    return 0


def _emit_map(cfg: RunConfig, values: np.ndarray, out_raw) -> None:
    wrote = False
    if cfg.out:
        save_map_png(cfg.out, values)
        write_sidecar(cfg.out, cfg, seed=cfg.seed, weights_path=cfg.weights)
        wrote = True
    if out_raw:
        save_map_csv(out_raw, values)
        write_sidecar(out_raw, cfg, seed=cfg.seed, weights_path=cfg.weights)
        wrote = True
    if not wrote:
        raise ConfigError("nothing to do: pass --out and/or --out-raw")


def cmd_saliency(args) -> int:
    cfg = _resolve(args)
    _require(cfg, "image", "weights", "spec")
    spec, weights = _load_net(cfg)
    smap = saliency_map(spec, weights, _load_net_input(cfg, spec), cfg.li_params(),
                        cfg.tap, cfg.li_source, cfg.spatial_layers_only)
    _emit_map(cfg, smap.values, args.out_raw)
    print("categories:", ",".join(str(c) for c in smap.categories))
    if smap.degenerate:
        print("warning: degenerate (all-zero) saliency map", file=sys.stderr)
    return 0


def cmd_sanity(args) -> int:
    cfg = _resolve(args)
    _require(cfg, "image", "weights", "spec", "out")
    spec, weights = _load_net(cfg)
    image = _load_net_input(cfg, spec)
    with open(cfg.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "layer_name", "seed", "hog_pearson", "spearman"])
        for s in range(cfg.sanity_seeds):
            plan = RandomizationPlan.for_spec(spec, args.mode, cfg.seed + s)
            for rec in run_randomization_test(spec, weights, image, plan,
                                              cfg.li_params(), cfg.tap,
                                              cfg.li_source, cfg.spatial_layers_only):
                writer.writerow([rec.stage, rec.layer_name, rec.seed,
                                 f"{rec.hog_pearson:.6f}", f"{rec.spearman:.6f}"])
    write_sidecar(cfg.out, cfg, seed=cfg.seed, weights_path=cfg.weights,
                  extra={"mode": args.mode})
    print(f"wrote {cfg.out}")
    return 0


def cmd_blur_exp(args) -> int:
    cfg = _resolve(args)
    _require(cfg, "dataset", "weights", "spec", "out")
    spec, weights = _load_net(cfg)
    samples = load_labeled_dir(cfg.dataset)
    blur = BlurConfig(cfg.blur_radii, cfg.mask_threshold)
    report = run_blur_experiment(spec, weights, samples, blur,
                                 cfg.preprocess_config(spec), cfg.li_params(),
                                 cfg.tap, cfg.li_source, cfg.spatial_layers_only)
    with open(cfg.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "region", "radius", "top1", "top5", "n"])
        for row in report.variants:
            writer.writerow([row.variant, row.region, f"{row.radius:g}",
                             f"{row.top1:.6f}", f"{row.top5:.6f}", row.count])
    write_sidecar(cfg.out, cfg, seed=cfg.seed, weights_path=cfg.weights)
    if args.flips:
        with open(args.flips, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", "radius", "original_top1", "blurred_top1",
                             "label"])
            for flip in report.flips:
                writer.writerow([flip.image_id, f"{flip.radius:g}",
                                 flip.original_top1, flip.blurred_top1, flip.label])
        write_sidecar(args.flips, cfg, seed=cfg.seed, weights_path=cfg.weights)
    for row in report.variants:
        print(f"{row.variant}: top1 {row.top1:.3f} top5 {row.top5:.3f} (n={row.count})")
    return 0


# ------------------------------------------------------------------- main

def cli_main(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except LisaliencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
