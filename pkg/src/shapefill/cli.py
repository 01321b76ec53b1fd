"""Command-line entry point.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
Machine-readable output goes to files; the human summary to stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import CheckpointError, InvalidInputError, ManifestError, TrainingDiverged
from .losses import LossWeights
from .model import ModelConfig

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapefill",
                                description="Shape-guided object inpainting toolkit")
    p.add_argument("--workdir", default=".", help="root for relative paths (default: .)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="build training shards from a COCO-format manifest")
    sp.add_argument("--manifest", required=True, help="COCO-format annotation JSON")
    sp.add_argument("--images", default=".", help="image root directory (default: .)")
    sp.add_argument("--out", required=True, help="output shard directory")
    sp.add_argument("--min-frac", type=float, default=0.02, help="min hole area fraction (default: 0.02)")
    sp.add_argument("--max-frac", type=float, default=0.5, help="max hole area fraction (default: 0.5)")
    sp.add_argument("--border-margin", type=int, default=1, help="required border margin in px (default: 1)")

    sp = sub.add_parser("shapesworld", help="generate the procedural toy dataset")
    sp.add_argument("--n", type=int, required=True, help="number of images")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--classes", type=int, default=4, help="number of categories (default: 4)")
    sp.add_argument("--rho", type=float, default=1.0, help="class-background correlation in [0,1] (default: 1.0)")
    sp.add_argument("--canvas", type=int, default=64, help="image side length (default: 64)")
    sp.add_argument("--seed", type=int, default=0, help="RNG seed (default: 0)")

    sp = sub.add_parser("train", help="adversarial training")
    sp.add_argument("--config", default=None, help="JSON config file (flags override it)")
    sp.add_argument("--data", default=None, help="toy dataset directory")
    sp.add_argument("--out", default=None, help="run output directory")
    sp.add_argument("--steps", type=int, default=None, help="total optimization steps (default: 1000)")
    sp.add_argument("--batch-size", type=int, default=None, help="batch size (default: 16)")
    sp.add_argument("--lr", type=float, default=None, help="step size (default: 2e-4)")
    sp.add_argument("--seed", type=int, default=None, help="RNG seed (default: 0)")
    sp.add_argument("--image-size", type=int, default=None, help="model resolution (default: 64)")
    sp.add_argument("--channels", default=None, help="comma-separated per-scale widths (default: 32,64,128,256)")
    sp.add_argument("--checkpoint-interval", type=int, default=None, help="steps between checkpoints (default: 250)")
    sp.add_argument("--no-pce", action="store_true", help="ablation: disable the class-prediction pathway")
    sp.add_argument("--no-topdown", action="store_true", help="ablation: disable the semantic-map stream")
    sp.add_argument("--random-box-masks", action="store_true",
                    help="ablation: train on rectangle holes instead of object holes")
    sp.add_argument("--gan-variant", choices=("wgan-gp", "nonsat"), default=None,
                    help="adversarial objective (default: wgan-gp)")
    sp.add_argument("--no-ema", action="store_true", help="disable weight averaging")
    sp.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    sp.add_argument("--inject-nan-at", type=int, default=None,
                    help="diagnostic: corrupt a parameter at this step")

    sp = sub.add_parser("infer", help="inpaint one image + mask pair")
    sp.add_argument("--checkpoint", required=True, help="checkpoint directory")
    sp.add_argument("--image", required=True, help="input image file")
    sp.add_argument("--mask", required=True, help="hole mask file (255 = hole)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--num-samples", type=int, default=1, help="latent draws to emit (default: 1)")
    sp.add_argument("--seed", type=int, default=0, help="RNG seed (default: 0)")
    sp.add_argument("--hard-class", action="store_true",
                    help="harden the predicted class to one-hot before mapping")

    sp = sub.add_parser("eval", help="metrics on a dataset split")
    sp.add_argument("--checkpoint", required=True, help="checkpoint directory")
    sp.add_argument("--data", required=True, help="toy dataset directory")
    sp.add_argument("--fx", required=True, help="frozen feature extractor file")
    sp.add_argument("--out", default=None, help="report JSON path (default: report.json in checkpoint)")
    sp.add_argument("--n", type=int, default=512, help="max images to evaluate (default: 512)")
    sp.add_argument("--seed", type=int, default=0, help="latent seed (default: 0)")
    sp.add_argument("--grid", default=None, help="optional sample-grid PNG path")

    sp = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    sp.add_argument("--tolerance", type=float, default=1e-3, help="max relative error (default: 1e-3)")
    sp.add_argument("--seed", type=int, default=0, help="RNG seed (default: 0)")
    return p


def cmd_prepare(args) -> int:
    from .coco import read_coco_manifest
    from .samples import FilterConfig, InstanceAnnotation, load_image, make_samples
    try:
        manifest = read_coco_manifest(args.manifest, args.images)
    except ManifestError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    cfg = FilterConfig(args.min_frac, args.max_frac, args.border_margin)
    os.makedirs(args.out, exist_ok=True)
    shard = 0
    for rec in manifest.images:
        anns = [InstanceAnnotation(a.mask, a.category_id)
                for a in manifest.annotations_for(rec.id)]
        if not anns:
            continue
        target = load_image(rec.path)
        for s in make_samples(target, anns, cfg, manifest.num_classes):
            np.savez(os.path.join(args.out, f"sample_{shard:05d}.npz"),
                     masked_image=s.masked_image, hole=s.hole, target=s.target,
                     category=s.category, one_hot=s.one_hot)
            shard += 1
    summary = {"shards": shard, "skipped_annotations": manifest.warnings,
               "num_classes": manifest.num_classes}
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=1)
    if shard == 0:
        print("warning: no samples passed the instance filter", file=sys.stderr)
    print(f"wrote {shard} shards to {args.out}")
    return EXIT_OK


def cmd_shapesworld(args) -> int:
    from .shapesworld import ShapesWorldConfig, generate_shapesworld
    cfg = ShapesWorldConfig(canvas=args.canvas, num_classes=args.classes,
                            rho=args.rho, seed=args.seed)
    generate_shapesworld(cfg, args.n, args.out)
    print(f"wrote {args.n} images to {args.out}")
    return EXIT_OK


def _build_train_config(args):
    from .train import TrainConfig
    base = {}
    if args.config:
        with open(args.config) as f:
            base = json.load(f)
    model_kwargs = base.pop("model", {})
    weight_kwargs = base.pop("weights", {})
    cli_over = {
        "data_dir": args.data, "out_dir": args.out, "steps": args.steps,
        "batch_size": args.batch_size, "lr": args.lr, "seed": args.seed,
        "checkpoint_interval": args.checkpoint_interval,
        "gan_variant": args.gan_variant, "inject_nan_at": args.inject_nan_at,
    }
    base.update({k: v for k, v in cli_over.items() if v is not None})
    if args.image_size is not None:
        model_kwargs["image_size"] = args.image_size
    if args.channels is not None:
        model_kwargs["channels"] = tuple(int(c) for c in args.channels.split(","))
        model_kwargs["num_scales"] = len(model_kwargs["channels"])
    if args.no_pce:
        model_kwargs["use_pce"] = False
    if args.no_topdown:
        model_kwargs["use_top_down"] = False
    if args.random_box_masks:
        base["object_data"] = False
    if args.no_ema:
        base["ema"] = False
    if isinstance(model_kwargs.get("channels"), list):
        model_kwargs["channels"] = tuple(model_kwargs["channels"])
    cfg = TrainConfig(model=ModelConfig(**model_kwargs),
                      weights=LossWeights(**weight_kwargs), **base)
    if not cfg.data_dir or not cfg.out_dir:
        raise InvalidInputError("--data and --out are required (flag or config file)")
    return cfg


def cmd_train(args) -> int:
    from .train import fit
    try:
        cfg = _build_train_config(args)
        path = fit(cfg, resume=args.resume)
    except (InvalidInputError, ManifestError, CheckpointError, OSError,
            TypeError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDiverged as e:
        print(f"numerical failure: {e} (last checkpoint: {e.last_checkpoint})",
              file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"final checkpoint: {path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    import torch

    from .samples import composite, cut_hole, load_image, load_mask, save_image
    from .train import load_generator
    try:
        generator, _ = load_generator(args.checkpoint)
        if args.hard_class:
            generator.cfg.infer_class_mode = "hard"
        target = load_image(args.image)
        hole = load_mask(args.mask)
        if hole.shape != target.shape[1:]:
            raise InvalidInputError(
                f"mask size {hole.shape} does not match image {target.shape[1:]}")
        masked = cut_hole(target, hole)
    except (CheckpointError, InvalidInputError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    os.makedirs(args.out, exist_ok=True)
    rng = torch.Generator().manual_seed(args.seed)
    m = torch.from_numpy(masked)[None]
    h = torch.from_numpy(hole)[None, None]
    with torch.no_grad():
        for k in range(args.num_samples):
            z = torch.randn(1, generator.cfg.z_dim, generator=rng)
            out = generator(m, h, z)["output"][0].numpy()
            path = os.path.join(args.out, f"inpainted_{k:02d}.png")
            save_image(path, composite(out, masked, hole))
    print(f"wrote {args.num_samples} samples to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import evaluate, save_sample_grid
    from .features import load_extractor
    from .shapesworld import load_dataset, read_shapesworld_manifest
    from .train import load_generator
    try:
        generator, _ = load_generator(args.checkpoint)
        fx = load_extractor(args.fx)
        samples = load_dataset(read_shapesworld_manifest(args.data))[: args.n]
        if not samples:
            raise InvalidInputError(f"no samples in {args.data}")
        report = evaluate(generator, samples, fx, seed=args.seed)
    except (CheckpointError, ManifestError, InvalidInputError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    out = args.out or os.path.join(args.checkpoint, "report.json")
    with open(out, "w") as f:
        f.write(report.to_json())
    if args.grid:
        save_sample_grid(args.grid, samples[0], generator, seed=args.seed)
    print(f"n={report.n_images}  FID(toy feature space)={report.fid:.4f}  "
          f"lpips_proxy={report.lpips_proxy:.5f}")
    print(f"report written to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .train import grad_check
    report = grad_check(tolerance=args.tolerance, seed=args.seed)
    for e in report.entries:
        print(f"{e.status.upper():7s} {e.group}: max rel err {e.max_rel_err:.3e} "
              f"({e.checked} entries)")
    if not report.passed:
        print("gradient check failed", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workdir != ".":
        os.chdir(args.workdir)
    handlers = {
        "prepare": cmd_prepare,
        "shapesworld": cmd_shapesworld,
        "train": cmd_train,
        "infer": cmd_infer,
        "eval": cmd_eval,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except InvalidInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
