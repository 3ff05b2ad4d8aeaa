"""Command-line interface.

Subcommands:

    gen       generate a synthetic dataset (photo / gt / gt2x + manifest)
    train     optimize a model on a manifest
    eval      score a checkpoint against a manifest (PSNR/SSIM/MSE)
    infer     run one photo through a checkpoint
    selftest  run the built-in sanity checks

Exit codes: 0 success, 1 operational error, 2 usage error. All commands
are deterministic given their inputs and seeds. The environment variable
DCE_THREADS caps worker threads for data-parallel sections.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import imageio, metrics, selftest, synthgen, train as train_mod
from .inference import run_pipeline
from .model import ModelConfig
from .synthgen import TransformBounds
from .train import TrainConfig, load_checkpoint, model_from_checkpoint

logger = logging.getLogger(__name__)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cropenhance",
        description="Crop an image embedded in a photo and enhance it.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--fg-dir", required=True, help="directory of foreground images")
    p.add_argument("--bg-dir", required=True, help="directory of background images")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--scale-min", type=float, default=0.5)
    p.add_argument("--scale-max", type=float, default=0.8)
    p.add_argument("--rot-max", type=float, default=25.0, help="max rotation, degrees")
    p.add_argument("--persp-jitter", type=float, default=0.05)

    p = sub.add_parser("train", help="train on a generated manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--croppers", type=int, default=1, help="stacked cropper count")
    p.add_argument("--no-enhancer", action="store_true",
                   help="train the cropper ablation without the enhancer")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--input-size", type=int, default=224,
                   help="photo side length (multiple of 32)")
    p.add_argument("--import-gamma", default=None, metavar="PATH",
                   help="checkpoint file whose feature-extractor weights to import")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--resolution", type=int, required=True,
                   help="224 for base-resolution scoring, 448 for 2x "
                        "(generally: ground-truth size or twice it)")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--sr-baseline", action="store_true",
                   help="for cropper-only checkpoints, score the bilinear "
                        "2x-then-downsample image (enhancer-comparable baseline)")

    p = sub.add_parser("infer", help="run one photo through a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="input photo (PNG/JPEG)")
    p.add_argument("--out", required=True, help="output directory")

    sub.add_parser("selftest", help="run built-in sanity checks")
    return parser


def cmd_gen(args):
    bounds = TransformBounds(
        scale_min=args.scale_min,
        scale_max=args.scale_max,
        rot_max_deg=args.rot_max,
        perspective_jitter=args.persp_jitter,
    )
    manifest = synthgen.generate_dataset(
        args.n, args.seed, bounds, args.fg_dir, args.bg_dir, args.out
    )
    print(f"wrote {args.n} samples; manifest at {manifest}")
    return 0


def cmd_train(args):
    if args.steps < 0:
        raise ValueError("--steps must be >= 0")
    model_cfg = ModelConfig(
        input_size=args.input_size,
        n_croppers=args.croppers,
        use_enhancer=not args.no_enhancer,
    )
    cfg = TrainConfig(
        model=model_cfg,
        learning_rate=args.lr,
        batch_size=args.batch,
        max_steps=args.steps,
        seed=args.seed,
        feature_import_path=args.import_gamma,
    )
    ckpt, history = train_mod.train_loop(cfg, args.manifest, args.out)
    final = history[-1][1] if history else float("nan")
    print(
        f"trained {cfg.max_steps} steps; final loss {final:.5f}; "
        f"checkpoint at {Path(args.out) / train_mod.CHECKPOINT_NAME}"
    )
    return 0


def cmd_eval(args):
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    report = metrics.evaluate_dataset(
        args.manifest, model, args.resolution, sr_roundtrip=args.sr_baseline
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    print(report.table())
    return 0


def cmd_infer(args):
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    photo = imageio.load_image(args.input)
    size = model.config.input_size
    if photo.shape[1] != size or photo.shape[2] != size:
        from .warp import resize_bilinear

        photo = resize_bilinear(photo, size, size)
    result = run_pipeline(model, photo)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    imageio.save_image(out_dir / "cropped.png", result.cropped, clamp=True)
    imageio.save_image(out_dir / "enhanced.png", result.enhanced, clamp=True)
    with open(out_dir / "affine.json", "w", encoding="utf-8") as fh:
        json.dump([t.tolist() for t in result.thetas], fh, indent=2)
        fh.write("\n")
    print(f"wrote cropped.png, enhanced.png, affine.json to {out_dir}")
    return 0


def cmd_selftest(_args):
    failures = selftest.run_selftest()
    return 0 if failures == 0 else 1


_HANDLERS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "selftest": cmd_selftest,
}


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except Exception as exc:
        logger.error("%s", exc)
        return 1


def main_entry():
    sys.exit(main())
