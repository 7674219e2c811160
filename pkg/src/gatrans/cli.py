"""Command-line entry points."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import bench_attention
from .checkpoint import CheckpointError, load_models, save_models
from .config import ConfigError, build_configs, parse_config_file
from .data import (DEFAULT_PALETTE, DataError, load_dataset, save_label_png,
                   synth_dataset)
from .losses import metrics_csv
from .models import Discriminator, GTNet
from .training import evaluate, sliding_window_infer, train

log = logging.getLogger("gatrans")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    p = _Parser(prog="gatrans", description="bucketed-attention segmentation stack")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--images", type=int, default=200)
    sp.add_argument("--val-images", type=int, default=40)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)

    tp = sub.add_parser("train", help="train generator and discriminator")
    tp.add_argument("--config", default=None)
    tp.add_argument("--data", required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--seed", type=int, default=None)

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--data", required=True)
    ep.add_argument("--split", default="val")
    ep.add_argument("--out", required=True)

    ip = sub.add_parser("infer", help="sliding-window inference on one image")
    ip.add_argument("--checkpoint", required=True)
    ip.add_argument("--image", required=True)
    ip.add_argument("--out", required=True)
    ip.add_argument("--tile", type=int, default=64)
    ip.add_argument("--overlap", type=int, default=8)

    bp = sub.add_parser("bench", help="attention scaling benchmark")
    bp.add_argument("--mode", choices=["attn"], default="attn")
    bp.add_argument("--sizes", default="1024,2048,4096,8192")
    bp.add_argument("--c", type=int, default=64)
    bp.add_argument("--tokens-per-bucket", type=int, default=16)
    bp.add_argument("--repeats", type=int, default=5)
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--out", required=True)
    return p


def _load_configs(args):
    kv = parse_config_file(args.config) if args.config else {}
    gcfg, dcfg, tcfg, swc = build_configs(kv)
    if getattr(args, "seed", None) is not None:
        tcfg.seed = args.seed
    return gcfg, dcfg, tcfg, swc


def _cmd_synth(args):
    synth_dataset(args.out, args.images, args.val_images, size=args.size,
                  seed=args.seed)
    print(f"wrote {args.images} train + {args.val_images} val scenes to {args.out}")
    return 0


def _cmd_train(args):
    gcfg, dcfg, tcfg, _ = _load_configs(args)
    samples = load_dataset(args.data)
    train_s = [s for s in samples if s.split == "train"]
    val_s = [s for s in samples if s.split == "val"]
    G = GTNet(gcfg, seed=tcfg.seed)
    D = Discriminator(dcfg, seed=tcfg.seed + 1)
    print(f"generator parameters: {G.param_count}")
    print(f"discriminator parameters: {D.param_count}")
    history, ckpt = train(train_s, val_s, G, D, tcfg, args.out,
                          class_names=DEFAULT_PALETTE.names)
    if history:
        best = max(r["val_mean_f1"] for r in history)
        print(f"best validation mean F1: {best:.4f}")
    print(f"checkpoint: {ckpt}")
    return 0


def _cmd_eval(args):
    G, _, _ = load_models(args.checkpoint)
    samples = [s for s in load_dataset(args.data) if s.split == args.split]
    if not samples:
        raise DataError(f"no samples in split {args.split!r}")
    cm = evaluate(G, samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = metrics_csv(cm, DEFAULT_PALETTE.names)
    (out / "metrics.csv").write_text(text)
    print(text, end="")
    return 0


def _cmd_infer(args):
    from .training import SlidingWindowConfig
    from PIL import Image
    G, _, _ = load_models(args.checkpoint)
    img = np.asarray(Image.open(args.image).convert("RGB")).astype(np.float32) / 255.0
    swc = SlidingWindowConfig(tile=args.tile, overlap=args.overlap)
    labels = sliding_window_infer(np.ascontiguousarray(img.transpose(2, 0, 1)), G, swc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dst = out / (Path(args.image).stem + "_pred.png")
    save_label_png(dst, labels)
    print(f"wrote {dst}")
    return 0


def _cmd_bench(args):
    sizes = [int(s) for s in args.sizes.split(",")]
    result = bench_attention(sizes, c=args.c, tokens_per_bucket=args.tokens_per_bucket,
                             repeats=args.repeats, seed=args.seed, out_dir=args.out)
    for n, td, tg in result["rows"]:
        print(f"n={n}: dense {td * 1e3:.2f} ms, bucketed {tg * 1e3:.2f} ms")
    print(f"log-log slopes: dense {result['slope_dense']:.2f}, "
          f"bucketed {result['slope_glam']:.2f}")
    return 0


def cli(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    handlers = {"synth": _cmd_synth, "train": _cmd_train, "eval": _cmd_eval,
                "infer": _cmd_infer, "bench": _cmd_bench}
    try:
        return handlers[args.command](args)
    except (DataError, CheckpointError, ConfigError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
