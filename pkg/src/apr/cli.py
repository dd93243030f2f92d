"""``apr`` command line: train, eval, plot, render-debug, warp-image.

Exit codes: 0 ok, 2 configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


def _save_png(arr, path):
    from PIL import Image
    Image.fromarray(np.clip(np.rint(np.asarray(arr) * 255), 0, 255).astype(np.uint8)).save(path)


def cmd_train(args) -> int:
    from apr import config as C
    from apr.harness import train
    try:
        cfg = C.load(args.config, args.set, desk=not args.full_scale)
    except C.ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(args.out or f"runs/{cfg.variant}-s{cfg.seed}")
    train(cfg, out, record_episodes=args.record_episodes)
    print(out)
    return EXIT_OK


def cmd_eval(args) -> int:
    from apr.harness import evaluate
    from apr.tensor import CheckpointError
    if args.episodes < 1:
        print(f"config error: --episodes must be >= 1, got {args.episodes}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res = evaluate(args.ckpt, args.episodes)
    except (FileNotFoundError, CheckpointError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"success {res.successes}/{res.episodes} = {res.rate:.3f} "
          f"(95% CI [{res.ci_low:.3f}, {res.ci_high:.3f}])")
    return EXIT_OK


def cmd_plot(args) -> int:
    from apr.harness import emit_plots
    try:
        emit_plots(args.dirs, args.out)
    except FileNotFoundError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(Path(args.out) / "learning_curves.svg")
    return EXIT_OK


def cmd_render_debug(args) -> int:
    from apr import fovea, raycam
    from apr.head import HeadSampler
    from apr.scene import spawn
    from apr.tensor import numpy_rng

    world = spawn(args.seed, args.objects)
    rng = numpy_rng(args.seed)
    sampler = HeadSampler(resolution=args.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fixation = np.array(world.objects[0].position)
    spec = None
    for _ in range(args.view + 1):
        spec = sampler.sample(fixation, rng)
    res = raycam.render(world, spec.camera)
    depth = np.where(np.isfinite(res.depth), res.depth, np.nan)
    d = (depth - np.nanmin(depth)) / max(np.nanmax(depth) - np.nanmin(depth), 1e-9)
    _save_png(np.nan_to_num(d, nan=1.0), out / "depth.png")
    colors = np.vstack([raycam.BACKGROUND_RGB, raycam.PALETTE])
    inst = colors[np.where(res.instance == raycam.GRIPPER_ID, 0, res.instance) % len(colors)]
    inst[res.instance == raycam.GRIPPER_ID] = 1.0
    _save_png(inst, out / "instance.png")
    _save_png(res.rgb, out / "rgb.png")
    _save_png(fovea.sample(res.rgb, fovea.build_grid(args.resolution // 4)), out / "foveated.png")
    print(out)
    return EXIT_OK


def cmd_warp_image(args) -> int:
    from PIL import Image
    from apr import fovea
    try:
        img = np.asarray(Image.open(args.image).convert("RGB"), dtype=float) / 255.0
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.size < 2:
        print("config error: --size must be >= 2", file=sys.stderr)
        return EXIT_CONFIG
    _save_png(fovea.sample(img, fovea.build_grid(args.size)), args.out)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run")
    t.add_argument("--config", help="JSON config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-path override, repeatable")
    t.add_argument("--out", help="run directory (default runs/<variant>-s<seed>)")
    t.add_argument("--record-episodes", type=int, default=0, metavar="N",
                   help="write replay files for the first N episodes")
    t.add_argument("--full-scale", action="store_true", help="start from 64x64/256x256 defaults")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--episodes", type=int, default=100)
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="learning curves and summary table")
    pl.add_argument("dirs", nargs="+")
    pl.add_argument("--out", default="plots")
    pl.set_defaults(func=cmd_plot)

    r = sub.add_parser("render-debug", help="render one sampled view to PNGs")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--view", type=int, default=0, help="index of the sampled viewpoint")
    r.add_argument("--objects", type=int, default=5)
    r.add_argument("--resolution", type=int, default=256)
    r.add_argument("--out", default="render-debug")
    r.set_defaults(func=cmd_render_debug)

    w = sub.add_parser("warp-image", help="foveate a PNG")
    w.add_argument("image")
    w.add_argument("--size", type=int, default=64)
    w.add_argument("--out", default="foveated.png")
    w.set_defaults(func=cmd_warp_image)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
