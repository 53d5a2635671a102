"""Command-line shell: synth / train / eval / infer / gradcheck / viz.

Exit codes: 0 success, 1 validation failure (bad arguments, bad inputs,
failed checks), 2 unexpected runtime error.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, save_config
from .synth import SceneParams, generate_dataset


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--config", type=str, default=None,
                        help="key=value configuration file")
    parser.add_argument("--out-dir", type=str, default="out",
                        help="output directory")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a single config entry (repeatable)")


def _build_config(args) -> RunConfig:
    config = load_config(args.config, overrides=args.set)
    if args.seed is not None:
        config.seed = args.seed
    return config.validate()


def _cmd_synth(args) -> int:
    config = _build_config(args)
    params = SceneParams(width=config.width, height=config.height,
                         max_disparity=config.max_disparity)
    paths = generate_dataset(args.out_dir, args.scenes, params, seed=config.seed)
    print(f"wrote {len(paths)} scenes under {args.out_dir}")
    return 0


def _cmd_train(args) -> int:
    from .train import train
    config = _build_config(args)
    result = train(config, args.dataset, args.out_dir)
    save_config(config, Path(args.out_dir) / "config.txt")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss curve: {result.loss_csv_path}")
    print(f"final loss: {result.losses[-1]!r}" if result.losses else "no iterations run")
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import evaluate, load_model
    config = _build_config(args)
    model = load_model(config, args.checkpoint)
    result = evaluate(model, args.dataset, config, out_dir=args.out_dir)
    print(result.aggregate.to_table())
    return 0


def _cmd_infer(args) -> int:
    from .evaluate import infer_pair, load_model, stacks_for_scene
    from .synth import load_scene
    from .viz import (save_colormapped_png, save_disparity_binary,
                      save_disparity_png16)
    config = _build_config(args)
    model = load_model(config, args.checkpoint)
    scene = load_scene(args.scene)
    left, right = stacks_for_scene(scene, config)
    disp, _ = infer_pair(model, left, right)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_disparity_png16(out_dir / "disparity.png", disp)
    save_disparity_binary(out_dir / "disparity.evsk", disp)
    save_colormapped_png(out_dir / "disparity_color.png", disp,
                         config.max_disparity - 1)
    print(f"wrote disparity outputs to {out_dir}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_suites
    config = _build_config(args)
    results = run_suites(args.ops, seed=config.seed)
    failed = False
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<24} max rel err {r.max_rel_err:.3e}  "
              f"(tol {r.tolerance:.0e})  {status}")
        failed |= not r.passed
    return 1 if failed else 0


def _cmd_viz(args) -> int:
    from .viz import (load_disparity_binary, load_disparity_png16,
                      save_colormapped_png)
    config = _build_config(args)
    path = Path(args.disparity)
    if path.suffix == ".png":
        disp, _ = load_disparity_png16(path)
    else:
        disp = load_disparity_binary(path)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / (path.stem + "_color.png")
    save_colormapped_png(out_path, disp, config.max_disparity - 1)
    print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evstereo",
        description="Event-camera stereo disparity estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene dataset")
    p.add_argument("--scenes", type=int, default=20)
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--dataset", type=str, required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--dataset", type=str, required=True)
    p.add_argument("--checkpoint", type=str, required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="run inference on one scene directory")
    p.add_argument("--scene", type=str, required=True)
    p.add_argument("--checkpoint", type=str, required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--ops", type=str, default="all",
                   help="substring selector over suite names, or 'all'")
    _add_common(p)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("viz", help="colormap a stored disparity map")
    p.add_argument("--disparity", type=str, required=True,
                   help="16-bit PNG or flat-binary disparity file")
    _add_common(p)
    p.set_defaults(func=_cmd_viz)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
