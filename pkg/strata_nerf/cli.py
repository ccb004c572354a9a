"""
Strata-NeRF - Command Line
==========================

::

    strata-nerf gen       --preset two-level --seed 7 --out data/two-level
    strata-nerf train     data/two-level --out runs/full --iterations 2000
    strata-nerf render    runs/full/checkpoint.bin --data data/two-level --out renders [--orbit]
    strata-nerf eval      runs/full/checkpoint.bin --data data/two-level --out eval
    strata-nerf ablate    --data data/two-level --out runs/ablation --iterations 500
    strata-nerf selfcheck

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

import pandas as pd

from .checkpoint import load_checkpoint
from .config import RunConfig, parse_config
from .errors import ConfigError, StrataError, UsageError
from .field import make_field, parameter_ledger
from .image_io import write_pfm, write_ppm
from .metrics import evaluate
from .parallel import map_ordered
from .rendering import render_image
from .scenegen import load_manifest, make_preset, orbit_cameras, write_dataset
from .selfcheck import run_selfcheck
from .sweep import make_ablation_sweep, run_ablation_sweep
from .training import train

logger = logging.getLogger(__name__)

COMMANDS = ("gen", "train", "render", "eval", "ablate", "selfcheck")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(message)


def parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got '{value}'")


def _int_list(value: str) -> list[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{value}'") from None


def _str_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    model = ArgumentParser(add_help=False)
    model.add_argument("--variant")
    model.add_argument("--codebook-size", type=int)
    model.add_argument("--iterations", type=int)
    model.add_argument("--shared-codebook", type=parse_bool, metavar="BOOL")
    model.add_argument("--use-level-encoding", type=parse_bool, metavar="BOOL")
    model.add_argument("--unbounded", type=parse_bool, metavar="BOOL")

    scene = ArgumentParser(add_help=False)
    scene.add_argument("--preset")
    scene.add_argument("--resolution", type=int)

    select = ArgumentParser(add_help=False)
    select.add_argument("--data", type=Path, required=True, help="dataset directory or manifest.json")
    select.add_argument("--split", choices=["train", "val", "test"])
    select.add_argument("--level", type=int)

    parser = ArgumentParser(prog="strata-nerf", description="Stratified neural radiance fields at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")

    gen = sub.add_parser("gen", parents=[common, scene], help="generate a procedural stratified dataset")
    gen.add_argument("--out", type=Path, required=True)

    tr = sub.add_parser("train", parents=[common, model], help="train one model on a dataset")
    tr.add_argument("manifest", type=Path, help="dataset directory or manifest.json")
    tr.add_argument("--out", type=Path, required=True)
    tr.add_argument("--progress", action="store_true", help="show a progress bar")

    rd = sub.add_parser("render", parents=[common, select], help="render a checkpoint")
    rd.add_argument("checkpoint", type=Path)
    rd.add_argument("--out", type=Path, required=True)
    rd.add_argument("--orbit", action="store_true", help="render an orbit on the level's camera shell")

    ev = sub.add_parser("eval", parents=[common, select], help="score a checkpoint against ground truth")
    ev.add_argument("checkpoint", type=Path)
    ev.add_argument("--out", type=Path, required=True)

    ab = sub.add_parser("ablate", parents=[common, model, scene], help="variant x codebook-size sweep")
    ab.add_argument("--data", type=Path, help="dataset; the configured preset is generated when omitted")
    ab.add_argument("--out", type=Path, required=True)
    ab.add_argument("--variants", type=_str_list)
    ab.add_argument("--codebook-sizes", type=_int_list)

    sc = sub.add_parser("selfcheck", parents=[common], help="run the numerical self checks")
    sc.add_argument("--points", type=int, default=20, help="random points per gradient check")
    return parser


_OVERRIDES = {
    "seed": "seed",
    "variant": "variant",
    "codebook_size": "codebook_size",
    "iterations": "iterations",
    "shared_codebook": "shared_codebook",
    "use_level_encoding": "use_level_encoding",
    "unbounded": "unbounded",
    "preset": "preset",
    "resolution": "resolution",
    "split": "split",
    "level": "level",
    "variants": "ablate_variants",
    "codebook_sizes": "ablate_codebook_sizes",
}


def overrides_from_args(args: argparse.Namespace) -> dict[str, Any]:
    return {key: getattr(args, attr) for attr, key in _OVERRIDES.items() if getattr(args, attr, None) is not None}


def _resolve_paths(args: argparse.Namespace) -> None:
    for name in ("config", "out", "data", "manifest", "checkpoint"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(args, name, value.expanduser().resolve())


# ------------------------------------------------------------
# Subcommands
# ------------------------------------------------------------

def cmd_gen(args: argparse.Namespace, config: RunConfig) -> int:
    scene = make_preset(config.scene.preset, config.scene.resolution, config.scene.counts)
    manifest = write_dataset(scene, args.out, config.seed)
    config.write(args.out)
    print(f"wrote {len(manifest.frames)} frames ({scene.num_levels} levels) to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    manifest = load_manifest(args.manifest)
    config.write(args.out)
    ledger = parameter_ledger(config.model, manifest.num_levels)
    print(pd.DataFrame([ledger]).to_markdown(index=False))
    result = train(manifest, config.train, args.out, progress=args.progress)
    if result.log:
        last = result.log[-1]
        print(f"step {last.step}: loss {last.loss_total:.5f}, batch psnr {last.psnr_train_batch:.2f} dB")
    print(f"checkpoint: {result.checkpoint}")
    return 0


def cmd_render(args: argparse.Namespace, config: RunConfig) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.data)
    checkpoint.check_levels(manifest.num_levels)
    field_fn = make_field(checkpoint.params, checkpoint.config)
    options = config.train.render_options

    if args.orbit:
        level = config.eval.level or 0
        cameras = orbit_cameras(manifest.scene, level, config.eval.orbit_views, config.eval.orbit_elevation)
        jobs = [(f"orbit_L{level}_{k:03d}", camera) for k, camera in enumerate(cameras)]
    else:
        frames = manifest.frames_for(config.eval.split, config.eval.level)
        jobs = [(frame.frame_id, manifest.camera(frame)) for frame in frames]

    (args.out / "images").mkdir(parents=True, exist_ok=True)
    (args.out / "depth").mkdir(parents=True, exist_ok=True)

    def render_one(job):
        name, camera = job
        image, depth = render_image(camera, field_fn, manifest.background(camera.level), options)
        write_ppm(args.out / "images" / f"{name}.ppm", image)
        write_pfm(args.out / "depth" / f"{name}.pfm", depth)
        return name

    names = map_ordered(render_one, jobs)
    config.write(args.out)
    print(f"rendered {len(names)} views to {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    manifest = load_manifest(args.data)
    report = evaluate(args.checkpoint, manifest, config.eval.split, config.eval.level,
                      config.train.render_options, ssim_grayscale=config.eval.ssim_grayscale)
    report.write(args.out)
    config.write(args.out)
    print(report.summary_markdown())
    return 0


def cmd_ablate(args: argparse.Namespace, config: RunConfig) -> int:
    config.write(args.out)
    app = make_ablation_sweep(config, args.out)
    state = run_ablation_sweep(app, config, args.data)
    print(Path(state["report_path"]).read_text())
    return 0


def cmd_selfcheck(args: argparse.Namespace, config: RunConfig) -> int:
    results = run_selfcheck(config.seed, args.points)
    for result in results:
        print(f"{'PASS' if result.passed else 'FAIL'}  {result.name:<28} {result.detail}")
    print(pd.DataFrame([parameter_ledger(config.model, 3)]).to_markdown(index=False))
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 2


HANDLERS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "render": cmd_render,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "selfcheck": cmd_selfcheck,
}


def run(argv: list[str] | None = None) -> int:
    """Parse ``argv`` and run one subcommand; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=args.log_level, format=LOG_FORMAT, force=True)
        _resolve_paths(args)
        config = parse_config(args.config, overrides_from_args(args))
        return HANDLERS[args.command](args, config)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"strata-nerf: error: {exc}", file=sys.stderr)
        return 1
    except (StrataError, OSError) as exc:
        print(f"strata-nerf: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
