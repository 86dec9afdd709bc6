"""Command-line entry point: train, eval, export-embeddings, ablate.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error
(including a non-finite loss abort). ``DAEC2_DETERMINISTIC=1`` forces
deterministic mode regardless of the configuration.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from .augment import PolicyError
from .config import (ConfigError, manifests_from_config, parse_config,
                     write_resolved)
from .event_io import EventIOError, load_manifest
from .evaluation import evaluate, export_embeddings, run_ablation
from .losses import NonFiniteLossError
from .representation import IngestionError
from .trainer import (CheckpointError, bundle_from_checkpoint, load_checkpoint,
                      train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

USAGE_ERRORS = (ConfigError, EventIOError, IngestionError, PolicyError,
                CheckpointError, FileNotFoundError)

PAPER4_GRID = [
    {"name": "baseline", "enable_selfsup": False, "enable_uncorr": False},
    {"name": "with_selfsup", "enable_selfsup": True, "enable_uncorr": False},
    {"name": "with_uncorr", "enable_selfsup": False, "enable_uncorr": True},
    {"name": "with_both", "enable_selfsup": True, "enable_uncorr": True},
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="daec2",
                     description="Frame-to-event domain adaptation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the full training schedule")
    p_train.add_argument("config", help="YAML configuration file")
    p_train.add_argument("--set", dest="overrides", action="append", default=[],
                         metavar="SECTION.KEY=VALUE",
                         help="override any configuration key")

    p_eval = sub.add_parser("eval", help="measure accuracy of a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data-root", required=True,
                        help="dataset root containing <split>/<label> dirs")
    p_eval.add_argument("--split", default="test")
    p_eval.add_argument("--domain", choices=("frame", "event"), required=True)
    p_eval.add_argument("--sensor-width", type=int, default=None)
    p_eval.add_argument("--sensor-height", type=int, default=None)

    p_exp = sub.add_parser("export-embeddings",
                           help="dump projected content features to CSV")
    p_exp.add_argument("--checkpoint", required=True)
    p_exp.add_argument("--frames-root")
    p_exp.add_argument("--events-root")
    p_exp.add_argument("--split", default="test")
    p_exp.add_argument("--sensor-width", type=int, default=None)
    p_exp.add_argument("--sensor-height", type=int, default=None)
    p_exp.add_argument("--layer", choices=("classifier_output", "content"),
                       default="classifier_output",
                       help="which representation to dump")
    p_exp.add_argument("--out", required=True)
    p_exp.add_argument("--force", action="store_true",
                       help="overwrite an existing output file")

    p_abl = sub.add_parser("ablate", help="train one run per flag combination")
    p_abl.add_argument("config", help="YAML configuration file")
    p_abl.add_argument("--grid", required=True,
                       help="'paper4' or a YAML file with a list of runs")
    p_abl.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE")
    p_abl.add_argument("--dry-run", action="store_true",
                       help="print the planned runs without training")
    return parser


def cmd_train(args) -> int:
    cfg = parse_config(args.config, args.overrides)
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, run_dir / "config.yaml")
    manifests = manifests_from_config(cfg)
    result = train(manifests, cfg.network, cfg.train, out_dir=run_dir,
                   frame_policy=cfg.frame_policy, event_policy=cfg.event_policy)
    print(f"run directory: {run_dir}")
    if result.checkpoint_path is not None:
        print(f"final checkpoint: {result.checkpoint_path}")
    if result.history:
        last = result.history[-1]
        printable = {k: round(v, 6) for k, v in last.items()}
        print(f"last epoch: {printable}")
    for domain, key in (("frame", "frames_test"), ("event", "events_test")):
        if key in manifests:
            print(evaluate(manifests[key], result.bundle, domain))
    return EXIT_OK


def _load_bundle(checkpoint_path):
    ckpt = load_checkpoint(checkpoint_path)
    return ckpt, bundle_from_checkpoint(ckpt)


def cmd_eval(args) -> int:
    ckpt, bundle = _load_bundle(args.checkpoint)
    width = args.sensor_width
    height = args.sensor_height
    manifest = load_manifest(args.data_root, args.split, width=width, height=height)
    report = evaluate(manifest, bundle, args.domain, epoch=ckpt.epoch)
    print(report)
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    if not args.frames_root and not args.events_root:
        raise ConfigError("provide --frames-root and/or --events-root")
    out = Path(args.out)
    if out.exists() and not args.force:
        raise ConfigError(f"{out} exists; pass --force to overwrite")
    _, bundle = _load_bundle(args.checkpoint)
    manifests = {}
    if args.frames_root:
        manifests["frame"] = load_manifest(args.frames_root, args.split)
    if args.events_root:
        manifests["event"] = load_manifest(args.events_root, args.split,
                                           width=args.sensor_width,
                                           height=args.sensor_height)
    dump = export_embeddings(manifests, bundle, out, layer=args.layer)
    print(f"wrote {len(dump.domains)} rows (dim {dump.vectors.shape[1]}) to {out}")
    return EXIT_OK


def _load_grid(spec: str):
    if spec == "paper4":
        return [dict(entry) for entry in PAPER4_GRID]
    path = Path(spec)
    if not path.is_file():
        raise ConfigError(f"grid file not found: {spec}")
    grid = yaml.safe_load(path.read_text())
    if not isinstance(grid, list) or not all(isinstance(g, dict) for g in grid):
        raise ConfigError(f"{spec} must contain a list of override mappings")
    return grid


def cmd_ablate(args) -> int:
    cfg = parse_config(args.config, args.overrides)
    grid = _load_grid(args.grid)
    if not grid:
        raise ConfigError("ablation grid is empty")
    if args.dry_run:
        for i, entry in enumerate(grid):
            name = entry.get("name", f"config_{i}")
            flags = {k: v for k, v in entry.items() if k != "name"}
            print(f"planned run {name}: {flags}")
        return EXIT_OK
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, run_dir / "config.yaml")
    manifests = manifests_from_config(cfg)
    rows = run_ablation(manifests, cfg.network, cfg.train, grid,
                        out_dir=run_dir, frame_policy=cfg.frame_policy,
                        event_policy=cfg.event_policy,
                        csv_path=run_dir / "ablation.csv")
    for row in rows:
        print(row)
    print(f"ablation table: {run_dir / 'ablation.csv'}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "export-embeddings":
            return cmd_export_embeddings(args)
        if args.command == "ablate":
            return cmd_ablate(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as e:
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # runtime failures map to exit 2
        print(f"failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
