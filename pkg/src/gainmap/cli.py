"""Command-line front end for the gain-map pipeline.

Every stage is a subcommand over a run directory, so a pipeline can be
driven end to end (``gainmap full-run``) or stage by stage against the
artifacts already on disk::

    gainmap generate --config scene.yaml --out runs/demo
    gainmap full-run --config scene.yaml --out runs/demo --stage cluster
"""

from __future__ import annotations

import argparse
import sys

from .pipeline import (
    STAGES,
    ConfigError,
    load_config,
    run_pipeline,
    run_stage,
)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True,
                     help="pipeline config (YAML)")
    sub.add_argument("--out", default=None,
                     help="run directory (default: config output_dir)")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config's master seed")
    sub.add_argument("--baselines", choices=("on", "off"), default=None,
                     help="override whether baselines are evaluated")
    sub.add_argument("--threads", type=int, default=None,
                     help="worker processes for per-subregion training")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gainmap",
        description="construct channel gain maps from sparse measurements",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub = subs.add_parser(name, help=f"run the {name} stage")
        _add_common(sub)
    full = subs.add_parser("full-run", help="run all stages in order")
    _add_common(full)
    full.add_argument("--stage", default=None, metavar="NAME",
                      help="stop after this stage")
    return parser


def _resolve(args) -> tuple:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        cfg.seed = args.seed
    if args.baselines is not None:
        cfg.baselines.enabled = args.baselines == "on"
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg.threads = args.threads
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigError("no run directory: pass --out or set output_dir")
    return cfg, out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, out = _resolve(args)
        if args.command == "full-run":
            run_pipeline(cfg, out, stop_after=args.stage, log=print)
        else:
            info = run_stage(args.command, cfg, out)
            print(f"[{args.command}] {info}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
