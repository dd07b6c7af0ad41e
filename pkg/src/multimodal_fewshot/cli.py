"""Command-line entry point: prepare | mine | train | evaluate | report.

Each command loads the JSON config, applies flag overrides, and runs one
pipeline stage. Exit code 0 on success; on failure a single machine-
parseable line `error: <message>` goes to stderr and the exit code is
nonzero.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ArgumentError, FewshotError
from .pipeline import Experiment, ExperimentConfig

COMMANDS = ("prepare", "mine", "train", "evaluate", "report")


def _parse_grid(text: str):
    """Parse a grid override like "16,32:0,1" (batch sizes : seeds)."""
    try:
        batch_part, seed_part = text.split(":")
        batch_sizes = tuple(int(b) for b in batch_part.split(",") if b)
        seeds = tuple(int(s) for s in seed_part.split(",") if s)
    except ValueError as exc:
        raise ArgumentError(f"--grid expects 'BS,BS,...:SEED,SEED,...', got {text!r}") from exc
    if not batch_sizes or not seeds:
        raise ArgumentError(f"--grid must name at least one batch size and one seed, got {text!r}")
    return batch_sizes, seeds


def _build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    raw = cfg.to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    if args.arm:
        arms = []
        for chunk in args.arm:
            arms.extend(a for a in chunk.split(",") if a)
        raw["arms"] = arms
    if args.grid is not None:
        batch_sizes, seeds = _parse_grid(args.grid)
        raw["grid"] = {"batch_sizes": list(batch_sizes), "seeds": list(seeds)}
    return ExperimentConfig.from_dict(raw)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="multimodal-fewshot",
        description="Few-shot speech-to-image matching experiments, end to end.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("prepare", "generate/ingest datasets, write splits, train background classifiers"),
        ("mine", "mine training pairs via the support-set pivot"),
        ("train", "train one checkpoint per (arm, batch size, seed) grid cell"),
        ("evaluate", "run all arms on the shared episode set and write reports"),
        ("report", "re-emit report files from stored evaluation results"),
    ):
        cmd = sub.add_parser(name, help=doc)
        cmd.add_argument("--config", required=True, help="path to the JSON experiment config")
        cmd.add_argument("--seed", type=int, help="override the master seed")
        cmd.add_argument("--arm", action="append", help="override arms (repeatable or comma separated)")
        cmd.add_argument("--out", help="override the output directory")
        cmd.add_argument("--grid", help="override the model grid, e.g. '16,32:0,1'")
    args = parser.parse_args(argv)

    try:
        cfg = _build_config(args)
        experiment = Experiment(cfg)
        getattr(experiment, args.command)()
    except (FewshotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
