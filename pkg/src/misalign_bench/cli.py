"""Command-line entry point: misalign-bench <stage> --config <path>.

Exit codes: 0 success, 1 usage/config error, 2 completed on partial data.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .client import StoreError
from .dataset import ManifestError
from .pngio import LabelMapError

STAGES = {
    "corrupt": harness.cmd_corrupt,
    "seg-score": harness.cmd_seg_score,
    "eval-vlm": harness.cmd_eval_vlm,
    "metrics": harness.cmd_metrics,
    "correlate": harness.cmd_correlate,
    "report": harness.cmd_report,
}

_HELP = {
    "corrupt": "materialize the degraded image tree",
    "seg-score": "score segmentation predictions against ground truth",
    "eval-vlm": "fetch and/or parse model responses",
    "metrics": "compute per-condition misalignment rows",
    "correlate": "correlate quality with misalignment",
    "report": "bundle artifacts, checksums and a summary",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="misalign-bench",
        description="Deterministic evaluation pipeline for perception degradation "
                    "and language-level misalignment.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", required=True, type=Path, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override global_seed")
        p.add_argument("--jobs", type=int, default=None, help="override worker count")
        p.add_argument("--out", type=Path, default=None, help="override out_dir")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = harness.RunConfig.from_file(args.config)
        if args.seed is not None:
            cfg = replace(cfg, global_seed=args.seed)
        if args.jobs is not None:
            cfg = replace(cfg, jobs=args.jobs)
        if args.out is not None:
            cfg = replace(cfg, out_dir=args.out)
        cfg.validate_paths()
        return STAGES[args.stage](cfg)
    except (harness.ConfigError, ManifestError, StoreError, LabelMapError, ValueError) as e:
        print(f"misalign-bench {args.stage}: error: {e}", file=sys.stderr)
        return harness.EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
