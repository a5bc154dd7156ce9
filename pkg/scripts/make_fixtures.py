#!/usr/bin/env python3
"""Materialize a synthetic offline fixture tree for pipeline runs.

Writes images, ground-truth maps, a manifest, degradation-matched prediction
trees, recorded generative responses and contrastive score vectors, plus a
ready-to-use run config. Everything is seeded and bit-reproducible.
"""

import argparse
from pathlib import Path

from misalign_bench.synthdata import build_fixture


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("root", type=Path, help="target directory")
    parser.add_argument("--images", type=int, default=10)
    parser.add_argument("--height", type=int, default=96)
    parser.add_argument("--width", type=int, default=128)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--per-image", action="store_true",
                        help="enable per-image quality/metric emission in the config")
    args = parser.parse_args()
    config = build_fixture(args.root, n_images=args.images, height=args.height,
                           width=args.width, seed=args.seed,
                           emit_per_image=args.per_image)
    print(f"fixture ready; run e.g.:\n  misalign-bench corrupt --config {config}")


if __name__ == "__main__":
    main()
