#!/usr/bin/env python3
# scripts/make_micrograph.py
"""Write a synthetic two-phase micrograph as a binary graymap (hard phase black)."""

import argparse
import os
import sys

PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from core.errors import FFTMechError
from core.microstructure import make_synthetic_micrograph, write_pgm


def main():
    parser = argparse.ArgumentParser(description="Generate a synthetic two-phase micrograph")
    parser.add_argument("output", help="Output .pgm path")
    parser.add_argument("--size", type=int, nargs=2, default=[45, 45], help="Pixels per axis (default: 45 45)")
    parser.add_argument("--hard-fraction", type=float, default=0.3, help="Area fraction of the hard phase (default: 0.3)")
    parser.add_argument("--seed", type=int, default=1, help="Random seed (default: 1)")
    parser.add_argument("--sigma", type=float, default=2.0, help="Smoothing length in pixels (default: 2.0)")
    args = parser.parse_args()

    try:
        pg = make_synthetic_micrograph(args.size, args.hard_fraction, seed=args.seed, sigma=args.sigma)
        path = write_pgm(args.output, pg)
    except FFTMechError as e:
        print(f"ERROR: {e}")
        sys.exit(1)

    print(f"Wrote {path} ({args.size[0]}x{args.size[1]}, hard fraction {pg.fractions[1]:.4f})")


if __name__ == "__main__":
    main()
