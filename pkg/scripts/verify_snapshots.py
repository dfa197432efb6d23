#!/usr/bin/env python3
# scripts/verify_snapshots.py
"""Verify the snapshots of a run: arrays reconstruct from metadata and mean(F) equals Fbar."""

import argparse
import os
import sys

PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

import numpy as np

from core.errors import IoFailure
from core.snapshots import list_snapshots, read_snapshot
from core.tensor_field import field_mean

MEAN_TOL = 1e-10


def verify_snapshots(run_dir: str, tol: float = MEAN_TOL):
    """Returns (checked, problems)."""
    problems = []
    increments = list_snapshots(run_dir)
    for index in increments:
        meta, arrays = read_snapshot(run_dir, index)
        points = tuple(meta["grid"]["points"])
        for name, array in arrays.items():
            if array.shape[array.ndim - len(points):] != points:
                problems.append(f"increment {index}: {name} grid shape {array.shape} != {points}")
        if "F" in arrays:
            mismatch = float(np.abs(field_mean(arrays["F"]) - np.array(meta["fbar"])).max())
            if mismatch > tol:
                problems.append(f"increment {index}: |<F> - Fbar| = {mismatch:.2e}")
    return len(increments), problems


def main():
    parser = argparse.ArgumentParser(description="Verify run snapshots")
    parser.add_argument("run_dir", help="Run directory")
    parser.add_argument("--tol", type=float, default=MEAN_TOL, help=f"Mean tolerance (default: {MEAN_TOL:g})")
    args = parser.parse_args()

    try:
        checked, problems = verify_snapshots(args.run_dir, args.tol)
    except IoFailure as e:
        print(f"ERROR: {e}")
        sys.exit(1)

    print("=" * 40)
    print("Snapshot Verification")
    print("-" * 40)
    print(f"Run: {args.run_dir}")
    print(f"Snapshots checked: {checked}")
    if not problems:
        print("Status: ✅ OK")
    else:
        print("Status: ❌ FAIL")
        for problem in problems:
            print(f"  ERROR: {problem}")
    print("=" * 40)

    if problems:
        sys.exit(1)


if __name__ == "__main__":
    main()
