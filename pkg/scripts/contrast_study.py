#!/usr/bin/env python3
# scripts/contrast_study.py
"""Solver cost versus phase contrast on a synthetic two-phase micrograph (Simo model, pure shear)."""

import argparse
import logging
import math
import os
import sys
import time

PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

import numpy as np
from dotenv import load_dotenv

from core.config import LoadingConfig, expand_loading
from core.constitutive import ElasticParams, PlasticParams, SimoModel
from core.microstructure import bind_parameters, make_synthetic_micrograph, phase_contrast
from core.projection import build_projection
from core.solver import CellState, MemorySink, SolverParams, run_program
from core.tensor_field import make_shape

DEFAULT_CONTRASTS = (math.sqrt(2.0), 2.0, 4.0, 8.0)

# soft phase, in units of Young's modulus
SOFT = PlasticParams(ElasticParams(1.0, 0.3), tau_y0=0.003, hardening=0.01)


def solve_micrograph(
    chi: float,
    points=(45, 45),
    increments: int = 50,
    stretch: float = 1.2,
    hard_fraction: float = 0.3,
    seed: int = 1,
    params: SolverParams = SolverParams(),
) -> dict:
    """One pure-shear run; returns iteration counts, runtime and final plastic strain."""
    shape = make_shape(points)
    pg = make_synthetic_micrograph(shape, hard_fraction, seed=seed)
    model = SimoModel(bind_parameters(pg, phase_contrast(SOFT, chi)))
    G = build_projection(shape)
    program = expand_loading(LoadingConfig(mode="pure_shear", value=stretch, increments=increments), shape.dim)

    sink = MemorySink(keep_fields=False)
    start = time.perf_counter()
    state = run_program(CellState.initial(shape, model), program, model, G, params, sink=sink)
    runtime = time.perf_counter() - start

    newton = [r.newton_iterations for r in sink.reports]
    return {
        "chi": chi,
        "newton_total": int(sum(newton)),
        "newton_mean": float(np.mean(newton)),
        "newton_peak_increment": int(np.argmax(newton)) + 1,
        "cg_total": int(sum(r.cg_total for r in sink.reports)),
        "runtime_s": runtime,
        "eps_bar": sink.reports[-1].eps_bar,
        "eps_p_max": float(state.history.eps_p.max()),
        "reports": sink.reports,
    }


def run_contrast_study(contrasts=DEFAULT_CONTRASTS, **kwargs):
    return [solve_micrograph(chi, **kwargs) for chi in contrasts]


def main():
    parser = argparse.ArgumentParser(description="Newton / CG cost versus phase contrast")
    parser.add_argument("--points", type=int, nargs=2, default=[45, 45], help="Grid points (default: 45 45)")
    parser.add_argument("--increments", type=int, default=50, help="Load increments (default: 50)")
    parser.add_argument("--seed", type=int, default=1, help="Micrograph seed (default: 1)")
    parser.add_argument("--chi", type=float, nargs="+", default=list(DEFAULT_CONTRASTS), help="Contrasts to compare")
    args = parser.parse_args()

    load_dotenv()
    logging.basicConfig(level=os.getenv("FFTMECH_LOG_LEVEL", "WARNING").upper())

    start = time.time()
    rows = run_contrast_study(args.chi, points=tuple(args.points), increments=args.increments, seed=args.seed)

    print("=" * 40)
    print("Contrast Study")
    print("-" * 40)
    print(f"Grid: {args.points}, increments: {args.increments}, seed: {args.seed}")
    print()
    print(f"{'chi':>8} {'newton':>8} {'cg':>8} {'runtime':>10} {'eps_p max':>10}")
    for row in rows:
        print(
            f"{row['chi']:8.3f} {row['newton_total']:8d} {row['cg_total']:8d} "
            f"{row['runtime_s']:9.2f}s {row['eps_p_max']:10.4f}"
        )
    print()
    print(f"Time elapsed: {time.time() - start:.2f} seconds")
    print("=" * 40)


if __name__ == "__main__":
    main()
