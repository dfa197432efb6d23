#!/usr/bin/env python3
# app.py
"""
Command line front end.

    python app.py run <config.yaml> [--output DIR] [--set section.key=value ...]
    python app.py validate <config.yaml>
    python app.py info <run-dir>

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from core.config import (
    DEFAULT_LOG_LEVEL,
    RunConfig,
    build_model,
    build_phase_grid,
    expand_loading,
    load_config,
)
from core.errors import (
    ArityMismatch,
    BadFractions,
    ConfigInvalid,
    FFTMechError,
    FractionUnachievable,
    IoFailure,
    UnreadableImage,
)
from core.projection import build_projection, curl_residual
from core.snapshots import SnapshotSink, list_snapshots, read_snapshot
from core.solver import CellState, run_program
from core.tensor_field import field_mean

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigInvalid, ArityMismatch, FractionUnachievable, BadFractions)):
        return EXIT_CONFIG
    if isinstance(exc, (IoFailure, UnreadableImage, OSError)):
        return EXIT_IO
    # SolverError, NodeError
    return EXIT_SOLVER


def setup_logging(level: Optional[str] = None) -> None:
    level = (level or os.getenv("FFTMECH_LOG_LEVEL") or DEFAULT_LOG_LEVEL).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def run(cfg: RunConfig) -> int:
    """Assemble cell, model and load program from `cfg`, solve, write outputs."""
    start = time.time()
    try:
        pg = build_phase_grid(cfg)
        shape = pg.shape
        model = build_model(cfg, pg)
        G = build_projection(shape, cfg.nyquist_mode)
        increments = expand_loading(cfg.loading, shape.dim)
    except FFTMechError as e:
        print(f"ERROR: {e}")
        return exit_code_for(e)

    run_dir = cfg.output.directory
    sink = SnapshotSink(
        run_dir,
        shape,
        model,
        cfg.output.fields,
        stride=cfg.output.stride,
        vtk=cfg.output.vtk,
        n_increments=len(increments),
    )
    print(f"Grid {list(shape.points)}, {pg.n_phases} phases (fractions {np.round(pg.fractions, 4).tolist()})")
    if pg.achieved_fraction is not None:
        print(f"Inclusion fraction achieved: {pg.achieved_fraction:.6f}")
    print(f"Model: {cfg.model.kind}, {len(increments)} increment(s) -> {run_dir}\n")

    status = EXIT_OK
    failure = None
    state = CellState.initial(shape, model)
    try:
        state = run_program(state, increments, model, G, cfg.solver, sink=sink)
    except (FFTMechError, OSError) as e:
        failure = e
        status = exit_code_for(e)

    reports = sink.reports
    converged = [r for r in reports if r.converged]
    newton_total = sum(r.newton_iterations for r in converged)
    cg_total = sum(r.cg_total for r in reports)
    elapsed = time.time() - start

    print("\n" + "=" * 40)
    print("Run Finished" if failure is None else "Run Failed")
    print("-" * 40)
    print(f"Increments converged: {len(converged)} / {len(increments)}")
    print(f"Newton iterations: {newton_total}")
    if converged:
        print(f"Mean Newton per increment: {newton_total / len(converged):.2f}")
    print(f"CG iterations: {cg_total}")
    print(f"Snapshots written: {len(sink.snapshots)}")
    if converged:
        print(f"Final eps_bar: {converged[-1].eps_bar:.4f}")
        print(f"Compatibility (curl): {curl_residual(G, state.F):.2e}")
    print(f"Time elapsed: {elapsed:.2f} seconds")
    print("=" * 40)

    if failure is not None:
        print(f"ERROR: {failure}")
    return status


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, overrides=args.set or ())
    except ConfigInvalid as e:
        for message in e.messages:
            print(f"ERROR: {message}")
        return EXIT_CONFIG
    if args.output:
        cfg = replace(cfg, output=replace(cfg.output, directory=Path(args.output)))
    setup_logging(args.log_level or cfg.log_level)
    return run(cfg)


def cmd_validate(args) -> int:
    setup_logging(args.log_level)
    try:
        cfg = load_config(args.config, overrides=args.set or ())
    except ConfigInvalid as e:
        print(f"Config invalid: {len(e.messages)} problem(s)")
        for message in e.messages:
            print(f"  - {message}")
        return EXIT_CONFIG

    print("=" * 40)
    print("Config OK")
    print("-" * 40)
    print(f"Microstructure: {cfg.microstructure.kind}")
    print(f"Model: {cfg.model.kind} ({len(cfg.model.phases)} phases)")
    print(f"Loading: {cfg.loading.mode}, {cfg.loading.increments} increment(s)")
    print(f"Solver: eta_newton={cfg.solver.eta_newton:g}, eta_cg={cfg.solver.eta_cg:g}, nyquist={cfg.nyquist_mode.value}")
    print(f"Output: {cfg.output.directory} (fields {', '.join(cfg.output.fields)})")
    print("=" * 40)
    return EXIT_OK


def cmd_info(args) -> int:
    setup_logging(args.log_level)
    try:
        increments = list_snapshots(args.run_dir)
        print("=" * 40)
        print(f"Run: {args.run_dir}")
        print("-" * 40)
        if not increments:
            print("No snapshots found")
        worst = 0.0
        for index in increments:
            meta, arrays = read_snapshot(args.run_dir, index)
            fbar = np.array(meta["fbar"])
            line = f"  {index:4d}) label={meta['label']} fields={','.join(sorted(arrays))}"
            if "F" in arrays:
                mismatch = float(np.abs(field_mean(arrays["F"]) - fbar).max())
                worst = max(worst, mismatch)
                line += f" |<F>-Fbar|={mismatch:.1e}"
            print(line)
        print(f"Snapshots: {len(increments)}")
        print(f"Max mean mismatch: {worst:.2e}")
        print("=" * 40)
    except IoFailure as e:
        print(f"ERROR: {e}")
        return EXIT_IO
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Finite-strain FFT solver for periodic cells")
    parser.add_argument("--log-level", default=None, help="Logging level (default: FFTMECH_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Solve the load program of a config file")
    p_run.add_argument("config", help="YAML run configuration")
    p_run.add_argument("--output", default=None, help="Run directory (overrides output.directory)")
    p_run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="Override a config key")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="Check a config file without solving")
    p_val.add_argument("config", help="YAML run configuration")
    p_val.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="Override a config key")
    p_val.set_defaults(func=cmd_validate)

    p_info = sub.add_parser("info", help="Summarize the snapshots of a run directory")
    p_info.add_argument("run_dir", help="Run directory")
    p_info.set_defaults(func=cmd_info)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
