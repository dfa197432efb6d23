#!/usr/bin/env python3
# core/snapshots.py
"""
Run outputs.

Layout of a run directory:
    <run>/<field>_<inc:04d>.bin   raw little-endian float64, C order over (components..., grid...)
    <run>/meta_<inc:04d>.json     grid, Fbar, label and per-field shape; written after the arrays
    <run>/<inc:04d>.vtk           optional legacy VTK structured points
    <run>/report.csv              one row per solved increment

Nothing time-dependent goes into snapshot files, so reruns are byte-identical.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from core.errors import IoFailure
from core.solver import Increment, SolveReport
from core.tensor_field import GridShape

logger = logging.getLogger(__name__)

DTYPE = "<f8"
META_VERSION = 1

REPORT_COLUMNS = [
    "increment",
    "newton_iters",
    "cg_iters_total",
    "residual",
    "wall_ms",
    "eps_bar",
    "label",
    "cumulative_wall_ms",
    "status",
]


def _meta_path(run_dir: Path, increment: int) -> Path:
    return run_dir / f"meta_{increment:04d}.json"


def write_snapshot(
    run_dir: Union[str, Path],
    increment: int,
    inc: Increment,
    shape: GridShape,
    fields: Dict[str, np.ndarray],
) -> Path:
    run_dir = Path(run_dir)
    meta = {
        "version": META_VERSION,
        "increment": int(increment),
        "label": inc.label,
        "fbar": inc.fbar.tolist(),
        "grid": {"points": list(shape.points), "lengths": list(shape.lengths)},
        "dtype": DTYPE,
        "order": "C",
        "fields": {},
    }
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        for name, array in fields.items():
            array = np.asarray(array, dtype=np.float64)
            filename = f"{name}_{increment:04d}.bin"
            (run_dir / filename).write_bytes(array.astype(DTYPE).tobytes(order="C"))
            meta["fields"][name] = {
                "file": filename,
                "shape": list(array.shape),
                "rank": array.ndim - shape.dim,
            }
        # metadata last: a snapshot without it is incomplete
        meta_path = _meta_path(run_dir, increment)
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write snapshot {increment} to {run_dir}: {exc}") from exc

    logger.debug("snapshot %d: %s", increment, ", ".join(fields))
    return meta_path


def read_snapshot(run_dir: Union[str, Path], increment: int):
    """Returns (meta, {field: array})."""
    run_dir = Path(run_dir)
    try:
        meta = json.loads(_meta_path(run_dir, increment).read_text(encoding="utf-8"))
        arrays = {}
        for name, entry in meta["fields"].items():
            raw = (run_dir / entry["file"]).read_bytes()
            arrays[name] = np.frombuffer(raw, dtype=meta["dtype"]).reshape(entry["shape"]).copy()
    except (OSError, KeyError, ValueError) as exc:
        raise IoFailure(f"cannot read snapshot {increment} from {run_dir}: {exc}") from exc
    return meta, arrays


def list_snapshots(run_dir: Union[str, Path]) -> List[int]:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise IoFailure(f"{run_dir} is not a directory")
    return sorted(int(p.stem.split("_")[1]) for p in run_dir.glob("meta_*.json"))


# --- Report -------------------------------------------------------------------

def report_rows(reports: Iterable[SolveReport]) -> List[dict]:
    rows = []
    cumulative = 0.0
    for index, report in enumerate(reports, start=1):
        cumulative += report.wall_ms
        rows.append({
            "increment": index,
            "newton_iters": report.newton_iterations,
            "cg_iters_total": report.cg_total,
            "residual": f"{report.residual:.6e}",
            "wall_ms": f"{report.wall_ms:.3f}",
            "eps_bar": f"{report.eps_bar:.9f}",
            "label": report.label,
            "cumulative_wall_ms": f"{cumulative:.3f}",
            "status": report.status,
        })
    return rows


def write_report(path: Union[str, Path], reports: Iterable[SolveReport]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            writer.writerows(report_rows(reports))
    except OSError as exc:
        raise IoFailure(f"cannot write report {path}: {exc}") from exc
    return path


# --- Legacy VTK ---------------------------------------------------------------

def _pad3(array: np.ndarray, dim: int) -> np.ndarray:
    """(d, d, *grid) -> (3, 3, *grid), zero padded."""
    if array.shape[0] == 3:
        return array
    out = np.zeros((3, 3) + array.shape[2:])
    out[:dim, :dim] = array
    return out


def _node_values(array: np.ndarray) -> np.ndarray:
    # VTK runs x fastest: Fortran order over the grid axes
    return np.ravel(array, order="F")


def write_vtk(path: Union[str, Path], shape: GridShape, fields: Dict[str, np.ndarray], title: str = "cell") -> Path:
    """ASCII STRUCTURED_POINTS; scalar fields as SCALARS, second-order fields as TENSORS."""
    path = Path(path)
    points = list(shape.points) + [1] * (3 - shape.dim)
    spacing = list(shape.spacing) + [1.0] * (3 - shape.dim)

    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS {} {} {}".format(*points),
        "ORIGIN 0 0 0",
        "SPACING {:.12g} {:.12g} {:.12g}".format(*spacing),
        f"POINT_DATA {shape.n}",
    ]
    for name, array in fields.items():
        array = np.asarray(array, dtype=np.float64)
        rank = array.ndim - shape.dim
        if rank == 0:
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{x:.12g}" for x in _node_values(array))
        elif rank == 2:
            padded = _pad3(array, shape.dim)
            columns = [_node_values(padded[i, j]) for i in range(3) for j in range(3)]
            lines.append(f"TENSORS {name} double")
            for node in range(shape.n):
                row = [columns[3 * i + j][node] for i in range(3) for j in range(3)]
                lines.append("{:.12g} {:.12g} {:.12g}\n{:.12g} {:.12g} {:.12g}\n{:.12g} {:.12g} {:.12g}".format(*row))
        else:
            logger.debug("skipping %s in VTK output (rank %d)", name, rank)

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


# --- Sink ---------------------------------------------------------------------

class SnapshotSink:
    """Writes snapshots every `stride` increments (and at the last one) plus the report."""

    def __init__(
        self,
        run_dir: Union[str, Path],
        shape: GridShape,
        model,
        fields: Iterable[str],
        stride: int = 1,
        vtk: bool = False,
        n_increments: Optional[int] = None,
    ):
        self.run_dir = Path(run_dir)
        self.shape = shape
        self.model = model
        self.fields = [model.eq_field if f == "eq_stress" else f for f in fields]
        self.stride = stride
        self.vtk = vtk
        self.n_increments = n_increments
        self.reports: List[SolveReport] = []
        self.snapshots: List[int] = []

    def on_increment(self, index, inc, state, report):
        self.reports.append(report)
        last = self.n_increments is not None and index == self.n_increments
        if index % self.stride == 0 or last:
            self.write(index, inc, state)
        write_report(self.run_dir / "report.csv", self.reports)

    def on_failure(self, index, inc, report, error):
        self.reports.append(report)
        write_report(self.run_dir / "report.csv", self.reports)

    def write(self, index, inc, state):
        available = self.model.output_fields(state.F, state.history)
        selected = {name: available[name] for name in self.fields}
        write_snapshot(self.run_dir, index, inc, self.shape, selected)
        if self.vtk:
            write_vtk(self.run_dir / f"{index:04d}.vtk", self.shape, selected, title=f"increment {index}")
        self.snapshots.append(index)
