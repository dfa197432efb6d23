import csv
import json
from pathlib import Path

import numpy as np
import pytest

import app
from core.constitutive import ParameterFields, SimoModel
from core.errors import IoFailure
from core.microstructure import make_synthetic_micrograph, write_pgm
from core.snapshots import (
    REPORT_COLUMNS,
    SnapshotSink,
    list_snapshots,
    read_snapshot,
    write_report,
    write_snapshot,
    write_vtk,
)
from core.solver import CellState, Increment, SolveReport
from core.tensor_field import field_mean, identity2, make_shape

CUBE_2D = """
grid:
  points: [9, 9]
microstructure:
  kind: cube
  volume_fraction: 0.2
model:
  kind: hyperelastic
  youngs: 1.0
  poisson: 0.3
  contrast: 10
loading:
  mode: simple_shear
  value: 0.2
  increments: 2
output:
  vtk: true
"""


@pytest.fixture
def cube_config(tmp_path):
    path = tmp_path / "cube.yaml"
    path.write_text(CUBE_2D)
    return path


def read_report(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- Snapshots ----------------------------------------------------------------

def test_snapshot_arrays_reconstruct_from_metadata(tmp_path, rng):
    shape = make_shape((3, 4), (1.5, 2.0))
    F = identity2(shape) + 0.1 * rng.standard_normal((2, 2, 3, 4))
    eps = rng.random((3, 4))
    inc = Increment([[1.1, 0.0], [0.0, 1.0]], label=0.5)

    meta_path = write_snapshot(tmp_path, 7, inc, shape, {"F": F, "eps_p": eps})
    assert meta_path.name == "meta_0007.json"
    assert (tmp_path / "F_0007.bin").stat().st_size == F.size * 8

    meta, arrays = read_snapshot(tmp_path, 7)
    np.testing.assert_array_equal(arrays["F"], F)
    np.testing.assert_array_equal(arrays["eps_p"], eps)
    assert meta["label"] == 0.5
    assert meta["fbar"] == [[1.1, 0.0], [0.0, 1.0]]
    assert meta["grid"] == {"points": [3, 4], "lengths": [1.5, 2.0]}
    assert meta["fields"]["F"]["rank"] == 2
    assert meta["fields"]["eps_p"]["rank"] == 0
    assert list_snapshots(tmp_path) == [7]


def test_missing_snapshot_is_an_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        read_snapshot(tmp_path, 1)
    with pytest.raises(IoFailure):
        list_snapshots(tmp_path / "nowhere")


def test_report_columns_and_status(tmp_path):
    ok = SolveReport(label=0.5, newton_iterations=2, cg_iterations=[10, 4, 1], residuals=[1e-2, 1e-4, 1e-9],
                     wall_ms=12.0, eps_bar=0.1, converged=True)
    bad = SolveReport(label=1.0, newton_iterations=1, cg_iterations=[10, 8], residuals=[1e-2, 5e-3], wall_ms=8.0)
    path = write_report(tmp_path / "report.csv", [ok, bad])

    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    assert header == REPORT_COLUMNS

    rows = read_report(path)
    assert [r["status"] for r in rows] == ["converged", "failed"]
    assert rows[0]["cg_iters_total"] == "15"
    assert float(rows[1]["cumulative_wall_ms"]) == pytest.approx(20.0)
    assert float(rows[0]["residual"]) == pytest.approx(1e-9)


def test_vtk_layout(tmp_path):
    shape = make_shape((3, 2), (3.0, 1.0))
    scalar = np.arange(6, dtype=float).reshape((3, 2))
    path = write_vtk(tmp_path / "out.vtk", shape, {"F": identity2(shape), "eps_p": scalar})
    lines = path.read_text().splitlines()

    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "DATASET STRUCTURED_POINTS" in lines
    assert "DIMENSIONS 3 2 1" in lines
    assert "SPACING 1 0.5 1" in lines
    assert "POINT_DATA 6" in lines
    assert "TENSORS F double" in lines
    start = lines.index("LOOKUP_TABLE default") + 1
    # x runs fastest
    assert [float(x) for x in lines[start:start + 6]] == [0.0, 2.0, 4.0, 1.0, 3.0, 5.0]
    t = lines.index("TENSORS F double") + 1
    assert lines[t:t + 3] == ["1 0 0", "0 1 0", "0 0 0"]


def test_sink_writes_every_stride_and_the_last_increment(tmp_path):
    shape = make_shape((3, 3))
    model = SimoModel(ParameterFields(0.5, 0.4, 0.01, 0.0))
    sink = SnapshotSink(tmp_path, shape, model, ["F", "eq_stress"], stride=2, n_increments=3)
    state = CellState.initial(shape, model)
    for index in (1, 2, 3):
        sink.on_increment(index, Increment(np.eye(2), label=index), state, SolveReport(label=index, converged=True))

    assert sink.snapshots == [2, 3]
    assert list_snapshots(tmp_path) == [2, 3]
    _, arrays = read_snapshot(tmp_path, 3)
    assert set(arrays) == {"F", "tau_eq"}
    assert len(read_report(tmp_path / "report.csv")) == 3


# --- Command line -------------------------------------------------------------

def test_run_then_info(cube_config, tmp_path, capsys):
    run_dir = tmp_path / "run"
    assert app.main(["run", str(cube_config), "--output", str(run_dir)]) == app.EXIT_OK
    out = capsys.readouterr().out
    assert "Run Finished" in out
    assert "Increments converged: 2 / 2" in out

    assert list_snapshots(run_dir) == [1, 2]
    for name in ("F_0002.bin", "P_0002.bin", "S_eq_0002.bin", "0002.vtk", "report.csv"):
        assert (run_dir / name).exists()
    rows = read_report(run_dir / "report.csv")
    assert [r["status"] for r in rows] == ["converged", "converged"]

    meta, arrays = read_snapshot(run_dir, 2)
    np.testing.assert_allclose(field_mean(arrays["F"]), np.array(meta["fbar"]), atol=1e-12)
    assert meta["fbar"][0][1] == pytest.approx(0.2)

    assert app.main(["info", str(run_dir)]) == app.EXIT_OK
    assert "Snapshots: 2" in capsys.readouterr().out


def test_reruns_are_byte_identical(cube_config, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert app.main(["run", str(cube_config), "--output", str(first)]) == app.EXIT_OK
    assert app.main(["run", str(cube_config), "--output", str(second)]) == app.EXIT_OK

    names = sorted(p.name for p in first.iterdir() if p.suffix in (".bin", ".json", ".vtk"))
    assert names == sorted(p.name for p in second.iterdir() if p.suffix in (".bin", ".json", ".vtk"))
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_validate(cube_config, tmp_path, capsys):
    assert app.main(["validate", str(cube_config)]) == app.EXIT_OK
    assert "Config OK" in capsys.readouterr().out

    bad = tmp_path / "bad.yaml"
    bad.write_text(CUBE_2D.replace("poisson: 0.3", "poisson: 0.5"))
    assert app.main(["validate", str(bad)]) == app.EXIT_CONFIG
    assert "model.poisson" in capsys.readouterr().out


def test_run_with_missing_config(tmp_path, capsys):
    assert app.main(["run", str(tmp_path / "missing.yaml")]) == app.EXIT_CONFIG
    assert "ERROR:" in capsys.readouterr().out


def test_solver_failure_exits_with_failed_report_row(cube_config, tmp_path, capsys):
    run_dir = tmp_path / "run"
    code = app.main([
        "run", str(cube_config), "--output", str(run_dir),
        "--set", "solver.max_newton=1", "--set", "loading.value=0.5", "--set", "loading.increments=1",
    ])
    assert code == app.EXIT_SOLVER
    out = capsys.readouterr().out
    assert "Run Failed" in out
    assert "ERROR:" in out
    rows = read_report(run_dir / "report.csv")
    assert rows[-1]["status"] == "failed"


def test_output_directory_that_is_a_file(cube_config, tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    assert app.main(["run", str(cube_config), "--output", str(blocker)]) == app.EXIT_IO


def test_unreadable_image_exits_with_io_code(tmp_path):
    (tmp_path / "broken.pgm").write_bytes(b"P5 garbage")
    config = tmp_path / "image.yaml"
    config.write_text(
        CUBE_2D.replace("grid:\n  points: [9, 9]\n", "").replace(
            "  kind: cube\n  volume_fraction: 0.2\n", "  kind: image\n  path: broken.pgm\n"
        )
    )
    assert app.main(["run", str(config), "--output", str(tmp_path / "run")]) == app.EXIT_IO


def test_exit_codes():
    from core.errors import ConfigInvalid, NewtonDiverged, SingularTensor

    assert app.exit_code_for(ConfigInvalid(["x: y"])) == app.EXIT_CONFIG
    assert app.exit_code_for(NewtonDiverged("no")) == app.EXIT_SOLVER
    assert app.exit_code_for(SingularTensor("det", node=3)) == app.EXIT_SOLVER
    assert app.exit_code_for(IoFailure("disk")) == app.EXIT_IO


# --- Desk-scale micrograph runs -----------------------------------------------

MICROGRAPH = """
microstructure:
  kind: image
  path: micro.pgm
model:
  kind: simo
  youngs: 1.0
  poisson: 0.3
  tau_y0: 0.003
  hardening: 0.01
  contrast: 2
loading:
  mode: pure_shear
  value: 1.2
  increments: 50
output:
  stride: 50
"""


@pytest.mark.slow
def test_micrograph_pure_shear(tmp_path):
    write_pgm(tmp_path / "micro.pgm", make_synthetic_micrograph((45, 45), 0.3, seed=1))
    config = tmp_path / "micro.yaml"
    config.write_text(MICROGRAPH)
    run_dir = tmp_path / "run"
    assert app.main(["run", str(config), "--output", str(run_dir)]) == app.EXIT_OK

    rows = read_report(run_dir / "report.csv")
    assert len(rows) == 50
    newton = np.array([int(r["newton_iters"]) for r in rows])
    assert 1.5 <= newton.mean() <= 4.0
    assert int(np.argmax(newton)) + 1 <= 15

    eps_bar = float(rows[-1]["eps_bar"])
    assert eps_bar == pytest.approx(0.21, abs=0.01)

    assert list_snapshots(run_dir) == [50]
    meta, arrays = read_snapshot(run_dir, 50)
    assert json.dumps(meta["fbar"])
    assert arrays["eps_p"].max() > eps_bar


@pytest.mark.slow
def test_contrast_raises_cg_work_but_not_newton_work():
    from scripts.contrast_study import run_contrast_study

    rows = run_contrast_study()
    cg = [row["cg_total"] for row in rows]
    newton = [row["newton_total"] for row in rows]
    assert all(a < b for a, b in zip(cg, cg[1:]))
    assert (max(newton) - min(newton)) / min(newton) < 0.2
    assert all(row["newton_mean"] <= 4.0 for row in rows)


def test_source_files_share_the_script_preamble():
    root = Path(app.__file__).resolve().parent
    for path in sorted((root / "core").glob("*.py")) + [root / "app.py"]:
        lines = path.read_text(encoding="utf-8").splitlines()
        rel = path.relative_to(root).as_posix()
        assert lines[:2] == ["#!/usr/bin/env python3", f"# {rel}"], rel
