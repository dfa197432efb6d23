#!/usr/bin/env python3
# core/config.py
"""
Run configuration: YAML text -> validated RunConfig.

Sections: grid, microstructure, model, loading, solver, output. Every
violation is collected with its key path and reported together through
ConfigInvalid. Defaults are listed in docs/config.md.

Precedence for overlapping settings: command-line flag (apply_overrides)
> config file > environment (.env: FFTMECH_OUTPUT_DIR, FFTMECH_LOG_LEVEL)
> built-in default.
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from core.constitutive import (
    ElasticParams,
    HyperElasticModel,
    MaterialModel,
    PlasticParams,
    SimoModel,
)
from core.errors import ConfigInvalid
from core.microstructure import (
    PhaseGrid,
    bind_parameters,
    load_image_threshold,
    make_cubic_inclusion,
    make_laminate,
    make_synthetic_micrograph,
    phase_contrast,
)
from core.projection import NyquistMode
from core.solver import Increment, SolverParams
from core.tensor_field import GridShape, make_shape

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = "runs"
DEFAULT_LOG_LEVEL = "INFO"

MICROSTRUCTURE_KINDS = ("cube", "laminate", "image", "synthetic")
MODEL_KINDS = ("hyperelastic", "simo")
LOADING_MODES = ("simple_shear", "pure_shear", "explicit")
FIELD_NAMES = ("F", "P", "eq_stress", "S_eq", "tau_eq", "eps_p")

_MISSING = object()


# --- Config records -----------------------------------------------------------

@dataclass(frozen=True)
class GridConfig:
    points: Optional[Tuple[int, ...]]       # None: taken from the image
    lengths: Optional[Tuple[float, ...]] = None

    def shape(self) -> GridShape:
        return make_shape(self.points, self.lengths)


@dataclass(frozen=True)
class MicrostructureConfig:
    kind: str
    volume_fraction: Optional[float] = None
    layer_fractions: Optional[Tuple[float, ...]] = None
    image: Optional[Path] = None
    threshold: float = 127.5
    invert: bool = False
    hard_fraction: Optional[float] = None
    seed: int = 0
    sigma: float = 2.0

    @property
    def n_phases(self) -> int:
        if self.kind == "laminate":
            return len(self.layer_fractions or ())
        return 2


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    phases: Tuple[Union[ElasticParams, PlasticParams], ...]
    contrast: Optional[float] = None


@dataclass(frozen=True)
class LoadingConfig:
    mode: str
    value: Optional[float] = None
    increments: int = 1
    matrices: Optional[Tuple[Tuple[Tuple[float, ...], ...], ...]] = None


@dataclass(frozen=True)
class OutputConfig:
    directory: Path
    stride: int = 1
    fields: Tuple[str, ...] = ("F", "P", "eq_stress")
    vtk: bool = False


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig
    microstructure: MicrostructureConfig
    model: ModelConfig
    loading: LoadingConfig
    solver: SolverParams
    nyquist_mode: NyquistMode
    output: OutputConfig
    log_level: str = DEFAULT_LOG_LEVEL
    source: Optional[Path] = None


# --- Validation helpers -------------------------------------------------------

class _Validator:
    def __init__(self):
        self.errors: List[str] = []

    def fail(self, path: str, message: str) -> None:
        self.errors.append(f"{path}: {message}")

    def section(self, data: Mapping, key: str, required: bool = True) -> Dict[str, Any]:
        value = data.get(key, _MISSING)
        if value is _MISSING or value is None:
            if required:
                self.fail(key, "missing section")
            return {}
        if not isinstance(value, dict):
            self.fail(key, "expected a mapping")
            return {}
        return value

    def number(self, data: Mapping, key: str, path: str, default=_MISSING):
        value = data.get(key, _MISSING)
        if value is _MISSING or value is None:
            if default is _MISSING:
                self.fail(path, "required")
                return None
            return default
        # YAML 1.1 reads '1e-5' as a string
        if isinstance(value, bool):
            self.fail(path, f"expected a number, got {value!r}")
            return None
        try:
            number = float(value)
        except (TypeError, ValueError):
            self.fail(path, f"expected a number, got {value!r}")
            return None
        if not np.isfinite(number):
            self.fail(path, f"must be finite, got {value!r}")
            return None
        return number

    def integer(self, data: Mapping, key: str, path: str, default=_MISSING, minimum: Optional[int] = None):
        value = data.get(key, _MISSING)
        if value is _MISSING or value is None:
            if default is _MISSING:
                self.fail(path, "required")
            return None if default is _MISSING else default
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
            return None
        if minimum is not None and value < minimum:
            self.fail(path, f"must be >= {minimum}, got {value}")
            return None
        return value

    def choice(self, data: Mapping, key: str, path: str, choices: Sequence[str], default=_MISSING):
        value = data.get(key, _MISSING)
        if value is _MISSING or value is None:
            if default is _MISSING:
                self.fail(path, f"required (one of {', '.join(choices)})")
                return None
            return default
        if value not in choices:
            self.fail(path, f"unknown value {value!r} (one of {', '.join(choices)})")
            return None
        return value

    def boolean(self, data: Mapping, key: str, path: str, default: bool) -> bool:
        value = data.get(key, default)
        if not isinstance(value, bool):
            self.fail(path, f"expected true/false, got {value!r}")
            return default
        return value

    def numbers(self, data: Mapping, key: str, path: str, default=_MISSING):
        value = data.get(key, _MISSING)
        if value is _MISSING or value is None:
            if default is _MISSING:
                self.fail(path, "required")
                return None
            return default
        if not isinstance(value, (list, tuple)) or not value:
            self.fail(path, "expected a non-empty list")
            return None
        out = []
        for i, item in enumerate(value):
            number = self.number({"v": item}, "v", f"{path}[{i}]")
            if number is None:
                return None
            out.append(number)
        return tuple(out)

    def unknown_keys(self, data: Mapping, allowed: Sequence[str], path: str) -> None:
        for key in data:
            if key not in allowed:
                self.fail(f"{path}.{key}", "unknown key")


# --- Sections -----------------------------------------------------------------

def _parse_grid(v: _Validator, data: Mapping, image_kind: bool) -> GridConfig:
    raw = v.section(data, "grid", required=not image_kind)
    v.unknown_keys(raw, ("points", "lengths"), "grid")

    points = None
    if "points" in raw or not image_kind:
        value = raw.get("points")
        if not isinstance(value, (list, tuple)) or len(value) not in (2, 3):
            v.fail("grid.points", "expected a list of 2 or 3 integers")
        elif any(isinstance(p, bool) or not isinstance(p, int) or p < 1 for p in value):
            v.fail("grid.points", f"entries must be integers >= 1, got {value}")
        else:
            points = tuple(value)

    lengths = v.numbers(raw, "lengths", "grid.lengths", default=None)
    if lengths is not None:
        if any(x <= 0.0 for x in lengths):
            v.fail("grid.lengths", f"entries must be positive, got {list(lengths)}")
            lengths = None
        elif points is not None and len(lengths) != len(points):
            v.fail("grid.lengths", f"expected {len(points)} entries, got {len(lengths)}")
            lengths = None
        elif image_kind and points is None and len(lengths) != 2:
            v.fail("grid.lengths", "image grids are 2-D")
            lengths = None
    return GridConfig(points=points, lengths=lengths)


def _parse_microstructure(v: _Validator, raw: Mapping, base_dir: Optional[Path]) -> MicrostructureConfig:
    kind = v.choice(raw, "kind", "microstructure.kind", MICROSTRUCTURE_KINDS)
    common = ("kind",)

    if kind == "cube":
        v.unknown_keys(raw, common + ("volume_fraction",), "microstructure")
        fraction = v.number(raw, "volume_fraction", "microstructure.volume_fraction")
        if fraction is not None and not 0.0 < fraction < 1.0:
            v.fail("microstructure.volume_fraction", f"must lie in (0, 1), got {fraction}")
        return MicrostructureConfig(kind=kind, volume_fraction=fraction)

    if kind == "laminate":
        v.unknown_keys(raw, common + ("layer_fractions",), "microstructure")
        fractions = v.numbers(raw, "layer_fractions", "microstructure.layer_fractions")
        if fractions is not None and abs(sum(fractions) - 1.0) > 1e-9:
            v.fail("microstructure.layer_fractions", f"must sum to 1, got {sum(fractions):.12g}")
        return MicrostructureConfig(kind=kind, layer_fractions=fractions or ())

    if kind == "image":
        v.unknown_keys(raw, common + ("path", "threshold", "invert"), "microstructure")
        image = raw.get("path")
        path = None
        if not isinstance(image, str) or not image:
            v.fail("microstructure.path", "required image path")
        else:
            path = Path(image)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            if not path.is_file():
                v.fail("microstructure.path", f"no such file {path}")
        threshold = v.number(raw, "threshold", "microstructure.threshold", default=127.5)
        invert = v.boolean(raw, "invert", "microstructure.invert", default=False)
        return MicrostructureConfig(kind=kind, image=path, threshold=threshold, invert=invert)

    if kind == "synthetic":
        v.unknown_keys(raw, common + ("hard_fraction", "seed", "sigma"), "microstructure")
        fraction = v.number(raw, "hard_fraction", "microstructure.hard_fraction")
        if fraction is not None and not 0.0 < fraction < 1.0:
            v.fail("microstructure.hard_fraction", f"must lie in (0, 1), got {fraction}")
        seed = v.integer(raw, "seed", "microstructure.seed", default=0, minimum=0)
        sigma = v.number(raw, "sigma", "microstructure.sigma", default=2.0)
        if sigma is not None and sigma <= 0.0:
            v.fail("microstructure.sigma", f"must be positive, got {sigma}")
        return MicrostructureConfig(kind=kind, hard_fraction=fraction, seed=seed or 0, sigma=sigma or 2.0)

    return MicrostructureConfig(kind="cube")


_ELASTIC_KEYS = ("youngs", "poisson")
_PLASTIC_KEYS = _ELASTIC_KEYS + ("tau_y0", "hardening")


def _parse_phase(v: _Validator, kind: str, base: Mapping, entry: Mapping, prefix: str):
    def path(key):
        return f"{prefix}.{key}" if key in entry else f"model.{key}"

    merged = {**base, **entry}
    youngs = v.number(merged, "youngs", path("youngs"))
    poisson = v.number(merged, "poisson", path("poisson"))
    ok = True
    if youngs is not None and youngs <= 0.0:
        v.fail(path("youngs"), f"must be positive, got {youngs}")
        ok = False
    if poisson is not None and not -1.0 < poisson < 0.5:
        v.fail(path("poisson"), f"must lie in (-1, 0.5), got {poisson}")
        ok = False
    if youngs is None or poisson is None or not ok:
        return None
    elastic = ElasticParams(youngs, poisson)
    if kind == "hyperelastic":
        return elastic

    tau_y0 = v.number(merged, "tau_y0", path("tau_y0"))
    hardening = v.number(merged, "hardening", path("hardening"))
    if tau_y0 is not None and tau_y0 <= 0.0:
        v.fail(path("tau_y0"), f"must be positive, got {tau_y0}")
        return None
    if hardening is not None and hardening < 0.0:
        v.fail(path("hardening"), f"must be >= 0, got {hardening}")
        return None
    if tau_y0 is None or hardening is None:
        return None
    return PlasticParams(elastic, tau_y0, hardening)


def _parse_model(v: _Validator, raw: Mapping, n_phases: int) -> ModelConfig:
    kind = v.choice(raw, "kind", "model.kind", MODEL_KINDS)
    if kind is None:
        return ModelConfig(kind="hyperelastic", phases=())
    keys = _ELASTIC_KEYS if kind == "hyperelastic" else _PLASTIC_KEYS
    v.unknown_keys(raw, ("kind", "phases", "contrast") + keys, "model")
    base = {k: raw[k] for k in keys if k in raw}

    contrast = v.number(raw, "contrast", "model.contrast", default=None)
    if contrast is not None and contrast <= 0.0:
        v.fail("model.contrast", f"must be positive, got {contrast}")
        contrast = None

    entries = raw.get("phases")
    if entries is not None:
        if contrast is not None:
            v.fail("model.contrast", "cannot be combined with model.phases")
        if not isinstance(entries, list) or not all(isinstance(e, dict) for e in entries):
            v.fail("model.phases", "expected a list of mappings")
            return ModelConfig(kind=kind, phases=())
        if len(entries) != n_phases:
            v.fail("model.phases", f"{len(entries)} parameter sets for {n_phases} phases")
        phases = []
        for i, entry in enumerate(entries):
            v.unknown_keys(entry, keys, f"model.phases[{i}]")
            phases.append(_parse_phase(v, kind, base, entry, f"model.phases[{i}]"))
        return ModelConfig(kind=kind, phases=tuple(phases))

    soft = _parse_phase(v, kind, base, {}, "model")
    if soft is None:
        return ModelConfig(kind=kind, phases=())
    if contrast is not None:
        if n_phases != 2:
            v.fail("model.contrast", f"needs a two-phase microstructure, got {n_phases} phases")
            return ModelConfig(kind=kind, phases=())
        return ModelConfig(kind=kind, phases=tuple(phase_contrast(soft, contrast)), contrast=contrast)
    return ModelConfig(kind=kind, phases=(soft,) * n_phases)


def _parse_loading(v: _Validator, raw: Mapping, dim: Optional[int]) -> LoadingConfig:
    mode = v.choice(raw, "mode", "loading.mode", LOADING_MODES)
    if mode is None:
        return LoadingConfig(mode="simple_shear", value=0.0)

    if mode == "explicit":
        v.unknown_keys(raw, ("mode", "steps"), "loading")
        steps = raw.get("steps")
        if not isinstance(steps, list) or not steps:
            v.fail("loading.steps", "expected a non-empty list of matrices")
            return LoadingConfig(mode=mode, increments=1, matrices=())
        matrices = []
        for k, step in enumerate(steps):
            path = f"loading.steps[{k}]"
            try:
                matrix = np.array(step, dtype=np.float64)
            except (TypeError, ValueError):
                v.fail(path, "expected a square matrix of numbers")
                continue
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                v.fail(path, f"expected a square matrix, got shape {matrix.shape}")
                continue
            if dim is not None and matrix.shape[0] != dim:
                v.fail(path, f"expected {dim} x {dim} for a {dim}-D grid")
                continue
            if not np.linalg.det(matrix) > 0.0:
                v.fail(path, "det must be positive")
                continue
            matrices.append(tuple(map(tuple, matrix.tolist())))
        return LoadingConfig(mode=mode, increments=len(steps), matrices=tuple(matrices))

    v.unknown_keys(raw, ("mode", "value", "increments"), "loading")
    value = v.number(raw, "value", "loading.value")
    increments = v.integer(raw, "increments", "loading.increments", default=1, minimum=1)
    if mode == "pure_shear" and value is not None and value <= 0.0:
        v.fail("loading.value", f"stretch must be positive, got {value}")
        value = None
    return LoadingConfig(mode=mode, value=value, increments=increments or 1)


def _parse_solver(v: _Validator, raw: Mapping):
    v.unknown_keys(raw, ("eta_newton", "eta_cg", "max_newton", "max_cg", "nyquist_mode"), "solver")
    eta_newton = v.number(raw, "eta_newton", "solver.eta_newton", default=1e-5)
    eta_cg = v.number(raw, "eta_cg", "solver.eta_cg", default=1e-8)
    for name, value in (("eta_newton", eta_newton), ("eta_cg", eta_cg)):
        if value is not None and not 0.0 < value < 1.0:
            v.fail(f"solver.{name}", f"must lie in (0, 1), got {value}")
    max_newton = v.integer(raw, "max_newton", "solver.max_newton", default=30, minimum=1)
    max_cg = v.integer(raw, "max_cg", "solver.max_cg", default=None, minimum=1)
    mode = v.choice(
        raw, "nyquist_mode", "solver.nyquist_mode",
        [m.value for m in NyquistMode], default=NyquistMode.ZERO_COMPATIBLE.value,
    )

    try:
        params = SolverParams(
            eta_newton=eta_newton or 1e-5,
            eta_cg=eta_cg or 1e-8,
            max_newton=max_newton or 30,
            max_cg=max_cg,
        )
    except ValueError:
        params = SolverParams()
    return params, NyquistMode(mode or NyquistMode.ZERO_COMPATIBLE.value)


def _parse_output(v: _Validator, raw: Mapping, model_kind: str, env: Mapping[str, str], base_dir) -> OutputConfig:
    v.unknown_keys(raw, ("directory", "stride", "fields", "vtk"), "output")

    directory = raw.get("directory")
    if directory is None:
        directory = env.get("FFTMECH_OUTPUT_DIR") or DEFAULT_OUTPUT_DIR
    elif not isinstance(directory, str) or not directory:
        v.fail("output.directory", "expected a path")
        directory = DEFAULT_OUTPUT_DIR

    stride = v.integer(raw, "stride", "output.stride", default=1, minimum=1)

    default_fields = ["F", "P", "eq_stress"] + (["eps_p"] if model_kind == "simo" else [])
    fields = raw.get("fields", default_fields)
    if not isinstance(fields, list) or not all(isinstance(f, str) for f in fields):
        v.fail("output.fields", "expected a list of field names")
        fields = default_fields
    for name in fields:
        if name not in FIELD_NAMES:
            v.fail("output.fields", f"unknown field {name!r} (one of {', '.join(FIELD_NAMES)})")
        elif name in ("tau_eq", "eps_p") and model_kind != "simo":
            v.fail("output.fields", f"{name} needs the simo model")
        elif name == "S_eq" and model_kind != "hyperelastic":
            v.fail("output.fields", "S_eq needs the hyperelastic model")

    vtk = v.boolean(raw, "vtk", "output.vtk", default=False)
    return OutputConfig(directory=Path(directory), stride=stride or 1, fields=tuple(dict.fromkeys(fields)), vtk=vtk)


# --- Entry points -------------------------------------------------------------

def _load_yaml(text: str) -> Dict[str, Any]:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid([f"document: not valid YAML ({exc})"]) from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigInvalid(["document: expected a mapping at top level"])
    return data


def parse_config(
    text: Union[str, Dict[str, Any]],
    base_dir: Optional[Path] = None,
    env: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Validate a YAML document (or an already-loaded mapping)."""
    data = _load_yaml(text) if isinstance(text, str) else text
    env = os.environ if env is None else env

    v = _Validator()
    v.unknown_keys(data, ("grid", "microstructure", "model", "loading", "solver", "output"), "document")

    micro = _parse_microstructure(v, v.section(data, "microstructure"), base_dir)
    grid = _parse_grid(v, data, image_kind=micro.kind == "image")
    dim = len(grid.points) if grid.points else (2 if micro.kind == "image" else None)
    if micro.kind == "laminate" and grid.points and micro.layer_fractions:
        try:
            make_laminate(grid.shape(), micro.layer_fractions)
        except ValueError as exc:
            v.fail("microstructure.layer_fractions", str(exc))
    if micro.kind == "cube" and grid.points and micro.volume_fraction:
        try:
            make_cubic_inclusion(grid.shape(), micro.volume_fraction)
        except ValueError as exc:
            v.fail("microstructure.volume_fraction", str(exc))

    model = _parse_model(v, v.section(data, "model"), micro.n_phases)
    loading = _parse_loading(v, v.section(data, "loading"), dim)
    solver, nyquist_mode = _parse_solver(v, v.section(data, "solver", required=False))
    output = _parse_output(v, v.section(data, "output", required=False), model.kind, env, base_dir)

    if v.errors:
        raise ConfigInvalid(v.errors)

    log_level = str(env.get("FFTMECH_LOG_LEVEL") or DEFAULT_LOG_LEVEL).upper()
    return RunConfig(
        grid=grid,
        microstructure=micro,
        model=model,
        loading=loading,
        solver=solver,
        nyquist_mode=nyquist_mode,
        output=output,
        log_level=log_level,
        source=base_dir,
    )


def load_config(
    path: Union[str, Path],
    overrides: Sequence[str] = (),
    env: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigInvalid([f"{path}: cannot read ({exc})"]) from exc
    data = apply_overrides(_load_yaml(text), overrides)
    return parse_config(data, base_dir=path.resolve().parent, env=env)


def apply_overrides(data: Dict[str, Any], assignments: Sequence[str]) -> Dict[str, Any]:
    """Apply 'section.key=value' assignments (values parsed as YAML scalars)."""
    errors = []
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for assignment in assignments:
        key, sep, raw = assignment.partition("=")
        parts = key.strip().split(".")
        if not sep or len(parts) != 2 or not all(parts):
            errors.append(f"--set {assignment}: expected section.key=value")
            continue
        section, name = parts
        target = data.setdefault(section, {})
        if not isinstance(target, dict):
            errors.append(f"--set {assignment}: {section} is not a section")
            continue
        try:
            target[name] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            errors.append(f"--set {assignment}: {exc}")
    if errors:
        raise ConfigInvalid(errors)
    return data


# --- Assembly -----------------------------------------------------------------

def expand_loading(loading: LoadingConfig, dim: int) -> List[Increment]:
    """Macroscopic deformation gradient of every increment, in order."""
    if loading.mode == "explicit":
        n = len(loading.matrices)
        return [Increment(np.array(m), label=round(k / n, 12)) for k, m in enumerate(loading.matrices, start=1)]

    n = loading.increments
    increments = []
    for k in range(1, n + 1):
        t = k / n
        fbar = np.eye(dim)
        if loading.mode == "simple_shear":
            fbar[0, 1] = t * loading.value
        else:
            stretch = 1.0 + t * (loading.value - 1.0)
            fbar[0, 0] = stretch
            fbar[1, 1] = 1.0 / stretch
        increments.append(Increment(fbar, label=round(t, 12)))
    return increments


def build_phase_grid(cfg: RunConfig) -> PhaseGrid:
    micro = cfg.microstructure
    if micro.kind == "image":
        pg = load_image_threshold(micro.image, micro.threshold, invert=micro.invert, lengths=cfg.grid.lengths)
        if cfg.grid.points is not None and tuple(cfg.grid.points) != pg.shape.points:
            raise ConfigInvalid([f"grid.points: {list(cfg.grid.points)} does not match image {list(pg.shape.points)}"])
        return pg
    shape = cfg.grid.shape()
    if micro.kind == "cube":
        return make_cubic_inclusion(shape, micro.volume_fraction)
    if micro.kind == "laminate":
        return make_laminate(shape, micro.layer_fractions)
    return make_synthetic_micrograph(shape, micro.hard_fraction, seed=micro.seed, sigma=micro.sigma)


def build_model(cfg: RunConfig, pg: PhaseGrid) -> MaterialModel:
    fields = bind_parameters(pg, cfg.model.phases)
    if cfg.model.kind == "simo":
        return SimoModel(fields)
    return HyperElasticModel(fields)
