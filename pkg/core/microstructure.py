#!/usr/bin/env python3
# core/microstructure.py
"""
Phase geometry of the periodic cell.

A PhaseGrid holds one integer label per node. Builders:
- make_cubic_inclusion: centered axis-aligned cube (square in 2-D), label 1
- make_laminate: layers stacked along axis 0, label = layer index
- load_image_threshold: segmented grayscale raster, dark pixels = label 1
- make_synthetic_micrograph: smoothed periodic noise cut at a quantile

bind_parameters turns per-phase material parameters into per-node fields.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import ndimage
from skimage import io

from core.constitutive import ElasticParams, ParameterFields, PlasticParams
from core.errors import (
    ArityMismatch,
    BadFractions,
    FractionUnachievable,
    IoFailure,
    UnreadableImage,
)
from core.tensor_field import GridShape, make_shape

logger = logging.getLogger(__name__)

FRACTION_SUM_TOL = 1e-9

PhaseParams = Union[ElasticParams, PlasticParams]


@dataclass(frozen=True)
class PhaseGrid:
    shape: GridShape
    labels: np.ndarray
    n_phases: int
    achieved_fraction: Optional[float] = None  # cube builder only

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != self.shape.points:
            raise ValueError(f"labels shape {labels.shape} does not match grid {self.shape.points}")
        if self.n_phases < 1:
            raise ValueError("a phase grid needs at least one phase")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_phases):
            raise ValueError(f"labels must lie in [0, {self.n_phases})")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.n_phases)

    @property
    def fractions(self) -> np.ndarray:
        return self.counts / self.shape.n

    @property
    def effective_phases(self) -> int:
        return int(np.count_nonzero(self.counts))


def _resolve_shape(shape: Union[GridShape, Sequence[int]]) -> GridShape:
    if isinstance(shape, GridShape):
        return shape
    return make_shape(shape)


# --- Synthetic geometry -------------------------------------------------------

def make_cubic_inclusion(shape, volume_fraction: float) -> PhaseGrid:
    shape = _resolve_shape(shape)
    if not 0.0 < volume_fraction < 1.0:
        raise FractionUnachievable(f"volume fraction must lie in (0, 1), got {volume_fraction}")

    edge = volume_fraction ** (1.0 / shape.dim)
    sides = [int(np.floor(edge * N + 0.5)) for N in shape.points]
    for axis, (side, N) in enumerate(zip(sides, shape.points)):
        if side == 0 or side >= N:
            raise FractionUnachievable(
                f"fraction {volume_fraction:g} rounds to side {side} of {N} nodes on axis {axis}"
            )

    labels = np.zeros(shape.points, dtype=np.int64)
    box = tuple(slice((N - s) // 2, (N - s) // 2 + s) for N, s in zip(shape.points, sides))
    labels[box] = 1
    achieved = float(np.prod(sides)) / shape.n

    logger.debug("cube inclusion sides %s, fraction %.6f (requested %.6f)", sides, achieved, volume_fraction)
    return PhaseGrid(shape=shape, labels=labels, n_phases=2, achieved_fraction=achieved)


def make_laminate(shape, layer_fractions: Sequence[float]) -> PhaseGrid:
    shape = _resolve_shape(shape)
    fractions = np.asarray(layer_fractions, dtype=np.float64)
    if fractions.ndim != 1 or fractions.size == 0:
        raise BadFractions("layer fractions must be a non-empty list")
    if np.any(fractions < 0.0):
        raise BadFractions(f"layer fractions must be non-negative: {fractions.tolist()}")
    if abs(fractions.sum() - 1.0) > FRACTION_SUM_TOL:
        raise BadFractions(f"layer fractions sum to {fractions.sum():.12g}, not 1")

    N0 = shape.points[0]
    edges = np.floor(np.concatenate([[0.0], np.cumsum(fractions)]) * N0 + 0.5).astype(np.int64)
    edges[-1] = N0
    thickness = np.diff(edges)
    if np.any(thickness <= 0):
        layer = int(np.flatnonzero(thickness <= 0)[0])
        raise FractionUnachievable(f"layer {layer} rounds to zero nodes on an axis of {N0}")

    labels = np.zeros(shape.points, dtype=np.int64)
    for layer, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        labels[lo:hi] = layer

    logger.debug("laminate layers %s", thickness.tolist())
    return PhaseGrid(shape=shape, labels=labels, n_phases=int(fractions.size))


def make_synthetic_micrograph(shape, hard_fraction: float, seed: int = 0, sigma: float = 2.0) -> PhaseGrid:
    """
    Two-phase image: Gaussian-smoothed white noise (periodic) thresholded at
    the `hard_fraction` quantile. Label 1 marks the hard phase.
    """
    shape = _resolve_shape(shape)
    if not 0.0 < hard_fraction < 1.0:
        raise FractionUnachievable(f"hard fraction must lie in (0, 1), got {hard_fraction}")

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(shape.points)
    smooth = ndimage.gaussian_filter(noise, sigma=sigma, mode="wrap")
    cut = np.quantile(smooth, hard_fraction)
    labels = (smooth <= cut).astype(np.int64)

    pg = PhaseGrid(shape=shape, labels=labels, n_phases=2)
    logger.debug("synthetic micrograph seed %d, hard fraction %.4f", seed, pg.fractions[1])
    return pg


# --- Raster images ------------------------------------------------------------

def load_image_threshold(
    path: Union[str, Path],
    threshold: float,
    invert: bool = False,
    lengths: Optional[Sequence[float]] = None,
) -> PhaseGrid:
    """Label 1 where pixel <= threshold (dark = hard); `invert` swaps the labels."""
    try:
        image = io.imread(str(path))
    except Exception as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc

    image = np.asarray(image)
    if image.ndim != 2:
        raise UnreadableImage(f"{path}: expected a single-channel 2-D raster, got shape {image.shape}")
    if image.size == 0:
        raise UnreadableImage(f"{path}: empty image")

    hard = image <= threshold
    if invert:
        hard = ~hard
    shape = make_shape(image.shape, lengths)

    if hard.all() or not hard.any():
        logger.warning(
            "image %s: threshold %g leaves a single phase (pixel range %g to %g)",
            path, threshold, float(image.min()), float(image.max()),
        )

    pg = PhaseGrid(shape=shape, labels=hard.astype(np.int64), n_phases=2)
    logger.debug("image %s: %s pixels, hard fraction %.4f", path, image.shape, pg.fractions[1])
    return pg


def write_pgm(path: Union[str, Path], pg: PhaseGrid) -> Path:
    """Binary graymap of a two-phase 2-D grid: label 1 black (0), label 0 white (255)."""
    if pg.shape.dim != 2:
        raise ValueError("only 2-D phase grids can be written as images")
    if pg.n_phases > 2:
        raise ValueError("only two-phase grids can be written as images")

    path = Path(path)
    pixels = np.where(pg.labels == 1, 0, 255).astype(np.uint8)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        io.imsave(str(path), pixels, check_contrast=False)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


# --- Parameters ---------------------------------------------------------------

def phase_contrast(soft: PhaseParams, chi: float) -> List[PhaseParams]:
    """
    [soft, hard] pair. Plastic phases differ only in yield stress and
    hardening (hard = chi * soft), elastic phases in Young's modulus.
    """
    if not chi > 0.0:
        raise ValueError(f"contrast must be positive, got {chi}")
    if isinstance(soft, PlasticParams):
        hard = PlasticParams(soft.elastic, chi * soft.tau_y0, chi * soft.hardening)
    else:
        hard = ElasticParams(chi * soft.youngs, soft.poisson)
    return [soft, hard]


def bind_parameters(pg: PhaseGrid, per_phase: Sequence[PhaseParams]) -> ParameterFields:
    if len(per_phase) != pg.n_phases:
        raise ArityMismatch(f"{len(per_phase)} parameter sets for {pg.n_phases} phases")
    plastic = [isinstance(p, PlasticParams) for p in per_phase]
    if any(plastic) and not all(plastic):
        raise ArityMismatch("phases mix elastic and plastic parameter sets")

    empty = np.flatnonzero(pg.counts == 0)
    if empty.size:
        logger.warning("phases %s have no nodes", empty.tolist())

    labels = pg.labels
    if all(plastic):
        elastic = [p.elastic for p in per_phase]
        tau_y0 = np.array([p.tau_y0 for p in per_phase])[labels]
        hardening = np.array([p.hardening for p in per_phase])[labels]
    else:
        elastic = list(per_phase)
        tau_y0 = hardening = None

    return ParameterFields(
        lame_lambda=np.array([e.lame_lambda for e in elastic])[labels],
        lame_mu=np.array([e.lame_mu for e in elastic])[labels],
        tau_y0=tau_y0,
        hardening=hardening,
    )
