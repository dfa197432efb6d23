#!/usr/bin/env python3
# core/tensor_field.py
"""
Tensor fields on a regular periodic grid.

Storage is component-major: a second-order field is an array of shape
(d, d, N_1, ..., N_D), a fourth-order field (d, d, d, d, N_1, ..., N_D) and a
scalar field (N_1, ..., N_D). Every product below is node-local and written
with np.einsum, the grid axes riding along as '...'.

Products follow the index conventions in docs/tensor_conventions.md, in
particular the double contraction C_ij = A_ijkl B_lk (inner pair reversed).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from core.errors import NotPositiveDefinite, NotSymmetric, SingularTensor

logger = logging.getLogger(__name__)

ScalarField = npt.NDArray[np.float64]
Tensor2Field = npt.NDArray[np.float64]
Tensor4Field = npt.NDArray[np.float64]

SINGULAR_DET = 1e-30
EIGEN_FLOOR = 1e-30
SYMMETRY_TOL = 1e-8


@dataclass(frozen=True)
class GridShape:
    """Regular periodic grid: `points` nodes and cell size `lengths` per axis."""

    points: Tuple[int, ...]
    lengths: Tuple[float, ...]

    def __post_init__(self):
        points = tuple(int(p) for p in self.points)
        lengths = tuple(float(x) for x in self.lengths)
        if len(points) not in (2, 3):
            raise ValueError(f"grid must be 2-D or 3-D, got {len(points)} axes")
        if len(lengths) != len(points):
            raise ValueError("grid lengths must match grid points")
        if any(p < 1 for p in points):
            raise ValueError(f"grid points must be >= 1: {points}")
        if any(not np.isfinite(x) or x <= 0.0 for x in lengths):
            raise ValueError(f"grid lengths must be positive: {lengths}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "lengths", lengths)

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def n(self) -> int:
        return int(np.prod(self.points))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.lengths, self.points))


def make_shape(points: Sequence[int], lengths: Optional[Sequence[float]] = None) -> GridShape:
    if lengths is None:
        lengths = [1.0] * len(points)
    return GridShape(tuple(points), tuple(lengths))


GridLike = Union[GridShape, Sequence[int]]


def _grid(shape: GridLike) -> Tuple[int, ...]:
    if isinstance(shape, GridShape):
        return shape.points
    return tuple(int(p) for p in shape)


def _ndim(shape: GridLike, ndim: Optional[int]) -> int:
    if ndim is not None:
        return ndim
    return len(_grid(shape))


# --- Node-major views (for numpy.linalg, which wants (..., d, d)) -------------

def _node_major(A: Tensor2Field) -> np.ndarray:
    return np.moveaxis(A, (0, 1), (-2, -1))


def _component_major(A: np.ndarray) -> Tensor2Field:
    return np.moveaxis(A, (-2, -1), (0, 1))


def _first_node(mask: np.ndarray) -> int:
    return int(np.flatnonzero(np.asarray(mask).ravel())[0])


# --- Constant fields ----------------------------------------------------------

def constant2(shape: GridLike, T: np.ndarray) -> Tensor2Field:
    """Broadcast a single d x d tensor to every node (fresh array)."""
    return np.einsum("ij,...->ij...", np.asarray(T, dtype=np.float64), np.ones(_grid(shape)))


def constant4(shape: GridLike, T: np.ndarray) -> Tensor4Field:
    return np.einsum("ijkl,...->ijkl...", np.asarray(T, dtype=np.float64), np.ones(_grid(shape)))


def identity2(shape: GridLike, ndim: Optional[int] = None) -> Tensor2Field:
    return constant2(shape, np.eye(_ndim(shape, ndim)))


def identity4(shape: GridLike, ndim: Optional[int] = None) -> Tensor4Field:
    """I_ijkl = delta_il delta_jk: I : A = A."""
    i = np.eye(_ndim(shape, ndim))
    return constant4(shape, np.einsum("il,jk", i, i))


def identity4rt(shape: GridLike, ndim: Optional[int] = None) -> Tensor4Field:
    """I^RT_ijkl = delta_ik delta_jl: I^RT : A = A^T."""
    i = np.eye(_ndim(shape, ndim))
    return constant4(shape, np.einsum("ik,jl", i, i))


def identity4sym(shape: GridLike, ndim: Optional[int] = None) -> Tensor4Field:
    return 0.5 * (identity4(shape, ndim) + identity4rt(shape, ndim))


def identity4dev(shape: GridLike, ndim: Optional[int] = None) -> Tensor4Field:
    d = _ndim(shape, ndim)
    I = identity2(shape, d)
    return identity4sym(shape, d) - dyad22(I, I) / 3.0


# --- Products -----------------------------------------------------------------

def trans2(A2: Tensor2Field) -> Tensor2Field:
    return np.einsum("ij...->ji...", A2)


def trans4_left(A4: Tensor4Field) -> Tensor4Field:
    return np.einsum("ijkl...->jikl...", A4)


def trans4_right(A4: Tensor4Field) -> Tensor4Field:
    return np.einsum("ijkl...->ijlk...", A4)


def ddot22(A2: Tensor2Field, B2: Tensor2Field) -> ScalarField:
    return np.einsum("ij...,ji...->...", A2, B2)


def ddot42(A4: Tensor4Field, B2: Tensor2Field) -> Tensor2Field:
    return np.einsum("ijkl...,lk...->ij...", A4, B2)


def ddot44(A4: Tensor4Field, B4: Tensor4Field) -> Tensor4Field:
    return np.einsum("ijkl...,lkmn...->ijmn...", A4, B4)


def dot11(a1: np.ndarray, b1: np.ndarray) -> ScalarField:
    return np.einsum("i...,i...->...", a1, b1)


def dot22(A2: Tensor2Field, B2: Tensor2Field) -> Tensor2Field:
    return np.einsum("ij...,jk...->ik...", A2, B2)


def dot24(A2: Tensor2Field, B4: Tensor4Field) -> Tensor4Field:
    return np.einsum("ij...,jkmn...->ikmn...", A2, B4)


def dot42(A4: Tensor4Field, B2: Tensor2Field) -> Tensor4Field:
    return np.einsum("ijkl...,lm...->ijkm...", A4, B2)


def dyad22(A2: Tensor2Field, B2: Tensor2Field) -> Tensor4Field:
    return np.einsum("ij...,kl...->ijkl...", A2, B2)


def trace2(A2: Tensor2Field) -> ScalarField:
    return np.einsum("ii...->...", A2)


def sym2(A2: Tensor2Field) -> Tensor2Field:
    return 0.5 * (A2 + trans2(A2))


def dev2(A2: Tensor2Field) -> Tensor2Field:
    """Deviator with respect to the tensor's own dimension."""
    d = A2.shape[0]
    return A2 - trace2(A2) / d * identity2(A2.shape[2:], d)


# --- Inverse / determinant ----------------------------------------------------

def det2(A2: Tensor2Field) -> ScalarField:
    return np.linalg.det(_node_major(A2))


def inv2(A2: Tensor2Field) -> Tensor2Field:
    det = det2(A2)
    singular = np.abs(det) < SINGULAR_DET
    if np.any(singular):
        raise SingularTensor(f"|det| below {SINGULAR_DET:g}", node=_first_node(singular))
    return _component_major(np.linalg.inv(_node_major(A2)))


# --- Functions of symmetric tensors -------------------------------------------

def _check_symmetric(A2: Tensor2Field) -> None:
    scale = max(1.0, float(np.abs(A2).max())) if A2.size else 1.0
    asym = np.abs(A2 - trans2(A2)).max(axis=(0, 1))
    bad = asym > SYMMETRY_TOL * scale
    if np.any(bad):
        raise NotSymmetric("tensor is not symmetric", node=_first_node(bad))


def _eigh(A2: Tensor2Field) -> Tuple[np.ndarray, np.ndarray]:
    _check_symmetric(A2)
    return np.linalg.eigh(_node_major(sym2(A2)))


def _spectral(vals: np.ndarray, vecs: np.ndarray) -> Tensor2Field:
    return _component_major(np.einsum("...ia,...a,...ja->...ij", vecs, vals, vecs))


def ln_sym2(A2: Tensor2Field) -> Tensor2Field:
    """Logarithm of a symmetric positive-definite tensor field."""
    vals, vecs = _eigh(A2)
    bad = vals.min(axis=-1) < EIGEN_FLOOR
    if np.any(bad):
        raise NotPositiveDefinite("eigenvalue below floor in log", node=_first_node(bad))
    return _spectral(np.log(np.maximum(vals, EIGEN_FLOOR)), vecs)


def exp_sym2(A2: Tensor2Field) -> Tensor2Field:
    vals, vecs = _eigh(A2)
    return _spectral(np.exp(vals), vecs)


def dln_sym2(A2: Tensor2Field) -> Tensor4Field:
    """
    Derivative of ln(A) with respect to A for symmetric positive-definite A.

    L_ijkl = sum_mn theta_mn v^m_i v^n_j v^m_k v^n_l (symmetrized in kl), with
    theta_mn the divided difference of ln over the eigenvalues (1/lambda on
    coinciding eigenvalues). For symmetric dA, ddot42(L, dA) is the
    directional derivative.
    """
    vals, vecs = _eigh(A2)
    bad = vals.min(axis=-1) < EIGEN_FLOOR
    if np.any(bad):
        raise NotPositiveDefinite("eigenvalue below floor in log", node=_first_node(bad))

    la = vals[..., :, None]
    lb = vals[..., None, :]
    x = (la - lb) / lb
    close = np.abs(x) < 1e-8
    x_safe = np.where(close, 1.0, x)
    theta = np.where(
        close,
        (1.0 - 0.5 * x + x * x / 3.0) / lb,
        np.log1p(x_safe) / (x_safe * lb),
    )

    L = np.einsum("...im,...jn,...mn,...km,...ln->...ijkl", vecs, vecs, theta, vecs, vecs, optimize=True)
    L = 0.5 * (L + np.swapaxes(L, -1, -2))
    return np.moveaxis(L, (-4, -3, -2, -1), (0, 1, 2, 3))


# --- Plane strain embedding ---------------------------------------------------

def embed_plane_strain(A2: Tensor2Field) -> Tensor2Field:
    """2 x 2 tensors into 3 x 3 with A_3i = A_i3 = delta_i3; 3 x 3 passes through."""
    if A2.shape[0] == 3:
        return A2
    out = np.zeros((3, 3) + A2.shape[2:])
    out[:2, :2] = A2
    out[2, 2] = 1.0
    return out


def restrict2(A2: Tensor2Field, d: int) -> Tensor2Field:
    return np.ascontiguousarray(A2[:d, :d])


def restrict4(A4: Tensor4Field, d: int) -> Tensor4Field:
    return np.ascontiguousarray(A4[:d, :d, :d, :d])


# --- Reductions ---------------------------------------------------------------

def field_norm(A: np.ndarray) -> float:
    """Frobenius norm over all nodes and components."""
    return float(np.linalg.norm(A.ravel()))


def field_mean(A2: Tensor2Field) -> np.ndarray:
    """Arithmetic mean tensor over the nodes."""
    return A2.mean(axis=tuple(range(2, A2.ndim)))


def field_inner(A: np.ndarray, B: np.ndarray) -> float:
    return float(np.sum(A * B))
