#!/usr/bin/env python3
# core/projection.py
"""
Compatibility projection in Fourier space.

The projection acts row-wise: A_hat(q) = B_hat(q) . g_hat(q) with
g_hat = (xi (x) xi) / |xi|^2 and xi_i = q_i / L_i, so only the d x d tensor
g_hat is stored per frequency. Frequencies stay in natural FFT order; `q`
holds the centered integer frequency of every storage position.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy.sparse.linalg import LinearOperator

from core.errors import ComplexResidue
from core.tensor_field import (
    GridShape,
    Tensor2Field,
    Tensor4Field,
    ddot42,
    dot11,
    trans2,
)

logger = logging.getLogger(__name__)

IMAG_TOL = 1e-10


class NyquistMode(str, enum.Enum):
    # g_hat = 0 at Nyquist frequencies: compatible F, approximate equilibrium
    ZERO_COMPATIBLE = "zero_compatible"
    # g_hat = I at Nyquist frequencies: equilibrated stress
    IDENTITY_EQUILIBRIUM = "identity_equilibrium"


@dataclass(frozen=True)
class FrequencyGrid:
    shape: GridShape
    q: np.ndarray       # (d, N_1, ..., N_D) integer frequencies
    xi: np.ndarray      # (d, N_1, ..., N_D) scaled frequencies q_i / L_i
    nyquist: np.ndarray  # (N_1, ..., N_D) bool, any axis at its Nyquist index


@dataclass(frozen=True)
class ProjectionOperator:
    shape: GridShape
    ghat: np.ndarray    # (d, d, N_1, ..., N_D)
    nyquist_mode: NyquistMode
    frequencies: FrequencyGrid

    @property
    def axes(self):
        return tuple(range(2, 2 + self.shape.dim))


def build_frequency_grid(shape: GridShape) -> FrequencyGrid:
    axes_q = [np.rint(np.fft.fftfreq(N, d=1.0 / N)).astype(np.int64) for N in shape.points]
    q = np.array(np.meshgrid(*axes_q, indexing="ij"))
    xi = np.array([q[i] / shape.lengths[i] for i in range(shape.dim)], dtype=np.float64)

    nyquist = np.zeros(shape.points, dtype=bool)
    for i, N in enumerate(shape.points):
        if N % 2 == 0:
            nyquist |= np.abs(q[i]) == N // 2
    return FrequencyGrid(shape=shape, q=q, xi=xi, nyquist=nyquist)


def build_projection(shape: GridShape, nyquist_mode: NyquistMode = NyquistMode.ZERO_COMPATIBLE) -> ProjectionOperator:
    nyquist_mode = NyquistMode(nyquist_mode)
    freq = build_frequency_grid(shape)
    xi = freq.xi

    # zero frequency carries the mean: g_hat(0) = 0
    Q = dot11(xi, xi)
    Z = Q == 0.0
    Q[Z] = 1.0
    ghat = np.einsum("i...,j...->ij...", xi, xi) / Q
    ghat[:, :, Z] = 0.0

    if np.any(freq.nyquist):
        if nyquist_mode is NyquistMode.ZERO_COMPATIBLE:
            ghat[:, :, freq.nyquist] = 0.0
        else:
            ghat[:, :, freq.nyquist] = np.eye(shape.dim)[:, :, None]
        logger.debug("nyquist mode %s on %d frequencies", nyquist_mode.value, int(freq.nyquist.sum()))

    return ProjectionOperator(shape=shape, ghat=ghat, nyquist_mode=nyquist_mode, frequencies=freq)


def _check_shape(G: ProjectionOperator, A: Tensor2Field) -> None:
    d = G.shape.dim
    expected = (d, d) + G.shape.points
    if A.shape != expected:
        raise ValueError(f"field shape {A.shape} does not match projection {expected}")


def apply_projection(G: ProjectionOperator, A: Tensor2Field) -> Tensor2Field:
    """F^-1{ G_hat : F{A} }, real part after checking the imaginary residue."""
    _check_shape(G, A)
    Ahat = scipy.fft.fftn(A, axes=G.axes)
    Bhat = np.einsum("il...,lj...->ij...", Ahat, G.ghat)
    B = scipy.fft.ifftn(Bhat, axes=G.axes)

    scale = max(float(np.abs(A).max()), 1.0) if A.size else 1.0
    residue = float(np.abs(B.imag).max()) if B.size else 0.0
    if residue > IMAG_TOL * scale:
        raise ComplexResidue(f"imaginary residue {residue:.3e} after projection")
    return np.ascontiguousarray(B.real)


def apply_projected_tangent(G: ProjectionOperator, K: Tensor4Field, dF: Tensor2Field) -> Tensor2Field:
    """G : K^LT : dF^T, i.e. the projection of dP = (K : dF^T)^T."""
    return apply_projection(G, trans2(ddot42(K, trans2(dF))))


def projected_tangent_operator(G: ProjectionOperator, K: Tensor4Field) -> LinearOperator:
    """apply_projected_tangent as a LinearOperator on flattened fields."""
    d = G.shape.dim
    field_shape = (d, d) + G.shape.points
    ndof = int(np.prod(field_shape))

    def matvec(x):
        return apply_projected_tangent(G, K, np.reshape(x, field_shape)).ravel()

    return LinearOperator(shape=(ndof, ndof), matvec=matvec, dtype=np.float64)


def curl_residual(G: ProjectionOperator, A: Tensor2Field) -> float:
    """
    Largest |xi x a_hat(q)| over rows and frequencies, relative to
    max|xi| * max|a_hat|. Zero for a field whose rows are gradients.
    """
    _check_shape(G, A)
    Ahat = scipy.fft.fftn(A, axes=G.axes)
    xi = G.frequencies.xi.astype(np.complex128)
    if G.shape.dim == 2:
        curl = xi[0][None] * Ahat[:, 1] - xi[1][None] * Ahat[:, 0]
    else:
        curl = np.stack([
            xi[1][None] * Ahat[:, 2] - xi[2][None] * Ahat[:, 1],
            xi[2][None] * Ahat[:, 0] - xi[0][None] * Ahat[:, 2],
            xi[0][None] * Ahat[:, 1] - xi[1][None] * Ahat[:, 0],
        ])
    scale = float(np.abs(xi).max()) * float(np.abs(Ahat).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(curl).max()) / scale
