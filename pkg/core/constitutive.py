#!/usr/bin/env python3
# core/constitutive.py
"""
Node-local constitutive models.

Both models return the first Piola-Kirchhoff stress P and the tangent K with
dP^T = K : dF^T (so K_ijkl = dP_ji / dF_kl). Internally every node carries
3 x 3 tensors; on 2-D grids the deformation gradient is embedded in plane
strain and P, K are restricted back to the in-plane block.

Models:
- HyperElasticModel: Saint Venant-Kirchhoff, S = C : E in the reference
  configuration.
- SimoModel: multiplicative elasto-plasticity, Kirchhoff stress linear in the
  elastic logarithmic strain, von Mises yield with linear hardening, radial
  return, tangent pulled back from the current configuration.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Optional, Protocol, Tuple, Union

import numpy as np

from core.errors import InvertedElement
from core.tensor_field import (
    GridShape,
    ScalarField,
    Tensor2Field,
    Tensor4Field,
    ddot22,
    ddot42,
    ddot44,
    det2,
    dev2,
    dln_sym2,
    dot22,
    dot24,
    dot42,
    dyad22,
    embed_plane_strain,
    exp_sym2,
    identity2,
    identity4,
    identity4dev,
    identity4rt,
    identity4sym,
    inv2,
    ln_sym2,
    restrict2,
    restrict4,
    sym2,
    trans2,
    trans4_right,
)

logger = logging.getLogger(__name__)

Scalar = Union[float, ScalarField]


# --- Parameters ---------------------------------------------------------------

@dataclass(frozen=True)
class ElasticParams:
    youngs: float
    poisson: float

    def __post_init__(self):
        if not self.youngs > 0.0:
            raise ValueError(f"Young's modulus must be positive, got {self.youngs}")
        if not -1.0 < self.poisson < 0.5:
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {self.poisson}")

    @property
    def lame_lambda(self) -> float:
        E, nu = self.youngs, self.poisson
        return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    @property
    def lame_mu(self) -> float:
        return self.youngs / (2.0 * (1.0 + self.poisson))


@dataclass(frozen=True)
class PlasticParams:
    elastic: ElasticParams
    tau_y0: float
    hardening: float

    def __post_init__(self):
        if not self.tau_y0 > 0.0:
            raise ValueError(f"initial yield stress must be positive, got {self.tau_y0}")
        if not self.hardening >= 0.0:
            raise ValueError(f"hardening modulus must be >= 0, got {self.hardening}")


@dataclass(frozen=True)
class ParameterFields:
    """Per-node material parameters (floats broadcast like uniform fields)."""

    lame_lambda: Scalar
    lame_mu: Scalar
    tau_y0: Optional[Scalar] = None
    hardening: Optional[Scalar] = None

    @classmethod
    def uniform(cls, params: Union[ElasticParams, PlasticParams]) -> "ParameterFields":
        if isinstance(params, PlasticParams):
            return cls(params.elastic.lame_lambda, params.elastic.lame_mu, params.tau_y0, params.hardening)
        return cls(params.lame_lambda, params.lame_mu)


@dataclass(frozen=True)
class HistoryState:
    """Per-node internal variables of the Simo model (3 x 3 tensors)."""

    be: Tensor2Field      # elastic left Cauchy-Green tensor
    eps_p: ScalarField    # accumulated plastic strain
    F: Tensor2Field       # deformation gradient this state belongs to


def initial_history(shape: GridShape) -> HistoryState:
    return HistoryState(
        be=identity2(shape, 3),
        eps_p=np.zeros(shape.points),
        F=identity2(shape, 3),
    )


# --- Helpers ------------------------------------------------------------------

def _as_fields(params) -> ParameterFields:
    if isinstance(params, ParameterFields):
        return params
    return ParameterFields.uniform(params)


def _check_orientation(F3: Tensor2Field) -> None:
    J = det2(F3)
    bad = ~(J > 0.0)
    if np.any(bad):
        node = int(np.flatnonzero(bad.ravel())[0])
        raise InvertedElement("det F <= 0", node=node)


def elastic_stiffness(lame_lambda: Scalar, lame_mu: Scalar, grid) -> Tensor4Field:
    """C = lambda I (x) I + 2 mu I^s on 3 x 3 tensors."""
    I = identity2(grid, 3)
    return lame_lambda * dyad22(I, I) + 2.0 * lame_mu * identity4sym(grid, 3)


def equivalent_stress(T: Tensor2Field) -> ScalarField:
    """von Mises measure sqrt(3/2 dev(T) : dev(T)); pass 3 x 3 tensors for plane strain."""
    Td = dev2(T)
    return np.sqrt(1.5 * ddot22(Td, Td))


def macroscopic_equivalent_strain(fbar: np.ndarray) -> float:
    """von Mises measure sqrt(2/3 e_d : e_d) of the deviator of 1/2 ln(Fbar^T Fbar)."""
    fbar = np.asarray(fbar, dtype=np.float64)
    F3 = embed_plane_strain(fbar[:, :, None, None])
    eps = 0.5 * ln_sym2(dot22(trans2(F3), F3))
    ed = dev2(eps)
    return float(np.sqrt(2.0 / 3.0 * ddot22(ed, ed)).ravel()[0])


# --- Saint Venant-Kirchhoff ---------------------------------------------------

def _hyperelastic_3d(F3: Tensor2Field, fields: ParameterFields) -> Tuple[Tensor2Field, Tensor2Field, Tensor4Field]:
    grid = F3.shape[2:]
    _check_orientation(F3)

    I = identity2(grid, 3)
    I4 = identity4(grid, 3)
    I4rt = identity4rt(grid, 3)
    C4 = elastic_stiffness(fields.lame_lambda, fields.lame_mu, grid)

    S = ddot42(C4, 0.5 * (dot22(trans2(F3), F3) - I))
    P = dot22(F3, S)
    K4 = dot24(S, I4) + ddot44(ddot44(I4rt, dot42(dot24(F3, C4), trans2(F3))), I4rt)
    return P, S, K4


def hyperelastic_evaluate(F: Tensor2Field, params) -> Tuple[Tensor2Field, Tensor4Field]:
    """P = F . S with S = C : E, E = 1/2 (F^T F - I); consistent tangent K."""
    d = F.shape[0]
    P, _, K4 = _hyperelastic_3d(embed_plane_strain(F), _as_fields(params))
    return restrict2(P, d), restrict4(K4, d)


# --- Simo elasto-plasticity ---------------------------------------------------

def simo_evaluate(
    F: Tensor2Field,
    committed: HistoryState,
    F_old: Tensor2Field,
    params,
) -> Tuple[Tensor2Field, Tensor4Field, HistoryState]:
    """
    Elastic predictor / plastic corrector from the committed state.

    The trial b_e follows from the relative deformation gradient
    f = F . F_old^-1 acting on the committed b_e; the return map is radial in
    logarithmic strain with closed-form dgamma for linear hardening. The
    Kirchhoff tangent (geometric term plus algorithmic tangent) is pulled
    back with F^-1 . K_x . F^-T.

    Returns (P, K, trial) where trial.F is F in 3 x 3 form.
    """
    fields = _as_fields(params)
    if fields.tau_y0 is None or fields.hardening is None:
        raise ValueError("Simo model needs tau_y0 and hardening fields")

    d = F.shape[0]
    F3 = embed_plane_strain(F)
    grid = F3.shape[2:]
    _check_orientation(F3)

    lam, mu = fields.lame_lambda, fields.lame_mu
    H, tau_y0 = fields.hardening, fields.tau_y0

    I = identity2(grid, 3)
    I4rt = identity4rt(grid, 3)
    I4d = identity4dev(grid, 3)
    C4e = elastic_stiffness(lam, mu, grid)

    # trial state
    Fdelta = dot22(F3, inv2(embed_plane_strain(F_old)))
    be_s = sym2(dot22(Fdelta, dot22(committed.be, trans2(Fdelta))))
    lbe_s = ln_sym2(be_s)
    tau_s = ddot42(C4e, lbe_s) / 2.0
    taud_s = dev2(tau_s)
    taueq_s = np.sqrt(1.5 * ddot22(taud_s, taud_s))

    # stress-free nodes have no flow direction
    Z = taueq_s == 0.0
    taueq_safe = np.where(Z, 1.0, taueq_s)
    N_s = 1.5 * taud_s / taueq_safe

    # yield check
    phi_s = taueq_s - (tau_y0 + H * committed.eps_p)
    plastic = (phi_s > 0.0) & ~Z

    # return map (linear hardening: closed form)
    dgamma = np.where(plastic, phi_s / (3.0 * mu + H), 0.0)
    tau = tau_s - 2.0 * mu * dgamma * N_s
    lbe = lbe_s - 2.0 * dgamma * N_s
    be = exp_sym2(lbe)
    eps_p = committed.eps_p + dgamma

    Fi = inv2(F3)
    P = dot22(tau, trans2(Fi))

    # algorithmic tangent d tau / d(1/2 ln be_s)
    D4 = C4e + plastic * (
        -6.0 * mu**2 * dgamma / taueq_safe * I4d
        + 4.0 * mu**2 * (dgamma / taueq_safe - 1.0 / (3.0 * mu + H)) * dyad22(N_s, N_s)
    )

    # d be_s = dl^T . be_s + be_s . dl, with dl = F^-T . dF^T
    dbe4 = np.einsum("aq...,pb...->abpq...", I, be_s) + np.einsum("ap...,bq...->abpq...", be_s, I)
    dlnbe4 = dln_sym2(be_s)
    C4_nat = np.einsum("abcd...,cdef...,efpq...->abpq...", D4, 0.5 * dlnbe4, dbe4, optimize=True)

    # K_x : dl = d tau - dl^T . tau ; pull back to the reference configuration
    Kx4 = trans4_right(C4_nat) - dot42(I4rt, tau)
    K4 = dot42(dot24(Fi, Kx4), trans2(Fi))

    trial = HistoryState(be=be, eps_p=eps_p, F=np.array(F3, copy=True))
    return restrict2(P, d), restrict4(K4, d), trial


# --- Model contract -----------------------------------------------------------

class MaterialModel(Protocol):
    kind: str
    eq_field: str

    def initial_history(self, shape: GridShape): ...

    def evaluate(self, F: Tensor2Field, committed) -> Tuple[Tensor2Field, Tensor4Field, object]: ...

    def commit(self, trial): ...

    def output_fields(self, F: Tensor2Field, history) -> Dict[str, np.ndarray]: ...


class HyperElasticModel:
    """History-free; commit is the identity."""

    kind = "hyperelastic"
    eq_field = "S_eq"

    def __init__(self, params):
        self.fields = _as_fields(params)

    def initial_history(self, shape: GridShape):
        return None

    def evaluate(self, F: Tensor2Field, committed=None):
        P, K = hyperelastic_evaluate(F, self.fields)
        return P, K, None

    def commit(self, trial):
        return trial

    def output_fields(self, F: Tensor2Field, history=None) -> Dict[str, np.ndarray]:
        d = F.shape[0]
        P, S, _ = _hyperelastic_3d(embed_plane_strain(F), self.fields)
        return {
            "F": F,
            "P": restrict2(P, d),
            "S_eq": equivalent_stress(S),
        }


class SimoModel:
    """Committed history is owned by the caller and passed to evaluate."""

    kind = "simo"
    eq_field = "tau_eq"

    def __init__(self, params):
        self.fields = _as_fields(params)
        if self.fields.tau_y0 is None or self.fields.hardening is None:
            raise ValueError("Simo model needs tau_y0 and hardening")

    def initial_history(self, shape: GridShape) -> HistoryState:
        return initial_history(shape)

    def evaluate(self, F: Tensor2Field, committed: HistoryState):
        return simo_evaluate(F, committed, committed.F, self.fields)

    def commit(self, trial: HistoryState) -> HistoryState:
        return replace(trial)

    def kirchhoff_stress(self, history: HistoryState) -> Tensor2Field:
        """tau = 1/2 C : ln b_e of a committed state (3 x 3)."""
        grid = history.be.shape[2:]
        C4e = elastic_stiffness(self.fields.lame_lambda, self.fields.lame_mu, grid)
        return ddot42(C4e, ln_sym2(history.be)) / 2.0

    def output_fields(self, F: Tensor2Field, history: HistoryState) -> Dict[str, np.ndarray]:
        d = F.shape[0]
        tau = self.kirchhoff_stress(history)
        P = dot22(tau, trans2(inv2(embed_plane_strain(F))))
        return {
            "F": F,
            "P": restrict2(P, d),
            "tau_eq": equivalent_stress(tau),
            "eps_p": history.eps_p,
        }
