#!/usr/bin/env python3
# core/solver.py
"""
Incremental-iterative driver.

Each increment prescribes the macroscopic deformation gradient Fbar. The first
linear solve spreads the mean jump Fbar - <F> over the cell through the
tangent of the last converged iterate; every later solve corrects the
projected stress residual.
All linear systems are solved matrix-free with CG from a zero initial guess,
so every iterate stays in the compatible subspace and the mean of F is exactly
Fbar after the first update.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, List, Optional, Protocol, Sequence, Union

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from core.constitutive import MaterialModel, macroscopic_equivalent_strain
from core.errors import CgStalled, FFTMechError, NewtonDiverged
from core.projection import (
    ProjectionOperator,
    apply_projected_tangent,
    apply_projection,
    projected_tangent_operator,
)
from core.tensor_field import (
    GridShape,
    Tensor2Field,
    constant2,
    field_mean,
    field_norm,
    identity2,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverParams:
    eta_newton: float = 1e-5
    eta_cg: float = 1e-8
    max_newton: int = 30
    max_cg: Optional[int] = None  # None: n * d^2

    def __post_init__(self):
        for name in ("eta_newton", "eta_cg"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.max_newton < 1:
            raise ValueError(f"max_newton must be >= 1, got {self.max_newton}")
        if self.max_cg is not None and self.max_cg < 1:
            raise ValueError(f"max_cg must be >= 1, got {self.max_cg}")

    def cg_cap(self, shape: GridShape) -> int:
        if self.max_cg is not None:
            return int(self.max_cg)
        return shape.n * shape.dim * shape.dim


@dataclass(frozen=True)
class Increment:
    fbar: np.ndarray
    label: Union[int, float, str] = 0

    def __post_init__(self):
        fbar = np.array(self.fbar, dtype=np.float64)
        if fbar.ndim != 2 or fbar.shape[0] != fbar.shape[1] or fbar.shape[0] not in (2, 3):
            raise ValueError(f"Fbar must be a 2 x 2 or 3 x 3 matrix, got shape {fbar.shape}")
        if not np.linalg.det(fbar) > 0.0:
            raise ValueError(f"det Fbar must be positive (increment {self.label})")
        fbar.setflags(write=False)
        object.__setattr__(self, "fbar", fbar)


@dataclass
class SolveReport:
    label: Union[int, float, str] = 0
    newton_iterations: int = 0          # iterations after the boundary-condition solve
    cg_iterations: List[int] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    wall_ms: float = 0.0
    eps_bar: float = 0.0
    converged: bool = False

    @property
    def cg_total(self) -> int:
        return int(sum(self.cg_iterations))

    @property
    def residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")

    @property
    def status(self) -> str:
        return "converged" if self.converged else "failed"


@dataclass(frozen=True)
class CellState:
    """
    Nodal F with the committed history; `trial` is set between solve and
    commit. `tangent` is K at the last converged iterate and spreads the next
    mean jump (None before the first increment).
    """

    F: Tensor2Field
    history: Any = None
    trial: Any = None
    tangent: Any = None

    @classmethod
    def initial(cls, shape: GridShape, model: MaterialModel) -> "CellState":
        return cls(F=identity2(shape), history=model.initial_history(shape))


def commit_state(state: CellState, model: MaterialModel) -> CellState:
    return replace(state, history=model.commit(state.trial), trial=None)


# --- Linear solve -------------------------------------------------------------

def cg_solve(
    operator: Union[LinearOperator, Callable[[Tensor2Field], Tensor2Field]],
    rhs: Tensor2Field,
    params: SolverParams,
    max_cg: Optional[int] = None,
):
    """
    Solve operator(dF) = rhs by conjugate gradients from dF = 0.

    `operator` is a LinearOperator on flattened fields or a callable on
    fields. Returns (dF, iterations).
    """
    if field_norm(rhs) == 0.0:
        return np.zeros_like(rhs), 0

    ndof = rhs.size
    if not isinstance(operator, LinearOperator):
        apply = operator
        operator = LinearOperator(
            shape=(ndof, ndof),
            matvec=lambda x: apply(np.reshape(x, rhs.shape)).ravel(),
            dtype=np.float64,
        )
    if max_cg is None:
        max_cg = ndof

    count = [0]

    def callback(xk):
        count[0] += 1

    x, info = cg(
        operator,
        rhs.ravel(),
        x0=np.zeros(ndof),
        rtol=params.eta_cg,
        atol=0.0,
        maxiter=max_cg,
        callback=callback,
    )
    if info > 0:
        raise CgStalled(
            f"CG did not reach {params.eta_cg:g} within {max_cg} iterations",
            solution=np.reshape(x, rhs.shape),
            iterations=count[0],
        )
    if info < 0:
        raise CgStalled(f"CG breakdown (info={info})")
    return np.reshape(x, rhs.shape), count[0]


def equilibrium_residual(G: ProjectionOperator, P: Tensor2Field) -> float:
    """||G : P|| / ||P||, zero for a stress-free cell."""
    norm = field_norm(P)
    if norm == 0.0:
        return 0.0
    return field_norm(apply_projection(G, P)) / norm


# --- Newton loop --------------------------------------------------------------

def solve_increment(
    state: CellState,
    inc: Increment,
    model: MaterialModel,
    G: ProjectionOperator,
    params: SolverParams,
    report: Optional[SolveReport] = None,
):
    """
    Bring the cell to equilibrium under `inc.fbar`.

    Returns (state', report). state'.history is still the committed history of
    the input; the converged trial history is in state'.trial.
    """
    if report is None:
        report = SolveReport(label=inc.label)
    shape = G.shape
    d = shape.dim
    if inc.fbar.shape != (d, d):
        raise ValueError(f"Fbar is {inc.fbar.shape[0]} x {inc.fbar.shape[1]} on a {d}-D grid")

    t0 = time.perf_counter()
    report.eps_bar = macroscopic_equivalent_strain(inc.fbar)
    max_cg = params.cg_cap(shape)
    Fn = field_norm(state.F)

    F = np.array(state.F, copy=True)
    try:
        # at F_t itself the yield check of nodes on the yield surface is
        # decided by roundoff, so the last converged tangent is reused
        K = state.tangent
        if K is None:
            _, K, _ = model.evaluate(F, state.history)

        # prescribed mean jump, spread by the tangent
        DF = constant2(shape, inc.fbar - field_mean(F))
        rhs = -apply_projected_tangent(G, K, DF)
        F = F + DF

        i = 0
        while True:
            try:
                dF, n_cg = cg_solve(projected_tangent_operator(G, K), rhs, params, max_cg)
            except CgStalled as exc:
                # a stalled update that already meets the Newton tolerance ends the increment
                if i == 0 or exc.solution is None or field_norm(exc.solution) / Fn >= params.eta_newton:
                    exc.report = report
                    raise
                logger.warning(
                    "increment %s iter %d: CG stalled below the Newton tolerance, update accepted",
                    inc.label, i,
                )
                dF, n_cg = exc.solution, exc.iterations
            F = F + dF
            P, K, trial = model.evaluate(F, state.history)

            res = field_norm(dF) / Fn
            report.cg_iterations.append(n_cg)
            report.residuals.append(res)
            report.newton_iterations = i
            logger.debug("increment %s iter %d: cg %d, residual %.3e", inc.label, i, n_cg, res)

            if not np.isfinite(res):
                raise NewtonDiverged(f"non-finite residual at increment {inc.label}", report=report)
            if res < params.eta_newton and i > 0:
                break
            i += 1
            if i > params.max_newton:
                raise NewtonDiverged(
                    f"no convergence in {params.max_newton} iterations at increment {inc.label}",
                    report=report,
                )
            rhs = -apply_projection(G, P)
    finally:
        report.wall_ms = 1e3 * (time.perf_counter() - t0)

    report.converged = True
    logger.info(
        "increment %s: newton %d, cg %d, residual %.3e",
        inc.label, report.newton_iterations, report.cg_total, report.residual,
    )
    return replace(state, F=F, trial=trial, tangent=K), report


# --- Load program -------------------------------------------------------------

class Sink(Protocol):
    def on_increment(self, index: int, inc: Increment, state: CellState, report: SolveReport) -> None: ...

    def on_failure(self, index: int, inc: Increment, report: SolveReport, error: Exception) -> None: ...


class MemorySink:
    """Keeps reports and converged F fields in memory."""

    def __init__(self, keep_fields: bool = True):
        self.keep_fields = keep_fields
        self.reports: List[SolveReport] = []
        self.fields: List[Tensor2Field] = []
        self.failure: Optional[Exception] = None

    def on_increment(self, index, inc, state, report):
        self.reports.append(report)
        if self.keep_fields:
            self.fields.append(np.array(state.F, copy=True))

    def on_failure(self, index, inc, report, error):
        self.reports.append(report)
        self.failure = error


def run_program(
    state: CellState,
    increments: Sequence[Increment],
    model: MaterialModel,
    G: ProjectionOperator,
    params: SolverParams,
    sink: Optional[Sink] = None,
) -> CellState:
    """Solve increments in order, committing history after each converged one."""
    for index, inc in enumerate(increments, start=1):
        report = SolveReport(label=inc.label)
        try:
            state, report = solve_increment(state, inc, model, G, params, report=report)
        except FFTMechError as exc:
            logger.error("increment %s failed: %s", inc.label, exc)
            if sink is not None:
                sink.on_failure(index, inc, report, exc)
            raise
        state = commit_state(state, model)
        if sink is not None:
            sink.on_increment(index, inc, state, report)
    return state
