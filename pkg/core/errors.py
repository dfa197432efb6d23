#!/usr/bin/env python3
# core/errors.py
"""
Exceptions raised by the cell solver.

Value problems (bad input, bad tensors, bad geometry) subclass ValueError,
solver failures subclass RuntimeError, output problems subclass OSError.
"""

from typing import List, Optional


class FFTMechError(Exception):
    """Base class for every error raised by this package."""


# --- Input / configuration ----------------------------------------------------

class ConfigInvalid(FFTMechError, ValueError):
    """Run configuration failed validation. Holds every violation found."""

    def __init__(self, messages: List[str]):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


class FractionUnachievable(FFTMechError, ValueError):
    pass


class BadFractions(FFTMechError, ValueError):
    pass


class ArityMismatch(FFTMechError, ValueError):
    pass


class UnreadableImage(FFTMechError, ValueError):
    pass


# --- Node-local tensor failures -----------------------------------------------

class NodeError(FFTMechError, ValueError):
    """Failure located at a single grid node (flat, row-major node index)."""

    def __init__(self, message: str, node: Optional[int] = None):
        self.node = node
        if node is not None:
            message = f"{message} (node {node})"
        super().__init__(message)


class SingularTensor(NodeError):
    pass


class NotSymmetric(NodeError):
    pass


class NotPositiveDefinite(NodeError):
    pass


class InvertedElement(NodeError):
    pass


# --- Solver failures ----------------------------------------------------------

class SolverError(FFTMechError, RuntimeError):
    """Solver failure; `report` holds whatever was recorded before it."""

    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)


class NewtonDiverged(SolverError):
    pass


class CgStalled(SolverError):
    """`solution` is the last CG iterate, `iterations` the count spent on it."""

    def __init__(self, message: str, report=None, solution=None, iterations: int = 0):
        self.solution = solution
        self.iterations = iterations
        super().__init__(message, report=report)


class ComplexResidue(SolverError):
    pass


class NonConvergedReturnMap(SolverError):
    # linear hardening has a closed-form return map; kept for nonlinear laws
    pass


# --- Output -------------------------------------------------------------------

class IoFailure(FFTMechError, OSError):
    pass
