"""
Exception hierarchy for the PNP space-time solver.

Responsibilities:
    - Separate user/config mistakes (exit code 2) from numerical failures
      (exit code 3) so the CLI can map them without inspecting messages.
    - Carry the context a caller needs to react: the offending line of a mesh
      file, the element index of a topology violation, the pivot row of a
      singular matrix, the Newton report of a failed slab.

All errors derive from PNPError and additionally from the builtin the
rest of the code would naturally raise (ValueError / RuntimeError), so
generic handlers keep working.
"""

from __future__ import annotations

from typing import Optional


class PNPError(Exception):
    """Base class for every error raised by the package."""


# ----------------------------------------------------------------------
# Configuration / input errors (exit code 2)
# ----------------------------------------------------------------------
class ConfigError(PNPError, ValueError):
    """Invalid run configuration or CLI override."""


class UnknownPresetError(ConfigError):
    """Requested preset name is not registered."""

    def __init__(self, name: str):
        super().__init__(f"Unknown preset: {name!r}")
        self.name = name


class InvalidInputError(PNPError, ValueError):
    """Invalid arguments to a constructor or operation."""


class MeshParseError(InvalidInputError):
    """Mesh text could not be parsed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MeshTopologyError(InvalidInputError):
    """Mesh connectivity violates an invariant."""

    def __init__(self, message: str, element: Optional[int] = None):
        prefix = f"element {element}: " if element is not None else ""
        super().__init__(prefix + message)
        self.element = element


class UnsupportedDegreeError(InvalidInputError):
    """Polynomial degree outside the supported range."""


class InvalidBoundaryDataError(InvalidInputError):
    """Boundary data that cannot be expressed in entropy variables."""


class SingularElementError(PNPError, ValueError):
    """Element with a zero Jacobian determinant."""

    def __init__(self, element: int):
        super().__init__(f"element {element} is degenerate (zero Jacobian determinant)")
        self.element = element


class PositivityViolationError(PNPError):
    """A density that must be strictly positive is not."""


# ----------------------------------------------------------------------
# Solver errors (exit code 3)
# ----------------------------------------------------------------------
class SolverError(PNPError, RuntimeError):
    """Base class for numerical failures."""


class DivergedStateError(SolverError):
    """Assembly met an exponent argument beyond the overflow guard or a non-finite value."""


class SingularMatrixError(SolverError):
    """Sparse LU met a numerically zero pivot."""

    def __init__(self, row: int, message: str = "numerically singular pivot"):
        super().__init__(f"{message} (row {row})")
        self.row = row


class NewtonFailure(SolverError):
    """Newton iteration did not converge on a slab."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class RetryBudgetExhausted(SolverError):
    """Too many consecutive step rejections."""


class TimeStepUnderflow(SolverError):
    """Step size fell below the configured minimum."""
