"""
Global test fixtures (unit + integration).

Responsibilities:
    - Provide a solver app in testing mode and its frozen settings.
    - Provide small meshes, spaces and problems shared across suites.

Notes:
    - Uses the 'testing' config via create_app("testing").
    - Problems are built through tests/factories.py so tests can override
      single fields without restating the rest.
"""

import numpy as np
import pytest

from app import create_app
from app.models import BoundaryCondition
from app.services.assembly import SlabAssembler
from app.services.fespace import build_space
from app.services.mesh import LEFT_MARKER, RIGHT_MARKER, build_interval_mesh, build_unit_square_mesh
from tests.factories import ProblemSpecFactory


# ----------------------------------------------------------------------
# App (session-scoped)
# ----------------------------------------------------------------------
@pytest.fixture(scope="session")
def app():
    """Solver app configured for testing (quiet logging, no worker thread)."""
    return create_app("testing")


@pytest.fixture(scope="session")
def settings(app):
    return app.settings


# ----------------------------------------------------------------------
# Meshes
# ----------------------------------------------------------------------
@pytest.fixture
def square_mesh():
    """2x2 unit-square mesh (8 triangles), boundary marker 1."""
    return build_unit_square_mesh(2)


@pytest.fixture
def interval_mesh():
    """[0, 1] with 8 elements, markers 1 (left) and 2 (right)."""
    return build_interval_mesh(0.0, 1.0, 8)


# ----------------------------------------------------------------------
# Problems
# ----------------------------------------------------------------------
@pytest.fixture
def drift_spec():
    """Two oppositely charged species, natural species BCs, φ pinned at both ends."""
    return ProblemSpecFactory(
        initial_densities=(
            lambda x: 1.0 + 0.5 * np.cos(np.pi * x[:, 0]),
            lambda x: 1.0 - 0.3 * np.cos(np.pi * x[:, 0]),
        ),
        boundary_conditions=(
            BoundaryCondition("phi", LEFT_MARKER, value=0.0),
            BoundaryCondition("phi", RIGHT_MARKER, value=0.0),
        ),
    )


@pytest.fixture
def drift_assembler(drift_spec, interval_mesh, settings):
    """m=1 assembler for drift_spec on the 8-element interval."""
    return SlabAssembler(drift_spec, build_space(interval_mesh, 1), 1, settings)
