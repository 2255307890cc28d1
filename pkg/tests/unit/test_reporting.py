"""
Unit tests for app.services.reporting.

Covers:
    - Streaming diagnostics CSV (header on open, 17-digit floats, read back).
    - Sample points and field dumps of traces.
    - Convergence tables on tiny meshes and their text rendering.
"""

import math

import numpy as np
import pandas as pd
import pytest

from app.errors import ConfigError
from app.models import TraceState
from app.services import reporting
from app.services.fespace import build_space, interpolate
from app.utils.helpers import NO_RATE
from tests.factories import DiagnosticsRecordFactory, nan_record


# ----------------------------------------------------------------------
# Diagnostics CSV
# ----------------------------------------------------------------------
def test_writer_streams_rows(tmp_path):
    path = tmp_path / "out" / "diagnostics.csv"
    records = [DiagnosticsRecordFactory(step=1, energy=-1.0 / 3.0), nan_record(step=2)]
    with reporting.DiagnosticsWriter(path) as writer:
        writer.write(records[0])
        assert len(path.read_text().splitlines()) == 2
        writer.write(records[1])
    lines = path.read_text().splitlines()
    assert lines[0].startswith("step,t,dt,energy")
    assert "-0.33333333333333331" in lines[1]
    assert writer.rows == 2

    loaded = reporting.read_diagnostics(path)
    assert loaded[0] == records[0]
    assert math.isnan(loaded[1].energy) and loaded[1].accepted is False


def test_empty_run_leaves_header(tmp_path):
    path = reporting.emit_diagnostics([], tmp_path / "empty.csv", n_species=3)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 and "mass_3" in lines[0]


def test_writer_reports_path_on_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError) as exc:
        reporting.DiagnosticsWriter(blocker / "diagnostics.csv")
    assert str(blocker) in str(exc.value)


def test_read_missing_file(tmp_path):
    with pytest.raises(OSError):
        reporting.read_diagnostics(tmp_path / "missing.csv")


# ----------------------------------------------------------------------
# Field dumps
# ----------------------------------------------------------------------
def test_sample_points():
    assert np.allclose(reporting.sample_points(1, 4)[:, 0], [0.125, 0.375, 0.625, 0.875])
    tri = reporting.sample_points(2, 4)
    assert tri.shape == (4, 2)
    assert np.all(tri > 0) and np.all(tri.sum(axis=1) < 1)
    assert len({tuple(p) for p in tri}) == 4
    with pytest.raises(ConfigError):
        reporting.sample_points(1, 0)


def test_sample_fields_1d_sorted(interval_mesh):
    space = build_space(interval_mesh, 2)
    trace = TraceState(0.5, np.stack([interpolate(space, lambda p: p[:, 0]), np.zeros(space.n_dofs)]),
                       interpolate(space, lambda p: p[:, 0] ** 2))
    frame = reporting.sample_fields(space, trace, per_element=2)
    assert list(frame.columns) == ["x", "phi", "u_1", "u_2"]
    assert len(frame) == 16
    assert frame["x"].is_monotonic_increasing
    assert np.allclose(frame["u_1"], frame["x"])
    assert np.allclose(frame["phi"], frame["x"] ** 2)


def test_dump_fields_2d(square_mesh, tmp_path):
    space = build_space(square_mesh, 1)
    trace = TraceState(1.0, np.zeros((2, space.n_dofs)), np.full(space.n_dofs, 0.25))
    path = reporting.dump_fields(space, trace, tmp_path / "fields.csv", per_element=3)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["x", "y", "phi", "u_1", "u_2"]
    assert len(frame) == 3 * square_mesh.n_elements
    assert np.allclose(frame["phi"], 0.25)


# ----------------------------------------------------------------------
# Convergence tables
# ----------------------------------------------------------------------
def test_converge_tiny_meshes(settings, tmp_path):
    frame = reporting.converge("example1", 1, 1, [2, 4], settings, out=tmp_path / "rates.csv")
    assert list(frame["n"]) == [2, 4]
    assert {"u1_error", "u1_rate", "u2_error", "phi_error", "phi_rate"} <= set(frame.columns)
    assert frame["u1_rate"].iloc[0] == NO_RATE
    assert all(frame["phi_error"] > 0)
    assert (tmp_path / "rates.csv").exists()
    text = reporting.format_rate_table(frame)
    assert NO_RATE in text and "e-" in text


@pytest.mark.parametrize("meshes", [[8], [8, 8], [16, 8]])
def test_converge_rejects_mesh_lists(settings, meshes):
    with pytest.raises(ConfigError):
        reporting.converge("example1", 1, 1, meshes, settings)


def test_converge_needs_exact_solution(settings):
    with pytest.raises(ConfigError, match="exact solution"):
        reporting.converge("example2", 1, 1, [53, 106], settings)
