"""
Reporting service for the Entropic-PNP solver.

Responsibilities:
    - Stream diagnostics records to CSV as they are produced (one row per
      attempted step, floats written with 17 significant digits).
    - Read a diagnostics CSV back into DiagnosticsRecords.
    - Dump sampled field values (x[,y], phi, u_1..u_N) of a trace.
    - Run mesh-refinement studies and tabulate L² errors and rates with pandas.

Usage:
    with DiagnosticsWriter(out / "diagnostics.csv", n_species=2) as writer:
        result = run(spec, mesh, config, settings, sink=writer.write)
    dump_fields(result.simulation.high.space, result.trace, out / "fields_final.csv")
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.errors import ConfigError
from app.models import DiagnosticsRecord, SolverSettings, TraceState
from app.schemas import DiagnosticsRecordSchema
from app.services.diagnostics import l2_error
from app.services.fespace import SpatialSpace, evaluate
from app.services.presets import get_preset
from app.services.timeloop import run
from app.utils.helpers import NO_RATE, convergence_rates, format_float

logger = logging.getLogger(__name__)


def _cell(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def _io_error(exc: OSError, path: Path) -> OSError:
    return OSError(exc.errno, exc.strerror or str(exc), str(path))


# ----------------------------------------------------------------------
# Diagnostics CSV
# ----------------------------------------------------------------------
class DiagnosticsWriter:
    """Ordered streaming writer for diagnostics rows.

    The header is written on open, so a run without attempts leaves a
    header-only file.
    """

    def __init__(self, path, n_species: int = 2):
        self.path = Path(path)
        self.schema = DiagnosticsRecordSchema(n_species=n_species)
        self.rows = 0
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("w", newline="", encoding="utf-8")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(self.schema.columns())
        except OSError as exc:
            raise _io_error(exc, self.path) from exc

    def write(self, record: DiagnosticsRecord) -> None:
        row = self.schema.dump(record)
        try:
            self._writer.writerow([_cell(row[col]) for col in self.schema.columns()])
            self._fh.flush()
        except OSError as exc:
            raise _io_error(exc, self.path) from exc
        self.rows += 1

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "DiagnosticsWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def emit_diagnostics(records: Iterable[DiagnosticsRecord], path, n_species: int = 2) -> Path:
    """Write a full list of records; returns the CSV path."""
    with DiagnosticsWriter(path, n_species) as writer:
        for record in records:
            writer.write(record)
    logger.info("wrote %d diagnostics rows to %s", writer.rows, writer.path)
    return writer.path


def read_diagnostics(path, n_species: int = 2) -> List[DiagnosticsRecord]:
    """Parse a diagnostics CSV back into records."""
    path = Path(path)
    schema = DiagnosticsRecordSchema(n_species=n_species)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            return [schema.load(row) for row in csv.DictReader(fh)]
    except OSError as exc:
        raise _io_error(exc, path) from exc


# ----------------------------------------------------------------------
# Field dumps
# ----------------------------------------------------------------------
def sample_points(dim: int, per_element: int) -> np.ndarray:
    """
    Reference sample points: cell midpoints in 1D, sub-triangle centroids of a
    uniformly refined reference triangle in 2D (first `per_element` of them).
    """
    if per_element < 1:
        raise ConfigError(f"samples per element must be >= 1, got {per_element}")
    if dim == 1:
        return ((np.arange(per_element) + 0.5) / per_element)[:, None]
    level = int(math.ceil(math.sqrt(per_element)))
    pts = []
    for i in range(level):
        for j in range(level - i):
            pts.append(((i + 1.0 / 3.0) / level, (j + 1.0 / 3.0) / level))
            if i + j < level - 1:
                pts.append(((i + 2.0 / 3.0) / level, (j + 2.0 / 3.0) / level))
    return np.asarray(pts[:per_element])


def sample_fields(space: SpatialSpace, trace: TraceState, per_element: int = 4) -> pd.DataFrame:
    """Sampled x[,y], phi, u_1..u_N of a trace, one row per sample."""
    ref = sample_points(space.dim, per_element)
    pts = space.physical_points(ref).reshape(-1, space.dim)
    data = {name: pts[:, d] for d, name in enumerate(("x", "y")[:space.dim])}
    data["phi"] = evaluate(space, trace.phi, ref).ravel()
    for i, coeffs in enumerate(trace.u):
        data[f"u_{i + 1}"] = evaluate(space, coeffs, ref).ravel()
    frame = pd.DataFrame(data)
    if space.dim == 1:
        frame = frame.sort_values("x", kind="stable").reset_index(drop=True)
    return frame


def dump_fields(space: SpatialSpace, trace: TraceState, path, per_element: int = 4) -> Path:
    """Write sampled fields of a trace to CSV."""
    path = Path(path)
    frame = sample_fields(space, trace, per_element)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g")
    except OSError as exc:
        raise _io_error(exc, path) from exc
    logger.info("dumped %d samples at t=%.6g to %s", len(frame), trace.t, path)
    return path


# ----------------------------------------------------------------------
# Convergence study
# ----------------------------------------------------------------------
def converge(preset: str, k: int, m: int, meshes: Sequence[int],
             settings: Optional[SolverSettings] = None, executor=None,
             out: Optional[Path] = None) -> pd.DataFrame:
    """
    L² errors at the final trace and successive rates over refined meshes.

    Args:
        preset: Preset name with an exact solution.
        k, m: Degrees.
        meshes: Subdivision counts n (h = 1/n per preset), increasing (at least two).
        settings: Numerical settings.
        executor: Optional companion executor.
        out: Optional CSV path for the table.

    Returns:
        pd.DataFrame: one row per mesh with "<field>_error" and "<field>_rate" columns.
    """
    meshes = [int(n) for n in meshes]
    if len(meshes) < 2:
        raise ConfigError("a convergence study needs at least two meshes")
    if any(b <= a for a, b in zip(meshes, meshes[1:])):
        raise ConfigError(f"meshes must increase: {meshes}")

    errors = {}
    for n in meshes:
        case = get_preset(preset, n=n, k=k, m=m)
        if not case.spec.exact_solution:
            raise ConfigError(f"preset {preset!r} has no exact solution")
        result = run(case.spec, case.mesh, case.run, settings, executor=executor)
        errors[n] = l2_error(result.simulation.tables, result.trace, case.spec.exact_solution)
        logger.info("converge %s n=%d: %s", preset, n, errors[n])

    names = list(errors[meshes[0]])
    table = {"n": meshes}
    for name in names:
        errs = [errors[n][name] for n in meshes]
        table[f"{name}_error"] = errs
        table[f"{name}_rate"] = convergence_rates(errs, meshes)
    frame = pd.DataFrame(table)

    if out is not None:
        out = Path(out)
        try:
            out.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(out, index=False, float_format="%.6e")
        except OSError as exc:
            raise _io_error(exc, out) from exc
    return frame


def format_rate_table(frame: pd.DataFrame) -> str:
    """Plain-text table with errors in %.3e and rates in %.3f."""
    formatters = {}
    for col in frame.columns:
        if col.endswith("_error"):
            formatters[col] = lambda v: f"{v:.3e}"
        elif col.endswith("_rate"):
            formatters[col] = lambda v: v if v == NO_RATE else f"{v:.3f}"
    return frame.to_string(index=False, formatters=formatters)
