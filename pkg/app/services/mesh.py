"""
Mesh service for the Entropic-PNP solver.

Responsibilities:
    - Structured generators: uniform interval meshes that resolve coefficient
      breakpoints, and the uniform triangulation of the unit square (with the
      subdivision count that bounds its element diameter by h).
    - Text import/export of meshes in the plain `dim nv ne nb` format.
    - Topology validation (index range, orientation, dangling vertices,
      boundary facet coverage).
    - Region-wise coefficient evaluation for ε, ρ0 and A.

Usage:
    mesh = build_interval_mesh(-28.0, 25.0, 848, [-18, -5, 10])
    eps = evaluate_on_elements(spec.permittivity, mesh, physical_points)

Design:
    - Meshes are immutable (read-only numpy arrays); every function here is pure.
    - Piecewise coefficients are resolved by the element's region tag, never by
      the point, so jump interfaces are unambiguous.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from app.errors import InvalidInputError, MeshParseError, MeshTopologyError
from app.models import CoefficientField, Mesh

logger = logging.getLogger(__name__)

LEFT_MARKER = 1
RIGHT_MARKER = 2


# ----------------------------------------------------------------------
# Generators
# ----------------------------------------------------------------------
def build_interval_mesh(a: float, b: float, n: int, breakpoints: Sequence[float] = ()) -> Mesh:
    """
    Uniform mesh of [a, b] with every breakpoint as a vertex.

    Each breakpoint interval gets ceil(length / h) equal elements, h = (b - a)/n,
    so a uniform n-element mesh is reproduced exactly when breakpoints already
    fall on the uniform grid.

    Region tag j marks elements inside the j-th breakpoint interval (0-based from a).
    The left end point carries marker 1, the right end point marker 2.

    Raises:
        InvalidInputError: a >= b, n < 1, breakpoints not strictly increasing
            or not inside (a, b).
    """
    if not a < b:
        raise InvalidInputError(f"interval needs a < b, got [{a}, {b}]")
    if n < 1:
        raise InvalidInputError(f"element count must be >= 1, got {n}")
    bps = [float(x) for x in breakpoints]
    if any(y <= x for x, y in zip(bps, bps[1:])):
        raise InvalidInputError(f"breakpoints must be strictly increasing: {bps}")
    if bps and (bps[0] <= a or bps[-1] >= b):
        raise InvalidInputError(f"breakpoints must lie inside ({a}, {b})")

    h = (b - a) / n
    knots = [float(a)] + bps + [float(b)]
    coords = [knots[0]]
    regions = []
    for j, (lo, hi) in enumerate(zip(knots, knots[1:])):
        count = max(1, math.ceil((hi - lo) / h - 1e-9))
        inner = np.linspace(lo, hi, count + 1)[1:]
        inner[-1] = hi
        coords.extend(inner.tolist())
        regions.extend([j] * count)

    nv = len(coords)
    elements = np.column_stack([np.arange(nv - 1), np.arange(1, nv)])
    return Mesh(
        dim=1,
        vertices=np.asarray(coords)[:, None],
        elements=elements,
        boundary_facets=np.array([[0], [nv - 1]]),
        boundary_markers=np.array([LEFT_MARKER, RIGHT_MARKER]),
        element_region=np.asarray(regions),
    )


def build_unit_square_mesh(n: int) -> Mesh:
    """
    Structured triangulation of [0, 1]^2: n x n squares, each cut along its
    (0,0)-(1,1) diagonal into two counter-clockwise triangles.

    All boundary edges carry marker 1; all elements region 0.
    """
    if n < 1:
        raise InvalidInputError(f"subdivisions must be >= 1, got {n}")
    ticks = np.arange(n + 1) / n
    xx, yy = np.meshgrid(ticks, ticks)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    elements = []
    for j in range(n):
        for i in range(n):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            elements.append((v00, v10, v11))
            elements.append((v00, v11, v01))

    facets = []
    for i in range(n):
        facets.append((vid(i, 0), vid(i + 1, 0)))
        facets.append((vid(n, i), vid(n, i + 1)))
        facets.append((vid(i + 1, n), vid(i, n)))
        facets.append((vid(0, i + 1), vid(0, i)))

    return Mesh(
        dim=2,
        vertices=vertices,
        elements=np.asarray(elements),
        boundary_facets=np.asarray(facets),
        boundary_markers=np.ones(len(facets), dtype=int),
        element_region=np.zeros(len(elements), dtype=int),
    )


def unit_square_subdivisions(h: float) -> int:
    """Smallest n whose build_unit_square_mesh(n) has element diameter (the diagonal) <= h."""
    if not h > 0:
        raise InvalidInputError(f"mesh size must be positive, got {h}")
    return max(1, math.ceil(math.sqrt(2.0) / h - 1e-9))


# ----------------------------------------------------------------------
# Geometry
# ----------------------------------------------------------------------
def element_measures(mesh: Mesh) -> np.ndarray:
    """Signed length (1D) or area (2D) of every element under its vertex order."""
    x = mesh.vertices[mesh.elements]
    if mesh.dim == 1:
        return x[:, 1, 0] - x[:, 0, 0]
    e1 = x[:, 1] - x[:, 0]
    e2 = x[:, 2] - x[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def domain_measure(mesh: Mesh) -> float:
    return float(np.sum(element_measures(mesh)))


def _element_faces(element: Sequence[int], dim: int) -> list:
    if dim == 1:
        return [(int(element[0]),), (int(element[1]),)]
    v0, v1, v2 = (int(v) for v in element)
    return [tuple(sorted(f)) for f in ((v0, v1), (v1, v2), (v2, v0))]


# ----------------------------------------------------------------------
# Validation
# ----------------------------------------------------------------------
def validate_mesh(mesh: Mesh) -> Mesh:
    """
    Check every Mesh invariant; return the mesh unchanged.

    Raises:
        MeshTopologyError: bad vertex index, non-positive measure, dangling vertex,
            or boundary facets that do not cover the boundary exactly.
    """
    nv = mesh.n_vertices
    ne = mesh.n_elements
    if mesh.element_region.shape != (ne,):
        raise MeshTopologyError("region tag count does not match element count")
    if mesh.boundary_markers.shape != (mesh.boundary_facets.shape[0],):
        raise MeshTopologyError("marker count does not match boundary facet count")

    for e, element in enumerate(mesh.elements):
        if element.min() < 0 or element.max() >= nv:
            raise MeshTopologyError(f"references vertex outside 0..{nv - 1}", element=e)
        if len(set(element.tolist())) != len(element):
            raise MeshTopologyError("repeats a vertex", element=e)

    measures = element_measures(mesh)
    bad = np.flatnonzero(~(measures > 0))
    if bad.size:
        raise MeshTopologyError("inverted or degenerate element", element=int(bad[0]))

    used = np.zeros(nv, dtype=bool)
    used[mesh.elements.ravel()] = True
    if not used.all():
        raise MeshTopologyError(f"dangling vertex {int(np.flatnonzero(~used)[0])}")

    face_count: Counter = Counter()
    for element in mesh.elements:
        face_count.update(_element_faces(element, mesh.dim))
    overfull = [f for f, c in face_count.items() if c > 2]
    if overfull:
        raise MeshTopologyError(f"face {overfull[0]} shared by more than two elements")
    outer = {f for f, c in face_count.items() if c == 1}

    declared = set()
    for facet in mesh.boundary_facets:
        if facet.min() < 0 or facet.max() >= nv:
            raise MeshTopologyError(f"boundary facet {facet.tolist()} references a missing vertex")
        key = tuple(sorted(int(v) for v in facet))
        if key not in outer:
            raise MeshTopologyError(f"boundary facet {list(key)} is not a boundary face")
        declared.add(key)
    missing = outer - declared
    if missing:
        raise MeshTopologyError(f"boundary face {list(sorted(missing)[0])} has no marker")
    return mesh


# ----------------------------------------------------------------------
# Text format
# ----------------------------------------------------------------------
def serialize_mesh(mesh: Mesh) -> str:
    """Render a mesh in the text format read by load_mesh (floats via repr)."""
    lines = [
        "# entropic-pnp mesh: dim nv ne nb",
        f"{mesh.dim} {mesh.n_vertices} {mesh.n_elements} {mesh.boundary_facets.shape[0]}",
    ]
    lines += [" ".join(repr(float(c)) for c in row) for row in mesh.vertices]
    lines += [
        " ".join(str(int(v)) for v in (region, *element))
        for region, element in zip(mesh.element_region, mesh.elements)
    ]
    lines += [
        " ".join(str(int(v)) for v in (marker, *facet))
        for marker, facet in zip(mesh.boundary_markers, mesh.boundary_facets)
    ]
    return "\n".join(lines) + "\n"


def _significant_lines(text: str) -> Iterable:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            yield lineno, body.split()


def load_mesh(text: str) -> Mesh:
    """
    Parse mesh text and validate its topology.

    Raises:
        MeshParseError: malformed header/rows, with the 1-based file line.
        MeshTopologyError: invariant violations, with the element index when known.
    """
    rows = list(_significant_lines(text))
    if not rows:
        raise MeshParseError("empty mesh file", line=1)

    header_line, header = rows[0]
    try:
        dim, nv, ne, nb = (int(tok) for tok in header)
    except ValueError:
        raise MeshParseError("header must be 'dim nv ne nb'", line=header_line)
    if dim not in (1, 2):
        raise MeshParseError(f"dimension must be 1 or 2, got {dim}", line=header_line)
    if min(nv, ne, nb) < 0:
        raise MeshParseError("counts must be non-negative", line=header_line)

    body = rows[1:]
    if len(body) < nv + ne + nb:
        last = body[-1][0] if body else header_line
        raise MeshParseError(
            f"expected {nv + ne + nb} data lines, found {len(body)}", line=last + 1
        )
    if len(body) > nv + ne + nb:
        raise MeshParseError("unexpected trailing data", line=body[nv + ne + nb][0])

    def parse_block(block, width, cast, what):
        out = []
        for lineno, toks in block:
            if len(toks) != width:
                raise MeshParseError(f"{what} needs {width} values, got {len(toks)}", line=lineno)
            try:
                out.append([cast(t) for t in toks])
            except ValueError:
                raise MeshParseError(f"invalid {what} value", line=lineno)
        return out

    vertices = parse_block(body[:nv], dim, float, "vertex")
    elements = parse_block(body[nv:nv + ne], dim + 2, int, "element")
    facets = parse_block(body[nv + ne:], dim + 1, int, "boundary facet")

    mesh = Mesh(
        dim=dim,
        vertices=np.asarray(vertices, float).reshape(nv, dim),
        elements=np.asarray([e[1:] for e in elements], dtype=np.int64).reshape(ne, dim + 1),
        boundary_facets=np.asarray([f[1:] for f in facets], dtype=np.int64).reshape(nb, dim),
        boundary_markers=np.asarray([f[0] for f in facets], dtype=np.int64),
        element_region=np.asarray([e[0] for e in elements], dtype=np.int64),
    )
    return validate_mesh(mesh)


def read_mesh(path) -> Mesh:
    """Load a mesh file; I/O errors propagate with the path attached."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read mesh file {p}: {exc}") from exc
    mesh = load_mesh(text)
    logger.info("loaded mesh %s (dim=%d, %d elements)", p, mesh.dim, mesh.n_elements)
    return mesh


def write_mesh(mesh: Mesh, path) -> Path:
    p = Path(path)
    p.write_text(serialize_mesh(mesh), encoding="utf-8")
    return p


# ----------------------------------------------------------------------
# Coefficient evaluation
# ----------------------------------------------------------------------
def _region_values(value, points: np.ndarray) -> np.ndarray:
    if callable(value):
        return np.asarray(value(points), dtype=float).reshape(points.shape[0])
    return np.full(points.shape[0], float(value))


def evaluate_on_elements(field: CoefficientField, mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """
    Evaluate a coefficient at physical points grouped by element.

    Args:
        field: Coefficient to evaluate.
        mesh: Mesh supplying region tags.
        points: (ne, nq, dim) physical points, points[e] inside element e.

    Returns:
        np.ndarray: (ne, nq) values.
    """
    ne, nq, dim = points.shape
    if field.kind == "constant":
        return np.full((ne, nq), field.value)
    if field.kind == "closed_form":
        flat = points.reshape(-1, dim)
        return _region_values(field.func, flat).reshape(ne, nq)

    out = np.empty((ne, nq))
    regions = mesh.element_region
    for tag in np.unique(regions):
        mask = regions == tag
        value = field.regions.get(int(tag), field.value)
        flat = points[mask].reshape(-1, dim)
        out[mask] = _region_values(value, flat).reshape(-1, nq)
    return out


def evaluate_coefficient(field: CoefficientField, mesh: Mesh, element: int, point) -> float:
    """Value of `field` at a physical point of `element` (region tag decides the branch)."""
    pts = np.asarray(point, dtype=float).reshape(1, 1, mesh.dim)
    if field.kind == "constant":
        return float(field.value)
    if field.kind == "closed_form":
        return float(_region_values(field.func, pts[0])[0])
    tag = int(mesh.element_region[element])
    value = field.regions.get(tag, field.value)
    return float(_region_values(value, pts[0])[0])


def locate_element(mesh: Mesh, point) -> int:
    """Index of an element containing `point` (first match), used for point sampling in 1D."""
    x = np.asarray(point, dtype=float).reshape(mesh.dim)
    verts = mesh.vertices[mesh.elements]
    if mesh.dim == 1:
        lo = verts[:, :, 0].min(axis=1)
        hi = verts[:, :, 0].max(axis=1)
        hits = np.flatnonzero((lo <= x[0]) & (x[0] <= hi))
    else:
        a, b, c = verts[:, 0], verts[:, 1], verts[:, 2]

        def cross(p, q, r):
            return (q[:, 0] - p[:, 0]) * (r[1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (r[0] - p[:, 0])
        tol = -1e-12
        hits = np.flatnonzero((cross(a, b, x) >= tol) & (cross(b, c, x) >= tol) & (cross(c, a, x) >= tol))
    if hits.size == 0:
        raise InvalidInputError(f"point {x.tolist()} lies outside the mesh")
    return int(hits[0])
