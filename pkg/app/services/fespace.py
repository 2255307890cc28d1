"""
Finite element spaces and quadrature for the Entropic-PNP solver.

Responsibilities:
    - Continuous nodal Pk spaces on interval/triangle meshes (dof numbering,
      boundary dof sets, affine element maps, basis tabulation).
    - Pm temporal Lagrange bases on the reference slab [0, 1] at right
      Gauss–Radau nodes, plus the shifted Legendre tests used by the
      Poisson equation inside a slab.
    - Gauss rules on [0, 1] and collapsed Gauss–Jacobi rules on the
      reference triangle.

Design:
    - Reference interval is [0, 1]; reference triangle has vertices
      (0,0), (1,0), (0,1).
    - Local basis functions are monomial expansions obtained from the inverse
      Vandermonde matrix at equispaced nodes (conditioning is fine for k <= 3).
    - Global numbering: vertices first, then k-1 dofs per edge oriented from
      the lower to the higher vertex index, then element interiors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi, roots_legendre

from app.errors import InvalidInputError, SingularElementError, UnsupportedDegreeError
from app.models import Mesh


# ----------------------------------------------------------------------
# Quadrature
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class QuadratureRule:
    """Reference-domain quadrature.

    Attributes:
        points (np.ndarray): (nq, dim) points, or (nq,) for temporal rules.
        weights (np.ndarray): (nq,) weights.
        order (int): Polynomial degree integrated exactly.
    """
    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])


def temporal_quadrature(npts: int) -> QuadratureRule:
    """Gauss–Legendre rule with `npts` points on [0, 1], exact to degree 2*npts - 1."""
    if npts < 1:
        raise InvalidInputError(f"temporal quadrature needs npts >= 1, got {npts}")
    x, w = legendre.leggauss(npts)
    return QuadratureRule(points=0.5 * (x + 1.0), weights=0.5 * w, order=2 * npts - 1)


def spatial_quadrature(dim: int, order: int) -> QuadratureRule:
    """
    Rule on the reference simplex exact to total degree `order`.

    dim=1: Gauss on [0, 1]. dim=2: the 1-point centroid rule for order <= 1,
    otherwise a collapsed (Duffy) tensor rule of Gauss–Legendre x Gauss–Jacobi(1, 0).
    """
    if order < 1:
        raise InvalidInputError(f"quadrature order must be >= 1, got {order}")
    n = int(math.ceil((order + 1) / 2))
    if dim == 1:
        x, w = roots_legendre(n)
        return QuadratureRule(points=(0.5 * (x + 1.0))[:, None], weights=0.5 * w, order=2 * n - 1)
    if dim != 2:
        raise InvalidInputError(f"unsupported dimension {dim}")
    if order <= 1:
        return QuadratureRule(points=np.array([[1.0 / 3.0, 1.0 / 3.0]]), weights=np.array([0.5]), order=1)

    xi, w_xi = roots_legendre(n)
    eta, w_eta = roots_jacobi(n, 1.0, 0.0)
    XI, ETA = np.meshgrid(xi, eta, indexing="ij")
    WXI, WETA = np.meshgrid(w_xi, w_eta, indexing="ij")
    px = 0.25 * (1.0 + XI) * (1.0 - ETA)
    py = 0.5 * (1.0 + ETA)
    points = np.column_stack([px.ravel(), py.ravel()])
    weights = (WXI * WETA).ravel() / 8.0
    return QuadratureRule(points=points, weights=weights, order=2 * n - 1)


# ----------------------------------------------------------------------
# Temporal basis
# ----------------------------------------------------------------------
def radau_nodes(m: int) -> np.ndarray:
    """Right Gauss–Radau nodes on [0, 1] (m + 1 of them, the last equal to 1)."""
    if m < 0:
        raise UnsupportedDegreeError(f"temporal degree must be >= 0, got {m}")
    if m == 0:
        return np.array([1.0])
    x, _ = roots_jacobi(m, 1.0, 0.0)
    return np.concatenate([np.sort(0.5 * (x + 1.0)), [1.0]])


@dataclass(frozen=True)
class TemporalBasis:
    """Lagrange basis of P_m on the reference slab [0, 1].

    Attributes:
        degree (int): m.
        nodes (np.ndarray): (m+1,) right Radau nodes; nodes[-1] == 1.
        coeffs (np.ndarray): (m+1, m+1) power-basis coefficients, column j is basis j.
    """
    degree: int
    nodes: np.ndarray
    coeffs: np.ndarray

    @classmethod
    def build(cls, m: int) -> "TemporalBasis":
        nodes = radau_nodes(m)
        vander = np.vander(nodes, m + 1, increasing=True)
        return cls(degree=m, nodes=nodes, coeffs=np.linalg.inv(vander))

    @property
    def size(self) -> int:
        return self.degree + 1

    def tabulate(self, tau) -> tuple:
        """(values, derivatives), each (len(tau), m+1)."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        m = self.degree
        powers = np.vander(tau, m + 1, increasing=True)
        values = powers @ self.coeffs
        if m == 0:
            return values, np.zeros_like(values)
        dpowers = np.zeros_like(powers)
        dpowers[:, 1:] = powers[:, :-1] * np.arange(1, m + 1)
        return values, dpowers @ self.coeffs

    def poisson_tests(self, tau) -> np.ndarray:
        """Shifted Legendre polynomials of degree 0..m-1 at tau, shape (len(tau), m)."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        if self.degree == 0:
            return np.zeros((tau.size, 0))
        x = 2.0 * tau - 1.0
        return legendre.legvander(x, self.degree - 1)


# ----------------------------------------------------------------------
# Reference Pk element
# ----------------------------------------------------------------------
def _monomial_exponents(dim: int, k: int) -> list:
    if dim == 1:
        return [(a,) for a in range(k + 1)]
    return [(a, b) for total in range(k + 1) for b in range(total + 1) for a in [total - b]]


def _reference_nodes(dim: int, k: int) -> np.ndarray:
    """Equispaced nodes: vertices, edge nodes (in local edge direction), interior."""
    if dim == 1:
        return np.array([[0.0], [1.0]] + [[l / k] for l in range(1, k)])
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [v for v in verts]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        for l in range(1, k):
            nodes.append(verts[a] + (l / k) * (verts[b] - verts[a]))
    for j in range(1, k):
        for i in range(1, k - j):
            nodes.append(np.array([i / k, j / k]))
    return np.asarray(nodes)


def _monomials(points: np.ndarray, exponents: list) -> tuple:
    """Values (nq, np) and gradients (nq, np, dim) of monomials."""
    nq, dim = points.shape
    vals = np.ones((nq, len(exponents)))
    grads = np.zeros((nq, len(exponents), dim))
    for p, exps in enumerate(exponents):
        for d, a in enumerate(exps):
            vals[:, p] *= points[:, d] ** a
        for d in range(dim):
            g = np.ones(nq)
            for dd, a in enumerate(exps):
                if dd == d:
                    g = g * (a * points[:, dd] ** (a - 1) if a > 0 else 0.0)
                else:
                    g = g * points[:, dd] ** a
            grads[:, p, d] = g
    return vals, grads


# ----------------------------------------------------------------------
# Spatial space
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SpatialSpace:
    """Continuous Lagrange Pk space on a mesh.

    Attributes:
        mesh (Mesh): Underlying mesh.
        degree (int): k.
        n_dofs (int): Global dof count.
        element_dofs (np.ndarray): (ne, nloc) global dof of each local node.
        boundary_dofs (dict[int, np.ndarray]): Sorted dofs per boundary marker.
        nodes (np.ndarray): (n_dofs, dim) physical nodal points.
        ref_nodes (np.ndarray): (nloc, dim) reference nodal points.
        coeffs (np.ndarray): (nloc, nloc) monomial coefficients of the local basis.
        exponents (list): Monomial exponents matching coeffs rows.
        origin (np.ndarray): (ne, dim) first vertex of each element.
        jac (np.ndarray): (ne, dim, dim) affine map Jacobians.
        det (np.ndarray): (ne,) Jacobian determinants.
        inv_jac (np.ndarray): (ne, dim, dim) inverses (nan for degenerate elements).
    """
    mesh: Mesh
    degree: int
    n_dofs: int
    element_dofs: np.ndarray
    boundary_dofs: Dict[int, np.ndarray]
    nodes: np.ndarray
    ref_nodes: np.ndarray
    coeffs: np.ndarray
    exponents: list
    origin: np.ndarray
    jac: np.ndarray
    det: np.ndarray
    inv_jac: np.ndarray
    _edge_index: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def n_local(self) -> int:
        return int(self.element_dofs.shape[1])

    def tabulate(self, ref_points: np.ndarray) -> tuple:
        """Reference values (nq, nloc) and reference gradients (nq, nloc, dim)."""
        ref_points = np.asarray(ref_points, dtype=float).reshape(-1, self.dim)
        mv, mg = _monomials(ref_points, self.exponents)
        values = mv @ self.coeffs
        grads = np.einsum("qpd,pj->qjd", mg, self.coeffs)
        return values, grads

    def physical_points(self, ref_points: np.ndarray) -> np.ndarray:
        """(ne, nq, dim) images of reference points under every element map."""
        ref_points = np.asarray(ref_points, dtype=float).reshape(-1, self.dim)
        return self.origin[:, None, :] + np.einsum("eij,qj->eqi", self.jac, ref_points)

    def dirichlet_dofs(self, markers) -> np.ndarray:
        chunks = [self.boundary_dofs.get(int(m), np.zeros(0, dtype=np.int64)) for m in markers]
        if not chunks:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(chunks))


def build_space(mesh: Mesh, k: int) -> SpatialSpace:
    """
    Build the continuous Pk space on `mesh`.

    Raises:
        UnsupportedDegreeError: k < 1.
    """
    if int(k) != k or k < 1:
        raise UnsupportedDegreeError(f"spatial degree must be an integer >= 1, got {k}")
    k = int(k)
    dim = mesh.dim
    nv, ne = mesh.n_vertices, mesh.n_elements
    ref_nodes = _reference_nodes(dim, k)
    exponents = _monomial_exponents(dim, k)
    vander, _ = _monomials(ref_nodes, exponents)
    coeffs = np.linalg.inv(vander)

    verts = mesh.vertices[mesh.elements]
    origin = verts[:, 0, :]
    jac = np.stack([verts[:, d + 1, :] - origin for d in range(dim)], axis=2)
    det = np.linalg.det(jac) if ne else np.zeros(0)
    inv_jac = np.full_like(jac, np.nan)
    ok = det != 0.0
    if ok.any():
        inv_jac[ok] = np.linalg.inv(jac[ok])

    edge_index: dict = {}
    if dim == 1:
        n_int = k - 1
        element_dofs = np.empty((ne, k + 1), dtype=np.int64)
        element_dofs[:, :2] = mesh.elements
        if n_int:
            element_dofs[:, 2:] = nv + np.arange(ne)[:, None] * n_int + np.arange(n_int)[None, :]
        n_dofs = nv + ne * n_int
        boundary_dofs = {}
        for facet, marker in zip(mesh.boundary_facets, mesh.boundary_markers):
            boundary_dofs.setdefault(int(marker), []).append(int(facet[0]))
    else:
        n_edge = k - 1
        n_int = (k - 1) * (k - 2) // 2
        for element in mesh.elements:
            for a, b in ((0, 1), (1, 2), (2, 0)):
                key = tuple(sorted((int(element[a]), int(element[b]))))
                if key not in edge_index:
                    edge_index[key] = len(edge_index)
        n_edges = len(edge_index)
        nloc = 3 + 3 * n_edge + n_int
        element_dofs = np.empty((ne, nloc), dtype=np.int64)
        element_dofs[:, :3] = mesh.elements
        for e, element in enumerate(mesh.elements):
            for le, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
                start, end = int(element[a]), int(element[b])
                gid = edge_index[tuple(sorted((start, end)))]
                for l in range(1, k):
                    s = l - 1 if start < end else k - 1 - l
                    element_dofs[e, 3 + le * n_edge + (l - 1)] = nv + gid * n_edge + s
            base = nv + n_edges * n_edge + e * n_int
            element_dofs[e, 3 + 3 * n_edge:] = base + np.arange(n_int)
        n_dofs = nv + n_edges * n_edge + ne * n_int
        boundary_dofs = {}
        for facet, marker in zip(mesh.boundary_facets, mesh.boundary_markers):
            a, b = int(facet[0]), int(facet[1])
            dofs = boundary_dofs.setdefault(int(marker), [])
            dofs += [a, b]
            gid = edge_index.get(tuple(sorted((a, b))))
            if gid is not None:
                dofs += list(nv + gid * n_edge + np.arange(n_edge))

    nodes = np.zeros((n_dofs, dim))
    if ne:
        phys = origin[:, None, :] + np.einsum("eij,qj->eqi", jac, ref_nodes)
        nodes[element_dofs.ravel()] = phys.reshape(-1, dim)

    return SpatialSpace(
        mesh=mesh,
        degree=k,
        n_dofs=int(n_dofs),
        element_dofs=element_dofs,
        boundary_dofs={m: np.unique(np.asarray(d, dtype=np.int64)) for m, d in boundary_dofs.items()},
        nodes=nodes,
        ref_nodes=ref_nodes,
        coeffs=coeffs,
        exponents=exponents,
        origin=origin,
        jac=jac,
        det=det,
        inv_jac=inv_jac,
        _edge_index=edge_index,
    )


def n_edges(space: SpatialSpace) -> int:
    return len(space._edge_index)


# ----------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------
def eval_basis(space: SpatialSpace, element: int, ref_point) -> tuple:
    """
    Local basis values and physical gradients at one reference point.

    Returns:
        tuple: (values (nloc,), gradients (nloc, dim)).

    Raises:
        SingularElementError: element with zero Jacobian determinant.
    """
    if space.det[element] == 0.0 or not np.isfinite(space.inv_jac[element]).all():
        raise SingularElementError(int(element))
    values, grads = space.tabulate(np.asarray(ref_point, dtype=float).reshape(1, space.dim))
    return values[0], grads[0] @ space.inv_jac[element]


def interpolate(space: SpatialSpace, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Nodal interpolant coefficients of func(points (n, dim)) -> (n,)."""
    if not callable(func):
        return np.full(space.n_dofs, float(func))
    return np.asarray(func(space.nodes), dtype=float).reshape(space.n_dofs)


def evaluate(space: SpatialSpace, coeffs: np.ndarray, ref_points: np.ndarray) -> np.ndarray:
    """Values (ne, nq) of a finite element function at reference points of every element."""
    values, _ = space.tabulate(ref_points)
    return np.einsum("qj,ej->eq", values, np.asarray(coeffs)[space.element_dofs])
