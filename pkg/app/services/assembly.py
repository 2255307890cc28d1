"""
Space-time slab assembly for the entropy-variable PNP scheme.

Responsibilities:
    - Precompute spatial quadrature tables (basis values, physical gradients,
      weights, coefficient values) for one mesh/space pair.
    - Assemble the nonlinear slab residual and its exact Jacobian for N species
      u_i = log c_i and the potential φ on a spatial Pk x temporal Pm slab.
    - Replace Dirichlet rows by (value - prescribed) and eliminate them
      symmetrically for the Newton linear system.
    - Build the initial trace (nodal log c^0 and an endpoint Poisson solve).

Usage:
    assembler = SlabAssembler(spec, space, m=1, settings=settings)
    slab = assembler.initial_guess(trace, dt)
    F = assembler.residual(slab)
    J = assembler.jacobian(slab)

Design:
    - Unknown vector: species-major, then temporal mode, then spatial dof;
      φ modes after all species; gauge multipliers (zero-mean gauge) last.
    - The species time term is used in integrated-by-parts form
          ∫A e^{u(1)} v(1) - ∫A e^{u_prev} v(0) - ∫∫A e^{u} ∂_τ v,
      which is exact for polynomial-in-time tests and keeps the constant test
      row free of temporal quadrature error.
    - Poisson equations inside the slab are tested with shifted Legendre
      polynomials of degree < m and scaled by 1/dt; the right endpoint
      equation is a separate block. Gauge multiplier b enters Poisson block b.
    - All element work is vectorized with numpy.einsum and scattered through
      np.bincount / scipy.sparse COO -> CSR.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from app.errors import (
    DivergedStateError,
    InvalidBoundaryDataError,
    InvalidInputError,
    PositivityViolationError,
    SingularElementError,
)
from app.models import ProblemSpec, SlabState, SolverSettings, TraceState
from app.services.fespace import (
    QuadratureRule,
    SpatialSpace,
    TemporalBasis,
    spatial_quadrature,
    temporal_quadrature,
)
from app.services.mesh import evaluate_on_elements

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# Spatial tables
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SpatialTables:
    """Per-element quadrature data shared by assembly and diagnostics.

    Attributes:
        space (SpatialSpace): The Pk space.
        rule (QuadratureRule): Reference quadrature.
        phi (np.ndarray): (nq, nl) basis values.
        grads (np.ndarray): (ne, nq, nl, dim) physical basis gradients.
        weights (np.ndarray): (ne, nq) quadrature weights times |det J|.
        points (np.ndarray): (ne, nq, dim) physical quadrature points.
        area (np.ndarray): (ne, nq) cross-section A.
        eps (np.ndarray): (ne, nq) permittivity ε.
        rho0 (np.ndarray): (ne, nq) fixed charge ρ0.
        mean_weights (np.ndarray): (ndof,) ∫ψ_j dx, the zero-mean constraint row.
    """
    space: SpatialSpace
    rule: QuadratureRule
    phi: np.ndarray
    grads: np.ndarray
    weights: np.ndarray
    points: np.ndarray
    area: np.ndarray
    eps: np.ndarray
    rho0: np.ndarray
    mean_weights: np.ndarray

    @classmethod
    def build(cls, spec: ProblemSpec, space: SpatialSpace, order: int) -> "SpatialTables":
        """
        Raises:
            SingularElementError: an element with zero Jacobian determinant.
            InvalidInputError: A or ε not strictly positive at a quadrature point.
        """
        degenerate = np.flatnonzero(space.det == 0.0)
        if degenerate.size:
            raise SingularElementError(int(degenerate[0]))
        rule = spatial_quadrature(space.dim, order)
        phi, grads_ref = space.tabulate(rule.points)
        grads = np.einsum("qld,edk->eqlk", grads_ref, space.inv_jac)
        weights = rule.weights[None, :] * np.abs(space.det)[:, None]
        points = space.physical_points(rule.points)
        mesh = space.mesh
        area = evaluate_on_elements(spec.cross_section, mesh, points)
        eps = evaluate_on_elements(spec.permittivity, mesh, points)
        rho0 = evaluate_on_elements(spec.fixed_charge, mesh, points)
        if not (area > 0).all():
            raise InvalidInputError("cross-section A must be positive at every quadrature point")
        if not (eps > 0).all():
            raise InvalidInputError("permittivity must be positive at every quadrature point")
        local_mean = np.einsum("eq,ql->el", weights, phi)
        mean_weights = np.bincount(
            space.element_dofs.ravel(), weights=local_mean.ravel(), minlength=space.n_dofs
        )
        return cls(space, rule, phi, grads, weights, points, area, eps, rho0, mean_weights)

    @property
    def dofs(self) -> np.ndarray:
        return self.space.element_dofs

    @property
    def weighted(self) -> np.ndarray:
        """Quadrature weights times A."""
        return self.weights * self.area

    def values(self, coeffs: np.ndarray) -> np.ndarray:
        """FE function values (..., ne, nq) for coefficients (..., ndof)."""
        return np.einsum("...el,ql->...eq", np.asarray(coeffs)[..., self.dofs], self.phi)

    def gradients(self, coeffs: np.ndarray) -> np.ndarray:
        """FE function gradients (..., ne, nq, dim)."""
        return np.einsum("...el,eqld->...eqd", np.asarray(coeffs)[..., self.dofs], self.grads)

    def scatter(self, local: np.ndarray) -> np.ndarray:
        """Sum element vectors (..., ne, nl) into global vectors (..., ndof)."""
        lead = local.shape[:-2]
        flat = local.reshape((-1,) + local.shape[-2:])
        n = self.space.n_dofs
        out = np.empty((flat.shape[0], n))
        idx = self.dofs.ravel()
        for r in range(flat.shape[0]):
            out[r] = np.bincount(idx, weights=flat[r].ravel(), minlength=n)
        return out.reshape(lead + (n,))

    def stiffness(self, weight: np.ndarray) -> np.ndarray:
        """Local ∫ weight ∇ψ_l·∇ψ_m, shape (ne, nl, nl)."""
        return np.einsum("eq,eqld,eqmd->elm", self.weights * weight, self.grads, self.grads, optimize=True)

    def global_matrix(self, local: np.ndarray, n: Optional[int] = None) -> sp.csr_matrix:
        n = n or self.space.n_dofs
        rows = np.repeat(self.dofs[:, :, None], self.dofs.shape[1], axis=2)
        cols = np.repeat(self.dofs[:, None, :], self.dofs.shape[1], axis=1)
        return sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


@dataclass(frozen=True)
class SlabFields:
    """Quadrature values of a slab's fields.

    Shapes: species arrays (N, nt, ne, nq[, dim]); end/prev values (N, ne, nq).
    """
    u: np.ndarray
    grad_u: np.ndarray
    phi: np.ndarray
    grad_phi: np.ndarray
    c: np.ndarray
    u_end: np.ndarray
    c_end: np.ndarray
    c_prev: np.ndarray
    grad_phi_end: np.ndarray


def _exp_guarded(values: np.ndarray, guard: float, label: str) -> np.ndarray:
    if not np.isfinite(values).all():
        raise DivergedStateError(f"non-finite {label} values")
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    if peak > guard:
        raise DivergedStateError(f"|{label}| = {peak:.3g} exceeds the exp guard {guard:g}")
    return np.exp(values)


# ----------------------------------------------------------------------
# Slab assembler
# ----------------------------------------------------------------------
class SlabAssembler:
    """Residual/Jacobian assembler for one (spec, space, m) combination.

    Attributes:
        spec (ProblemSpec): Problem definition.
        space (SpatialSpace): Spatial Pk space.
        m (int): Temporal degree.
        tables (SpatialTables): Spatial quadrature data.
        basis (TemporalBasis): Radau Lagrange basis of P_m.
        tquad (QuadratureRule): Temporal Gauss rule on [0, 1].
        size (int): Number of unknowns.
    """

    def __init__(self, spec: ProblemSpec, space: SpatialSpace, m: int,
                 settings: Optional[SolverSettings] = None,
                 spatial_order: Optional[int] = None,
                 temporal_points: Optional[int] = None,
                 tables: Optional[SpatialTables] = None):
        if m < 0:
            raise InvalidInputError(f"temporal degree must be >= 0, got {m}")
        self.spec = spec.validate()
        self.space = space
        self.m = int(m)
        self.settings = settings or SolverSettings()
        order = spatial_order or self.settings.spatial_quad_order or 2 * space.degree + 2
        npts = temporal_points or self.settings.temporal_quad_points or self.m + 3
        self.tables = tables if tables is not None else SpatialTables.build(spec, space, order)
        self.basis = TemporalBasis.build(self.m)
        self.tquad = temporal_quadrature(npts)

        self.N = spec.n_species
        self.M = self.m + 1
        self.ndof = space.n_dofs
        self.n_u = self.N * self.M * self.ndof
        self.n_phi = self.M * self.ndof
        self.n_mult = self.M if spec.gauge == "zero_mean" else 0
        self.size = self.n_u + self.n_phi + self.n_mult

        # temporal tables
        self.tv, self.td = self.basis.tabulate(self.tquad.points)
        self.left = self.basis.tabulate(0.0)[0][0]
        self.right = np.zeros(self.M)
        self.right[-1] = 1.0
        self.ptest = self.basis.poisson_tests(self.tquad.points)

        self.kappa = spec.drift
        self.charges = spec.charges
        self.diff = np.asarray(spec.diffusivities, float)

        self.species_dirichlet = [
            space.dirichlet_dofs([bc.marker for bc in spec.species_conditions(i)])
            for i in range(self.N)
        ]
        self.phi_dirichlet = space.dirichlet_dofs([bc.marker for bc in spec.phi_conditions()])
        self.dirichlet_rows = self._dirichlet_rows()
        self._source_cache: dict = {}

    # ------------------------------------------------------------------
    # Index helpers
    # ------------------------------------------------------------------
    def u_index(self, i: int, a: int, dofs) -> np.ndarray:
        return (i * self.M + a) * self.ndof + np.asarray(dofs)

    def phi_index(self, a: int, dofs) -> np.ndarray:
        return self.n_u + a * self.ndof + np.asarray(dofs)

    def _dirichlet_rows(self) -> np.ndarray:
        rows = [self.u_index(i, a, self.species_dirichlet[i])
                for i in range(self.N) for a in range(self.M)]
        rows += [self.phi_index(a, self.phi_dirichlet) for a in range(self.M)]
        if not rows:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(rows)).astype(np.int64)

    # ------------------------------------------------------------------
    # Boundary data
    # ------------------------------------------------------------------
    def _bc_values(self, conditions, t: float, n: int) -> tuple:
        dofs_all, vals_all = [], []
        for bc in conditions:
            dofs = self.space.boundary_dofs.get(int(bc.marker))
            if dofs is None or dofs.size == 0:
                continue
            pts = self.space.nodes[dofs]
            if callable(bc.value):
                vals = np.asarray(bc.value(t, pts), dtype=float).reshape(dofs.size)
            else:
                vals = np.full(dofs.size, float(bc.value))
            if bc.on_density:
                if not (vals > 0).all():
                    raise InvalidBoundaryDataError(
                        f"Dirichlet density on marker {bc.marker} must be positive to take its log"
                    )
                vals = np.log(vals)
            dofs_all.append(dofs)
            vals_all.append(vals)
        out = np.zeros(n)
        mask = np.zeros(n, dtype=bool)
        for dofs, vals in zip(dofs_all, vals_all):
            out[dofs] = vals
            mask[dofs] = True
        return mask, out

    def dirichlet_values(self, t: float) -> tuple:
        """(species values (N, ndof), φ values (ndof,)) of the boundary data at time t."""
        u_vals = np.zeros((self.N, self.ndof))
        for i in range(self.N):
            _, u_vals[i] = self._bc_values(self.spec.species_conditions(i), t, self.ndof)
        _, phi_vals = self._bc_values(self.spec.phi_conditions(), t, self.ndof)
        return u_vals, phi_vals

    def mode_times(self, slab: SlabState) -> np.ndarray:
        return slab.t0 + slab.dt * self.basis.nodes

    def project_dirichlet(self, slab: SlabState) -> SlabState:
        """Return a copy with Dirichlet dofs set to the boundary data at every mode."""
        u = slab.u.copy()
        phi = slab.phi.copy()
        for a, t in enumerate(self.mode_times(slab)):
            u_vals, phi_vals = self.dirichlet_values(float(t))
            for i in range(self.N):
                d = self.species_dirichlet[i]
                u[i, a, d] = u_vals[i, d]
            phi[a, self.phi_dirichlet] = phi_vals[self.phi_dirichlet]
        return SlabState(slab.t0, slab.dt, u, phi, slab.u_prev, slab.phi_prev, slab.multipliers)

    def initial_guess(self, trace: TraceState, dt: float) -> SlabState:
        """Constant-in-time extension of the incoming trace with Dirichlet data applied."""
        return self.project_dirichlet(SlabState.extend(trace, dt, self.m, self.n_mult))

    # ------------------------------------------------------------------
    # Field evaluation
    # ------------------------------------------------------------------
    def _sources(self, slab: SlabState) -> tuple:
        """(f (N, nt, ne, nq), g (nt, ne, nq), g_end (ne, nq)), cached per slab window."""
        key = (slab.t0, slab.dt)
        cached = self._source_cache.get(key)
        if cached is not None:
            return cached
        tb = self.tables
        ne, nq = tb.weights.shape
        nt = self.tquad.size
        flat = tb.points.reshape(-1, self.space.dim)
        times = slab.t0 + slab.dt * self.tquad.points
        f = np.zeros((self.N, nt, ne, nq))
        if self.spec.species_forcing is not None:
            for i, fi in enumerate(self.spec.species_forcing):
                if fi is None:
                    continue
                for s, t in enumerate(times):
                    f[i, s] = np.asarray(fi(float(t), flat), dtype=float).reshape(ne, nq)
        g = np.zeros((nt, ne, nq))
        g_end = np.zeros((ne, nq))
        if self.spec.poisson_forcing is not None:
            for s, t in enumerate(times):
                g[s] = np.asarray(self.spec.poisson_forcing(float(t), flat), dtype=float).reshape(ne, nq)
            g_end = np.asarray(self.spec.poisson_forcing(float(slab.t1), flat), dtype=float).reshape(ne, nq)
        self._source_cache = {key: (f, g, g_end)}
        return f, g, g_end

    def slab_fields(self, slab: SlabState) -> SlabFields:
        """
        Evaluate u, ∇u, φ, ∇φ and densities at all space-time quadrature points.

        Raises:
            DivergedStateError: non-finite values or |u| beyond the exp guard.
        """
        tb = self.tables
        guard = self.settings.exp_guard
        u_sq = tb.values(slab.u)                       # (N, M, ne, nq)
        gu_sq = tb.gradients(slab.u)                   # (N, M, ne, nq, d)
        phi_sq = tb.values(slab.phi)                   # (M, ne, nq)
        gphi_sq = tb.gradients(slab.phi)               # (M, ne, nq, d)
        u_t = np.einsum("ta,iaeq->iteq", self.tv, u_sq)
        gu_t = np.einsum("ta,iaeqd->iteqd", self.tv, gu_sq)
        phi_t = np.einsum("ta,aeq->teq", self.tv, phi_sq)
        gphi_t = np.einsum("ta,aeqd->teqd", self.tv, gphi_sq)
        u_end = u_sq[:, -1]
        u_prev = tb.values(slab.u_prev)
        c = _exp_guarded(u_t, guard, "u")
        c_end = _exp_guarded(u_end, guard, "u")
        c_prev = _exp_guarded(u_prev, guard, "incoming u")
        if not (np.isfinite(gu_t).all() and np.isfinite(gphi_t).all()):
            raise DivergedStateError("non-finite gradient values")
        return SlabFields(u_t, gu_t, phi_t, gphi_t, c, u_end, c_end, c_prev, gphi_sq[-1])

    # ------------------------------------------------------------------
    # Residual
    # ------------------------------------------------------------------
    def residual(self, slab: SlabState, constrained: bool = True) -> np.ndarray:
        """
        Concatenated slab residual.

        Args:
            slab: Candidate slab state.
            constrained: Replace Dirichlet rows by (value - prescribed).

        Raises:
            DivergedStateError: from slab_fields.
        """
        tb = self.tables
        fld = self.slab_fields(slab)
        f, g, g_end = self._sources(slab)
        wa = tb.weighted
        dt = slab.dt
        w = self.tquad.weights

        # species
        s_end = np.einsum("eq,ieq,ql->iel", wa, fld.c_end, tb.phi)
        s_prev = np.einsum("eq,ieq,ql->iel", wa, fld.c_prev, tb.phi)
        mass_t = np.einsum("eq,iteq,ql->itel", wa, fld.c, tb.phi)
        mu_grad = fld.grad_u + self.kappa[:, None, None, None, None] * fld.grad_phi[None]
        flux = (self.diff[:, None, None, None] * fld.c)[..., None] * mu_grad
        diff_t = np.einsum("eq,iteqd,eqld->itel", wa, flux, tb.grads, optimize=True)
        force_t = np.einsum("eq,iteq,ql->itel", wa, f, tb.phi)
        r_u = (
            self.right[None, :, None, None] * s_end[:, None]
            - self.left[None, :, None, None] * s_prev[:, None]
            - np.einsum("t,ta,itel->iael", w, self.td, mass_t)
            + dt * np.einsum("t,ta,itel->iael", w, self.tv, diff_t - force_t)
        )
        R_u = tb.scatter(r_u)                            # (N, M, ndof)

        # Poisson
        charge_t = np.einsum("i,iteq->teq", self.charges, fld.c) + tb.rho0[None] + g
        pois_t = (
            np.einsum("eq,teqd,eqld->tel", wa * tb.eps, fld.grad_phi, tb.grads, optimize=True)
            - np.einsum("eq,teq,ql->tel", wa, charge_t, tb.phi)
        )
        r_phi = np.empty((self.M,) + pois_t.shape[1:])
        if self.m:
            r_phi[:-1] = np.einsum("t,tb,tel->bel", w, self.ptest, pois_t)
        charge_end = np.einsum("i,ieq->eq", self.charges, fld.c_end) + tb.rho0 + g_end
        r_phi[-1] = (
            np.einsum("eq,eqd,eqld->el", wa * tb.eps, fld.grad_phi_end, tb.grads)
            - np.einsum("eq,eq,ql->el", wa, charge_end, tb.phi)
        )
        R_phi = tb.scatter(r_phi)                        # (M, ndof)

        parts = [R_u.ravel()]
        if self.n_mult:
            R_phi += slab.multipliers[:, None] * tb.mean_weights[None, :]
            parts += [R_phi.ravel(), slab.phi @ tb.mean_weights]
        else:
            parts.append(R_phi.ravel())
        F = np.concatenate(parts)
        if constrained:
            F = self._constrain_residual(slab, F)
        return F

    def _constrain_residual(self, slab: SlabState, F: np.ndarray) -> np.ndarray:
        F = F.copy()
        for a, t in enumerate(self.mode_times(slab)):
            u_vals, phi_vals = self.dirichlet_values(float(t))
            for i in range(self.N):
                d = self.species_dirichlet[i]
                F[self.u_index(i, a, d)] = slab.u[i, a, d] - u_vals[i, d]
            d = self.phi_dirichlet
            F[self.phi_index(a, d)] = slab.phi[a, d] - phi_vals[d]
        return F

    # ------------------------------------------------------------------
    # Jacobian
    # ------------------------------------------------------------------
    def jacobian(self, slab: SlabState, constrained: bool = True) -> sp.csr_matrix:
        """Exact derivative of residual(slab, constrained) as a CSR matrix."""
        tb = self.tables
        fld = self.slab_fields(slab)
        wa = tb.weighted
        dt = slab.dt
        w = self.tquad.weights
        M, N = self.M, self.N
        dofs = tb.dofs
        nl = dofs.shape[1]

        # element kernels
        m_end = np.einsum("eq,ieq,ql,qm->ielm", wa, fld.c_end, tb.phi, tb.phi, optimize=True)
        m_t = np.einsum("eq,iteq,ql,qm->itelm", wa, fld.c, tb.phi, tb.phi, optimize=True)
        dc = self.diff[:, None, None, None] * fld.c
        mu_grad = fld.grad_u + self.kappa[:, None, None, None, None] * fld.grad_phi[None]
        k_lap = np.einsum("eq,iteq,eqld,eqmd->itelm", wa, dc, tb.grads, tb.grads, optimize=True)
        k_adv = np.einsum("eq,iteq,iteqd,eqld,qm->itelm", wa, dc, mu_grad, tb.grads, tb.phi, optimize=True)
        k_eps = tb.stiffness(tb.area * tb.eps)

        c_time = np.einsum("t,ta,tb->tab", w, self.td, self.tv)      # ∂_τ test x trial
        c_mass = np.einsum("t,ta,tb->tab", w, self.tv, self.tv)      # test x trial

        # species / species
        uu = (
            (self.right[:, None] * self.right[None, :])[None, :, :, None, None, None] * m_end[:, None, None]
            - np.einsum("tab,itelm->iabelm", c_time, m_t, optimize=True)
            + dt * np.einsum("tab,itelm->iabelm", c_mass, k_lap + k_adv, optimize=True)
        )
        # species / phi
        uphi = dt * self.kappa[:, None, None, None, None, None] * np.einsum(
            "tab,itelm->iabelm", c_mass, k_lap, optimize=True
        )
        # Poisson / phi and Poisson / species
        p_phi = np.zeros((M, M))
        p_u = np.zeros((N, M, M) + m_end.shape[1:])
        if self.m:
            p_phi[:-1] = np.einsum("t,tb,ta->ba", w, self.ptest, self.tv)
            p_u[:, :-1] = -self.charges[:, None, None, None, None, None] * np.einsum(
                "t,tb,ta,itelm->ibaelm", w, self.ptest, self.tv, m_t, optimize=True
            )
        p_phi[-1, -1] = 1.0
        p_u[:, -1, -1] = -self.charges[:, None, None, None] * m_end
        phiphi = p_phi[:, :, None, None, None] * k_eps[None, None]

        rows, cols, vals = [], [], []

        def add_block(block, row_base, col_base):
            # block (..., ne, nl, nl); row_base/col_base broadcast to (..., 1, 1, 1)
            r = row_base + dofs[:, :, None]
            c = col_base + dofs[:, None, :]
            r, c = np.broadcast_arrays(r, c)
            r = np.broadcast_to(r, block.shape)
            c = np.broadcast_to(c, block.shape)
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(block.ravel())

        ii = np.arange(N)[:, None, None]
        aa = np.arange(M)[None, :, None]
        bb = np.arange(M)[None, None, :]
        u_rows = ((ii * M + aa) * self.ndof)[..., None, None, None]
        u_cols = ((ii * M + bb) * self.ndof)[..., None, None, None]
        phi_cols = (self.n_u + bb * self.ndof)[..., None, None, None]
        add_block(uu, u_rows, u_cols)
        add_block(uphi, u_rows, np.broadcast_to(phi_cols, (N, M, M, 1, 1, 1)))

        pb = np.arange(M)[:, None]
        pa = np.arange(M)[None, :]
        phi_rows2 = (self.n_u + pb * self.ndof)[..., None, None, None]
        phi_cols2 = (self.n_u + pa * self.ndof)[..., None, None, None]
        add_block(phiphi, phi_rows2, phi_cols2)
        pu_rows = np.broadcast_to((self.n_u + np.arange(M)[None, :, None] * self.ndof), (N, M, M))
        pu_cols = ((ii * M + bb) * self.ndof) + 0 * aa
        add_block(p_u, pu_rows[..., None, None, None], pu_cols[..., None, None, None])

        if self.n_mult:
            mw = tb.mean_weights
            nz = np.flatnonzero(mw)
            lam0 = self.n_u + self.n_phi
            for b in range(M):
                rows.append(self.phi_index(b, nz))
                cols.append(np.full(nz.size, lam0 + b))
                vals.append(mw[nz])
                rows.append(np.full(nz.size, lam0 + b))
                cols.append(self.phi_index(b, nz))
                vals.append(mw[nz])

        J = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.size, self.size),
        ).tocsr()
        J.sum_duplicates()
        if constrained and self.dirichlet_rows.size:
            keep = np.ones(self.size)
            keep[self.dirichlet_rows] = 0.0
            J = (sp.diags(keep) @ J + sp.diags(1.0 - keep)).tocsr()
        return J

    def system(self, slab: SlabState) -> tuple:
        """(J, F) for a Newton step, both with Dirichlet rows replaced."""
        return self.jacobian(slab), self.residual(slab)

    # ------------------------------------------------------------------
    # Balances
    # ------------------------------------------------------------------
    def boundary_reaction(self, slab: SlabState) -> np.ndarray:
        """Net mass entering each species through its Dirichlet boundary over the slab."""
        F = self.residual(slab, constrained=False)
        out = np.zeros(self.N)
        for i in range(self.N):
            d = self.species_dirichlet[i]
            if d.size:
                out[i] = sum(F[self.u_index(i, a, d)].sum() for a in range(self.M))
        return out

    def forcing_integral(self, slab: SlabState) -> np.ndarray:
        """∫∫A f_i over the slab, per species."""
        f, _, _ = self._sources(slab)
        return slab.dt * np.einsum("t,eq,iteq->i", self.tquad.weights, self.tables.weighted, f)

    # ------------------------------------------------------------------
    # Initial state
    # ------------------------------------------------------------------
    def initial_state(self, t0: float = 0.0) -> TraceState:
        """
        Initial trace: u = nodal interpolant of log c^0, φ from the endpoint
        Poisson equation with those densities.

        Raises:
            PositivityViolationError: c^0 <= 0 at a node.
        """
        space = self.space
        u0 = np.zeros((self.N, self.ndof))
        for i, c0 in enumerate(self.spec.initial_densities):
            vals = np.asarray(c0(space.nodes), float).reshape(self.ndof) if callable(c0) \
                else np.full(self.ndof, float(c0))
            bad = np.flatnonzero(~(vals > 0))
            if bad.size:
                raise PositivityViolationError(
                    f"initial density of species {i + 1} is {vals[bad[0]]:.3g} at node {int(bad[0])}"
                )
            u0[i] = np.log(vals)
        phi0 = self.solve_endpoint_poisson(u0, t0)
        return TraceState(t=float(t0), u=u0, phi=phi0)

    def solve_endpoint_poisson(self, u: np.ndarray, t: float) -> np.ndarray:
        """Solve the linear endpoint Poisson equation for φ given species coefficients u."""
        from app.services.solver import lu_solve

        tb = self.tables
        c = _exp_guarded(tb.values(u), self.settings.exp_guard, "initial u")
        g = np.zeros_like(tb.rho0)
        if self.spec.poisson_forcing is not None:
            flat = tb.points.reshape(-1, self.space.dim)
            g = np.asarray(self.spec.poisson_forcing(float(t), flat), float).reshape(tb.rho0.shape)
        charge = np.einsum("i,ieq->eq", self.charges, c) + tb.rho0 + g
        load = tb.scatter(np.einsum("eq,eq,ql->el", tb.weighted, charge, tb.phi))
        K = tb.global_matrix(tb.stiffness(tb.area * tb.eps))
        n = self.ndof
        if self.n_mult:
            mw = sp.csr_matrix(tb.mean_weights[None, :])
            A = sp.bmat([[K, mw.T], [mw, None]], format="csr")
            x = lu_solve(A, np.concatenate([load, [0.0]]))
            return x[:n]
        _, phi_vals = self.dirichlet_values(float(t))
        A, rhs = apply_dirichlet(K, -load, self.phi_dirichlet, -phi_vals[self.phi_dirichlet])
        return lu_solve(A, rhs)


# ----------------------------------------------------------------------
# Dirichlet elimination
# ----------------------------------------------------------------------
def apply_dirichlet(J: sp.spmatrix, F: np.ndarray, rows: np.ndarray,
                    constrained_residual: Optional[np.ndarray] = None) -> tuple:
    """
    Symmetric elimination of Dirichlet unknowns from the Newton system J δ = -F.

    Args:
        J: Jacobian (Dirichlet rows may be identity rows already).
        F: Residual; F[rows] are the constraint residuals (x - g) unless
           `constrained_residual` is given.
        rows: Constrained unknown indices.
        constrained_residual: Optional override for F[rows].

    Returns:
        tuple: (A, rhs) with identity rows/columns on `rows`, rhs[rows] = -(x - g)
               and rhs_free = -F_free + J_free,rows (x - g)_rows.
    """
    J = sp.csr_matrix(J)
    n = J.shape[0]
    rows = np.asarray(rows, dtype=np.int64)
    r_d = np.asarray(F[rows] if constrained_residual is None else constrained_residual, float)
    rhs = -np.asarray(F, float).copy()
    if rows.size == 0:
        return J, rhs
    delta_d = np.zeros(n)
    delta_d[rows] = -r_d
    rhs -= J @ delta_d
    rhs[rows] = -r_d
    keep = np.ones(n)
    keep[rows] = 0.0
    D = sp.diags(keep)
    A = (D @ J @ D + sp.diags(1.0 - keep)).tocsr()
    return A, rhs


# ----------------------------------------------------------------------
# Functional entry points
# ----------------------------------------------------------------------
def residual(assembler: SlabAssembler, slab: SlabState) -> np.ndarray:
    return assembler.residual(slab)


def jacobian(assembler: SlabAssembler, slab: SlabState) -> sp.csr_matrix:
    return assembler.jacobian(slab)


def initial_state(spec: ProblemSpec, space: SpatialSpace, settings: Optional[SolverSettings] = None,
                  spatial_order: Optional[int] = None) -> TraceState:
    """Initial trace for `spec` on `space` (m plays no role here)."""
    return SlabAssembler(spec, space, 0, settings, spatial_order=spatial_order).initial_state()
