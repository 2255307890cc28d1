"""
Diagnostics service for the Entropic-PNP solver.

Responsibilities:
    - Discrete energy of a trace: ∫A [Σ U(u_i) + ε/(2 k_B T) |∇φ|²], U(η) = e^η (η - 1).
    - Physical dissipation of a slab: ∫∫A Σ D_i e^{u_i} |∇u_i + κ_i ∇φ|².
    - Per-species mass, minimum density, L² errors against exact fields.
    - Per-step records (numerical dissipation as the residual E^{n-1} - E^n - Diss^n,
      mass balance with Dirichlet boundary reactions) and invariant checks.

Design:
    - Pure functions over (spec, tables, state); the SpatialTables and the
      assembler's quadrature decide every integral, so energy/mass agree with
      what the scheme conserves.
"""

from __future__ import annotations

import logging
from typing import Mapping, Optional, Sequence

import numpy as np

from app.models import DiagnosticsRecord, NewtonReport, ProblemSpec, SlabState, TraceState

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-10


# ----------------------------------------------------------------------
# Integrals of traces
# ----------------------------------------------------------------------
def entropy_density(eta: np.ndarray) -> np.ndarray:
    """U(η) = exp(η)(η - 1); bounded below by -1 with equality at 0."""
    return np.exp(eta) * (eta - 1.0)


def energy(spec: ProblemSpec, tables, trace: TraceState) -> float:
    """Discrete energy of a trace state, A-weighted."""
    wa = tables.weighted
    u = tables.values(trace.u)
    grad_phi = tables.gradients(trace.phi)
    chem = entropy_density(u).sum(axis=0)
    field = tables.eps / (2.0 * spec.thermal) * np.einsum("eqd,eqd->eq", grad_phi, grad_phi)
    return float(np.sum(wa * (chem + field)))


def masses(tables, trace: TraceState) -> np.ndarray:
    """∫A exp(u_i) dx for every species."""
    return np.einsum("eq,ieq->i", tables.weighted, np.exp(tables.values(trace.u)))


def mass(spec: ProblemSpec, tables, trace: TraceState, species: int) -> float:
    if not 0 <= species < spec.n_species:
        raise IndexError(f"species {species} out of range")
    return float(masses(tables, trace)[species])


def weighted_measure(tables) -> float:
    """∫A dx."""
    return float(tables.weighted.sum())


# ----------------------------------------------------------------------
# Slab integrals
# ----------------------------------------------------------------------
def dissipation(assembler, slab: SlabState) -> float:
    """Physical dissipation over the slab (non-negative)."""
    fld = assembler.slab_fields(slab)
    kappa = assembler.kappa[:, None, None, None, None]
    mu_grad = fld.grad_u + kappa * fld.grad_phi[None]
    sq = np.einsum("iteqd,iteqd->iteq", mu_grad, mu_grad)
    integrand = np.einsum("i,iteq,iteq->teq", assembler.diff, fld.c, sq)
    return float(slab.dt * np.einsum("t,eq,teq->", assembler.tquad.weights, assembler.tables.weighted, integrand))


def min_density(assembler, slab: SlabState) -> float:
    """Smallest exp(u_i) over all temporal and right-endpoint quadrature points."""
    fld = assembler.slab_fields(slab)
    return float(min(fld.c.min(), fld.c_end.min()))


# ----------------------------------------------------------------------
# Errors
# ----------------------------------------------------------------------
def l2_error(tables, trace: TraceState, exact: Mapping, t: Optional[float] = None) -> dict:
    """
    L² errors of the trace against exact fields.

    Args:
        tables: SpatialTables of the run.
        trace: Numerical right trace.
        exact: "u1".."uN" and/or "phi" -> callable(t, points) -> values.
        t: Evaluation time (defaults to trace.t).

    Returns:
        dict: field name -> error (unweighted by A).
    """
    t = trace.t if t is None else t
    flat = tables.points.reshape(-1, tables.points.shape[-1])
    shape = tables.weights.shape
    out = {}
    for name, func in exact.items():
        if name == "phi":
            numeric = tables.values(trace.phi)
        else:
            numeric = tables.values(trace.u[int(name[1:]) - 1])
        ref = np.asarray(func(float(t), flat), dtype=float).reshape(shape)
        out[name] = float(np.sqrt(np.sum(tables.weights * (numeric - ref) ** 2)))
    return out


# ----------------------------------------------------------------------
# Records
# ----------------------------------------------------------------------
def mass_balance_defect(new: np.ndarray, old: np.ndarray, reaction: np.ndarray,
                        forcing: np.ndarray, reference: np.ndarray) -> float:
    """max_i |m_i^n - m_i^{n-1} - reaction_i - ∫∫A f_i| / m_i^0."""
    ref = np.where(np.abs(reference) > 0, np.abs(reference), 1.0)
    return float(np.max(np.abs(new - old - reaction - forcing) / ref)) if len(new) else 0.0


def build_record(assembler, slab: SlabState, report: NewtonReport, *, step: int,
                 previous: TraceState, reference_masses: np.ndarray, estimator: float,
                 accepted: bool, attempts: int) -> DiagnosticsRecord:
    """Assemble the DiagnosticsRecord of one solved slab."""
    spec, tables = assembler.spec, assembler.tables
    trace = slab.right_trace()
    e_new = energy(spec, tables, trace)
    e_old = energy(spec, tables, previous)
    diss = dissipation(assembler, slab)
    m_new = masses(tables, trace)
    m_old = masses(tables, previous)
    reaction = assembler.boundary_reaction(slab)
    forcing = assembler.forcing_integral(slab)
    dt = slab.dt
    return DiagnosticsRecord(
        step=step,
        t=slab.t1,
        dt=dt,
        energy=e_new,
        dissipation_rate=diss / dt,
        energy_drop_rate=(e_old - e_new) / dt,
        numerical_dissipation=e_old - e_new - diss,
        masses=tuple(float(v) for v in m_new),
        boundary_reaction=tuple(float(v) for v in reaction),
        mass_defect=mass_balance_defect(m_new, m_old, reaction, forcing, reference_masses),
        min_density=min_density(assembler, slab),
        newton_iterations=report.iterations,
        estimator=float(estimator),
        accepted=accepted,
        attempts=attempts,
    )


# ----------------------------------------------------------------------
# Invariants
# ----------------------------------------------------------------------
def check_invariants(record: DiagnosticsRecord, previous_energy: float, *,
                     energy_tolerance: float = 1e-8, mass_tolerance: float = MASS_TOLERANCE,
                     lower_bound: Optional[float] = None, estimator_bound: Optional[float] = None,
                     forced: bool = False) -> list:
    """
    Check the per-step invariants of an accepted record.

    Args:
        record: Accepted step.
        previous_energy: E^{n-1}.
        energy_tolerance: τ = energy_tolerance·(1 + |E^{n-1}|).
        mass_tolerance: Bound on the relative mass-balance defect.
        lower_bound: -N∫A dx, the floor of the energy, if known.
        estimator_bound: ρ·tol for adaptive runs.
        forced: Manufactured forcing breaks energy monotonicity; skip those checks.

    Returns:
        list[str]: Violated invariants (empty when all hold).
    """
    failures = []
    tau = energy_tolerance * (1.0 + abs(previous_energy))
    if not record.min_density > 0:
        failures.append(f"positivity: min density {record.min_density:.3e}")
    if not np.isfinite([record.energy, record.dissipation_rate]).all():
        failures.append("non-finite energy or dissipation")
    if record.mass_defect > mass_tolerance:
        failures.append(f"mass balance: defect {record.mass_defect:.3e}")
    if not forced:
        if record.energy > previous_energy + tau:
            failures.append(f"energy increased by {record.energy - previous_energy:.3e}")
        if previous_energy - record.energy < record.dissipation - tau:
            failures.append(
                f"dissipation bound: drop {previous_energy - record.energy:.6e} < Diss {record.dissipation:.6e}"
            )
        if lower_bound is not None and record.energy < lower_bound - tau:
            failures.append(f"energy {record.energy:.6e} below lower bound {lower_bound:.6e}")
    if estimator_bound is not None and record.accepted and record.estimator > estimator_bound:
        failures.append(f"estimator {record.estimator:.3e} above {estimator_bound:.3e}")
    return failures


def summarize(records: Sequence[DiagnosticsRecord]) -> dict:
    """Counts and end energies of a run."""
    accepted = [r for r in records if r.accepted]
    return {
        "accepted": len(accepted),
        "attempts": len(records),
        "rejected": len(records) - len(accepted),
        "final_time": accepted[-1].t if accepted else 0.0,
        "final_energy": accepted[-1].energy if accepted else float("nan"),
        "mean_newton": float(np.mean([r.newton_iterations for r in accepted])) if accepted else 0.0,
    }
