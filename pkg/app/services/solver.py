"""
Linear and nonlinear solvers for slab systems.

Responsibilities:
    - lu_solve: sparse direct solve (SuperLU with partial pivoting and a
      fill-reducing column ordering) that reports singular pivots by row.
    - newton_solve: Newton iteration on one slab with backtracking line search,
      a residual stop, an energy stop and a step-size stop.

Usage:
    slab, report = newton_solve(assembler, assembler.initial_guess(trace, dt), settings,
                                energy=lambda trace: energy(spec, assembler.tables, trace))

Design:
    - Failures surface as SolverError subclasses; the time loop turns a
      NewtonFailure into a step rejection.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from app.errors import DivergedStateError, InvalidInputError, NewtonFailure, SingularMatrixError
from app.models import NewtonReport, SlabState, SolverSettings, TraceState
from app.services.assembly import apply_dirichlet

logger = logging.getLogger(__name__)

# Dense pivot search is only affordable on small systems.
DENSE_DIAGNOSIS_LIMIT = 3000
RESIDUAL_CHECK = 1e-6


# ----------------------------------------------------------------------
# Sparse direct solve
# ----------------------------------------------------------------------
def _singular_row(A: sp.csr_matrix) -> int:
    """Best-effort index of the row where elimination breaks down."""
    empty = np.flatnonzero(np.diff(A.indptr) == 0)
    if empty.size:
        return int(empty[0])
    n = A.shape[0]
    if n > DENSE_DIAGNOSIS_LIMIT:
        return -1
    P, _, U = la.lu(A.toarray())
    diag = np.abs(np.diag(U))
    scale = max(float(diag.max()) if diag.size else 0.0, 1.0)
    bad = np.flatnonzero(diag <= n * np.finfo(float).eps * scale)
    if not bad.size:
        return -1
    # A = P L U: row i of U came from original row argmax(P[:, i])
    return int(np.argmax(P[:, bad[0]]))


def _equilibrate(A: sp.csr_matrix) -> tuple:
    """Row then column max-scaling: returns (R A C, r, c) with r, c the diagonals."""
    row_max = np.asarray(abs(A).max(axis=1).todense()).ravel()
    r = np.divide(1.0, row_max, out=np.ones_like(row_max), where=row_max > 0)
    A = sp.diags(r) @ A
    col_max = np.asarray(abs(A).max(axis=0).todense()).ravel()
    c = np.divide(1.0, col_max, out=np.ones_like(col_max), where=col_max > 0)
    return sp.csr_matrix(A @ sp.diags(c)), r, c


def lu_solve(A, b: np.ndarray) -> np.ndarray:
    """
    Solve A x = b with a sparse LU factorization of the equilibrated matrix.

    Rows and columns are scaled by their largest entry before factorization, so
    blocks whose entries carry tiny densities (e^u with u far below zero) keep
    pivots of order one.

    Raises:
        InvalidInputError: A not square or b of the wrong length.
        SingularMatrixError: zero pivot, non-finite solution, or a solution whose
            residual shows the factorization broke down.
    """
    A = sp.csr_matrix(A, dtype=float)
    n, n2 = A.shape
    b = np.asarray(b, dtype=float)
    if n != n2:
        raise InvalidInputError(f"matrix must be square, got {A.shape}")
    if b.shape != (n,):
        raise InvalidInputError(f"right-hand side has shape {b.shape}, expected ({n},)")
    A.sum_duplicates()
    A.sort_indices()
    empty = np.flatnonzero(np.diff(A.indptr) == 0)
    if empty.size:
        raise SingularMatrixError(int(empty[0]), "empty row")
    scaled, r, c = _equilibrate(A)
    rhs = r * b
    try:
        lu = splu(scaled.tocsc(), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularMatrixError(_singular_row(scaled), str(exc)) from exc
    pivots = np.abs(lu.U.diagonal())
    tiny = np.flatnonzero(pivots <= n * np.finfo(float).eps * max(float(pivots.max()), 1.0))
    if tiny.size:
        # Pr A Pc = L U with (Pr A)[perm_r[j]] = A[j]
        raise SingularMatrixError(int(np.flatnonzero(lu.perm_r == tiny[0])[0]), "numerically singular pivot")
    y = lu.solve(rhs)
    if not np.isfinite(y).all():
        raise SingularMatrixError(_singular_row(scaled), "non-finite solution")
    res = scaled @ y - rhs
    a_norm = float(abs(scaled).sum(axis=1).max()) if n else 0.0
    bound = RESIDUAL_CHECK * (a_norm * np.abs(y).max(initial=0.0) + np.abs(rhs).max(initial=0.0))
    if np.abs(res).max(initial=0.0) > bound:
        raise SingularMatrixError(int(np.argmax(np.abs(res))), "ill-conditioned factorization")
    return c * y


# ----------------------------------------------------------------------
# Newton
# ----------------------------------------------------------------------
def newton_solve(assembler, guess: SlabState, settings: Optional[SolverSettings] = None,
                 energy: Optional[Callable[[TraceState], float]] = None) -> tuple:
    """
    Newton iteration for one slab.

    Stops when any of these holds:
        - ‖F‖₂ <= max(atol, rtol·‖F₀‖₂)                         ("residual")
        - |ΔE_k| <= energy_rtol·|ΔE_1| for k >= 2, ΔE_1 != 0       ("energy")
        - ‖δ‖∞ <= stol·(1 + ‖x‖∞)                                ("step")

    The residual and energy stops are relative; unless ‖F‖₂ is already below
    atol they are followed by one more full Newton step.

    Args:
        assembler: SlabAssembler for the slab's (spec, space, m).
        guess: Initial guess (Dirichlet data already applied).
        settings: Solver settings.
        energy: Optional right-trace energy functional for the energy stop.

    Returns:
        tuple: (converged SlabState, NewtonReport)

    Raises:
        NewtonFailure: iteration budget exhausted, singular Jacobian, or a
            diverged state the line search could not recover from.
    """
    settings = settings or SolverSettings()
    report = NewtonReport()
    slab = guess
    x = slab.to_vector()

    try:
        F = assembler.residual(slab)
    except DivergedStateError as exc:
        raise NewtonFailure(f"initial guess diverged: {exc}", report) from exc
    norm = float(np.linalg.norm(F))
    report.residual_history.append(norm)
    report.residual_norm = norm
    target = max(settings.newton_atol, settings.newton_rtol * norm)

    e_prev = energy(slab.right_trace()) if energy else None
    de_first = None
    pending = None

    if norm <= settings.newton_atol:
        report.converged, report.reason = True, "residual"
        return slab, report

    for it in range(1, settings.newton_max_iter + 1):
        try:
            J = assembler.jacobian(slab)
            A, rhs = apply_dirichlet(J, F, assembler.dirichlet_rows)
            delta = lu_solve(A, rhs)
        except (SingularMatrixError, DivergedStateError) as exc:
            raise NewtonFailure(f"iteration {it}: {exc}", report) from exc

        small_step = np.abs(delta).max(initial=0.0) <= settings.newton_stol * (1.0 + np.abs(x).max(initial=0.0))

        lam = 1.0
        trial = trial_F = None
        for _ in range(settings.line_search_max_halvings + 1):
            candidate = slab.with_vector(x + lam * delta)
            try:
                cand_F = assembler.residual(candidate)
            except DivergedStateError:
                lam *= 0.5
                continue
            trial, trial_F = candidate, cand_F
            if small_step or pending or np.linalg.norm(cand_F) < norm:
                break
            lam *= 0.5
        else:
            if trial is not None:
                logger.warning("newton it=%d: line search exhausted without decrease", it)
        if trial is None:
            raise NewtonFailure(f"iteration {it}: every line-search trial diverged", report)
        if lam < 1.0:
            logger.debug("newton it=%d line search step=%.3g", it, lam)

        x = trial.to_vector()
        slab, F = trial, trial_F
        norm = float(np.linalg.norm(F))
        report.iterations = it
        report.residual_history.append(norm)
        report.residual_norm = norm

        converged_by = None
        if energy is not None:
            e_now = energy(slab.right_trace())
            report.energy_history.append(e_now)
            de = abs(e_now - e_prev)
            if de_first is None:
                de_first = de
            elif de_first > 0 and de <= settings.newton_energy_rtol * de_first:
                converged_by = "energy"
            e_prev = e_now
        if norm <= target:
            converged_by = "residual"
        elif small_step and converged_by is None:
            converged_by = "step"

        logger.debug("newton it=%d |F|=%.3e", it, norm)
        if pending or converged_by == "step" or (converged_by and norm <= settings.newton_atol):
            report.converged, report.reason = True, pending or converged_by
            return slab, report
        if converged_by:
            # relative stops leave the constant-test rows above round-off; take one more step
            pending = converged_by

    if pending:
        report.converged, report.reason = True, pending
        return slab, report
    raise NewtonFailure(
        f"no convergence after {settings.newton_max_iter} iterations (|F|={norm:.3e})", report
    )
