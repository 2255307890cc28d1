"""
Time loop service for the Entropic-PNP solver.

Responsibilities:
    - PI step-size control from the relative energy gap between the order-m
      scheme and an m=0 companion solved from the same incoming trace.
    - Step rejection with halving, a retry budget and a step-size floor.
    - Fixed-step integration to an end time, or integration until the relative
      energy change between accepted steps drops below a threshold.
    - Streaming of every attempt to a sink and of accepted traces to observers.

Usage:
    sim = Simulation.build(spec, mesh, run_config, settings)
    result = run(spec, mesh, run_config, settings, sink=writer.write)

Design:
    - The companion solve may run on the app's CompanionExecutor; it only
      reads immutable inputs, so results do not depend on scheduling.
    - Controller memory (previous dt and estimator) changes on accepted steps only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from app.errors import (
    NewtonFailure,
    PNPError,
    PositivityViolationError,
    RetryBudgetExhausted,
    SolverError,
    TimeStepUnderflow,
)
from app.models import (
    DiagnosticsRecord,
    Mesh,
    NewtonReport,
    ProblemSpec,
    RunConfig,
    SlabState,
    SolverSettings,
    TraceState,
)
from app.services.assembly import SlabAssembler
from app.services.diagnostics import (
    build_record,
    check_invariants,
    energy,
    masses,
    weighted_measure,
)
from app.services.fespace import build_space
from app.services.solver import newton_solve

logger = logging.getLogger(__name__)

RecordSink = Callable[[DiagnosticsRecord], None]
TraceObserver = Callable[[DiagnosticsRecord, TraceState], None]


# ----------------------------------------------------------------------
# Controller
# ----------------------------------------------------------------------
@dataclass
class StepController:
    """PI controller state.

    Attributes:
        tol (float): Estimator tolerance.
        kp, ki (float): Proportional and integral gains.
        theta_max (float): Maximum growth factor per step.
        rho (float): Acceptance safety factor (accept if e <= rho·tol).
        schedule (Callable[[float], float]): dt_max as a function of time.
        dt_prev (float): Last accepted step size.
        e_prev (float): Estimator of the last accepted step (tol before the first).
        floor (float): Lower bound applied to estimator values.
    """
    tol: float
    schedule: Callable[[float], float]
    dt_prev: float
    e_prev: Optional[float] = None
    kp: float = 0.13
    ki: float = 1.0 / 15.0
    theta_max: float = 2.0
    rho: float = 1.2
    floor: float = 1e-14

    def __post_init__(self):
        if self.e_prev is None:
            self.e_prev = self.tol
        if min(self.kp, self.ki, self.theta_max, self.rho, self.tol) <= 0:
            raise ValueError("controller gains and tolerance must be positive")

    @classmethod
    def from_settings(cls, config: RunConfig, settings: SolverSettings) -> "StepController":
        return cls(
            tol=config.tol,
            schedule=config.dt_max_at,
            dt_prev=config.dt_initial,
            kp=settings.kp,
            ki=settings.ki,
            theta_max=settings.theta_max,
            rho=settings.rho,
            floor=settings.estimator_floor,
        )

    def accepts(self, e_n: float) -> bool:
        return e_n <= self.rho * self.tol

    def accept(self, e_n: float, dt: float, t: float) -> float:
        """Record an accepted step of size dt ending at t; return the next dt."""
        self.dt_prev = dt
        dt_next = propose_step(self, e_n, t)
        self.e_prev = max(e_n, self.floor)
        return dt_next


def estimate_error(e_high: float, e_low: float, floor: float = 1e-14) -> float:
    """Relative energy gap |(E_high - E_low)/E_high|, absolute when E_high == 0, floored."""
    gap = abs(e_high - e_low)
    if e_high != 0:
        gap /= abs(e_high)
    return max(gap, floor)


def propose_step(ctrl: StepController, e_n: float, t: Optional[float] = None) -> float:
    """
    PI proposal: min((tol/e)^KI (e_prev/e)^KP dt_prev, θ_max dt_prev, dt_max(t)).
    """
    e_n = max(e_n, ctrl.floor)
    dt_temp = (ctrl.tol / e_n) ** ctrl.ki * (ctrl.e_prev / e_n) ** ctrl.kp * ctrl.dt_prev
    cap = ctrl.schedule(t) if t is not None else math.inf
    return min(dt_temp, ctrl.theta_max * ctrl.dt_prev, cap)


# ----------------------------------------------------------------------
# Simulation context
# ----------------------------------------------------------------------
@dataclass
class Simulation:
    """Everything a run needs besides the moving state."""
    spec: ProblemSpec
    mesh: Mesh
    config: RunConfig
    settings: SolverSettings
    high: SlabAssembler
    low: Optional[SlabAssembler] = None
    executor: object = None

    @classmethod
    def build(cls, spec: ProblemSpec, mesh: Mesh, config: RunConfig,
              settings: Optional[SolverSettings] = None, executor=None) -> "Simulation":
        settings = settings or SolverSettings()
        space = build_space(mesh, config.k)
        order, npts = settings.quad_orders(config)
        high = SlabAssembler(spec, space, config.m, settings, spatial_order=order, temporal_points=npts)
        low = None
        if config.adaptive:
            _, low_pts = settings.quad_orders(replace(config, m=0, temporal_quad_points=None))
            low = SlabAssembler(spec, space, 0, settings, temporal_points=low_pts, tables=high.tables)
        return cls(spec, mesh, config, settings, high, low, executor)

    @property
    def tables(self):
        return self.high.tables

    def energy_of(self, trace: TraceState) -> float:
        return energy(self.spec, self.tables, trace)

    def solve(self, assembler: SlabAssembler, trace: TraceState, dt: float) -> tuple:
        guess = assembler.initial_guess(trace, dt)
        return newton_solve(
            assembler, guess, self.settings,
            energy=lambda tr: energy(self.spec, assembler.tables, tr),
        )


@dataclass
class StepOutcome:
    """Result of advance: the accepted slab and every attempt's record."""
    trace: TraceState
    slab: SlabState
    record: DiagnosticsRecord
    rejected: List[DiagnosticsRecord]
    dt_next: float


def _failed_record(step: int, t0: float, dt: float, n_species: int, report: Optional[NewtonReport],
                   estimator: float, attempts: int) -> DiagnosticsRecord:
    nan = float("nan")
    return DiagnosticsRecord(
        step=step, t=t0 + dt, dt=dt, energy=nan, dissipation_rate=nan, energy_drop_rate=nan,
        numerical_dissipation=nan, masses=(nan,) * n_species, boundary_reaction=(nan,) * n_species,
        mass_defect=nan, min_density=nan,
        newton_iterations=report.iterations if report is not None else 0,
        estimator=estimator, accepted=False, attempts=attempts,
    )


# ----------------------------------------------------------------------
# Advance
# ----------------------------------------------------------------------
def advance(sim: Simulation, trace: TraceState, ctrl: StepController, dt: float, *,
            step: int, reference_masses: np.ndarray, sink: Optional[RecordSink] = None) -> StepOutcome:
    """
    Solve one accepted slab starting at `trace` with first try `dt`.

    Raises:
        RetryBudgetExhausted: more than MAX_RETRIES rejections in a row.
        TimeStepUnderflow: dt below DT_MIN.
    """
    settings = sim.settings
    adaptive = sim.config.adaptive
    rejected: List[DiagnosticsRecord] = []
    attempts = 0
    n_species = sim.spec.n_species

    while True:
        attempts += 1
        if attempts > settings.max_retries + 1:
            raise RetryBudgetExhausted(
                f"step {step} at t={trace.t:.6g}: {settings.max_retries} rejections in a row"
            )
        if dt < settings.dt_min:
            raise TimeStepUnderflow(f"step {step} at t={trace.t:.6g}: dt={dt:.3e} below {settings.dt_min:.1e}")

        companion = None
        if adaptive:
            runner = sim.executor.submit if sim.executor is not None else None
            if runner is not None:
                companion = runner(sim.solve, sim.low, trace, dt)

        reason, report, estimator = None, None, float("nan")
        try:
            slab, report = sim.solve(sim.high, trace, dt)
        except NewtonFailure as exc:
            reason, report = f"newton: {exc}", exc.report

        if adaptive and reason is None:
            try:
                low_slab, _ = companion.result() if companion is not None else sim.solve(sim.low, trace, dt)
                estimator = estimate_error(
                    sim.energy_of(slab.right_trace()),
                    sim.energy_of(low_slab.right_trace()),
                    settings.estimator_floor,
                )
                if not ctrl.accepts(estimator):
                    reason = f"estimator {estimator:.3e} > {ctrl.rho * ctrl.tol:.3e}"
            except SolverError as exc:
                reason = f"companion newton: {exc}"
        elif companion is not None and not companion.cancel():
            # the step is already rejected; the companion outcome is discarded
            try:
                companion.result()
            except PNPError as exc:
                logger.debug("discarded companion failure: %s", exc)
        if not adaptive and reason is None:
            estimator = 0.0

        if reason is not None:
            if report is not None and reason.startswith("estimator"):
                record = build_record(sim.high, slab, report, step=step, previous=trace,
                                      reference_masses=reference_masses, estimator=estimator,
                                      accepted=False, attempts=attempts)
            else:
                record = _failed_record(step, trace.t, dt, n_species, report, estimator, attempts)
            rejected.append(record)
            if sink is not None:
                sink(record)
            logger.info("reject step=%d t=%.6g dt=%.3e (%s)", step, trace.t, dt, reason)
            if not adaptive:
                logger.warning("fixed-step run halved dt after a failed solve")
            dt *= 0.5
            continue

        record = build_record(sim.high, slab, report, step=step, previous=trace,
                              reference_masses=reference_masses, estimator=estimator,
                              accepted=True, attempts=attempts)
        if not record.min_density > 0:
            raise PositivityViolationError(f"step {step}: min density {record.min_density:.3e}")
        if sink is not None:
            sink(record)
        new_trace = slab.right_trace()
        dt_next = ctrl.accept(estimator, dt, new_trace.t) if adaptive else sim.config.dt_initial
        return StepOutcome(new_trace, slab, record, rejected, dt_next)


# ----------------------------------------------------------------------
# Run
# ----------------------------------------------------------------------
@dataclass
class RunResult:
    """Trajectory of a run.

    Attributes:
        records (list[DiagnosticsRecord]): Every attempt, in order.
        initial (TraceState): Initial trace.
        trace (TraceState): Final accepted trace.
        initial_energy (float): E^0.
        reason (str): "t_end", "steady" or "max_steps".
        simulation (Simulation): Context used for the run.
    """
    records: List[DiagnosticsRecord]
    initial: TraceState
    trace: TraceState
    initial_energy: float
    reason: str
    simulation: Simulation = field(repr=False, default=None)

    @property
    def accepted(self) -> List[DiagnosticsRecord]:
        return [r for r in self.records if r.accepted]

    @property
    def final_energy(self) -> float:
        acc = self.accepted
        return acc[-1].energy if acc else self.initial_energy


def _next_dt(dt: float, t: float, config: RunConfig) -> float:
    dt = min(dt, config.dt_max_at(t))
    if config.t_end is not None:
        remaining = config.t_end - t
        if dt >= remaining or remaining - dt <= 1e-10 * dt:
            dt = remaining
    return dt


def run(spec: ProblemSpec, mesh: Mesh, config: RunConfig, settings: Optional[SolverSettings] = None,
        *, executor=None, sink: Optional[RecordSink] = None,
        observers: Sequence[TraceObserver] = ()) -> RunResult:
    """
    Integrate until t_end (fixed or adaptive) or a steady state.

    Args:
        spec: Problem.
        mesh: Mesh.
        config: Run options.
        settings: Numerical settings.
        executor: Optional CompanionExecutor for concurrent companion solves.
        sink: Receives every attempt's record in order.
        observers: Called with (record, trace) after each accepted step.

    Returns:
        RunResult
    """
    settings = settings or SolverSettings()
    sim = Simulation.build(spec, mesh, config, settings, executor=executor)
    initial = sim.high.initial_state(0.0)
    e0 = sim.energy_of(initial)
    m0 = masses(sim.tables, initial)
    floor_energy = -spec.n_species * weighted_measure(sim.tables)
    forced = spec.species_forcing is not None or spec.poisson_forcing is not None
    estimator_bound = settings.rho * config.tol if config.adaptive else None
    logger.info("run %s: k=%d m=%d dofs=%d E0=%.10g", spec.name, config.k, config.m,
                sim.high.space.n_dofs, e0)

    ctrl = StepController.from_settings(config, settings)
    trace = initial
    dt = config.dt_initial
    records: List[DiagnosticsRecord] = []
    prev_energy = e0
    accepted = 0
    reason = "t_end"

    def emit(record):
        records.append(record)
        if sink is not None:
            sink(record)

    while True:
        if config.t_end is not None and trace.t >= config.t_end - 1e-12 * max(1.0, config.t_end):
            reason = "t_end"
            break
        if config.max_steps is not None and accepted >= config.max_steps:
            reason = "max_steps"
            break
        dt = _next_dt(dt, trace.t, config)
        outcome = advance(sim, trace, ctrl, dt, step=accepted + 1, reference_masses=m0, sink=emit)
        accepted += 1
        rec = outcome.record
        for problem in check_invariants(rec, prev_energy, energy_tolerance=settings.energy_tolerance,
                                        lower_bound=floor_energy, estimator_bound=estimator_bound,
                                        forced=forced):
            logger.warning("step=%d t=%.6g invariant: %s", rec.step, rec.t, problem)
        logger.info("step=%d t=%.6g dt=%.3e E=%.10g e=%.3e newton=%d",
                    rec.step, rec.t, rec.dt, rec.energy, rec.estimator, rec.newton_iterations)
        for observer in observers:
            observer(rec, outcome.trace)

        change = abs(rec.energy - prev_energy)
        if rec.energy != 0:
            change /= abs(rec.energy)
        prev_energy = rec.energy
        trace = outcome.trace
        dt = outcome.dt_next
        if config.t_end is None and accepted >= config.min_steps and change < config.steady_threshold:
            reason = "steady"
            break

    logger.info("run %s finished (%s) after %d accepted steps, %d attempts, E=%.10g",
                spec.name, reason, accepted, len(records), prev_energy)
    return RunResult(records, initial, trace, e0, reason, sim)
