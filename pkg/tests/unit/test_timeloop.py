"""
Unit tests for app.services.timeloop.

Covers:
    - Estimator and PI proposal arithmetic, controller memory.
    - Fixed-step runs landing on t_end, steady-state and max_steps termination.
    - Rejections (estimator and Newton failures), retry budget, dt floor.
    - Companion solves through the executor, dt_max clipping, observers.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from app import create_app
from app.cli import check_cases
from app.errors import (
    DivergedStateError,
    NewtonFailure,
    RetryBudgetExhausted,
    SingularMatrixError,
    TimeStepUnderflow,
)
from app.extensions import CompanionExecutor
from app.models import RunConfig
from app.services import timeloop
from tests.factories import RunConfigFactory


def make_controller(**overrides):
    fields = dict(tol=1e-3, schedule=lambda t: math.inf, dt_prev=1.0)
    fields.update(overrides)
    return timeloop.StepController(**fields)


# ----------------------------------------------------------------------
# Controller arithmetic
# ----------------------------------------------------------------------
def test_estimate_error():
    assert timeloop.estimate_error(2.0, 1.998) == pytest.approx(1e-3)
    assert timeloop.estimate_error(-4.0, -4.004) == pytest.approx(1e-3)
    assert timeloop.estimate_error(0.0, 1e-3) == pytest.approx(1e-3)
    assert timeloop.estimate_error(1.0, 1.0) == 1e-14


def test_controller_starts_from_tolerance():
    ctrl = make_controller()
    assert ctrl.e_prev == ctrl.tol
    assert timeloop.propose_step(ctrl, ctrl.tol) == pytest.approx(1.0)


def test_proposal_formula():
    ctrl = make_controller(e_prev=2e-3)
    e_n = 5e-3
    expected = (1e-3 / e_n) ** (1.0 / 15.0) * (2e-3 / e_n) ** 0.13
    assert timeloop.propose_step(ctrl, e_n) == pytest.approx(expected)


def test_proposal_growth_and_schedule_caps():
    ctrl = make_controller()
    assert timeloop.propose_step(ctrl, 1e-10) == pytest.approx(2.0)
    ctrl = make_controller(schedule=lambda t: 0.25 if t < 10 else 3.0)
    assert timeloop.propose_step(ctrl, 1e-10, t=5.0) == 0.25
    assert timeloop.propose_step(ctrl, 1e-10, t=20.0) == pytest.approx(2.0)


def test_accept_updates_memory():
    ctrl = make_controller()
    assert ctrl.accepts(1.19e-3) and not ctrl.accepts(1.21e-3)
    dt_next = ctrl.accept(0.0, 0.5, t=1.0)
    assert ctrl.dt_prev == 0.5
    assert ctrl.e_prev == ctrl.floor
    assert dt_next == pytest.approx(1.0)


def test_controller_rejects_nonpositive_gains():
    with pytest.raises(ValueError):
        make_controller(tol=0.0)


def test_controller_from_settings(settings):
    config = RunConfigFactory(adaptive=True, tol=1e-4, dt_max_schedule=((1.0, 0.1), (math.inf, 5.0)))
    ctrl = timeloop.StepController.from_settings(config, settings)
    assert ctrl.kp == 0.13 and ctrl.ki == pytest.approx(1.0 / 15.0)
    assert ctrl.schedule(0.5) == 0.1 and ctrl.schedule(2.0) == 5.0
    assert ctrl.dt_prev == config.dt_initial


# ----------------------------------------------------------------------
# Fixed-step and steady runs
# ----------------------------------------------------------------------
def test_fixed_step_run_lands_on_end_time(drift_spec, interval_mesh, settings):
    config = RunConfigFactory(dt_initial=0.03, t_end=0.1)
    result = timeloop.run(drift_spec, interval_mesh, config, settings)
    steps = result.accepted
    assert result.reason == "t_end"
    assert [r.dt for r in steps[:3]] == [0.03, 0.03, 0.03]
    assert steps[-1].dt == pytest.approx(0.01)
    assert steps[-1].t == pytest.approx(0.1, abs=1e-14)
    assert all(r.estimator == 0.0 for r in steps)
    assert all(r.mass_defect < 1e-10 for r in steps)
    energies = [result.initial_energy] + [r.energy for r in steps]
    assert all(b <= a for a, b in zip(energies, energies[1:]))


def test_equilibrium_is_steady_after_min_steps(settings):
    case = check_cases()["equilibrium"]
    result = timeloop.run(case.spec, case.mesh, case.run, settings)
    assert result.reason == "steady"
    assert len(result.records) == case.run.min_steps
    assert result.initial_energy == pytest.approx(-2.0)
    assert all(r.newton_iterations == 0 for r in result.records)


def test_max_steps(drift_spec, interval_mesh, settings):
    config = RunConfigFactory(t_end=None, max_steps=2)
    result = timeloop.run(drift_spec, interval_mesh, config, settings)
    assert result.reason == "max_steps"
    assert len(result.accepted) == 2


def test_observers_and_sink_see_every_step(drift_spec, interval_mesh, settings):
    seen, sunk = [], []
    result = timeloop.run(drift_spec, interval_mesh, RunConfigFactory(), settings,
                          sink=sunk.append, observers=[lambda rec, tr: seen.append((rec.t, tr.t))])
    assert sunk == result.records
    assert [a for a, _ in seen] == [b for _, b in seen] == [r.t for r in result.accepted]


# ----------------------------------------------------------------------
# Rejections
# ----------------------------------------------------------------------
def scripted_estimator(values):
    values = list(values)

    def fake(e_high, e_low, floor=1e-14):
        return values.pop(0) if len(values) > 1 else values[0]
    return fake


def test_estimator_rejection_halves_dt(drift_spec, interval_mesh, settings, monkeypatch):
    monkeypatch.setattr(timeloop, "estimate_error", scripted_estimator([1.0, 1e-4]))
    config = RunConfigFactory(adaptive=True, dt_initial=0.1, t_end=None, max_steps=1)
    sunk = []
    result = timeloop.run(drift_spec, interval_mesh, config, settings, sink=sunk.append)
    first, second = result.records
    assert not first.accepted and first.dt == 0.1 and np.isfinite(first.energy)
    assert second.accepted and second.dt == 0.05 and second.attempts == 2
    assert first.step == second.step == 1
    assert sunk == [first, second]


def test_retry_budget(drift_spec, interval_mesh, settings, monkeypatch):
    monkeypatch.setattr(timeloop, "estimate_error", scripted_estimator([1.0]))
    config = RunConfigFactory(adaptive=True, dt_initial=0.1, t_end=None)
    sunk = []
    with pytest.raises(RetryBudgetExhausted):
        timeloop.run(drift_spec, interval_mesh, config, replace(settings, max_retries=3), sink=sunk.append)
    assert [r.dt for r in sunk] == [0.1, 0.05, 0.025, 0.0125]
    assert not any(r.accepted for r in sunk)


def test_step_size_floor(drift_spec, interval_mesh, settings, monkeypatch):
    monkeypatch.setattr(timeloop, "estimate_error", scripted_estimator([1.0]))
    config = RunConfigFactory(adaptive=True, dt_initial=0.1, t_end=None)
    with pytest.raises(TimeStepUnderflow):
        timeloop.run(drift_spec, interval_mesh, config, replace(settings, dt_min=0.04))


def test_newton_failure_is_recorded_and_halved(drift_spec, interval_mesh, settings, monkeypatch, caplog):
    real = timeloop.newton_solve
    calls = []

    def flaky(assembler, guess, settings=None, energy=None):
        calls.append(guess.dt)
        if len(calls) == 1:
            raise NewtonFailure("forced failure")
        return real(assembler, guess, settings, energy)

    monkeypatch.setattr(timeloop, "newton_solve", flaky)
    config = RunConfigFactory(dt_initial=0.05, t_end=None, max_steps=1)
    with caplog.at_level("WARNING", logger="app.services.timeloop"):
        result = timeloop.run(drift_spec, interval_mesh, config, settings)
    failed, ok = result.records
    assert not failed.accepted and math.isnan(failed.energy) and failed.newton_iterations == 0
    assert ok.accepted and ok.dt == 0.025
    assert "halved dt" in caplog.text


# ----------------------------------------------------------------------
# Adaptive runs
# ----------------------------------------------------------------------
def adaptive_config(**overrides):
    fields = dict(adaptive=True, tol=1e-3, dt_initial=0.005, t_end=0.2)
    fields.update(overrides)
    return RunConfigFactory(**fields)


def test_adaptive_run_respects_controller_bounds(drift_spec, interval_mesh, settings):
    config = adaptive_config(dt_max_schedule=((math.inf, 0.04),))
    result = timeloop.run(drift_spec, interval_mesh, config, settings)
    accepted = result.accepted
    assert result.reason == "t_end"
    assert accepted[-1].t == pytest.approx(0.2, abs=1e-12)
    assert all(r.estimator <= settings.rho * config.tol for r in accepted)
    assert all(r.dt <= 0.04 + 1e-15 for r in accepted)
    for prev, cur in zip(accepted, accepted[1:]):
        assert cur.dt <= settings.theta_max * prev.dt * (1 + 1e-12)
    assert result.simulation.low.m == 0
    assert result.simulation.low.tables is result.simulation.high.tables


def test_companion_on_worker_thread_gives_identical_results(drift_spec, interval_mesh, settings):
    config = adaptive_config(t_end=0.05)
    sequential = timeloop.run(drift_spec, interval_mesh, config, settings)
    app = create_app("testing", parallel_companion=True)
    try:
        threaded = timeloop.run(drift_spec, interval_mesh, config, app.settings, executor=app.executor)
    finally:
        app.executor.shutdown()
    assert [r.dt for r in threaded.records] == [r.dt for r in sequential.records]
    assert [r.estimator for r in threaded.records] == [r.estimator for r in sequential.records]
    assert np.array_equal(threaded.trace.u, sequential.trace.u)


def scripted_solves(monkeypatch, high_error=None, low_error=None):
    """First order-m and first companion solve raise the given errors, later ones run."""
    real = timeloop.newton_solve
    seen = {"high": 0, "low": 0}

    def solve(assembler, guess, settings=None, energy=None):
        kind = "low" if assembler.m == 0 else "high"
        seen[kind] += 1
        error = high_error if kind == "high" else low_error
        if error is not None and seen[kind] == 1:
            raise error
        return real(assembler, guess, settings, energy)

    monkeypatch.setattr(timeloop, "newton_solve", solve)
    return seen


def test_failed_companion_after_failed_step_is_discarded(drift_spec, interval_mesh, settings, monkeypatch):
    seen = scripted_solves(monkeypatch, high_error=NewtonFailure("forced failure"),
                           low_error=DivergedStateError("companion overflow"))
    config = adaptive_config(t_end=None, max_steps=1)
    result = timeloop.run(drift_spec, interval_mesh, config, settings, executor=CompanionExecutor())
    failed, ok = result.records[0], result.records[-1]
    assert not failed.accepted and math.isnan(failed.energy)
    assert ok.accepted and ok.dt <= 0.5 * config.dt_initial
    assert seen["high"] >= 2 and seen["low"] >= 2


def test_companion_solver_error_rejects_step(drift_spec, interval_mesh, settings, monkeypatch):
    scripted_solves(monkeypatch, low_error=SingularMatrixError(3, "numerically singular pivot"))
    config = adaptive_config(t_end=None, max_steps=1)
    result = timeloop.run(drift_spec, interval_mesh, config, settings)
    failed, ok = result.records[0], result.records[-1]
    assert not failed.accepted and math.isnan(failed.estimator)
    assert ok.accepted and ok.dt <= 0.5 * config.dt_initial


def test_dt_max_is_read_at_slab_start():
    config = RunConfig(dt_initial=1.0, t_end=None, dt_max_schedule=((1.0, 0.5), (math.inf, 4.0)))
    assert timeloop._next_dt(10.0, 0.9, config) == 0.5
    assert timeloop._next_dt(10.0, 1.0, config) == 4.0
    clipped = replace(config, t_end=3.0)
    assert timeloop._next_dt(2.0, 2.5, clipped) == 0.5
    assert timeloop._next_dt(0.5 - 1e-12, 2.5, clipped) == 0.5
