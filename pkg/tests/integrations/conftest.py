"""
Integration test fixtures.

Responsibilities:
    - Reuse the global `app` fixture from tests/conftest.py.
    - Run the example2 channel problem once per session and share the result.
    - Record the depletion of the second species inside the channel while it runs.

Notes:
    - These runs take minutes; deselect with `-m "not integration"`.
"""

from dataclasses import dataclass, field

import numpy as np
import pytest

from app.services.fespace import build_space
from app.services.presets import get_preset
from app.services.reporting import sample_fields
from app.services.timeloop import RunResult, run

CHANNEL = (-5.0, 10.0)
DEPLETION_WINDOW = (50.0, 150.0)


@dataclass
class DepletionMonitor:
    """Observer tracking min u_2 over the channel during a time window."""

    space: object
    min_u2: float = np.inf
    all_finite: bool = True
    hits: list = field(default_factory=list)

    def __call__(self, record, trace):
        frame = sample_fields(self.space, trace, per_element=2)
        self.all_finite = self.all_finite and bool(np.isfinite(frame.to_numpy()).all())
        if not DEPLETION_WINDOW[0] < trace.t < DEPLETION_WINDOW[1]:
            return
        inside = frame[(frame["x"] > CHANNEL[0]) & (frame["x"] < CHANNEL[1])]
        self.min_u2 = min(self.min_u2, float(inside["u_2"].min()))
        self.hits.append(trace.t)


@dataclass
class ChannelRun:
    case: object
    result: RunResult
    monitor: DepletionMonitor


def run_channel(settings, h):
    case = get_preset("example2", h=h)
    monitor = DepletionMonitor(build_space(case.mesh, case.run.k))
    result = run(case.spec, case.mesh, case.run, settings, observers=(monitor,))
    return ChannelRun(case, result, monitor)


# ----------------------------------------------------------------------
# Example 2 at h = 1/16 (session-scoped)
# ----------------------------------------------------------------------
@pytest.fixture(scope="session")
def channel_run(settings):
    """Adaptive example2 run to steady state on h = 1/16."""
    return run_channel(settings, 1.0 / 16.0)


@pytest.fixture
def channel_runner(settings):
    """Callable running example2 on a given mesh size."""
    return lambda h: run_channel(settings, h)
