"""
Factory Boy fixtures for Entropic-PNP tests.

Responsibilities:
    - Provide factories for CoefficientField, ProblemSpec, RunConfig and
      DiagnosticsRecord with small, valid defaults.
    - Keep tests focused on the field under test (override one attribute,
      inherit the rest).
"""

import math

import factory

from app.models import BoundaryCondition, CoefficientField, DiagnosticsRecord, ProblemSpec, RunConfig


# -----------------------------------------------------------------------
# Coefficient Field Factory
# -----------------------------------------------------------------------
class CoefficientFieldFactory(factory.Factory):
    """Constant coefficient fields."""
    class Meta:
        model = CoefficientField

    name = "eps"
    kind = "constant"
    value = 1.0


# -----------------------------------------------------------------------
# Problem Spec Factory
# -----------------------------------------------------------------------
class ProblemSpecFactory(factory.Factory):
    """Two species with unit constants, φ pinned to 0 on marker 1."""
    class Meta:
        model = ProblemSpec

    n_species = 2
    valences = (1.0, -1.0)
    diffusivities = (1.0, 1.0)
    boundary_conditions = factory.LazyFunction(lambda: (BoundaryCondition("phi", 1, value=0.0),))
    gauge = "dirichlet"
    initial_densities = (1.0, 1.0)
    name = factory.Sequence(lambda n: f"case-{n}")


# -----------------------------------------------------------------------
# Run Config Factory
# -----------------------------------------------------------------------
class RunConfigFactory(factory.Factory):
    """Short fixed-step runs."""
    class Meta:
        model = RunConfig

    k = 1
    m = 1
    dt_initial = 0.05
    t_end = 0.1
    adaptive = False


# -----------------------------------------------------------------------
# Diagnostics Record Factory
# -----------------------------------------------------------------------
class DiagnosticsRecordFactory(factory.Factory):
    """Accepted record of a dissipative step."""
    class Meta:
        model = DiagnosticsRecord

    step = factory.Sequence(lambda n: n + 1)
    t = factory.LazyAttribute(lambda o: 0.1 * o.step)
    dt = 0.1
    energy = factory.LazyAttribute(lambda o: -1.0 - 0.01 * o.step)
    dissipation_rate = 0.09
    energy_drop_rate = 0.1
    numerical_dissipation = 0.001
    masses = (1.0, 1.0)
    boundary_reaction = (0.0, 0.0)
    mass_defect = 0.0
    min_density = 0.5
    newton_iterations = 3
    estimator = 1e-4
    accepted = True
    attempts = 1


def nan_record(**overrides) -> DiagnosticsRecord:
    """Record of a failed attempt (no state available)."""
    nan = math.nan
    fields = dict(
        energy=nan, dissipation_rate=nan, energy_drop_rate=nan, numerical_dissipation=nan,
        masses=(nan, nan), boundary_reaction=(nan, nan), mass_defect=nan, min_density=nan,
        estimator=nan, accepted=False, attempts=2,
    )
    fields.update(overrides)
    return DiagnosticsRecordFactory(**fields)
