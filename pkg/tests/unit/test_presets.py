"""
Unit tests for app.services.presets.

Covers:
    - Manufactured forcing of example1 against finite differences of the PDE operator.
    - Preset lookup, mesh sizes, option validation.
    - Channel geometry and coefficients of example2, initial energy at h = 1/16.
"""

import math

import numpy as np
import pytest

from app.errors import ConfigError, UnknownPresetError
from app.services import presets
from app.services.assembly import SpatialTables, initial_state
from app.services.diagnostics import energy
from app.services.fespace import build_space

FD_STEP = 1e-4


def _fd_gradient(func, t, pts):
    e = np.eye(2) * FD_STEP
    return np.stack([(func(t, pts + e[d]) - func(t, pts - e[d])) / (2 * FD_STEP) for d in range(2)], axis=1)


def _fd_laplacian(func, t, pts):
    e = np.eye(2) * FD_STEP
    center = func(t, pts)
    return sum((func(t, pts + e[d]) - 2.0 * center + func(t, pts - e[d])) / FD_STEP ** 2 for d in range(2))


@pytest.fixture
def sample_points():
    rng = np.random.default_rng(2024)
    return 0.05 + 0.9 * rng.random((25, 2))


# ----------------------------------------------------------------------
# Example 1
# ----------------------------------------------------------------------
@pytest.mark.parametrize("t", [0.3, 0.8])
@pytest.mark.parametrize("species, valence", [(0, 1.0), (1, -1.0)])
def test_species_forcing_matches_operator(sample_points, t, species, valence):
    c = presets.example1_density(species)
    phi = presets.example1_potential
    dc_dt = (c(t + FD_STEP, sample_points) - c(t - FD_STEP, sample_points)) / (2 * FD_STEP)
    grad_c = _fd_gradient(c, t, sample_points)
    grad_phi = _fd_gradient(phi, t, sample_points)
    operator = dc_dt - (
        _fd_laplacian(c, t, sample_points)
        + valence * (np.sum(grad_c * grad_phi, axis=1) + c(t, sample_points) * _fd_laplacian(phi, t, sample_points))
    )
    forcing = presets.example1_species_forcing(species)(t, sample_points)
    assert np.abs(forcing - operator).max() < 1e-6


@pytest.mark.parametrize("t", [0.3, 0.8])
def test_poisson_forcing_matches_operator(sample_points, t):
    c1, c2 = presets.example1_density(0), presets.example1_density(1)
    operator = -_fd_laplacian(presets.example1_potential, t, sample_points) - (
        c1(t, sample_points) - c2(t, sample_points)
    )
    assert np.abs(presets.example1_poisson_forcing(t, sample_points) - operator).max() < 1e-6


def test_example1_exact_fields_start_at_zero(sample_points):
    exact = presets.example1_exact()
    for name in ("u1", "u2", "phi"):
        assert np.allclose(exact[name](0.0, sample_points), 0.0)
    assert np.allclose(np.exp(exact["u1"](1.0, sample_points)) + np.exp(exact["u2"](1.0, sample_points)), 2.0)


def test_example1_case():
    case = presets.get_preset("example1", h=0.25, k=2, m=2)
    assert case.mesh.n_elements == 2 * 6 ** 2
    assert case.run.dt_initial == pytest.approx(0.5)
    assert case.run.t_end == 1.0 and not case.run.adaptive
    assert (case.run.k, case.run.m) == (2, 2)
    assert case.spec.exact_solution is not None
    assert presets.get_preset("example1").mesh.n_elements == 128
    by_count = presets.get_preset("example1", n=4)
    assert by_count.mesh.n_elements == 32
    assert by_count.run.dt_initial == pytest.approx(0.5)


# ----------------------------------------------------------------------
# Example 2
# ----------------------------------------------------------------------
def test_channel_radius():
    x = np.array([-28.0, -18.0, -10.0, 0.0, 10.0, 25.0])
    assert np.allclose(presets.channel_radius(x), [7.0, 2.0, 2.0, 0.5, 0.5, 14.0])


def test_example2_mesh_size():
    case = presets.get_preset("example2", h=1.0 / 16.0)
    assert case.mesh.n_elements == 848
    assert presets.get_preset("example2", n=848).h == pytest.approx(1.0 / 16.0)
    # radius, permittivity and charge breakpoints split the domain into 14 regions
    assert np.unique(case.mesh.element_region).size == 14


def test_example2_defaults():
    case = presets.example2(h=0.5)
    run = case.run
    assert run.adaptive and run.t_end is None
    assert run.dt_initial == 1e-4 and run.tol == 1e-3
    assert run.dt_max_at(100.0) == 2.0 and run.dt_max_at(300.0) == 200.0
    assert case.spec.diffusivities == (1.0, 1.0383)
    assert {bc.marker for bc in case.spec.boundary_conditions} == {1, 2}


def test_example2_interval_overrides():
    case = presets.example2(h=0.5, eps_low_region=(-2.0, 3.0), rho0_intervals=((0.0, 1.0),))
    eps = case.spec.permittivity.regions
    rho0 = case.spec.fixed_charge.regions
    low = [tag for tag, value in eps.items() if value == presets.EPS_LOW]
    assert len(rho0) == 1 and list(rho0.values()) == [presets.RHO0_VALUE]
    coords = case.mesh.vertices[:, 0]
    for x in (-2.0, 3.0, 0.0, 1.0):
        assert np.any(np.isclose(coords, x))
    mids = [0.5 * (a + b) for a, b in zip(*_region_bounds(case.mesh))]
    assert all(-2.0 < mids[tag] < 3.0 for tag in low)


def _region_bounds(mesh):
    x = mesh.vertices[mesh.elements][:, :, 0]
    tags = np.unique(mesh.element_region)
    lo = [x[mesh.element_region == tag].min() for tag in tags]
    hi = [x[mesh.element_region == tag].max() for tag in tags]
    return lo, hi


def test_example2_initial_energy():
    case = presets.get_preset("example2", h=1.0 / 16.0)
    space = build_space(case.mesh, 1)
    trace = initial_state(case.spec, space)
    tables = SpatialTables.build(case.spec, space, 4)
    assert energy(case.spec, tables, trace) == pytest.approx(387788.75, rel=1e-3)


# ----------------------------------------------------------------------
# Registry
# ----------------------------------------------------------------------
def test_unknown_preset():
    with pytest.raises(UnknownPresetError) as exc:
        presets.get_preset("example3")
    assert exc.value.name == "example3"


@pytest.mark.parametrize("name, options", [
    ("example1", {"eps_low_region": (0.0, 1.0)}),
    ("example2", {"radius": 3.0}),
])
def test_unknown_options(name, options):
    with pytest.raises(ConfigError):
        presets.get_preset(name, h=0.5, **options)


def test_invalid_sizes():
    with pytest.raises(ConfigError):
        presets.example1(n=0)
    with pytest.raises(ConfigError):
        presets.example2(h=-1.0)
    assert math.isclose(presets.get_preset("example2").h, 1.0 / 16.0)
