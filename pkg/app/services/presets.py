"""
Problem presets for the Entropic-PNP solver.

Responsibilities:
    - example1: two-species manufactured solution on the unit square
      (fixed dt = 2h to t = 1, exact fields for L² errors).
    - example2: two-species channel problem on [-28, 25] with a variable
      cross-section and piecewise permittivity / fixed charge, run adaptively
      to steady state.
    - Registry lookup by name (`get_preset`), raising UnknownPresetError.

Usage:
    case = get_preset("example2", h=1/32)
    result = run(case.spec, case.mesh, case.run, settings)

Design:
    - Piecewise coefficients are resolved per element region; example2's
      intervals are mapped onto regions through region midpoints so the
      permittivity and charge intervals can be overridden from config files.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from app.errors import ConfigError, UnknownPresetError
from app.models import BoundaryCondition, CoefficientField, Mesh, ProblemSpec, RunConfig
from app.services.mesh import (
    LEFT_MARKER,
    RIGHT_MARKER,
    build_interval_mesh,
    build_unit_square_mesh,
    unit_square_subdivisions,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PresetCase:
    """A ready-to-run problem.

    Attributes:
        spec (ProblemSpec): Problem definition.
        mesh (Mesh): Mesh at the requested resolution.
        run (RunConfig): Default run options of the preset.
        h (float): Mesh size.
    """
    spec: ProblemSpec
    mesh: Mesh
    run: RunConfig
    h: float

    def with_mesh(self, mesh: Mesh) -> "PresetCase":
        return replace(self, mesh=mesh)


# ----------------------------------------------------------------------
# Example 1: manufactured solution on the unit square
# ----------------------------------------------------------------------
def _bump(points: np.ndarray) -> tuple:
    """S = sin(πx) sin(πy) and |∇S|² at (n, 2) points."""
    x, y = points[:, 0], points[:, 1]
    sx, sy = np.sin(np.pi * x), np.sin(np.pi * y)
    cx, cy = np.cos(np.pi * x), np.cos(np.pi * y)
    grad_sq = np.pi ** 2 * ((cx * sy) ** 2 + (sx * cy) ** 2)
    return sx * sy, grad_sq


def example1_density(species: int) -> Callable[[float, np.ndarray], np.ndarray]:
    sign = 1.0 if species == 0 else -1.0

    def density(t: float, points: np.ndarray) -> np.ndarray:
        S, _ = _bump(points)
        return 1.0 + sign * 0.5 * math.sin(t) * S
    return density


def example1_potential(t: float, points: np.ndarray) -> np.ndarray:
    S, _ = _bump(points)
    return math.sin(t) * S


def example1_species_forcing(species: int) -> Callable[[float, np.ndarray], np.ndarray]:
    """
    f_i = ∂t c_i - ∇·(∇c_i + z_i c_i ∇φ) for the manufactured fields
    (e = k_B = T = D_i = ε = 1, z = (1, -1)).
    """
    sign = 1.0 if species == 0 else -1.0

    def forcing(t: float, points: np.ndarray) -> np.ndarray:
        S, grad_sq = _bump(points)
        s = math.sin(t)
        c = 1.0 + sign * 0.5 * s * S
        return sign * (
            0.5 * math.cos(t) * S + np.pi ** 2 * s * S + 2.0 * np.pi ** 2 * s * S * c
        ) - 0.5 * s ** 2 * grad_sq
    return forcing


def example1_poisson_forcing(t: float, points: np.ndarray) -> np.ndarray:
    """g = -Δφ - (c_1 - c_2)."""
    S, _ = _bump(points)
    s = math.sin(t)
    return 2.0 * np.pi ** 2 * s * S - s * S


def example1_exact() -> Dict[str, Callable]:
    c1, c2 = example1_density(0), example1_density(1)
    return {
        "u1": lambda t, pts: np.log(c1(t, pts)),
        "u2": lambda t, pts: np.log(c2(t, pts)),
        "phi": example1_potential,
    }


def example1(n: int = 8, k: int = 1, m: int = 1, dt: Optional[float] = None) -> PresetCase:
    """Manufactured-solution accuracy test on an n×n unit-square mesh (dt defaults to 2/n)."""
    if n < 1:
        raise ConfigError(f"example1 needs n >= 1, got {n}")
    h = 1.0 / n
    spec = ProblemSpec(
        n_species=2,
        valences=(1.0, -1.0),
        diffusivities=(1.0, 1.0),
        boundary_conditions=(
            BoundaryCondition("u", 1, value=0.0),
            BoundaryCondition("phi", 1, value=0.0),
        ),
        gauge="dirichlet",
        initial_densities=(1.0, 1.0),
        species_forcing=(example1_species_forcing(0), example1_species_forcing(1)),
        poisson_forcing=example1_poisson_forcing,
        exact_solution=example1_exact(),
        name="example1",
    ).validate()
    run = RunConfig(k=k, m=m, dt_initial=2.0 * h if dt is None else dt, t_end=1.0, adaptive=False)
    return PresetCase(spec, build_unit_square_mesh(n), run, h)


# ----------------------------------------------------------------------
# Example 2: channel with discontinuous coefficients
# ----------------------------------------------------------------------
DOMAIN = (-28.0, 25.0)
RADIUS_BREAKS = (-18.0, -5.0, 10.0)
EPS_LOW, EPS_HIGH = 4.7448, 189.79
EPS_LOW_REGION = (-5.0, 10.0)
RHO0_VALUE = -300.0
RHO0_INTERVALS = ((-2.0, -1.0), (0.0, 1.0), (2.0, 3.0), (4.0, 5.0), (6.0, 7.0))


def channel_radius(x: np.ndarray) -> np.ndarray:
    """r(x) of the channel; the left branch owns x = -18, then half-open to the right."""
    x = np.asarray(x, dtype=float)
    return np.select(
        [x <= -18.0, x <= -5.0, x <= 10.0],
        [-0.5 * x - 7.0, np.full_like(x, 2.0), np.full_like(x, 0.5)],
        0.9 * x - 8.5,
    )


def _inside(mid: float, intervals: Sequence[Tuple[float, float]]) -> bool:
    return any(a < mid < b for a, b in intervals)


def example2_fields(mesh: Mesh, breakpoints: Sequence[float],
                    eps_low_region: Tuple[float, float] = EPS_LOW_REGION,
                    rho0_intervals: Sequence[Tuple[float, float]] = RHO0_INTERVALS) -> tuple:
    """(permittivity, fixed_charge, cross_section) resolved on the mesh's regions."""
    edges = [DOMAIN[0], *breakpoints, DOMAIN[1]]
    eps, rho0, area = {}, {}, {}
    for region in range(len(edges) - 1):
        lo, hi = edges[region], edges[region + 1]
        mid = 0.5 * (lo + hi)
        eps[region] = EPS_LOW if _inside(mid, [eps_low_region]) else EPS_HIGH
        if _inside(mid, rho0_intervals):
            rho0[region] = RHO0_VALUE
        r_mid = float(channel_radius(np.array([mid]))[0])
        if lo < -18.0 or hi > 10.0:
            area[region] = lambda pts: np.pi * channel_radius(pts[:, 0]) ** 2
        else:
            area[region] = np.pi * r_mid ** 2
    return (
        CoefficientField.piecewise("eps", eps, default=EPS_HIGH),
        CoefficientField.piecewise("rho0", rho0, default=0.0),
        CoefficientField.piecewise("A", area, default=1.0),
    )


def example2(h: float = 1.0 / 16.0, k: int = 1, m: int = 1,
             eps_low_region: Tuple[float, float] = EPS_LOW_REGION,
             rho0_intervals: Sequence[Tuple[float, float]] = RHO0_INTERVALS) -> PresetCase:
    """
    One-dimensional channel problem run adaptively to steady state.

    Args:
        h: Mesh size; the mesh has round(53/h) elements on [-28, 25].
        k, m: Spatial and temporal degrees.
        eps_low_region: Interval carrying the low permittivity.
        rho0_intervals: Intervals carrying the fixed charge -300.
    """
    if not h > 0:
        raise ConfigError(f"example2 needs h > 0, got {h}")
    a, b = DOMAIN
    breaks = set(RADIUS_BREAKS) | set(eps_low_region)
    for lo, hi in rho0_intervals:
        breaks |= {lo, hi}
    breaks = sorted(x for x in breaks if a < x < b)
    mesh = build_interval_mesh(a, b, int(round((b - a) / h)), breaks)
    eps, rho0, area = example2_fields(mesh, breaks, tuple(eps_low_region), tuple(map(tuple, rho0_intervals)))
    spec = ProblemSpec(
        n_species=2,
        valences=(1.0, -1.0),
        diffusivities=(1.0, 1.0383),
        permittivity=eps,
        fixed_charge=rho0,
        cross_section=area,
        boundary_conditions=tuple(
            BoundaryCondition(fld, marker, value=0.0)
            for fld in ("u", "phi") for marker in (LEFT_MARKER, RIGHT_MARKER)
        ),
        gauge="dirichlet",
        initial_densities=(1.0, 1.0),
        name="example2",
    ).validate()
    run = RunConfig(
        k=k, m=m, dt_initial=1e-4, t_end=None, adaptive=True, tol=1e-3,
        dt_max_schedule=((250.0, 2.0), (math.inf, 200.0)), steady_threshold=1e-13,
    )
    return PresetCase(spec, mesh, run, h)


# ----------------------------------------------------------------------
# Registry
# ----------------------------------------------------------------------
PRESETS: Dict[str, Callable[..., PresetCase]] = {
    "example1": example1,
    "example2": example2,
}


def get_preset(name: str, *, h: Optional[float] = None, n: Optional[int] = None,
               k: int = 1, m: int = 1, **options) -> PresetCase:
    """
    Build a preset by name.

    Args:
        name: "example1" or "example2".
        h: Mesh size. example1 reads it as the largest element diameter:
           n = unit_square_subdivisions(h) and dt = 2h.
        n: Subdivisions per side (example1) or element count (example2).
        k, m: Degrees.
        **options: Preset-specific options (example2: eps_low_region, rho0_intervals).

    Raises:
        UnknownPresetError: name not registered.
        ConfigError: option not understood by the preset.
    """
    if name not in PRESETS:
        raise UnknownPresetError(name)
    if name == "example1":
        if options:
            raise ConfigError(f"example1 takes no options, got {sorted(options)}")
        if n is None:
            n = 8 if h is None else unit_square_subdivisions(h)
            case = example1(n=n, k=k, m=m, dt=None if h is None else 2.0 * h)
        else:
            case = example1(n=n, k=k, m=m)
    else:
        unknown = set(options) - {"eps_low_region", "rho0_intervals"}
        if unknown:
            raise ConfigError(f"unknown example2 options: {sorted(unknown)}")
        if h is None:
            h = (DOMAIN[1] - DOMAIN[0]) / n if n else 1.0 / 16.0
        case = example2(h=h, k=k, m=m, **options)
    logger.info("preset %s: %d elements, h=%.6g", name, case.mesh.n_elements, case.h)
    return case
