"""Domain models for meshes, problems, slab states and run diagnostics.

Defines the immutable data carried between the service modules: the mesh,
coefficient fields, the PNP problem definition, space-time slab states,
Newton reports, per-step diagnostics records and run/solver settings.
Numerical work lives in app.services; these classes only hold data and
do cheap consistency checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from app.errors import ConfigError, InvalidInputError

# Region values and closed-form fields take points of shape (n, dim).
PointFunction = Callable[[np.ndarray], np.ndarray]
# Forcing and boundary data take (t, points).
SpaceTimeFunction = Callable[[float, np.ndarray], np.ndarray]


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ----------------------------------------------------------------------
# Mesh model
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh of an interval (dim=1) or a planar domain (dim=2).

    Attributes:
        dim (int): Spatial dimension, 1 or 2.
        vertices (np.ndarray): (nv, dim) vertex coordinates.
        elements (np.ndarray): (ne, dim+1) vertex indices per simplex.
        boundary_facets (np.ndarray): (nb, dim) vertex indices per boundary facet.
        boundary_markers (np.ndarray): (nb,) integer marker per boundary facet.
        element_region (np.ndarray): (ne,) region tag per element.
    """
    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray
    boundary_markers: np.ndarray
    element_region: np.ndarray

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise InvalidInputError(f"Unsupported mesh dimension: {self.dim}")
        object.__setattr__(
            self, "vertices",
            _frozen_array(np.reshape(self.vertices, (-1, self.dim)), float),
        )
        object.__setattr__(
            self, "elements",
            _frozen_array(np.reshape(self.elements, (-1, self.dim + 1)), np.int64),
        )
        object.__setattr__(
            self, "boundary_facets",
            _frozen_array(np.reshape(self.boundary_facets, (-1, self.dim)), np.int64),
        )
        object.__setattr__(self, "boundary_markers", _frozen_array(self.boundary_markers, np.int64))
        object.__setattr__(self, "element_region", _frozen_array(self.element_region, np.int64))

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_elements(self) -> int:
        return int(self.elements.shape[0])

    @property
    def markers(self) -> tuple:
        """Sorted distinct boundary markers."""
        return tuple(int(m) for m in np.unique(self.boundary_markers))


# ----------------------------------------------------------------------
# Coefficient field model
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class CoefficientField:
    """Spatially varying coefficient (ε, ρ0, A or an extension).

    Attributes:
        name (str): Label used in logs and error messages.
        kind (str): "constant", "piecewise" or "closed_form".
        value (float): Value of a constant field; fallback for unlisted regions.
        regions (Mapping[int, float | callable]): Per-region value or x-callable.
        func (callable): Closed-form callable of points (n, dim) -> (n,).
    """
    name: str
    kind: str = "constant"
    value: float = 0.0
    regions: Mapping[int, Union[float, PointFunction]] = field(default_factory=dict)
    func: Optional[PointFunction] = None

    KINDS = ("constant", "piecewise", "closed_form")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidInputError(f"Unknown coefficient kind: {self.kind}")
        if self.kind == "closed_form" and self.func is None:
            raise InvalidInputError(f"Closed-form field {self.name!r} needs a callable")

    @classmethod
    def constant(cls, name: str, value: float) -> "CoefficientField":
        return cls(name=name, kind="constant", value=float(value))

    @classmethod
    def piecewise(cls, name: str, regions: Mapping[int, Union[float, PointFunction]],
                  default: float = 0.0) -> "CoefficientField":
        """Build a field resolved by element region tag.

        Regions not listed take `default`.
        """
        return cls(name=name, kind="piecewise", value=float(default), regions=dict(regions))

    @classmethod
    def closed_form(cls, name: str, func: PointFunction) -> "CoefficientField":
        return cls(name=name, kind="closed_form", func=func)


# ----------------------------------------------------------------------
# Problem definition
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet condition on one field over one boundary marker.

    Markers without a condition carry natural (homogeneous Neumann) data.

    Attributes:
        field (str): "u" (a species) or "phi".
        marker (int): Boundary marker the condition applies to.
        species (int | None): Species index for field "u"; None means all species.
        value (float | callable): Prescribed value, or callable (t, points) -> values.
        on_density (bool): If True, `value` is a density c and u = log(c) is imposed.
    """
    field: str
    marker: int
    species: Optional[int] = None
    value: Union[float, SpaceTimeFunction] = 0.0
    on_density: bool = False

    def __post_init__(self):
        if self.field not in ("u", "phi"):
            raise InvalidInputError(f"Boundary condition field must be 'u' or 'phi', got {self.field!r}")


@dataclass(frozen=True)
class ProblemSpec:
    """Poisson–Nernst–Planck problem in entropy variables u_i = log c_i.

    Attributes:
        n_species (int): Number of species N.
        valences (tuple[float]): z_i per species.
        diffusivities (tuple[float]): D_i per species.
        unit_charge, boltzmann, temperature (float): e, k_B, T.
        permittivity, fixed_charge, cross_section (CoefficientField): ε, ρ0, A.
        boundary_conditions (tuple[BoundaryCondition]): Dirichlet data.
        gauge (str): "dirichlet" (φ pinned by boundary data) or "zero_mean".
        initial_densities (tuple): c_i^0 as floats or callables of points.
        species_forcing (tuple | None): f_i(t, points) sources of the species equations.
        poisson_forcing (callable | None): g(t, points) source of the Poisson equation.
        exact_solution (Mapping | None): "u1".."uN", "phi" -> callable(t, points).
        name (str): Label for logs and output.
    """
    n_species: int
    valences: Sequence[float]
    diffusivities: Sequence[float]
    unit_charge: float = 1.0
    boltzmann: float = 1.0
    temperature: float = 1.0
    permittivity: CoefficientField = field(default_factory=lambda: CoefficientField.constant("eps", 1.0))
    fixed_charge: CoefficientField = field(default_factory=lambda: CoefficientField.constant("rho0", 0.0))
    cross_section: CoefficientField = field(default_factory=lambda: CoefficientField.constant("A", 1.0))
    boundary_conditions: Sequence[BoundaryCondition] = ()
    gauge: str = "dirichlet"
    initial_densities: Sequence[Union[float, PointFunction]] = ()
    species_forcing: Optional[Sequence[Optional[SpaceTimeFunction]]] = None
    poisson_forcing: Optional[SpaceTimeFunction] = None
    exact_solution: Optional[Mapping[str, SpaceTimeFunction]] = None
    name: str = "custom"

    # ------------------------------------------------------------------
    # Derived scalings
    # ------------------------------------------------------------------
    @property
    def thermal(self) -> float:
        """k_B T."""
        return self.boltzmann * self.temperature

    @property
    def drift(self) -> np.ndarray:
        """z_i e / (k_B T) per species."""
        return np.asarray(self.valences, float) * self.unit_charge / self.thermal

    @property
    def charges(self) -> np.ndarray:
        """z_i e per species."""
        return np.asarray(self.valences, float) * self.unit_charge

    @property
    def field_names(self) -> tuple:
        return tuple(f"u{i + 1}" for i in range(self.n_species)) + ("phi",)

    def phi_conditions(self) -> list:
        return [bc for bc in self.boundary_conditions if bc.field == "phi"]

    def species_conditions(self, i: int) -> list:
        return [
            bc for bc in self.boundary_conditions
            if bc.field == "u" and (bc.species is None or bc.species == i)
        ]

    def validate(self) -> "ProblemSpec":
        """Check structural consistency; return self for chaining.

        Raises:
            InvalidInputError: on mismatched per-species data or an invalid gauge.
        """
        n = self.n_species
        if n < 1:
            raise InvalidInputError("n_species must be >= 1")
        for label, seq in (("valences", self.valences), ("diffusivities", self.diffusivities),
                           ("initial_densities", self.initial_densities)):
            if len(seq) != n:
                raise InvalidInputError(f"{label} has {len(seq)} entries, expected {n}")
        if self.species_forcing is not None and len(self.species_forcing) != n:
            raise InvalidInputError("species_forcing must have one entry per species")
        if any(d <= 0 for d in self.diffusivities):
            raise InvalidInputError("diffusivities must be positive")
        if self.thermal <= 0:
            raise InvalidInputError("k_B T must be positive")
        if self.gauge not in ("dirichlet", "zero_mean"):
            raise InvalidInputError(f"Unknown gauge: {self.gauge!r}")
        has_phi_bc = bool(self.phi_conditions())
        if self.gauge == "zero_mean" and has_phi_bc:
            raise InvalidInputError("zero-mean gauge cannot be combined with Dirichlet data on phi")
        if self.gauge == "dirichlet" and not has_phi_bc:
            raise InvalidInputError("dirichlet gauge needs at least one Dirichlet condition on phi")
        for bc in self.boundary_conditions:
            if bc.species is not None and not 0 <= bc.species < n:
                raise InvalidInputError(f"boundary condition references species {bc.species}")
        return self


# ----------------------------------------------------------------------
# Slab / trace states
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class TraceState:
    """Right trace of a slab (or the initial state) at time t.

    Attributes:
        t (float): Time of the trace.
        u (np.ndarray): (N, ndof) entropy-variable coefficients.
        phi (np.ndarray): (ndof,) potential coefficients.
    """
    t: float
    u: np.ndarray
    phi: np.ndarray


@dataclass(frozen=True)
class SlabState:
    """Unknowns of one space-time slab [t0, t0 + dt].

    Temporal modes are Lagrange coefficients at the slab's right Radau nodes,
    the last one being the right endpoint.

    Attributes:
        t0 (float): Slab start time.
        dt (float): Slab length.
        u (np.ndarray): (N, m+1, ndof) species coefficients.
        phi (np.ndarray): (m+1, ndof) potential coefficients.
        u_prev (np.ndarray): (N, ndof) incoming trace of u.
        phi_prev (np.ndarray): (ndof,) incoming trace of φ.
        multipliers (np.ndarray): Gauge multipliers (m+1 entries, or empty).
    """
    t0: float
    dt: float
    u: np.ndarray
    phi: np.ndarray
    u_prev: np.ndarray
    phi_prev: np.ndarray
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_modes(self) -> int:
        return int(self.phi.shape[0])

    @property
    def t1(self) -> float:
        return self.t0 + self.dt

    @classmethod
    def extend(cls, trace: TraceState, dt: float, m: int, n_multipliers: int = 0) -> "SlabState":
        """Constant-in-time extension of an incoming trace (Newton initial guess)."""
        u_prev = np.asarray(trace.u, float)
        phi_prev = np.asarray(trace.phi, float)
        return cls(
            t0=float(trace.t),
            dt=float(dt),
            u=np.repeat(u_prev[:, None, :], m + 1, axis=1),
            phi=np.repeat(phi_prev[None, :], m + 1, axis=0),
            u_prev=u_prev,
            phi_prev=phi_prev,
            multipliers=np.zeros(n_multipliers),
        )

    def to_vector(self) -> np.ndarray:
        """Flatten unknowns: species-major, then mode, then dof; φ modes; multipliers."""
        return np.concatenate([self.u.ravel(), self.phi.ravel(), self.multipliers])

    def with_vector(self, x: np.ndarray) -> "SlabState":
        n_u = self.u.size
        n_phi = self.phi.size
        return replace(
            self,
            u=np.asarray(x[:n_u]).reshape(self.u.shape).copy(),
            phi=np.asarray(x[n_u:n_u + n_phi]).reshape(self.phi.shape).copy(),
            multipliers=np.asarray(x[n_u + n_phi:]).copy(),
        )

    def right_trace(self) -> TraceState:
        return TraceState(t=self.t1, u=self.u[:, -1, :].copy(), phi=self.phi[-1].copy())

    def incoming_trace(self) -> TraceState:
        return TraceState(t=self.t0, u=self.u_prev, phi=self.phi_prev)


# ----------------------------------------------------------------------
# Solver / run reports
# ----------------------------------------------------------------------
@dataclass
class NewtonReport:
    """Outcome of one slab Newton solve.

    Attributes:
        iterations (int): Newton updates applied.
        converged (bool): True when a stopping criterion was met.
        residual_norm (float): Final ‖F‖₂.
        residual_history (list[float]): ‖F‖₂ before each iteration and after the last.
        energy_history (list[float]): Right-trace energy after each iteration.
        reason (str): Which criterion stopped the loop ("residual", "energy", "step", ...).
    """
    iterations: int = 0
    converged: bool = False
    residual_norm: float = math.inf
    residual_history: list = field(default_factory=list)
    energy_history: list = field(default_factory=list)
    reason: str = ""


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One attempted time step.

    Attributes:
        step (int): Index of the accepted step this attempt belongs to (1-based).
        t (float): Slab end time t^{n+1}.
        dt (float): Slab length.
        energy (float): Discrete energy at the right trace.
        dissipation_rate (float): Physical dissipation over the slab divided by dt.
        energy_drop_rate (float): (E^{n-1} - E^n)/dt.
        numerical_dissipation (float): E^{n-1} - E^n - Diss^n.
        masses (tuple[float]): ∫A exp(u_i) at the right trace.
        boundary_reaction (tuple[float]): Net mass entering through Dirichlet boundaries.
        mass_defect (float): Relative mass-balance defect of the step.
        min_density (float): Min exp(u_i) over all space-time quadrature points.
        newton_iterations (int): Newton iterations of the order-m solve.
        estimator (float): e^n (0.0 in fixed-step mode).
        accepted (bool): Whether the attempt was accepted.
        attempts (int): Attempt counter within this step (1 on first try).
    """
    step: int
    t: float
    dt: float
    energy: float
    dissipation_rate: float
    energy_drop_rate: float
    numerical_dissipation: float
    masses: tuple
    boundary_reaction: tuple
    mass_defect: float
    min_density: float
    newton_iterations: int
    estimator: float
    accepted: bool
    attempts: int

    @property
    def dissipation(self) -> float:
        return self.dissipation_rate * self.dt

    @property
    def energy_drop(self) -> float:
        return self.energy_drop_rate * self.dt


# ----------------------------------------------------------------------
# Run / solver settings
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class RunConfig:
    """Discretization and time-loop options of one run.

    Attributes:
        k (int): Spatial degree (>= 1).
        m (int): Temporal degree (>= 0).
        dt_initial (float): First step size.
        t_end (float | None): End time; None runs to steady state.
        steady_threshold (float): Relative energy change ending a steady-state run.
        adaptive (bool): PI-controlled steps with the m=0 companion estimator.
        tol (float): Estimator tolerance of the controller.
        dt_max_schedule (tuple[tuple[float, float]]): (until_time, dt_max) pairs,
            the last until_time being inf.
        max_steps (int | None): Hard cap on accepted steps.
        min_steps (int): Accepted steps before steady state may end a run.
        spatial_quad_order (int | None): Overrides the 2k+2 default.
        temporal_quad_points (int | None): Overrides the m+3 default.
    """
    k: int = 1
    m: int = 1
    dt_initial: float = 0.1
    t_end: Optional[float] = 1.0
    steady_threshold: float = 1e-13
    adaptive: bool = False
    tol: float = 1e-3
    dt_max_schedule: tuple = ((math.inf, math.inf),)
    max_steps: Optional[int] = None
    min_steps: int = 2
    spatial_quad_order: Optional[int] = None
    temporal_quad_points: Optional[int] = None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.m < 0:
            raise ConfigError(f"m must be >= 0, got {self.m}")
        if not self.dt_initial > 0:
            raise ConfigError(f"initial dt must be positive, got {self.dt_initial}")
        if self.t_end is not None and not self.t_end > 0:
            raise ConfigError(f"t_end must be positive, got {self.t_end}")
        if self.adaptive and not self.tol > 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if not self.dt_max_schedule:
            raise ConfigError("dt_max schedule must not be empty")

    def dt_max_at(self, t: float) -> float:
        """Scheduled maximum step at time t (piecewise constant)."""
        for until, value in self.dt_max_schedule:
            if t < until:
                return float(value)
        return float(self.dt_max_schedule[-1][1])

    def with_overrides(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


@dataclass(frozen=True)
class SolverSettings:
    """Numerical knobs taken from the active config class."""
    newton_max_iter: int = 25
    newton_rtol: float = 1e-8
    newton_atol: float = 1e-12
    newton_stol: float = 1e-13
    newton_energy_rtol: float = 1e-8
    line_search_max_halvings: int = 8
    exp_guard: float = 700.0
    kp: float = 0.13
    ki: float = 1.0 / 15.0
    theta_max: float = 2.0
    rho: float = 1.2
    estimator_floor: float = 1e-14
    max_retries: int = 30
    dt_min: float = 1e-14
    spatial_quad_order: Optional[int] = None
    temporal_quad_points: Optional[int] = None
    energy_tolerance: float = 1e-8
    samples_per_element: int = 4
    parallel_companion: bool = False

    _KEYS = {
        "NEWTON_MAX_ITER": "newton_max_iter",
        "NEWTON_RTOL": "newton_rtol",
        "NEWTON_ATOL": "newton_atol",
        "NEWTON_STOL": "newton_stol",
        "NEWTON_ENERGY_RTOL": "newton_energy_rtol",
        "LINE_SEARCH_MAX_HALVINGS": "line_search_max_halvings",
        "EXP_GUARD": "exp_guard",
        "CONTROLLER_KP": "kp",
        "CONTROLLER_KI": "ki",
        "CONTROLLER_THETA_MAX": "theta_max",
        "CONTROLLER_RHO": "rho",
        "ESTIMATOR_FLOOR": "estimator_floor",
        "MAX_RETRIES": "max_retries",
        "DT_MIN": "dt_min",
        "SPATIAL_QUAD_ORDER": "spatial_quad_order",
        "TEMPORAL_QUAD_POINTS": "temporal_quad_points",
        "ENERGY_TOLERANCE": "energy_tolerance",
        "SAMPLES_PER_ELEMENT": "samples_per_element",
        "PARALLEL_COMPANION": "parallel_companion",
    }

    @classmethod
    def from_mapping(cls, config) -> "SolverSettings":
        """Build settings from a dict or a config object with upper-case attributes."""
        getter = config.get if isinstance(config, Mapping) else (lambda key, default=None: getattr(config, key, default))
        values = {}
        for key, attr in cls._KEYS.items():
            raw = getter(key, None)
            if raw is not None:
                values[attr] = raw
        return cls(**values)

    def quad_orders(self, run: RunConfig) -> tuple:
        """(spatial exactness order, temporal point count) for a run."""
        spatial = run.spatial_quad_order or self.spatial_quad_order or 2 * run.k + 2
        temporal = run.temporal_quad_points or self.temporal_quad_points or run.m + 3
        return int(spatial), int(temporal)
