"""Marshmallow schemas for run configuration and diagnostics rows.

These schemas define the structure and validation rules for YAML run files,
CLI overrides and the diagnostics CSV rows written by the reporting service.
"""

from marshmallow import (
    EXCLUDE,
    Schema,
    ValidationError,
    fields,
    post_dump,
    pre_load,
    post_load,
    validate,
    validates_schema,
)

from app.models import DiagnosticsRecord
from app.services.presets import PRESETS
from app.utils.helpers import format_schedule, parse_schedule


# ----------------------------------------------------------------------
# Custom fields
# ----------------------------------------------------------------------
class ScheduleField(fields.Field):
    """dt_max schedule: '2@250,200' <-> ((250.0, 2.0), (inf, 200.0))."""

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        return format_schedule(value)

    def _deserialize(self, value, attr, data, **kwargs):
        try:
            return parse_schedule(value)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"Invalid dt_max schedule: {exc}") from exc


class Interval(fields.List):
    """[a, b] with a < b."""

    def __init__(self, **kwargs):
        super().__init__(fields.Float(), validate=validate.Length(equal=2), **kwargs)

    def _deserialize(self, value, attr, data, **kwargs):
        out = super()._deserialize(value, attr, data, **kwargs)
        if not out[0] < out[1]:
            raise ValidationError(f"Interval bounds must increase: {out}")
        return tuple(out)


# ----------------------------------------------------------------------
# Example 2 options
# ----------------------------------------------------------------------
class Example2OptionsSchema(Schema):
    """Overrides of example2's coefficient intervals.

    Fields:
        eps_low_region ([a, b]): Interval with the low permittivity.
        rho0_intervals (list of [a, b]): Intervals carrying the fixed charge.
    """
    eps_low_region = Interval()
    rho0_intervals = fields.List(Interval())

    @post_load
    def to_options(self, data, **kwargs):
        if "rho0_intervals" in data:
            data["rho0_intervals"] = tuple(data["rho0_intervals"])
        return data


# ----------------------------------------------------------------------
# Run Config Schema
# ----------------------------------------------------------------------
class RunFileSchema(Schema):
    """Schema for YAML run files and merged CLI overrides.

    Fields:
        preset (str): Registered preset name (required).
        k, m (int): Spatial / temporal degree.
        h (float) | n (int): Mesh size or subdivision count (mutually exclusive).
        dt (float): Initial (adaptive) or fixed step size.
        tol (float): Controller tolerance.
        dt_max (str): Schedule string, e.g. '2@250,200'.
        adaptive (bool): PI-controlled steps.
        t_end (float | None): End time; null runs to steady state.
        steady_threshold (float): Relative energy change ending a steady run.
        spatial_quad_order, temporal_quad_points (int): Quadrature overrides.
        max_steps (int): Cap on accepted steps.
        mesh (str): Path to a mesh file replacing the preset mesh.
        example2 (dict): Example2OptionsSchema.
    """

    class Meta:
        unknown = EXCLUDE

    preset = fields.Str(required=True, validate=validate.OneOf(sorted(PRESETS)))
    k = fields.Int(validate=validate.Range(min=1))
    m = fields.Int(validate=validate.Range(min=0))
    h = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    n = fields.Int(validate=validate.Range(min=1))
    dt = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    tol = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    dt_max = ScheduleField()
    adaptive = fields.Bool()
    t_end = fields.Float(allow_none=True, validate=validate.Range(min=0, min_inclusive=False))
    steady_threshold = fields.Float(validate=validate.Range(min=0, min_inclusive=False))
    spatial_quad_order = fields.Int(allow_none=True, validate=validate.Range(min=0))
    temporal_quad_points = fields.Int(allow_none=True, validate=validate.Range(min=1))
    max_steps = fields.Int(allow_none=True, validate=validate.Range(min=1))
    mesh = fields.Str(allow_none=True)
    example2 = fields.Nested(Example2OptionsSchema)

    @pre_load
    def drop_unset(self, data, **kwargs):
        """CLI options left at None do not override file values."""
        return {key: value for key, value in data.items() if value is not None or key == "t_end"}

    @validates_schema
    def check_consistency(self, data, **kwargs):
        if "h" in data and "n" in data:
            raise ValidationError("Give either h or n, not both", field_name="n")
        if data.get("example2") and data.get("preset") != "example2":
            raise ValidationError("example2 options need preset example2", field_name="example2")


def merge_run_options(file_data: dict, overrides: dict) -> dict:
    """Layer CLI overrides on top of run-file values and validate the result.

    An override of h drops a file value of n and vice versa.
    """
    data = dict(file_data or {})
    extra = {key: value for key, value in overrides.items() if value is not None}
    if "h" in extra:
        data.pop("n", None)
    if "n" in extra:
        data.pop("h", None)
    data.update(extra)
    return RunFileSchema().load(data)


# ----------------------------------------------------------------------
# Diagnostics Record Schema
# ----------------------------------------------------------------------
class DiagnosticsRecordSchema(Schema):
    """Schema for one diagnostics CSV row.

    Per-species tuples are flattened into mass_1..mass_N and reaction_1..reaction_N
    columns on dump and folded back on load.
    """

    class Meta:
        ordered = True

    step = fields.Int(required=True)
    t = fields.Float(required=True, allow_nan=True)
    dt = fields.Float(required=True, allow_nan=True)
    energy = fields.Float(required=True, allow_nan=True)
    dissipation_rate = fields.Float(required=True, allow_nan=True)
    energy_drop_rate = fields.Float(required=True, allow_nan=True)
    numerical_dissipation = fields.Float(required=True, allow_nan=True)
    masses = fields.List(fields.Float(allow_nan=True), required=True)
    boundary_reaction = fields.List(fields.Float(allow_nan=True), required=True)
    mass_defect = fields.Float(required=True, allow_nan=True)
    min_density = fields.Float(required=True, allow_nan=True)
    newton_iterations = fields.Int(required=True)
    estimator = fields.Float(required=True, allow_nan=True)
    accepted = fields.Bool(required=True)
    attempts = fields.Int(required=True)

    def __init__(self, n_species: int = 2, **kwargs):
        super().__init__(**kwargs)
        self.n_species = n_species

    def columns(self) -> list:
        """CSV header for this species count."""
        names = []
        for name in self.fields:
            if name == "masses":
                names.extend(f"mass_{i + 1}" for i in range(self.n_species))
            elif name == "boundary_reaction":
                names.extend(f"reaction_{i + 1}" for i in range(self.n_species))
            else:
                names.append(name)
        return names

    @post_dump
    def flatten(self, data, **kwargs):
        row = {}
        for name in self.fields:
            if name == "masses":
                row.update({f"mass_{i + 1}": v for i, v in enumerate(data["masses"])})
            elif name == "boundary_reaction":
                row.update({f"reaction_{i + 1}": v for i, v in enumerate(data["boundary_reaction"])})
            else:
                row[name] = data[name]
        return row

    @pre_load
    def fold(self, data, **kwargs):
        data = dict(data)
        data["masses"] = [data.pop(f"mass_{i + 1}") for i in range(self.n_species)]
        data["boundary_reaction"] = [data.pop(f"reaction_{i + 1}") for i in range(self.n_species)]
        return data

    @post_load
    def to_record(self, data, **kwargs):
        data["masses"] = tuple(data["masses"])
        data["boundary_reaction"] = tuple(data["boundary_reaction"])
        return DiagnosticsRecord(**data)

