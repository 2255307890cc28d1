"""
Unit tests for app.schemas.

Covers:
    - Run-file validation (presets, ranges, h/n exclusivity, example2 options).
    - CLI override layering and dump/load of the effective config.
    - Diagnostics row flattening and parsing of CSV strings.
"""

import math
import re

import pytest
import yaml
from marshmallow import ValidationError

from app.schemas import DiagnosticsRecordSchema, RunFileSchema, merge_run_options
from tests.factories import DiagnosticsRecordFactory, nan_record


# ----------------------------------------------------------------------
# Run files
# ----------------------------------------------------------------------
def test_run_file_loads_schedule_and_keeps_null_end_time():
    data = RunFileSchema().load({
        "preset": "example2", "h": 0.03125, "dt_max": "2@250,200", "t_end": None, "color": "blue",
    })
    assert data["dt_max"] == ((250.0, 2.0), (math.inf, 200.0))
    assert data["t_end"] is None
    assert "color" not in data


def test_run_file_dump_reloads_identically():
    schema = RunFileSchema()
    data = schema.load({"preset": "example2", "n": 424, "k": 2, "m": 1, "dt_max": "2@250,200",
                        "example2": {"eps_low_region": [-4, 9], "rho0_intervals": [[0, 1], [2, 3]]}})
    assert data["example2"]["eps_low_region"] == (-4.0, 9.0)
    assert data["example2"]["rho0_intervals"] == ((0.0, 1.0), (2.0, 3.0))
    assert schema.load(schema.dump(data)) == data


def test_run_file_dump_is_plain_yaml():
    schema = RunFileSchema()
    data = schema.load({"preset": "example2", "h": 0.5, "dt_max": "2@250,200", "t_end": None,
                        "example2": {"eps_low_region": [-5, 10]}})
    text = yaml.safe_dump(schema.dump(data), sort_keys=False)
    assert schema.load(yaml.safe_load(text)) == data


@pytest.mark.parametrize("payload, field", [
    ({"preset": "example9"}, "preset"),
    ({"preset": "example1", "k": 0}, "k"),
    ({"preset": "example1", "m": -1}, "m"),
    ({"preset": "example1", "h": 0.0}, "h"),
    ({"preset": "example1", "dt_max": "2@250"}, "dt_max"),
    ({"preset": "example1", "h": 0.1, "n": 8}, "n"),
    ({"preset": "example1", "example2": {"eps_low_region": [0, 1]}}, "example2"),
    ({"preset": "example2", "example2": {"eps_low_region": [3, 1]}}, "example2"),
    ({}, "preset"),
])
def test_run_file_rejections(payload, field):
    with pytest.raises(ValidationError) as exc:
        RunFileSchema().load(payload)
    assert field in exc.value.messages


def test_overrides_replace_file_values():
    file_data = {"preset": "example1", "n": 8, "k": 1, "dt": 0.25}
    merged = merge_run_options(file_data, {"h": 0.0625, "k": 2, "dt": None, "preset": None})
    assert "n" not in merged
    assert merged["h"] == 0.0625 and merged["k"] == 2 and merged["dt"] == 0.25
    merged = merge_run_options({"preset": "example1", "h": 0.5}, {"n": 4})
    assert merged["n"] == 4 and "h" not in merged


def test_overrides_without_file():
    merged = merge_run_options({}, {"preset": "example2", "adaptive": False, "t_end": 5.0})
    assert merged == {"preset": "example2", "adaptive": False, "t_end": 5.0}


# ----------------------------------------------------------------------
# Diagnostics rows
# ----------------------------------------------------------------------
def test_columns_follow_species_count():
    columns = DiagnosticsRecordSchema(n_species=3).columns()
    assert columns[:3] == ["step", "t", "dt"]
    assert ["mass_1", "mass_2", "mass_3"] == [c for c in columns if re.fullmatch(r"mass_\d+", c)]
    assert ["reaction_1", "reaction_2", "reaction_3"] == [c for c in columns if re.fullmatch(r"reaction_\d+", c)]
    assert columns[-2:] == ["accepted", "attempts"]


def test_row_dump_and_string_load():
    schema = DiagnosticsRecordSchema()
    record = DiagnosticsRecordFactory(step=4, masses=(1.5, 2.5), boundary_reaction=(0.1, -0.1))
    row = schema.dump(record)
    assert list(row) == schema.columns()
    assert row["mass_2"] == 2.5 and row["reaction_2"] == -0.1
    as_text = {key: str(value) for key, value in row.items()}
    assert schema.load(as_text) == record


def test_nan_rows_load():
    schema = DiagnosticsRecordSchema()
    record = nan_record(step=2, t=0.3, dt=0.1)
    loaded = schema.load({key: str(value) for key, value in schema.dump(record).items()})
    assert loaded.accepted is False and loaded.attempts == 2
    assert math.isnan(loaded.energy) and all(math.isnan(v) for v in loaded.masses)
