"""
Utility helper tests.

Covers:
    - dt_max schedule strings ("2@250,200") and their inverse.
    - Integer / float list parsing for CLI options.
    - Convergence rates between successive meshes.
    - Round-trip-stable float formatting.
"""

import math

import pytest

from app.utils import helpers


# ----------------------------------------------------------------------
# Schedule String Parser
# ----------------------------------------------------------------------
def test_parse_schedule_valid():
    assert helpers.parse_schedule("2@250,200") == ((250.0, 2.0), (math.inf, 200.0))
    assert helpers.parse_schedule("0.5") == ((math.inf, 0.5),)
    assert helpers.parse_schedule(3) == ((math.inf, 3.0),)


@pytest.mark.parametrize("text", ["", "2@250", "2@250,1@100,3", "-1", "a@b,2"])
def test_parse_schedule_invalid(text):
    with pytest.raises(ValueError):
        helpers.parse_schedule(text)


def test_format_schedule_inverse():
    schedule = ((250.0, 2.0), (math.inf, 200.0))
    assert helpers.parse_schedule(helpers.format_schedule(schedule)) == schedule


# ----------------------------------------------------------------------
# List Parsers
# ----------------------------------------------------------------------
def test_list_parsers():
    assert helpers.parse_int_list("8,16,32") == [8, 16, 32]
    assert helpers.parse_float_list("1, 10.5") == [1.0, 10.5]
    assert helpers.parse_float_list(None) == []
    with pytest.raises(ValueError):
        helpers.parse_int_list("")
    with pytest.raises(ValueError):
        helpers.parse_int_list("8,x")


# ----------------------------------------------------------------------
# Convergence Rates
# ----------------------------------------------------------------------
def test_convergence_rates():
    rates = helpers.convergence_rates([1e-2, 2.5e-3, 6.25e-4], [8, 16, 32])
    assert rates[0] == helpers.NO_RATE
    assert rates[1] == pytest.approx(2.0)
    assert rates[2] == pytest.approx(2.0)


def test_convergence_rates_at_roundoff():
    rates = helpers.convergence_rates([1e-15, 1e-16], [8, 16])
    assert rates == [helpers.NO_RATE, helpers.NO_RATE]


def test_format_float_round_trips():
    for value in (0.1, 1.0 / 3.0, -3023.3435, 1e-300, 387788.75):
        assert float(helpers.format_float(value)) == value
    assert helpers.format_float(float("nan")) == "nan"
