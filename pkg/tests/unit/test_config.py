"""
Unit tests for config module.

Covers:
    - `get_config` returns the correct configuration class for each
      environment key and raises on unknown keys.
    - `config_to_dict` only collects upper-case settings.
    - SolverSettings built from a config carry the documented defaults.
"""

import pytest

from app.config import DevConfig, ProdConfig, TestConfig, config_to_dict, get_config
from app.models import RunConfig, SolverSettings


def test_get_config_valid_keys():
    assert isinstance(get_config("development"), DevConfig)
    assert isinstance(get_config("testing"), TestConfig)
    assert isinstance(get_config("production"), ProdConfig)


def test_get_config_invalid_key():
    with pytest.raises(RuntimeError, match="Invalid config name"):
        get_config("invalid-env")


def test_config_to_dict_keeps_upper_case_only():
    data = config_to_dict(get_config("testing"))
    assert data["TESTING"] is True
    assert data["PARALLEL_COMPANION"] is False
    assert all(key.isupper() for key in data)


def test_settings_from_config_defaults():
    settings = SolverSettings.from_mapping(get_config("production"))
    assert settings.kp == pytest.approx(0.13)
    assert settings.ki == pytest.approx(1.0 / 15.0)
    assert settings.theta_max == 2.0
    assert settings.rho == 1.2
    assert settings.max_retries == 30
    assert settings.dt_min == 1e-14
    assert settings.line_search_max_halvings == 8


def test_settings_from_mapping_overrides_and_quadrature_defaults():
    settings = SolverSettings.from_mapping({"NEWTON_MAX_ITER": 7, "TEMPORAL_QUAD_POINTS": 6})
    assert settings.newton_max_iter == 7
    # spatial default 2k+2, temporal taken from settings
    assert settings.quad_orders(RunConfig(k=2, m=1)) == (6, 6)
    # run-level overrides win
    assert settings.quad_orders(RunConfig(k=1, m=2, spatial_quad_order=9)) == (9, 6)
    assert SolverSettings().quad_orders(RunConfig(k=1, m=2)) == (4, 5)
