"""Solver configuration classes and selector.

Defines environment-specific defaults for the Newton solver, the PI step-size
controller, quadrature and logging. Values can be overridden from environment
variables (loaded from .env by manage.py) so runs can be tuned without
editing code.
"""

import os


def _env_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() in ("1", "true", "yes", "on")


# ----------------------------------------------------------------------
# Base Config
# ----------------------------------------------------------------------
class BaseConfig:
    """Base defaults shared by all environments.

    Notes:
        - NEWTON_* control the slab Newton loop (residual, step and energy stops).
        - CONTROLLER_* are the PI controller gains; RHO is the rejection safety factor.
        - SPATIAL_QUAD_ORDER / TEMPORAL_QUAD_POINTS of None mean 2k+2 and m+3.
    """
    LOG_LEVEL = os.getenv("PNP_LOG_LEVEL", "INFO")

    # Newton
    NEWTON_MAX_ITER = int(os.getenv("PNP_NEWTON_MAX_ITER", "25"))
    NEWTON_RTOL = 1e-8
    NEWTON_ATOL = 1e-12
    NEWTON_STOL = 1e-13
    NEWTON_ENERGY_RTOL = 1e-8
    LINE_SEARCH_MAX_HALVINGS = 8
    EXP_GUARD = 700.0

    # PI controller
    CONTROLLER_KP = 0.13
    CONTROLLER_KI = 1.0 / 15.0
    CONTROLLER_THETA_MAX = 2.0
    CONTROLLER_RHO = 1.2
    ESTIMATOR_FLOOR = 1e-14
    MAX_RETRIES = 30
    DT_MIN = 1e-14

    # Quadrature
    SPATIAL_QUAD_ORDER = None
    TEMPORAL_QUAD_POINTS = None

    # Diagnostics / output
    ENERGY_TOLERANCE = 1e-8
    SAMPLES_PER_ELEMENT = 4

    # Runs the m=0 companion solve on a worker thread
    PARALLEL_COMPANION = _env_bool("PNP_PARALLEL_COMPANION", False)


# ----------------------------------------------------------------------
# Dev Config
# ----------------------------------------------------------------------
class DevConfig(BaseConfig):
    """Local development config.

    - DEBUG logging shows every Newton iteration.
    """
    LOG_LEVEL = os.getenv("PNP_LOG_LEVEL", "DEBUG")


# ----------------------------------------------------------------------
# Test Config
# ----------------------------------------------------------------------
class TestConfig(BaseConfig):
    """Testing config.

    - Quiet logging and single-threaded companion solves keep tests deterministic.
    """
    LOG_LEVEL = "WARNING"
    PARALLEL_COMPANION = False
    TESTING = True


# ----------------------------------------------------------------------
# Prod Config
# ----------------------------------------------------------------------
class ProdConfig(BaseConfig):
    """Production config for long runs.

    - INFO logging (one line per accepted step).
    """
    LOG_LEVEL = os.getenv("PNP_LOG_LEVEL", "INFO")


# ----------------------------------------------------------------------
# Get Config
# ----------------------------------------------------------------------
def get_config(name: str):
    """Return a config instance by environment name, or raise if invalid."""
    config_map = {
        "development": DevConfig,
        "testing": TestConfig,
        "production": ProdConfig
    }
    try:
        return config_map[name]()
    except KeyError:
        raise RuntimeError(f"Invalid config name: {name}")


def config_to_dict(config_obj) -> dict:
    """Collect the upper-case attributes of a config object into a dict."""
    return {
        key: getattr(config_obj, key)
        for key in dir(config_obj)
        if key.isupper()
    }
