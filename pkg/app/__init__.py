"""
Application factory and wiring for the Entropic-PNP solver.

Responsibilities:
    - Load configuration via get_config(config_name) into a plain dict.
    - Initialize shared helpers: logging (configure_logging) and the
      companion-solve executor (companion_executor).
    - Expose the frozen SolverSettings consumed by the services.

Environment / Config flags:
    - PNP_CONFIG (str, default: "development"): config class when no name is passed.
    - PARALLEL_COMPANION (bool, default: False): run the m=0 companion solve on a worker thread.

Usage:
    app = create_app("production")
    result = run(spec, mesh, run_config, app.settings, executor=app.executor)
"""

from __future__ import annotations

import atexit
import logging
import os
from dataclasses import dataclass, field

from app.config import config_to_dict, get_config
from app.extensions import companion_executor, configure_logging
from app.models import SolverSettings


@dataclass
class SolverApp:
    """Configured application handle.

    Attributes:
        name (str): Config name the app was built with.
        config (dict): Upper-case config values.
        settings (SolverSettings): Frozen numerical settings.
        logger (logging.Logger): Package logger.
    """
    name: str
    config: dict
    settings: SolverSettings
    logger: logging.Logger
    extensions: dict = field(default_factory=dict)

    @property
    def executor(self):
        return self.extensions.get("companion_executor")


def create_app(config_name: str = None, **overrides) -> SolverApp:
    """
    Application factory for the solver.

    - Resolves the config class (argument, then PNP_CONFIG, then "development").
    - Applies keyword overrides on top of the config values.
    - Configures logging and the companion executor.
    """
    config_name = config_name or os.environ.get("PNP_CONFIG", "development")
    config = config_to_dict(get_config(config_name))
    config.update({k.upper(): v for k, v in overrides.items()})

    # ------------------------------------------------------------------
    # Initialize Extensions
    # ------------------------------------------------------------------
    logger = configure_logging(config.get("LOG_LEVEL", "INFO"))

    app = SolverApp(
        name=config_name,
        config=config,
        settings=SolverSettings.from_mapping(config),
        logger=logger,
    )

    companion_executor.init_app(app)
    app.extensions["companion_executor"] = companion_executor
    if companion_executor.enabled and not config.get("TESTING", False):
        atexit.register(companion_executor.shutdown)

    logger.debug("app created (config=%s, parallel_companion=%s)",
                 config_name, companion_executor.enabled)
    return app
