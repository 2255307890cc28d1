"""
Unit tests for the application factory.

Covers:
    - create_app() honours explicit names, PNP_CONFIG and keyword overrides.
    - Logging is configured once on the package logger.
    - The companion executor runs inline unless PARALLEL_COMPANION is set.
"""

import logging
import threading

import pytest

from app import SolverApp, create_app
from app.extensions import companion_executor


def test_create_app_testing(app):
    assert isinstance(app, SolverApp)
    assert app.name == "testing"
    assert app.config["TESTING"] is True
    assert app.logger.level == logging.WARNING
    assert app.executor is companion_executor
    assert not app.executor.enabled


def test_create_app_reads_env(monkeypatch):
    monkeypatch.setenv("PNP_CONFIG", "production")
    prod = create_app(parallel_companion=False)
    assert prod.name == "production"
    create_app("testing")


def test_create_app_invalid_name():
    with pytest.raises(RuntimeError):
        create_app("nope")


def test_overrides_reach_settings():
    app = create_app("testing", newton_max_iter=4, controller_rho=1.5)
    assert app.settings.newton_max_iter == 4
    assert app.settings.rho == 1.5


def test_logging_handler_installed_once():
    create_app("testing")
    create_app("testing")
    logger = logging.getLogger("app")
    assert sum(getattr(h, "_pnp_handler", False) for h in logger.handlers) == 1


def test_executor_inline_when_disabled(app):
    future = app.executor.submit(lambda a, b: a + b, 2, 3)
    assert future.done()
    assert future.result() == 5

    failing = app.executor.submit(lambda: 1 / 0)
    with pytest.raises(ZeroDivisionError):
        failing.result()


def test_executor_pool_when_enabled():
    app = create_app("testing", parallel_companion=True)
    try:
        assert app.executor.enabled
        name = app.executor.submit(lambda: threading.current_thread().name).result()
        assert name.startswith("companion")
    finally:
        create_app("testing")
    assert not companion_executor.enabled
