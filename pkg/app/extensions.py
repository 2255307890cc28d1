"""Shared process-wide helpers and their initialization.

Centralizes logging setup and the worker pool used for the m=0 companion
solve, so they can be imported anywhere without circular imports. Each
helper is initialized with `init_app(app)` in the application factory.
"""

from __future__ import annotations

import logging
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Callable, Optional

LOG_FORMAT = "%(asctime)s [%(name)s] %(levelname)s %(message)s"


# ----------------------------------------------------------------------
# Logging
# ----------------------------------------------------------------------
def configure_logging(level: str = "INFO") -> logging.Logger:
    """Install a single stream handler on the package logger.

    Args:
        level (str): Logging level name.

    Returns:
        logging.Logger: The "app" logger.

    Notes:
        - Idempotent: repeated calls only update the level.
    """
    logger = logging.getLogger("app")
    if not any(getattr(h, "_pnp_handler", False) for h in logger.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._pnp_handler = True  # type: ignore[attr-defined]
        logger.addHandler(handler)
    logger.setLevel(getattr(logging, str(level).upper(), logging.INFO))
    return logger


# ----------------------------------------------------------------------
# Companion executor wrapper
# ----------------------------------------------------------------------
class CompanionExecutor:
    """Thread pool wrapper for running the m=0 companion solve alongside
    the order-m solve of the same slab.

    Attributes:
        pool (ThreadPoolExecutor | None): Active pool, or None when disabled.
    """
    def __init__(self):
        self.pool: Optional[ThreadPoolExecutor] = None

    def init_app(self, app):
        """Create the pool if the app's config enables it.

        Args:
            app (SolverApp): The application instance.

        Notes:
            - Expects `PARALLEL_COMPANION` in app.config.
            - A single worker is enough: there is exactly one companion per slab.
        """
        self.shutdown()
        if app.config.get("PARALLEL_COMPANION", False):
            self.pool = ThreadPoolExecutor(max_workers=1, thread_name_prefix="companion")

    @property
    def enabled(self) -> bool:
        return self.pool is not None

    def submit(self, fn: Callable, *args, **kwargs) -> Future:
        """Run fn on the pool, or synchronously into a completed Future when disabled."""
        if self.pool is not None:
            return self.pool.submit(fn, *args, **kwargs)
        future: Future = Future()
        try:
            future.set_result(fn(*args, **kwargs))
        except BaseException as exc:  # re-raised by future.result()
            future.set_exception(exc)
        return future

    def shutdown(self):
        if self.pool is not None:
            self.pool.shutdown(wait=True)
            self.pool = None


# Singleton executor for use throughout the app.
companion_executor = CompanionExecutor()
