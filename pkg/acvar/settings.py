"""
Process-level settings for acvar.
Read once from the environment; experiment parameters live in TOML configs (see config.py).
"""

import os
import logging

LOG_LEVEL = os.environ.get("ACVAR_LOG_LEVEL", "INFO")
WORKERS = int(os.environ.get("ACVAR_WORKERS", "1"))
CHUNK_POINTS = int(os.environ.get("ACVAR_CHUNK_POINTS", "262144"))
HOST = os.environ.get("ACVAR_HOST", "127.0.0.1")
PORT = int(os.environ.get("ACVAR_PORT", "8000"))

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_configured = False


def configure_logging(level: str | None = None):
    """Install a single stream handler on the root logger. Safe to call twice."""
    global _configured
    root = logging.getLogger()
    root.setLevel((level or LOG_LEVEL).upper())
    if _configured:
        return
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    _configured = True
