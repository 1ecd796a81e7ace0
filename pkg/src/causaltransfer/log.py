"""Logging setup.

Configuration comes from arguments or, failing that, from the environment:

    CAUSALTRANSFER_LOG=debug
    CAUSALTRANSFER_LOG=causaltransfer=info,causaltransfer.balance=warning
    CAUSALTRANSFER_LOG_FORMAT=json
"""

from __future__ import annotations

import json
import logging
import os
import sys
import time
from typing import Dict, Optional, Tuple

from .errors import ConfigError

ROOT_LOGGER = "causaltransfer"
ENV_LEVEL = "CAUSALTRANSFER_LOG"
ENV_FORMAT = "CAUSALTRANSFER_LOG_FORMAT"

_TEXT_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"
_RESERVED = set(logging.makeLogRecord({}).__dict__) | {"message", "asctime"}

_handler: Optional[logging.Handler] = None


class JsonFormatter(logging.Formatter):
    """One JSON object per record; ``extra=`` fields are carried through."""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "ts": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(record.created)),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        for key, value in record.__dict__.items():
            if key not in _RESERVED and not key.startswith("_"):
                payload[key] = value
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=str)


def parse_directives(spec: str) -> Tuple[Optional[int], Dict[str, int]]:
    """Parse ``level`` / ``logger=level`` comma lists into numeric levels."""
    default: Optional[int] = None
    per_logger: Dict[str, int] = {}
    for part in filter(None, (p.strip() for p in spec.split(","))):
        name, _, level = part.rpartition("=")
        value = logging.getLevelName(level.strip().upper())
        if not isinstance(value, int):
            raise ConfigError(f"unknown log level {level!r} in {spec!r}")
        if name:
            per_logger[name.strip()] = value
        else:
            default = value
    return default, per_logger


def configure_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> logging.Logger:
    """Install (or replace) the package handler and return the root package logger."""
    global _handler

    spec = level if level is not None else os.environ.get(ENV_LEVEL, "warning")
    fmt = (fmt or os.environ.get(ENV_FORMAT, "text")).lower()
    if fmt not in ("text", "json"):
        raise ConfigError(f"unknown log format {fmt!r}")

    default, per_logger = parse_directives(spec)
    root = logging.getLogger(ROOT_LOGGER)
    if _handler is not None:
        root.removeHandler(_handler)

    _handler = logging.StreamHandler(sys.stderr)
    _handler.setFormatter(JsonFormatter() if fmt == "json" else logging.Formatter(_TEXT_FORMAT))
    root.addHandler(_handler)
    root.propagate = False

    root.setLevel(per_logger.pop(ROOT_LOGGER, default if default is not None else logging.WARNING))
    for name, value in per_logger.items():
        logging.getLogger(name).setLevel(value)
    return root
