"""Utility functions for imaginenet."""

from __future__ import annotations

import hashlib
import json
import logging
from typing import Any

import numpy as np
from rich.console import Console
from rich.logging import RichHandler

from .errors import NumericError

_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def setup_logging(verbosity: int = 0, console: Console | None = None) -> None:
    """Route the package loggers through a RichHandler on stderr.

    0 → WARNING, 1 → INFO, 2+ → DEBUG.
    """
    level = _LEVELS.get(verbosity, logging.DEBUG)
    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=False,
        rich_tracebacks=verbosity >= 2,
    )
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[handler],
        force=True,
    )


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def canonical_json(obj: Any) -> str:
    """Sorted keys, no whitespace: the form every hash in the package is taken over."""
    return json.dumps(
        obj,
        sort_keys=True,
        separators=(",", ":"),
        default=_to_jsonable,
        allow_nan=False,
    )


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def short_hash(obj: Any, length: int = 16) -> str:
    return sha256_hex(canonical_json(obj))[:length]


def check_finite(array: np.ndarray, op: str) -> np.ndarray:
    """Return ``array`` unchanged, raising NumericError on NaN or Inf."""
    if not np.all(np.isfinite(array)):
        raise NumericError(op)
    return array
