"""Log level control for the ``dorakit`` logger hierarchy.

The library never touches the root logger. ``log_set`` attaches one stderr
handler to the ``dorakit`` logger the first time it is called and maps the
package level constants onto :mod:`logging` levels.
"""

from __future__ import annotations

import logging

LL_NONE = 0
LL_ERROR = 1
LL_INFO = 2
LL_DEBUG = 3
LL_VERBOSE = 4

# VERBOSE sits below DEBUG; per-batch training records use it.
VERBOSE = 5
logging.addLevelName(VERBOSE, "VERBOSE")

_LEVELS = {
    LL_NONE: logging.CRITICAL + 10,
    LL_ERROR: logging.ERROR,
    LL_INFO: logging.INFO,
    LL_DEBUG: logging.DEBUG,
    LL_VERBOSE: VERBOSE,
}

_ROOT = "dorakit"
_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

logging.getLogger(_ROOT).addHandler(logging.NullHandler())


def log_set(level: int) -> None:
    """Set the package log level (one of the ``LL_*`` constants)."""
    if level not in _LEVELS:
        raise ValueError(f"unknown log level {level}; expected one of {sorted(_LEVELS)}")
    logger = logging.getLogger(_ROOT)
    if not any(getattr(h, "_dorakit", False) for h in logger.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(_FORMAT))
        handler._dorakit = True  # type: ignore[attr-defined]
        logger.addHandler(handler)
    logger.setLevel(_LEVELS[level])


def log_get() -> int:
    """Return the current package log level as an ``LL_*`` constant."""
    current = logging.getLogger(_ROOT).getEffectiveLevel()
    for const, mapped in sorted(_LEVELS.items(), key=lambda kv: kv[1]):
        if current <= mapped:
            return const
    return LL_NONE
