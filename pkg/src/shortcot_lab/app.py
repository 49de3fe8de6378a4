"""Process-wide setup for shortcot-lab."""

from __future__ import annotations

import logging
import os
import sys

LOG_LEVEL_ENV = "SHORTCOT_LOG_LEVEL"
_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | None = None) -> int:
    """Configure the root logger from *level* or ``SHORTCOT_LOG_LEVEL`` (default WARNING).

    Diagnostics go to stderr; results never depend on the level. Returns the
    numeric level in effect.
    """
    name = (level or os.environ.get(LOG_LEVEL_ENV) or "WARNING").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        numeric = logging.WARNING
    logging.basicConfig(level=numeric, format=_FORMAT, stream=sys.stderr, force=True)
    if name != logging.getLevelName(numeric):
        logging.getLogger(__name__).warning("Unknown %s=%r; using WARNING", LOG_LEVEL_ENV, name)
    return numeric
