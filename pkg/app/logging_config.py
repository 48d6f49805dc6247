# app/logging_config.py

import logging
import sys

LOG_FORMAT = "%(asctime)s %(levelname)-5.5s [%(name)s] %(message)s"
DATE_FORMAT = "%H:%M:%S"


def configure_logging(level: str | int = "INFO") -> None:
    """One stderr handler on the root logger; repeated calls replace it."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_dpkmeans", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    handler._dpkmeans = True  # type: ignore[attr-defined]
    root.addHandler(handler)
    root.setLevel(level.upper() if isinstance(level, str) else level)
    logging.getLogger("sqlalchemy.engine").setLevel(logging.WARN)
