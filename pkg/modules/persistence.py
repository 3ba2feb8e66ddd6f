"""
Persistence – CSV output written atomically.

Every file is first written to a temp file in the target directory and then
renamed over the destination, so an interrupted run never leaves a
half-written CSV behind.
"""

import csv
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

logger = logging.getLogger(__name__)


def format_value(value: Any) -> str:
    """Stable text form: floats as their shortest round-trip repr, bools as 0/1."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_csv_atomic(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = None
    try:
        fd, tmp_path = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        count = 0
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                if len(row) != len(header):
                    raise ValueError(f"Row has {len(row)} fields, header has {len(header)}.")
                writer.writerow([format_value(v) for v in row])
                count += 1
        os.replace(tmp_path, path)
        logger.debug("Wrote %d rows to %s", count, path)
        return path
    except (OSError, ValueError) as e:
        logger.error("Failed to write %s: %s", path, e)
        if tmp_path and os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
