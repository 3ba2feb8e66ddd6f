"""
Configuration module – loads process-level settings from the environment.

Scenario parameters (frequencies, array, users, penalty schedule…) live in
scenario files parsed by modules/scenario.py. This module only covers what
changes between machines: log level, output locations and worker count.
All other modules import from here instead of reading os.environ directly.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Load .env from project root (works regardless of CWD)
_ROOT = Path(__file__).resolve().parent.parent
load_dotenv(_ROOT / ".env")


def _optional(key: str, default: str = "") -> str:
    return os.getenv(key, default).strip()


def _optional_int(key: str, default: int) -> int:
    raw = _optional(key, str(default))
    try:
        return int(raw)
    except ValueError as e:
        raise EnvironmentError(f"Environment variable '{key}' must be an integer, got '{raw}'.") from e


# ─── Paths ─────────────────────────────────────────────────────────────────────
DATA_DIR: Path = _ROOT / "data"
LOGS_DIR: Path = Path(_optional("RSMA_LOGS_DIR", str(_ROOT / "logs")))
OUTPUT_DIR: Path = Path(_optional("RSMA_OUTPUT_DIR", str(_ROOT / "output")))

# ─── App settings ──────────────────────────────────────────────────────────────
LOG_LEVEL: str = _optional("LOG_LEVEL", "INFO").upper()
DEFAULT_JOBS: int = max(1, _optional_int("RSMA_JOBS", 1))

# Ensure directories exist
for _d in [LOGS_DIR, OUTPUT_DIR]:
    _d.mkdir(parents=True, exist_ok=True)
