"""Exception types shared across the simulator."""

from typing import Optional


class ConfigError(ValueError):
    """Invalid scenario configuration, optionally pinned to a file line."""

    def __init__(self, message: str, *, path: Optional[str] = None, line: Optional[int] = None,
                 key: Optional[str] = None):
        self.path = path
        self.line = line
        self.key = key
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class InfeasibleAllocationError(ValueError):
    """A common-rate allocation exceeds the common-rate caps it is evaluated against."""


class SolverError(RuntimeError):
    """Numerical breakdown of the interior-point core."""
