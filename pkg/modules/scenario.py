"""
Scenario – every physical and algorithmic parameter of one simulation.

Scenario files use a flat `key = value` grammar, one pair per line, `#` starts
a comment. Keys are case-sensitive and use the short names of the system model
(fc, B, M, N, …). Missing keys take the built-in full-scale defaults.

Precedence: built-in defaults → profile → config file → CLI overrides.
"""

import logging
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from modules.channel_model import ArrayGeometry, subcarrier_frequencies
from modules.exceptions import ConfigError

logger = logging.getLogger(__name__)


# ─── Units ────────────────────────────────────────────────────────────────────

def dbm_to_watts(dbm: float) -> float:
    return 10 ** ((dbm - 30) / 10)


# ─── ScenarioConfig ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ScenarioConfig:
    carrier_frequency: float = 30e9       # Hz
    bandwidth: float = 10e9               # Hz
    num_subcarriers: int = 10             # M
    num_antennas: int = 128               # N
    num_rf_chains: int = 8                # A
    num_ttds: int = 16                    # Q, per RF chain
    num_users: int = 4                    # K
    num_scatters: int = 2                 # L_k, same for every user
    power_dbm: float = 20.0               # P_th
    noise_density_dbm: float = -174.0     # dBm/Hz
    t_max: Optional[float] = None         # s; N/(2 fc) when unset
    spacing: Optional[float] = None       # m; λc/2 when unset
    r_min: float = 10.0
    r_max: float = 20.0
    angle_min: float = -math.pi / 3
    angle_max: float = math.pi / 3
    search_points: int = 1000             # S, grid points including both endpoints
    rho: float = 100.0
    rho_tilde: float = 100.0
    alpha: float = 0.5
    xi1: float = 1e-4
    xi2: float = 1e-5
    xi3: float = 1e-3
    xi4: float = 1e-5
    violation_tol: float = 1e-4
    penalty_tol: float = 1e-6
    solver_tol: float = 1e-7
    mm_max_iter: int = 50
    analog_inner_max: int = 100
    analog_outer_max: int = 30
    bcd_max_iter: int = 20
    outer_max: int = 30
    nlos_gain: Optional[float] = None     # 1/√L when unset
    realizations: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    # ── Validation ───────────────────────────────────────────────────────────
    def validate(self, *, sub_connected: bool = False) -> None:
        """Raise ConfigError naming the offending key. sub_connected adds the sub-array divisibility rules."""
        def check(ok: bool, key: str, message: str) -> None:
            if not ok:
                raise ConfigError(message, key=key)

        check(self.bandwidth > 0, "B", f"B must be positive, got {self.bandwidth}.")
        check(self.carrier_frequency > self.bandwidth / 2, "fc",
              f"fc ({self.carrier_frequency}) must exceed B/2 ({self.bandwidth / 2}).")
        check(self.num_subcarriers >= 1, "M", f"M must be at least 1, got {self.num_subcarriers}.")
        check(self.num_users >= 1, "K", f"K must be at least 1, got {self.num_users}.")
        check(self.num_antennas >= 2, "N", f"N must be at least 2, got {self.num_antennas}.")
        check(self.num_users + 1 <= self.num_rf_chains, "K",
              f"K+1 <= A violated: K={self.num_users}, A={self.num_rf_chains}.")
        check(self.num_rf_chains <= self.num_antennas, "A",
              f"A <= N violated: A={self.num_rf_chains}, N={self.num_antennas}.")
        check(self.num_ttds >= 1 and self.num_antennas % self.num_ttds == 0, "Q",
              f"Q={self.num_ttds} must divide N={self.num_antennas}.")
        check(self.num_scatters >= 0, "L", f"L must be non-negative, got {self.num_scatters}.")
        check(self.search_points >= 2, "S", f"S must be at least 2, got {self.search_points}.")
        check(0 < self.alpha < 1, "alpha", f"alpha must lie in (0, 1), got {self.alpha}.")
        check(self.rho > 0, "rho", f"rho must be positive, got {self.rho}.")
        check(self.rho_tilde > 0, "rho_tilde", f"rho_tilde must be positive, got {self.rho_tilde}.")
        for key in ("xi1", "xi2", "xi3", "xi4", "violation_tol", "penalty_tol", "solver_tol"):
            value = getattr(self, key)
            check(value > 0, key, f"{key} must be positive, got {value}.")
        for key in ("mm_max_iter", "analog_inner_max", "analog_outer_max", "bcd_max_iter", "outer_max",
                    "realizations"):
            value = getattr(self, key)
            check(value >= 1, _ATTR_TO_KEY[key], f"{_ATTR_TO_KEY[key]} must be at least 1, got {value}.")
        check(0 < self.r_min <= self.r_max, "r_min",
              f"Need 0 < r_min <= r_max, got r_min={self.r_min}, r_max={self.r_max}.")
        check(-math.pi / 2 < self.angle_min <= self.angle_max < math.pi / 2, "angle_min",
              f"Angles must satisfy -pi/2 < angle_min <= angle_max < pi/2, "
              f"got [{self.angle_min}, {self.angle_max}].")
        check(self.t_max is None or self.t_max >= 0, "t_max", f"t_max must be non-negative, got {self.t_max}.")
        check(self.spacing is None or self.spacing > 0, "spacing", f"spacing must be positive, got {self.spacing}.")
        check(self.nlos_gain is None or self.nlos_gain >= 0, "nlos_gain",
              f"nlos_gain must be non-negative, got {self.nlos_gain}.")
        check(self.seed >= 0, "seed", f"seed must be non-negative, got {self.seed}.")

        if sub_connected:
            check(self.num_antennas % self.num_rf_chains == 0, "A",
                  f"Sub-connected architecture needs A={self.num_rf_chains} to divide N={self.num_antennas}.")
            per_chain = self.num_antennas // self.num_rf_chains
            check(per_chain % self.num_ttds == 0, "Q",
                  f"Sub-connected architecture needs Q={self.num_ttds} to divide N/A={per_chain}.")

    # ── Derived quantities ───────────────────────────────────────────────────
    @property
    def frequencies(self) -> np.ndarray:
        return subcarrier_frequencies(self.carrier_frequency, self.bandwidth, self.num_subcarriers)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def effective_spacing(self) -> float:
        return self.spacing if self.spacing is not None else self.wavelength / 2

    @property
    def effective_t_max(self) -> float:
        return self.t_max if self.t_max is not None else self.num_antennas / (2 * self.carrier_frequency)

    @property
    def array_geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.num_antennas, self.effective_spacing, self.wavelength)

    @property
    def power_budget_w(self) -> float:
        return dbm_to_watts(self.power_dbm)

    @property
    def noise_power_w(self) -> float:
        """Per-subcarrier noise: density × B/M."""
        return dbm_to_watts(self.noise_density_dbm) * self.bandwidth / self.num_subcarriers

    # ── Overrides ────────────────────────────────────────────────────────────
    def with_overrides(self, **changes: Any) -> "ScenarioConfig":
        """Copy with attribute overrides; the copy is re-validated."""
        return replace(self, **changes)

    def with_keys(self, values: Mapping[str, Any]) -> "ScenarioConfig":
        """Copy with overrides given by file key (e.g. {"K": 3, "P_th": 10})."""
        changes = {}
        for key, raw in values.items():
            if key not in KEY_TO_ATTR:
                raise ConfigError(f"Unknown key '{key}'.", key=key)
            attr = KEY_TO_ATTR[key]
            changes[attr] = _coerce(attr, raw, key) if isinstance(raw, str) else _cast(attr, raw, key)
        return self.with_overrides(**changes)


# ─── Keys ─────────────────────────────────────────────────────────────────────

KEY_TO_ATTR: Dict[str, str] = {
    "fc": "carrier_frequency",
    "B": "bandwidth",
    "M": "num_subcarriers",
    "N": "num_antennas",
    "A": "num_rf_chains",
    "Q": "num_ttds",
    "K": "num_users",
    "L": "num_scatters",
    "P_th": "power_dbm",
    "noise_density": "noise_density_dbm",
    "t_max": "t_max",
    "spacing": "spacing",
    "r_min": "r_min",
    "r_max": "r_max",
    "angle_min": "angle_min",
    "angle_max": "angle_max",
    "S": "search_points",
    "rho": "rho",
    "rho_tilde": "rho_tilde",
    "alpha": "alpha",
    "xi1": "xi1",
    "xi2": "xi2",
    "xi3": "xi3",
    "xi4": "xi4",
    "violation_tol": "violation_tol",
    "penalty_tol": "penalty_tol",
    "solver_tol": "solver_tol",
    "mm_max_iter": "mm_max_iter",
    "analog_inner_max": "analog_inner_max",
    "analog_outer_max": "analog_outer_max",
    "bcd_max_iter": "bcd_max_iter",
    "outer_max": "outer_max",
    "nlos_gain": "nlos_gain",
    "realizations": "realizations",
    "seed": "seed",
}
_ATTR_TO_KEY: Dict[str, str] = {attr: key for key, attr in KEY_TO_ATTR.items()}

_INT_ATTRS = {f.name for f in fields(ScenarioConfig) if f.type in (int, "int")}

PROFILES: Dict[str, Dict[str, Any]] = {
    "full": {},
    "desk": {"N": 64, "K": 3, "M": 5, "A": 4, "Q": 8, "realizations": 20},
}
PROFILE_ALIASES: Dict[str, str] = {"paper": "full"}


def _cast(attr: str, value: Any, key: str) -> Any:
    if value is None:
        return None
    if attr in _INT_ATTRS:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"'{key}' must be an integer, got {value}.", key=key)
        return int(value)
    return float(value)


def _coerce(attr: str, raw: str, key: str) -> Any:
    try:
        if attr in _INT_ATTRS:
            return int(raw)
        return float(raw)
    except ValueError as e:
        kind = "an integer" if attr in _INT_ATTRS else "a number"
        raise ConfigError(f"'{key}' must be {kind}, got '{raw}'.", key=key) from e


def profile_config(name: str) -> ScenarioConfig:
    """Profile by name; the full profile (alias paper) is the default scenario."""
    name = PROFILE_ALIASES.get(name, name)
    if name not in PROFILES:
        raise ConfigError(f"Unknown profile '{name}'; choose one of {sorted([*PROFILES, *PROFILE_ALIASES])}.")
    return ScenarioConfig().with_keys(PROFILES[name])


# ─── Parsing ──────────────────────────────────────────────────────────────────

def _read_pairs(path: Path) -> Dict[str, Tuple[str, int]]:
    """Return {key: (raw value, line number)}; rejects malformed, unknown and duplicate keys."""
    pairs: Dict[str, Tuple[str, int]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"Expected 'key = value', got '{stripped}'.", path=str(path), line=lineno)
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in KEY_TO_ATTR:
                raise ConfigError(f"Unknown key '{key}'.", path=str(path), line=lineno, key=key)
            if key in pairs:
                raise ConfigError(f"Duplicate key '{key}' (first set on line {pairs[key][1]}).",
                                  path=str(path), line=lineno, key=key)
            if not raw:
                raise ConfigError(f"Missing value for '{key}'.", path=str(path), line=lineno, key=key)
            pairs[key] = (raw, lineno)
    return pairs


def parse_config(path: str | Path, base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    """
    Parse a scenario file on top of base (full-scale defaults when None).

    Every diagnostic carries the file path and, when it can be pinned to a key,
    the line that set it.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError("Config file not found.", path=str(path))
    base = base or ScenarioConfig()
    pairs = _read_pairs(path)

    changes = {}
    for key, (raw, lineno) in pairs.items():
        try:
            changes[KEY_TO_ATTR[key]] = _coerce(KEY_TO_ATTR[key], raw, key)
        except ConfigError as e:
            raise ConfigError(str(e), path=str(path), line=lineno, key=key) from e

    try:
        cfg = base.with_overrides(**changes)
    except ConfigError as e:
        lineno = pairs[e.key][1] if e.key in pairs else None
        raise ConfigError(str(e), path=str(path), line=lineno, key=e.key) from e

    logger.info("Loaded scenario from %s (%d keys set).", path, len(pairs))
    return cfg
