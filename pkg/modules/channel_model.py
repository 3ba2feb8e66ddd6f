"""
Channel model – array geometry, near/far-field response vectors and the
multi-path wideband channel of every user on every subcarrier.

Coordinate system: the ULA lies on the y-axis with its midpoint at the origin,
so antenna n sits at (0, ñ·d) with ñ = (2n − N − 1)/2. A user at range r and
angle θ sits at (r·cosθ, r·sinθ).

Channels are stored subcarrier-first: ChannelSet.channels[m] is the N×K matrix
whose k-th column is h_{k,m}.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

logger = logging.getLogger(__name__)

NEAR = "near"
FAR = "far"


# ─── Domain types ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array centred on the origin."""

    num_antennas: int
    spacing: float
    center_wavelength: float

    def __post_init__(self) -> None:
        if self.num_antennas < 2:
            raise ValueError(f"ArrayGeometry needs at least 2 antennas, got {self.num_antennas}.")
        if not self.spacing > 0:
            raise ValueError(f"Antenna spacing must be positive, got {self.spacing}.")
        if not self.center_wavelength > 0:
            raise ValueError(f"Center wavelength must be positive, got {self.center_wavelength}.")

    @property
    def offsets(self) -> np.ndarray:
        """ñ for n = 1..N; symmetric about zero."""
        return np.arange(self.num_antennas) - (self.num_antennas - 1) / 2.0

    @property
    def positions(self) -> np.ndarray:
        """y-coordinate ñ·d of every element (meters)."""
        return self.offsets * self.spacing

    @property
    def aperture(self) -> float:
        return (self.num_antennas - 1) * self.spacing


@dataclass(frozen=True)
class PolarPoint:
    range: float
    angle: float

    def __post_init__(self) -> None:
        if not self.range > 0:
            raise ValueError(f"Range must be positive, got {self.range}.")
        if not -np.pi / 2 < self.angle < np.pi / 2:
            raise ValueError(f"Angle must lie in (-pi/2, pi/2), got {self.angle}.")


@dataclass(frozen=True)
class UserGeometry:
    """LoS position plus one (scatter point, scatter-to-user distance) pair per NLoS path."""

    los: PolarPoint
    scatters: Tuple[Tuple[PolarPoint, float], ...] = ()

    def __post_init__(self) -> None:
        for _, dist in self.scatters:
            if not dist > 0:
                raise ValueError(f"Scatter-to-user distance must be positive, got {dist}.")

    @property
    def num_paths(self) -> int:
        return len(self.scatters)


@dataclass
class ChannelSet:
    channels: np.ndarray          # (M, N, K) complex
    frequencies: np.ndarray       # (M,) hertz
    field: str = NEAR

    def __post_init__(self) -> None:
        self.channels = np.asarray(self.channels, dtype=complex)
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        if self.channels.ndim != 3:
            raise ValueError(f"Channels must have shape (M, N, K), got {self.channels.shape}.")
        if self.channels.shape[0] < 1 or self.channels.shape[0] != self.frequencies.size:
            raise ValueError(
                f"Channel tensor has {self.channels.shape[0]} subcarriers but "
                f"{self.frequencies.size} frequencies were given."
            )
        if not np.all(np.isfinite(self.channels)):
            raise ValueError("Channel entries must be finite.")
        if np.any(np.linalg.norm(self.channels, axis=1) <= 0):
            raise ValueError("Every channel vector must have a strictly positive norm.")

    @property
    def num_subcarriers(self) -> int:
        return self.channels.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.channels.shape[1]

    @property
    def num_users(self) -> int:
        return self.channels.shape[2]

    def column(self, k: int, m: int) -> np.ndarray:
        return self.channels[m, :, k]

    def permuted(self, order: Sequence[int]) -> "ChannelSet":
        return ChannelSet(self.channels[:, :, list(order)], self.frequencies.copy(), self.field)


# ─── Frequencies and distances ────────────────────────────────────────────────

def subcarrier_frequencies(fc: float, bandwidth: float, num_subcarriers: int) -> np.ndarray:
    """f_m = f_c + B(2m − 1 − M)/(2M) for m = 1..M."""
    if num_subcarriers < 1:
        raise ValueError(f"Number of subcarriers must be at least 1, got {num_subcarriers}.")
    if bandwidth < 0:
        raise ValueError(f"Bandwidth must be non-negative, got {bandwidth}.")
    if fc <= bandwidth / 2:
        raise ValueError(f"Carrier {fc} Hz must exceed half the bandwidth ({bandwidth / 2} Hz).")
    m = np.arange(1, num_subcarriers + 1)
    return fc + bandwidth * (2 * m - 1 - num_subcarriers) / (2 * num_subcarriers)


def path_differences(geom: ArrayGeometry, point: PolarPoint) -> np.ndarray:
    """δ_n(r, θ) = ñd·sinθ − (ñd)²·cos²θ/(2r) for every element."""
    y = geom.positions
    return y * np.sin(point.angle) - y ** 2 * np.cos(point.angle) ** 2 / (2 * point.range)


def element_distance(geom: ArrayGeometry, point: PolarPoint, n: int) -> Tuple[float, float]:
    """Distance from element n (1-based) to point: (second-order approximation, exact)."""
    if not 1 <= n <= geom.num_antennas:
        raise ValueError(f"Antenna index must lie in 1..{geom.num_antennas}, got {n}.")
    y = geom.positions[n - 1]
    r, theta = point.range, point.angle
    exact = float(np.hypot(r * np.cos(theta), r * np.sin(theta) - y))
    approx = float(r - y * np.sin(theta) + y ** 2 * np.cos(theta) ** 2 / (2 * r))
    return approx, exact


def rayleigh_distance(geom: ArrayGeometry) -> float:
    """2D²/λc – the boundary beyond which planar wavefronts are a good model."""
    return 2 * geom.aperture ** 2 / geom.center_wavelength


# ─── Response vectors ─────────────────────────────────────────────────────────

def near_field_response(geom: ArrayGeometry, point: PolarPoint, freq: float) -> np.ndarray:
    return np.exp(1j * 2 * np.pi * freq / SPEED_OF_LIGHT * path_differences(geom, point))


def far_field_response(angle: float, freq: float, geom: ArrayGeometry) -> np.ndarray:
    return np.exp(1j * 2 * np.pi * freq / SPEED_OF_LIGHT * geom.positions * np.sin(angle))


def _response(geom: ArrayGeometry, point: PolarPoint, freq: float, field: str) -> np.ndarray:
    if field == NEAR:
        return near_field_response(geom, point, freq)
    return far_field_response(point.angle, freq, geom)


def _path_gain(freq: float, distance: float) -> complex:
    return SPEED_OF_LIGHT / (4 * np.pi * freq * distance) * np.exp(-2j * np.pi * freq * distance / SPEED_OF_LIGHT)


# ─── Channel generation ───────────────────────────────────────────────────────

def generate_channels(
    geom: ArrayGeometry,
    users: Sequence[UserGeometry],
    freqs: Sequence[float],
    field: str = NEAR,
    *,
    nlos_gain: float | None = None,
) -> ChannelSet:
    """
    Build h_{k,m} = β_{k,m}·a(r_k, θ_k, f_m) + Σ_l β_{k,m,l}·a(r_{k,l}, θ_{k,l}, f_m).

    NLoS amplitudes use the cascaded distance r_{k,l} + r̃_{k,l} and are scaled
    by nlos_gain (default 1/√L_k). Far mode swaps the response vector only.
    """
    if not users:
        raise ValueError("At least one user is required to generate channels.")
    if field not in (NEAR, FAR):
        raise ValueError(f"field must be '{NEAR}' or '{FAR}', got '{field}'.")
    freqs = np.asarray(freqs, dtype=float)

    channels = np.zeros((freqs.size, geom.num_antennas, len(users)), dtype=complex)
    for k, user in enumerate(users):
        scale = nlos_gain if nlos_gain is not None else (1 / np.sqrt(user.num_paths) if user.num_paths else 0.0)
        for m, f in enumerate(freqs):
            h = _path_gain(f, user.los.range) * _response(geom, user.los, f, field)
            for point, dist in user.scatters:
                cascaded = point.range + dist
                h = h + scale * _path_gain(f, cascaded) * _response(geom, point, f, field)
            channels[m, :, k] = h

    logger.debug("Generated %s-field channels: M=%d N=%d K=%d", field, freqs.size, geom.num_antennas, len(users))
    return ChannelSet(channels, freqs, field)


def sample_scenario(cfg, rng_seed: int) -> List[UserGeometry]:
    """Draw user and scatter positions uniformly in range and angle (deterministic per seed)."""
    if cfg.r_min <= 0 or cfg.r_min > cfg.r_max:
        raise ValueError(f"Need 0 < r_min <= r_max, got r_min={cfg.r_min}, r_max={cfg.r_max}.")
    rng = np.random.default_rng(rng_seed)

    def draw_point() -> PolarPoint:
        return PolarPoint(float(rng.uniform(cfg.r_min, cfg.r_max)),
                          float(rng.uniform(cfg.angle_min, cfg.angle_max)))

    users = []
    for _ in range(cfg.num_users):
        los = draw_point()
        scatters = tuple((draw_point(), float(rng.uniform(cfg.r_min, cfg.r_max)))
                         for _ in range(cfg.num_scatters))
        users.append(UserGeometry(los, scatters))

    limit = rayleigh_distance(cfg.array_geometry)
    beyond = sum(u.los.range > limit for u in users)
    if beyond:
        logger.warning("%d of %d users lie beyond the Rayleigh distance (%.1f m).", beyond, len(users), limit)
    return users


# ─── Diagnostics ──────────────────────────────────────────────────────────────

def focusing_gain(geom: ArrayGeometry, point: PolarPoint, freqs: Sequence[float], vectors: np.ndarray) -> np.ndarray:
    """
    Normalized array gain |a(r, θ, f_m)^H v_m| / (√N ‖v_m‖) of one beam per subcarrier.

    vectors has shape (M, N). A value of 1 means the beam is perfectly focused
    on the point at that subcarrier; beam split shows up as a drop at the band edges.
    """
    vectors = np.asarray(vectors, dtype=complex)
    gains = np.zeros(len(freqs))
    for m, f in enumerate(freqs):
        norm = np.linalg.norm(vectors[m])
        if norm > 0:
            a = near_field_response(geom, point, f)
            gains[m] = abs(np.vdot(a, vectors[m])) / (np.sqrt(geom.num_antennas) * norm)
    return gains
