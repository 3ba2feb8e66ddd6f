"""
Hybrid beamformer – phase shifters F, true-time-delay units T_m and digital W_m.

Each RF chain a drives Q TTD units; TTD (a, q) feeds a group of L phase
shifters f_{a,q}. The architectures differ only in which antennas a group
reaches:

  fully connected : group q of every chain covers rows q·L … (q+1)·L − 1, L = N/Q
  sub-connected   : chain a owns sub-array rows a·Ñ … (a+1)·Ñ − 1, Ñ = N/A,
                    and group q covers a·Ñ + q·L …, L = Ñ/Q

Phases are stored as angles so |f| = 1 holds exactly. The delay applied by
TTD (a, q) at frequency f is the phase e^{−j2πf t_{a,q}}.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

logger = logging.getLogger(__name__)


class Architecture(str, Enum):
    FULLY_CONNECTED = "fully_connected"
    SUB_CONNECTED = "sub_connected"


def group_length(architecture: Architecture, num_antennas: int, num_rf_chains: int, num_ttds: int) -> int:
    """Antennas per TTD group; raises ValueError when the partition is not exact."""
    if architecture is Architecture.FULLY_CONNECTED:
        if num_antennas % num_ttds:
            raise ValueError(f"Q={num_ttds} must divide N={num_antennas}.")
        return num_antennas // num_ttds
    if num_antennas % num_rf_chains:
        raise ValueError(f"Sub-connected architecture needs A={num_rf_chains} to divide N={num_antennas}.")
    per_chain = num_antennas // num_rf_chains
    if per_chain % num_ttds:
        raise ValueError(f"Sub-connected architecture needs Q={num_ttds} to divide N/A={per_chain}.")
    return per_chain // num_ttds


def delay_phasors(delays: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """e^{−j2πf_m t_{a,q}} with shape (M, A, Q)."""
    return np.exp(-2j * np.pi * np.asarray(freqs)[:, None, None] * np.asarray(delays)[None, :, :])


@dataclass
class HybridBeamformer:
    architecture: Architecture
    num_antennas: int
    phases: np.ndarray        # (A, Q, L) radians
    delays: np.ndarray        # (A, Q) seconds
    digital: np.ndarray       # (M, A, K+1) complex
    frequencies: np.ndarray   # (M,) hertz
    t_max: float

    def __post_init__(self) -> None:
        self.phases = np.asarray(self.phases, dtype=float)
        self.delays = np.asarray(self.delays, dtype=float)
        self.digital = np.asarray(self.digital, dtype=complex)
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.validate()

    # ── Shape accessors ──────────────────────────────────────────────────────
    @property
    def num_rf_chains(self) -> int:
        return self.phases.shape[0]

    @property
    def num_ttds(self) -> int:
        return self.phases.shape[1]

    @property
    def group_size(self) -> int:
        return self.phases.shape[2]

    @property
    def num_streams(self) -> int:
        return self.digital.shape[2]

    @property
    def num_subcarriers(self) -> int:
        return self.frequencies.size

    def validate(self) -> None:
        if self.phases.ndim != 3:
            raise ValueError(f"Phases must have shape (A, Q, L), got {self.phases.shape}.")
        A, Q, L = self.phases.shape
        if L != group_length(self.architecture, self.num_antennas, A, Q):
            raise ValueError(
                f"Phase groups of length {L} do not tile N={self.num_antennas} for {self.architecture.value}."
            )
        if self.delays.shape != (A, Q):
            raise ValueError(f"Delays must have shape {(A, Q)}, got {self.delays.shape}.")
        if np.any(self.delays < 0) or np.any(self.delays > self.t_max * (1 + 1e-12)):
            raise ValueError(f"Delays must lie in [0, {self.t_max}] seconds.")
        if self.digital.ndim != 3 or self.digital.shape[:2] != (self.frequencies.size, A):
            raise ValueError(
                f"Digital precoders must have shape (M={self.frequencies.size}, A={A}, K+1), "
                f"got {self.digital.shape}."
            )

    # ── Assembly ─────────────────────────────────────────────────────────────
    @property
    def phase_vectors(self) -> np.ndarray:
        """Unit-modulus f_{a,q} with shape (A, Q, L)."""
        return np.exp(1j * self.phases)

    def _place(self, blocks: np.ndarray) -> np.ndarray:
        """
        Scatter per-group vectors blocks[..., a, q, :] onto the antenna rows of column a.
        Leading axes are kept; returns shape (..., N, A).
        """
        A, Q, L = self.phases.shape
        lead = blocks.shape[:-3]
        if self.architecture is Architecture.FULLY_CONNECTED:
            # (..., a, q, i) → (..., q, i, a)
            return np.moveaxis(blocks, -3, -1).reshape(*lead, self.num_antennas, A)
        out = np.zeros((*lead, A, Q, L, A), dtype=complex)
        idx = np.arange(A)
        out[..., idx, :, :, idx] = np.moveaxis(blocks, -3, 0)
        return out.reshape(*lead, self.num_antennas, A)

    def analog_response(self) -> np.ndarray:
        """F·T_m for every subcarrier, shape (M, N, A)."""
        blocks = self.phase_vectors[None] * delay_phasors(self.delays, self.frequencies)[..., None]
        return self._place(blocks)

    def analog_matrix(self) -> np.ndarray:
        """The frequency-flat N × AQ phase-shifter matrix F; column a·Q + q holds f_{a,q}."""
        A, Q, L = self.phases.shape
        F = np.zeros((self.num_antennas, A * Q), dtype=complex)
        vectors = self.phase_vectors
        for a in range(A):
            for q in range(Q):
                F[self.group_rows(a, q), a * Q + q] = vectors[a, q]
        return F

    def delay_matrix(self, m: int) -> np.ndarray:
        """T_m = blkdiag(t_{1,m}, …, t_{A,m}), shape AQ × A."""
        A, Q, _ = self.phases.shape
        phasors = delay_phasors(self.delays, self.frequencies[m:m + 1])[0]
        T = np.zeros((A * Q, A), dtype=complex)
        for a in range(A):
            T[a * Q:(a + 1) * Q, a] = phasors[a]
        return T

    def group_rows(self, a: int, q: int) -> slice:
        L = self.group_size
        start = q * L if self.architecture is Architecture.FULLY_CONNECTED else a * self.num_ttds * L + q * L
        return slice(start, start + L)

    def transmit_power(self) -> np.ndarray:
        """‖F T_m W_m‖²_F per subcarrier."""
        P = np.einsum("mna,mak->mnk", self.analog_response(), self.digital)
        return np.sum(np.abs(P) ** 2, axis=(1, 2))

    def copy(self, **changes) -> HybridBeamformer:
        base = dict(phases=self.phases.copy(), delays=self.delays.copy(), digital=self.digital.copy())
        base.update(changes)
        return replace(self, **base)
