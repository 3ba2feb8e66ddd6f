"""
Sub-connected architecture: RF chain a drives only sub-array a (Ñ = N/A rows).

Because F is block diagonal and every group has unit-modulus entries,

  Σ_m ‖P_m − F T_m W_m‖² = η̃ − 2 Σ_{m,a,q} Re(ψ_{m,a,q}^H f_{a,q} e^{−j2πf_m t_{a,q}})

with Ψ_{m,a} = P̃_{m,a} w̃_{m,a} (P̃ the sub-array rows of P_m, w̃ the conjugated
a-th row of W_m), ψ its per-group slices and η̃ = Σ (Ñ‖w̃‖² + ‖P̃‖²). Phases and
delays are then updated directly, without an auxiliary G.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from modules.analog_opt import align_phases, fit_value, search_delays
from modules.beamformer import Architecture, HybridBeamformer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubArrayMap:
    num_antennas: int
    num_rf_chains: int
    num_ttds: int

    def __post_init__(self) -> None:
        if self.num_antennas % self.num_rf_chains:
            raise ValueError(f"A={self.num_rf_chains} must divide N={self.num_antennas}.")
        if self.per_chain % self.num_ttds:
            raise ValueError(f"Q={self.num_ttds} must divide N/A={self.per_chain}.")

    @property
    def per_chain(self) -> int:
        """Ñ"""
        return self.num_antennas // self.num_rf_chains

    @property
    def group_size(self) -> int:
        return self.per_chain // self.num_ttds

    def rows(self, a: int, q: int) -> slice:
        start = a * self.per_chain + q * self.group_size
        return slice(start, start + self.group_size)

    @classmethod
    def of(cls, beam: HybridBeamformer) -> "SubArrayMap":
        return cls(beam.num_antennas, beam.num_rf_chains, beam.num_ttds)


def compute_psi(P: np.ndarray, W: np.ndarray, sub: SubArrayMap) -> np.ndarray:
    """ψ_{m,a,q}, shape (M, A, Q, Ñ/Q)."""
    M = P.shape[0]
    blocks = P.reshape(M, sub.num_rf_chains, sub.per_chain, P.shape[2])
    psi = np.einsum("mank,mak->man", blocks, W.conj())
    return psi.reshape(M, sub.num_rf_chains, sub.num_ttds, sub.group_size)


def eta(P: np.ndarray, W: np.ndarray, sub: SubArrayMap) -> float:
    return float(sub.per_chain * np.sum(np.abs(W) ** 2) + np.sum(np.abs(P) ** 2))


def decomposed_objective(P: np.ndarray, beam: HybridBeamformer, psi: np.ndarray = None) -> float:
    sub = SubArrayMap.of(beam)
    if psi is None:
        psi = compute_psi(P, beam.digital, sub)
    return eta(P, beam.digital, sub) - 2 * fit_value(psi, beam.phases, beam.delays, beam.frequencies)


def direct_objective(P: np.ndarray, beam: HybridBeamformer) -> float:
    """Σ_m ‖P_m − F T_m W_m‖²_F computed from the assembled beamformer."""
    FTW = np.einsum("mna,mak->mnk", beam.analog_response(), beam.digital)
    return float(np.sum(np.abs(P - FTW) ** 2))


def update_f_sub(psi: np.ndarray, delays: np.ndarray, freqs: np.ndarray, previous: np.ndarray = None) -> np.ndarray:
    return align_phases(psi, delays, freqs, previous)


def update_t_sub(psi: np.ndarray, phases: np.ndarray, freqs: np.ndarray, t_max: float,
                 search_points: int) -> np.ndarray:
    return search_delays(psi, phases, freqs, t_max, search_points)


@dataclass
class SubConnectedResult:
    beam: HybridBeamformer
    objectives: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def algorithm4_inner(P: np.ndarray, beam: HybridBeamformer, *, xi: float, search_points: int,
                     max_iter: int = 100, update_delays: bool = True) -> SubConnectedResult:
    """Alternate the phase and delay updates until the objective drops by less than xi (relative)."""
    if beam.architecture is not Architecture.SUB_CONNECTED:
        raise ValueError("algorithm4_inner needs a sub-connected beamformer.")
    sub = SubArrayMap.of(beam)
    psi = compute_psi(P, beam.digital, sub)
    base = eta(P, beam.digital, sub)
    freqs = beam.frequencies
    phases, delays = beam.phases.copy(), beam.delays.copy()

    prev = base - 2 * fit_value(psi, phases, delays, freqs)
    result = SubConnectedResult(beam=beam, objectives=[prev])
    for it in range(1, max_iter + 1):
        phases = update_f_sub(psi, delays, freqs, previous=phases)
        if update_delays:
            delays = update_t_sub(psi, phases, freqs, beam.t_max, search_points)
        value = base - 2 * fit_value(psi, phases, delays, freqs)
        result.objectives.append(value)
        result.iterations = it
        decrement = prev - value
        prev = value
        if decrement < xi * max(abs(value), np.finfo(float).tiny):
            result.converged = True
            break
    else:
        logger.warning("Sub-connected analog loop hit its cap of %d iterations.", max_iter)

    result.beam = beam.copy(phases=phases, delays=delays)
    return result
