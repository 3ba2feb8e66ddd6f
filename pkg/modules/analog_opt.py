"""
Analog block of the fully-connected architecture.

With P and W fixed, the phase shifters F and delays t are fitted to P through
an auxiliary G_m ≈ F T_m:

  minimize  Σ_m ‖P_m − G_m W_m‖²_F + (1/ρ̃)‖G_m − F T_m‖²_F

G has a closed form, F is a per-element phase alignment, and each delay is
picked by a grid search over S points in [0, t_max]. The outer loop shrinks ρ̃
until G and F T_m coincide.

The phase and delay updates only need the per-group coefficient vectors
g_{m,a,q} (the rows of G_m column a that group (a, q) feeds), so the same
helpers serve the sub-connected architecture with ψ in place of g.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from modules.beamformer import Architecture, HybridBeamformer, delay_phasors

logger = logging.getLogger(__name__)


# ─── Shared helpers ───────────────────────────────────────────────────────────

def group_coefficients(G: np.ndarray, num_ttds: int) -> np.ndarray:
    """Split fully-connected G (M, N, A) into g_{m,a,q}, shape (M, A, Q, L)."""
    M, N, A = G.shape
    return np.transpose(G.reshape(M, num_ttds, N // num_ttds, A), (0, 3, 1, 2))


def delay_grid(t_max: float, search_points: int) -> np.ndarray:
    if search_points < 2:
        raise ValueError(f"Delay search needs at least 2 grid points, got {search_points}.")
    return np.linspace(0.0, t_max, search_points)


def align_phases(coeffs: np.ndarray, delays: np.ndarray, freqs: np.ndarray,
                 previous: Optional[np.ndarray] = None) -> np.ndarray:
    """
    f*_{a,q,i} = ∠(Σ_m coeff_{m,a,q,i} e^{j2πf_m t_{a,q}}), the maximizer of
    Σ_m Re(coeff^H f e^{−j2πf_m t}) over unit-modulus f.

    Entries whose accumulated coefficient is zero keep their previous phase (0 if none).
    """
    acc = np.einsum("maqi,maq->aqi", coeffs, delay_phasors(delays, freqs).conj())
    phases = np.angle(acc)
    zero = np.abs(acc) <= np.finfo(float).tiny
    if np.any(zero):
        phases[zero] = previous[zero] if previous is not None else 0.0
    return phases


def correlation(coeffs: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """c_{m,a,q} = coeff_{m,a,q}^H f_{a,q}, shape (M, A, Q)."""
    return np.einsum("maqi,aqi->maq", coeffs.conj(), np.exp(1j * phases))


def fit_value(coeffs: np.ndarray, phases: np.ndarray, delays: np.ndarray, freqs: np.ndarray) -> float:
    """Σ_{m,a,q} Re(coeff^H f e^{−j2πf_m t}) – the part of the objective the analog block controls."""
    return float(np.sum((correlation(coeffs, phases) * delay_phasors(delays, freqs)).real))


def search_delays(coeffs: np.ndarray, phases: np.ndarray, freqs: np.ndarray, t_max: float,
                  search_points: int) -> np.ndarray:
    """Per (a, q), the grid delay maximizing Σ_m Re(c_m e^{−j2πf_m t}); ties go to the smallest t."""
    grid = delay_grid(t_max, search_points)
    c = correlation(coeffs, phases)                                     # (M, A, Q)
    kernel = np.exp(-2j * np.pi * np.outer(grid, freqs))                # (S, M)
    values = np.einsum("sm,maq->saq", kernel, c).real
    return grid[np.argmax(values, axis=0)]


# ─── Closed-form updates ──────────────────────────────────────────────────────

def update_G(P: np.ndarray, W: np.ndarray, FT: np.ndarray, rho_tilde: float) -> np.ndarray:
    """G_m = (P_m W_m^H + (1/ρ̃) F T_m)(W_m W_m^H + (1/ρ̃) I)^{−1}."""
    if rho_tilde <= 0:
        raise ValueError(f"rho_tilde must be positive, got {rho_tilde}.")
    A = W.shape[1]
    gram = W @ np.conj(np.transpose(W, (0, 2, 1))) + np.eye(A) / rho_tilde         # (M, A, A), Hermitian PD
    rhs = P @ np.conj(np.transpose(W, (0, 2, 1))) + FT / rho_tilde                   # (M, N, A)
    # G gram = rhs  ⇔  gram^H G^H = rhs^H; gram is Hermitian
    return np.conj(np.transpose(np.linalg.solve(gram, np.conj(np.transpose(rhs, (0, 2, 1)))), (0, 2, 1)))


def update_F(G: np.ndarray, delays: np.ndarray, freqs: np.ndarray,
             previous: Optional[np.ndarray] = None) -> np.ndarray:
    """Phase update for fully-connected G (M, N, A); returns phases (A, Q, L)."""
    return align_phases(group_coefficients(G, delays.shape[1]), delays, freqs, previous)


def update_T(G: np.ndarray, phases: np.ndarray, freqs: np.ndarray, t_max: float, search_points: int) -> np.ndarray:
    return search_delays(group_coefficients(G, phases.shape[1]), phases, freqs, t_max, search_points)


def analog_objective(P: np.ndarray, G: np.ndarray, W: np.ndarray, FT: np.ndarray, rho_tilde: float) -> float:
    """Σ_m ‖P_m − G_m W_m‖² + (1/ρ̃)‖G_m − F T_m‖²."""
    fit = np.sum(np.abs(P - G @ W) ** 2)
    return float(fit + np.sum(np.abs(G - FT) ** 2) / rho_tilde)


# ─── Algorithm 2 ──────────────────────────────────────────────────────────────

@dataclass
class AnalogAuxiliary:
    """Auxiliary G_m ≈ F T_m, shape (M, N, A), and its penalty ρ̃."""
    G: np.ndarray
    rho_tilde: float

    def __post_init__(self) -> None:
        if self.rho_tilde <= 0:
            raise ValueError(f"rho_tilde must be positive, got {self.rho_tilde}.")
        if not np.all(np.isfinite(self.G)):
            raise ValueError("G has non-finite entries.")


@dataclass
class AnalogResult:
    beam: HybridBeamformer
    auxiliary: AnalogAuxiliary
    objectives: List[List[float]] = field(default_factory=list)   # one trace per outer iteration
    outer_iterations: int = 0
    converged: bool = False


def algorithm2(P: np.ndarray, beam: HybridBeamformer, *, rho_tilde: float, alpha: float, xi: float,
               search_points: int, penalty_tol: float = 1e-6, inner_max: int = 100, outer_max: int = 30,
               update_delays: bool = True) -> AnalogResult:
    """
    Alternate update_G → update_F → update_T until the objective drops by less
    than xi (relative), then shrink ρ̃ ← αρ̃ until Σ‖G − FT‖² < penalty_tol·Σ‖G‖².
    update_delays=False keeps every delay pinned (phase-shifter-only hardware).
    """
    if beam.architecture is not Architecture.FULLY_CONNECTED:
        raise ValueError("algorithm2 handles the fully-connected architecture only.")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}.")

    freqs = beam.frequencies
    W = beam.digital
    phases, delays = beam.phases.copy(), beam.delays.copy()
    current = beam.copy(phases=phases, delays=delays)
    FT = current.analog_response()
    G = FT.copy()
    result = AnalogResult(beam=current, auxiliary=AnalogAuxiliary(G, rho_tilde))

    for outer in range(1, outer_max + 1):
        prev = analog_objective(P, G, W, FT, rho_tilde)
        trace = [prev]
        result.objectives.append(trace)
        for inner in range(inner_max):
            G = update_G(P, W, FT, rho_tilde)
            phases = update_F(G, delays, freqs, previous=phases)
            if update_delays:
                delays = update_T(G, phases, freqs, beam.t_max, search_points)
            FT = beam.copy(phases=phases, delays=delays).analog_response()
            value = analog_objective(P, G, W, FT, rho_tilde)
            trace.append(value)
            decrement = prev - value
            prev = value
            if decrement < xi * max(abs(value), np.finfo(float).tiny):
                break
        else:
            logger.warning("Algorithm 2 inner loop hit its cap of %d iterations.", inner_max)

        gap = float(np.sum(np.abs(G - FT) ** 2))
        scale = float(np.sum(np.abs(G) ** 2))
        result.outer_iterations = outer
        logger.debug("Algorithm 2 outer %d: rho_tilde=%.3e gap=%.3e", outer, rho_tilde, gap)
        if gap < penalty_tol * scale:
            result.converged = True
            break
        rho_tilde *= alpha
    else:
        logger.warning("Algorithm 2 stopped at its outer cap (rho_tilde=%.3e).", rho_tilde)

    result.beam = beam.copy(phases=phases, delays=delays)
    result.auxiliary = AnalogAuxiliary(G, rho_tilde)
    return result
