"""
Hybrid driver – penalty-based block coordinate descent over (P, C, R_r), the
analog beamformer (F, t) and the digital precoders W.

  inner loop : MM on P → analog fit of F, t to P → least-squares W
               until R_r − (1/ρ)Σ‖P − FTW‖² moves by less than ξ3
  outer loop : ρ ← αρ until Σ‖P − FTW‖² < violation_tol·Σ‖P‖²

The reported rates always come from the physical hybrid beamformer, scaled
back onto the power budget, never from the auxiliary P.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from modules.analog_opt import algorithm2, delay_grid
from modules.beamformer import Architecture, HybridBeamformer, group_length
from modules.channel_model import ChannelSet
from modules.mm_subproblem import ConvexSolution, algorithm1, problem_size
from modules.persistence import write_csv_atomic
from modules.rsma_rates import (
    DigitalEquivalent,
    RateAllocation,
    RateReport,
    allocate_common_rates,
    effective_precoders,
    rate_report,
    sum_rate,
)
from modules.scenario import ScenarioConfig
from modules.subconnected_opt import algorithm4_inner

logger = logging.getLogger(__name__)

COND_LIMIT = 1e12
RIDGE = 1e-10

TRACE_HEADER = ["outer_iter", "rho", "violation", "R_r", "wall_ms"]


# ─── State / results ──────────────────────────────────────────────────────────

@dataclass
class PenaltyState:
    rho: float
    alpha: float
    rho_history: List[float] = field(default_factory=list)
    violation_history: List[float] = field(default_factory=list)
    objective_history: List[float] = field(default_factory=list)
    wall_ms: List[float] = field(default_factory=list)
    outer_iter: int = 0

    def record(self, violation: float, min_rate: float, wall_ms: float) -> None:
        self.outer_iter += 1
        self.rho_history.append(self.rho)
        self.violation_history.append(violation)
        self.objective_history.append(min_rate)
        self.wall_ms.append(wall_ms)

    def shrink(self) -> None:
        self.rho *= self.alpha

    def trace_rows(self, timing: bool = True) -> List[Tuple]:
        return [
            (i + 1, rho, viol, rate, ms if timing else 0)
            for i, (rho, viol, rate, ms) in enumerate(
                zip(self.rho_history, self.violation_history, self.objective_history, self.wall_ms))
        ]


@dataclass
class SolveResult:
    precoders: DigitalEquivalent            # what is transmitted
    alloc: RateAllocation
    report: RateReport
    beam: Optional[HybridBeamformer] = None  # None for full-digital
    penalty_state: Optional[PenaltyState] = None
    certified: bool = True
    diagnostics: List[Tuple] = field(default_factory=list)   # MM rows, see mm_subproblem.DIAGNOSTICS_HEADER

    @property
    def max_min_rate(self) -> float:
        return self.report.min_rate

    @property
    def sum_rate(self) -> float:
        return sum_rate(self.report)

    @property
    def violation(self) -> float:
        if self.penalty_state is None or not self.penalty_state.violation_history:
            return 0.0
        return self.penalty_state.violation_history[-1]

    @property
    def outer_iters(self) -> int:
        return 0 if self.penalty_state is None else self.penalty_state.outer_iter


@dataclass(frozen=True)
class DriverOptions:
    architecture: Architecture = Architecture.FULLY_CONNECTED
    rsma: bool = True
    update_delays: bool = True


# ─── Digital update ───────────────────────────────────────────────────────────

def update_W(P: np.ndarray, beam: HybridBeamformer) -> Tuple[np.ndarray, bool]:
    """
    W_m = (T_m^H F^H F T_m)^{−1} T_m^H F^H P_m. Returns (W, ridged); a ridge of
    1e−10·trace/A is added when the Gram matrix is too ill-conditioned.
    """
    FT = beam.analog_response()
    FT_h = np.conj(np.transpose(FT, (0, 2, 1)))
    gram = FT_h @ FT
    rhs = FT_h @ P
    A = gram.shape[1]
    W = np.empty_like(rhs)
    ridged = False
    for m in range(gram.shape[0]):
        g = gram[m]
        if np.linalg.cond(g) > COND_LIMIT:
            g = g + RIDGE * np.trace(g).real / A * np.eye(A)
            ridged = True
        W[m] = scipy.linalg.solve(g, rhs[m], assume_a="her")
    if ridged:
        logger.warning("update_W: ill-conditioned analog Gram matrix, ridge added.")
    return W, ridged


def penalty_violation(P: np.ndarray, beam: HybridBeamformer) -> float:
    FTW = np.einsum("mna,mak->mnk", beam.analog_response(), beam.digital)
    return float(np.sum(np.abs(P - FTW) ** 2))


# ─── Initialization ───────────────────────────────────────────────────────────

def initialize_beamformer(H: ChannelSet, cfg: ScenarioConfig, options: DriverOptions,
                          rng: np.random.Generator) -> HybridBeamformer:
    """
    Random phases, grid-aligned random delays (zero when delays are pinned),
    and a matched-filter W power-normalized so that ‖F T_m W_m‖² = P_th.
    The common column steers towards Σ_k h_k (zero without rate splitting).
    """
    A, Q, N = cfg.num_rf_chains, cfg.num_ttds, cfg.num_antennas
    L = group_length(options.architecture, N, A, Q)
    t_max = cfg.effective_t_max
    phases = rng.uniform(0, 2 * np.pi, size=(A, Q, L))
    if options.update_delays:
        delays = delay_grid(t_max, cfg.search_points)[rng.integers(0, cfg.search_points, size=(A, Q))]
    else:
        delays = np.zeros((A, Q))

    K, M = H.num_users, H.num_subcarriers
    beam = HybridBeamformer(options.architecture, N, phases, delays,
                            np.zeros((M, A, K + 1), dtype=complex), H.frequencies, t_max)
    FT = beam.analog_response()
    FT_h = np.conj(np.transpose(FT, (0, 2, 1)))
    W = np.zeros((M, A, K + 1), dtype=complex)
    W[:, :, 1:] = FT_h @ H.channels
    if options.rsma:
        W[:, :, 0] = np.einsum("man,mn->ma", FT_h, H.channels.sum(axis=2))

    budget = cfg.power_budget_w
    column_norms = np.linalg.norm(np.einsum("mna,mak->mnk", FT, W), axis=1)        # (M, K+1)
    W = np.divide(W, column_norms[:, None, :], out=np.zeros_like(W), where=column_norms[:, None, :] > 0)
    power = np.sum(np.abs(np.einsum("mna,mak->mnk", FT, W)) ** 2, axis=(1, 2))
    gain = np.divide(budget, power, out=np.zeros_like(power), where=power > 0)
    W *= np.sqrt(gain)[:, None, None]
    return beam.copy(digital=W)


# ─── Finalization ─────────────────────────────────────────────────────────────

def finalize_precoders(P: DigitalEquivalent, H: ChannelSet, noise, power_budget: float, *,
                       rsma: bool = True, tol: float = 1e-7) -> Tuple[DigitalEquivalent, RateAllocation, RateReport]:
    """Scale each subcarrier onto the budget, compute true rates and re-split the common rate."""
    power = P.power()
    scale = np.ones_like(power)
    over = power > power_budget
    scale[over] = np.sqrt(power_budget / power[over])
    P = DigitalEquivalent(P.precoders * scale[:, None, None])
    report = rate_report(H, P, noise)
    caps = report.common_cap if rsma else np.zeros(H.num_subcarriers)
    alloc = allocate_common_rates(caps, report.rate_private, tol=tol)
    return P, alloc, report.with_allocation(alloc)


def project_and_finalize(beam: HybridBeamformer, H: ChannelSet, noise, power_budget: float, *,
                         rsma: bool = True, penalty_state: Optional[PenaltyState] = None,
                         certified: bool = True, tol: float = 1e-7) -> SolveResult:
    """Scale W_m by √(P_th/‖F T_m W_m‖²) where the budget is exceeded, then score with true rates."""
    power = beam.transmit_power()
    scale = np.ones_like(power)
    over = power > power_budget
    scale[over] = np.sqrt(power_budget / power[over])
    beam = beam.copy(digital=beam.digital * scale[:, None, None])
    P, alloc, report = finalize_precoders(effective_precoders(beam), H, noise, power_budget, rsma=rsma, tol=tol)
    return SolveResult(P, alloc, report, beam, penalty_state, certified and alloc.certified)


# ─── Algorithm 3 ──────────────────────────────────────────────────────────────

def algorithm3(H: ChannelSet, cfg: ScenarioConfig, options: DriverOptions = DriverOptions(), *,
               init: Optional[HybridBeamformer] = None, rng_seed: int = 0,
               score_channels: Optional[ChannelSet] = None) -> SolveResult:
    """
    Penalty-based BCD. score_channels, when given, replaces H for the final
    rate evaluation (used to score a far-field design on near-field truth).
    """
    cfg.validate(sub_connected=options.architecture is Architecture.SUB_CONNECTED)
    noise = cfg.noise_power_w
    budget = cfg.power_budget_w
    tol = cfg.solver_tol
    beam = init if init is not None else initialize_beamformer(H, cfg, options, np.random.default_rng(rng_seed))
    logger.info("Algorithm 3: %s, %s, %d variables.", options.architecture.value,
                "rsma" if options.rsma else "sdma",
                problem_size(H.num_antennas, H.num_users, H.num_subcarriers))

    P0 = effective_precoders(beam)
    report = rate_report(H, P0, noise)
    caps = report.common_cap if options.rsma else np.zeros(H.num_subcarriers)
    alloc = allocate_common_rates(caps, report.rate_private, tol=tol)
    current = ConvexSolution(P0, alloc.common, alloc.min_rate)

    state = PenaltyState(cfg.rho, cfg.alpha)
    diagnostics: List[Tuple] = []
    mm_runs = uncertified = 0
    closed = False
    for outer in range(1, cfg.outer_max + 1):
        started = time.perf_counter()
        previous = None
        violation = 0.0
        for inner in range(cfg.bcd_max_iter):
            target = effective_precoders(beam).precoders
            mm = algorithm1(H, noise, current, power_budget=budget, penalty_weight=1 / state.rho,
                            target=target, rsma=options.rsma, xi=cfg.xi1, max_iter=cfg.mm_max_iter, tol=tol)
            diagnostics.extend(mm.diagnostic_rows(mm_runs))
            mm_runs += 1
            uncertified += not mm.certified
            current = mm.solution
            P = current.precoders.precoders

            if options.architecture is Architecture.FULLY_CONNECTED:
                beam = algorithm2(P, beam, rho_tilde=cfg.rho_tilde, alpha=cfg.alpha, xi=cfg.xi2,
                                  search_points=cfg.search_points, penalty_tol=cfg.penalty_tol,
                                  inner_max=cfg.analog_inner_max, outer_max=cfg.analog_outer_max,
                                  update_delays=options.update_delays).beam
            else:
                beam = algorithm4_inner(P, beam, xi=cfg.xi4, search_points=cfg.search_points,
                                        max_iter=cfg.analog_inner_max,
                                        update_delays=options.update_delays).beam
            W, _ = update_W(P, beam)
            beam = beam.copy(digital=W)

            violation = penalty_violation(P, beam)
            objective = current.min_rate - violation / state.rho
            logger.debug("BCD outer %d inner %d: R_r=%.5f violation=%.3e", outer, inner + 1,
                         current.min_rate, violation)
            if previous is not None and abs(objective - previous) < cfg.xi3:
                break
            previous = objective
        else:
            logger.warning("BCD inner loop hit its cap of %d iterations (rho=%.3e).", cfg.bcd_max_iter, state.rho)

        state.record(violation, current.min_rate, (time.perf_counter() - started) * 1000)
        logger.info("Outer %d: rho=%.3e violation=%.3e R_r=%.5f", outer, state.rho, violation, current.min_rate)
        if violation < cfg.violation_tol * float(np.sum(np.abs(current.precoders.precoders) ** 2)):
            closed = True
            break
        state.shrink()

    if uncertified:
        logger.info("%d of %d MM runs had a non-certified convex step.", uncertified, mm_runs)
    if not closed:
        logger.warning("Penalty did not close within %d outer iterations; result not certified.", cfg.outer_max)
    result = project_and_finalize(beam, score_channels or H, noise, budget, rsma=options.rsma,
                                  penalty_state=state, certified=closed, tol=tol)
    result.diagnostics = diagnostics
    return result


def solve_hybrid(H: ChannelSet, cfg: ScenarioConfig, options: DriverOptions = DriverOptions(), *,
                 rng_seed: int = 0, score_channels: Optional[ChannelSet] = None) -> SolveResult:
    """
    algorithm3 for one scheme. With rate splitting, the private-only design
    (common stream off, same seed) is solved too and the better scored one is
    returned, re-scored with rate splitting; the result is never below the
    private-only scheme on the same draw.
    """
    result = algorithm3(H, cfg, options, rng_seed=rng_seed, score_channels=score_channels)
    if not options.rsma:
        return result
    private = algorithm3(H, cfg, replace(options, rsma=False), rng_seed=rng_seed, score_channels=score_channels)
    if private.max_min_rate <= result.max_min_rate:
        return result
    logger.info("Private-only design wins on this draw (%.5f > %.5f).", private.max_min_rate, result.max_min_rate)
    kept = project_and_finalize(private.beam, score_channels or H, cfg.noise_power_w, cfg.power_budget_w,
                                penalty_state=private.penalty_state, certified=private.certified,
                                tol=cfg.solver_tol)
    kept.diagnostics = private.diagnostics
    return kept


def write_trace(state: PenaltyState, path: str | Path, *, timing: bool = True) -> Path:
    return write_csv_atomic(path, TRACE_HEADER, state.trace_rows(timing))
