"""
Baselines – the comparison schemes, all solved on the same channel draw.

  fhb   RSMA, fully-connected TTD hybrid beamfocusing
  shb   RSMA, sub-connected TTD hybrid beamfocusing
  ps    RSMA, phase shifters only (every delay pinned to 0)
  sdma  fully-connected hybrid, private streams only
  far   fully-connected hybrid designed on the far-field model
  fdb   full-digital RSMA precoding (upper bound)
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from modules.beamformer import Architecture
from modules.channel_model import FAR, NEAR, ChannelSet
from modules.hybrid_driver import DriverOptions, SolveResult, finalize_precoders, solve_hybrid
from modules.mm_subproblem import ConvexSolution, algorithm1
from modules.rsma_rates import DigitalEquivalent, allocate_common_rates, rate_report
from modules.scenario import ScenarioConfig

logger = logging.getLogger(__name__)

ARCHITECTURES = ("fdb", "fhb", "shb", "ps_only")
ACCESS_MODES = ("rsma", "sdma")


@dataclass(frozen=True)
class SchemeSpec:
    architecture: str = "fhb"
    access: str = "rsma"
    field: str = NEAR

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"Unknown architecture '{self.architecture}'; choose one of {ARCHITECTURES}.")
        if self.access not in ACCESS_MODES:
            raise ValueError(f"Unknown access mode '{self.access}'; choose one of {ACCESS_MODES}.")
        if self.field not in (NEAR, FAR):
            raise ValueError(f"field must be '{NEAR}' or '{FAR}', got '{self.field}'.")

    @property
    def rsma(self) -> bool:
        return self.access == "rsma"

    @property
    def driver_options(self) -> DriverOptions:
        arch = Architecture.SUB_CONNECTED if self.architecture == "shb" else Architecture.FULLY_CONNECTED
        return DriverOptions(arch, self.rsma, update_delays=self.architecture != "ps_only")

    @property
    def label(self) -> str:
        return "sub_connected" if self.architecture == "shb" else (
            "full_digital" if self.architecture == "fdb" else "fully_connected")


SCHEMES: Dict[str, SchemeSpec] = {
    "fhb": SchemeSpec("fhb", "rsma", NEAR),
    "shb": SchemeSpec("shb", "rsma", NEAR),
    "ps": SchemeSpec("ps_only", "rsma", NEAR),
    "sdma": SchemeSpec("fhb", "sdma", NEAR),
    "far": SchemeSpec("fhb", "rsma", FAR),
    "fdb": SchemeSpec("fdb", "rsma", NEAR),
}


# ─── Schemes ──────────────────────────────────────────────────────────────────

def matched_filter_precoders(H: ChannelSet, power_budget: float, *, rsma: bool = True) -> DigitalEquivalent:
    """Unit-norm matched filters per stream, scaled so that ‖P_m‖² = P_th."""
    M, N, K = H.channels.shape
    P = np.zeros((M, N, K + 1), dtype=complex)
    P[:, :, 1:] = H.channels / np.linalg.norm(H.channels, axis=1, keepdims=True)
    if rsma:
        common = H.channels.sum(axis=2)
        norms = np.linalg.norm(common, axis=1, keepdims=True)
        P[:, :, 0] = np.divide(common, norms, out=np.zeros_like(common), where=norms > 0)
    power = np.sum(np.abs(P) ** 2, axis=(1, 2))
    P *= np.sqrt(power_budget / power)[:, None, None]
    return DigitalEquivalent(P)


def _start_from(result: SolveResult, rsma: bool) -> DigitalEquivalent:
    P = result.precoders.precoders.copy()
    if not rsma:
        P[:, :, 0] = 0
    return DigitalEquivalent(P)


def solve_fdb(H: ChannelSet, cfg: ScenarioConfig, *, rsma: bool = True,
              warm_starts: Sequence[SolveResult] = ()) -> SolveResult:
    """
    Full-digital precoding: Algorithm 1 with no penalty term; P_m is the transmit precoder.

    MM runs from the matched filter and from every design in warm_starts (any
    hybrid precoder is a feasible full-digital one); the best scored run is kept.
    """
    noise, budget = cfg.noise_power_w, cfg.power_budget_w
    starts = [matched_filter_precoders(H, budget, rsma=rsma)]
    starts.extend(_start_from(r, rsma) for r in warm_starts)

    best: Optional[SolveResult] = None
    for run, start in enumerate(starts):
        report = rate_report(H, start, noise)
        caps = report.common_cap if rsma else np.zeros(H.num_subcarriers)
        alloc = allocate_common_rates(caps, report.rate_private, tol=cfg.solver_tol)
        mm = algorithm1(H, noise, ConvexSolution(start, alloc.common, alloc.min_rate),
                        power_budget=budget, rsma=rsma, xi=cfg.xi1, max_iter=cfg.mm_max_iter, tol=cfg.solver_tol)
        P, alloc, report = finalize_precoders(mm.solution.precoders, H, noise, budget, rsma=rsma,
                                              tol=cfg.solver_tol)
        result = SolveResult(P, alloc, report, certified=alloc.certified, diagnostics=mm.diagnostic_rows(run))
        if best is None or result.max_min_rate > best.max_min_rate:
            best = result
    if len(starts) > 1:
        logger.debug("Full-digital: best of %d starts, %.5f bits/s/Hz.", len(starts), best.max_min_rate)
    return best


def solve_ps_only(H: ChannelSet, cfg: ScenarioConfig, *, rng_seed: int = 0) -> SolveResult:
    return solve_hybrid(H, cfg, SCHEMES["ps"].driver_options, rng_seed=rng_seed)


def solve_sdma(H: ChannelSet, cfg: ScenarioConfig, *, rng_seed: int = 0,
               architecture: Architecture = Architecture.FULLY_CONNECTED) -> SolveResult:
    return solve_hybrid(H, cfg, DriverOptions(architecture, rsma=False), rng_seed=rng_seed)


def solve_far(H_far: ChannelSet, cfg: ScenarioConfig, *, rng_seed: int = 0,
              H_near: Optional[ChannelSet] = None) -> SolveResult:
    """Design on the far-field model; score on H_near when given, otherwise on the far model itself."""
    if H_far.field != FAR:
        raise ValueError("solve_far expects channels generated in far-field mode.")
    return solve_hybrid(H_far, cfg, SCHEMES["far"].driver_options, rng_seed=rng_seed, score_channels=H_near)


def solve_scheme(spec: SchemeSpec, cfg: ScenarioConfig, H_near: ChannelSet, H_far: Optional[ChannelSet] = None,
                 *, rng_seed: int = 0, far_scoring: str = NEAR,
                 warm_starts: Sequence[SolveResult] = ()) -> SolveResult:
    """
    Dispatch one SchemeSpec; far designs need H_far and are scored per far_scoring.
    warm_starts (designs already solved on H_near) only feed the near-field full-digital scheme.
    """
    if spec.field == FAR:
        if H_far is None:
            raise ValueError("A far-field scheme needs far-field channels.")
        if spec.architecture == "fdb":
            result = solve_fdb(H_far, cfg, rsma=spec.rsma)
            if far_scoring == NEAR:
                P, alloc, report = finalize_precoders(result.precoders, H_near, cfg.noise_power_w,
                                                      cfg.power_budget_w, rsma=spec.rsma, tol=cfg.solver_tol)
                result = SolveResult(P, alloc, report, certified=result.certified and alloc.certified,
                                     diagnostics=result.diagnostics)
            return result
        return solve_hybrid(H_far, cfg, spec.driver_options, rng_seed=rng_seed,
                            score_channels=H_near if far_scoring == NEAR else None)
    if spec.architecture == "fdb":
        return solve_fdb(H_near, cfg, rsma=spec.rsma, warm_starts=warm_starts)
    return solve_hybrid(H_near, cfg, spec.driver_options, rng_seed=rng_seed)
