"""
RSMA rates – received powers, SINRs and rates of the common and private
streams, plus the common-rate split that maximizes the minimum user rate.

Receiver k first decodes the common stream treating every private stream as
noise, removes it, then decodes its own private stream:

  S^c = |h^H p_0|²   I^c = S^p + I^p
  S^p = |h^H p_k|²   I^p = Σ_{j≥1, j≠k} |h^H p_j|² + σ²

Rates are in bits/s/Hz (base-2 logarithms). All per-user arrays have shape (K, M).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from modules.beamformer import HybridBeamformer
from modules.channel_model import ChannelSet
from modules.exceptions import InfeasibleAllocationError
from modules.interior_point import QCQP, solve_qcqp

logger = logging.getLogger(__name__)

CAP_EPS = 1e-12


# ─── Domain types ─────────────────────────────────────────────────────────────

@dataclass
class DigitalEquivalent:
    """Fully-digital precoders P_m, shape (M, N, K+1); column 0 is the common stream."""

    precoders: np.ndarray

    def __post_init__(self) -> None:
        self.precoders = np.asarray(self.precoders, dtype=complex)
        if self.precoders.ndim != 3 or self.precoders.shape[2] < 2:
            raise ValueError(f"Precoders must have shape (M, N, K+1) with K >= 1, got {self.precoders.shape}.")
        if not np.all(np.isfinite(self.precoders)):
            raise ValueError("Precoder entries must be finite.")

    @property
    def num_users(self) -> int:
        return self.precoders.shape[2] - 1

    def power(self) -> np.ndarray:
        """‖P_m‖²_F per subcarrier."""
        return np.sum(np.abs(self.precoders) ** 2, axis=(1, 2))


@dataclass
class RateAllocation:
    common: np.ndarray        # C, (K, M)
    min_rate: float           # R_r
    certified: bool = True

    def __post_init__(self) -> None:
        self.common = np.asarray(self.common, dtype=float)
        if np.any(self.common < 0):
            raise ValueError("Common-rate allocations must be non-negative.")


@dataclass
class RateReport:
    signal_common: np.ndarray
    interference_common: np.ndarray
    signal_private: np.ndarray
    interference_private: np.ndarray
    noise: np.ndarray
    sinr_common: Optional[np.ndarray] = None
    sinr_private: Optional[np.ndarray] = None
    rate_common: Optional[np.ndarray] = None
    rate_private: Optional[np.ndarray] = None
    allocation: Optional[RateAllocation] = None

    @property
    def total_common(self) -> np.ndarray:
        """T^c = S^c + I^c."""
        return self.signal_common + self.interference_common

    @property
    def common_cap(self) -> np.ndarray:
        """R^c_m = min_k R^c_{k,m}."""
        self._require_rates()
        return self.rate_common.min(axis=0)

    @property
    def user_rates(self) -> np.ndarray:
        """R_k = Σ_m (C_{k,m} + R^p_{k,m}); C counts as zero until an allocation is attached."""
        self._require_rates()
        common = self.allocation.common if self.allocation is not None else 0.0
        return np.sum(common + self.rate_private, axis=1)

    @property
    def min_rate(self) -> float:
        return float(self.user_rates.min())

    def with_allocation(self, alloc: RateAllocation) -> RateReport:
        return replace(self, allocation=alloc)

    def _require_rates(self) -> None:
        if self.rate_common is None or self.rate_private is None:
            raise ValueError("Rates not computed yet; call rates_from_powers first.")


# ─── Powers and rates ─────────────────────────────────────────────────────────

def noise_matrix(noise: Union[float, np.ndarray], num_users: int, num_subcarriers: int) -> np.ndarray:
    """Broadcast a scalar or per-(k,m) noise power to shape (K, M); rejects σ² <= 0."""
    sigma = np.broadcast_to(np.asarray(noise, dtype=float), (num_users, num_subcarriers)).copy()
    if np.any(sigma <= 0):
        raise ValueError("Noise power must be strictly positive.")
    return sigma


def effective_precoders(beam: HybridBeamformer) -> DigitalEquivalent:
    """P_m = F·T_m·W_m."""
    return DigitalEquivalent(np.einsum("mna,mak->mnk", beam.analog_response(), beam.digital))


def stream_gains(H: ChannelSet, P: DigitalEquivalent) -> np.ndarray:
    """a_{k,j,m} = h_{k,m}^H p_{j,m}, shape (K, K+1, M)."""
    if P.precoders.shape[:2] != H.channels.shape[:2] or P.num_users != H.num_users:
        raise ValueError(
            f"Precoder shape {P.precoders.shape} does not match channels {H.channels.shape}."
        )
    return np.einsum("mnk,mnj->kjm", H.channels.conj(), P.precoders)


def received_powers(H: ChannelSet, P: DigitalEquivalent, noise) -> RateReport:
    sigma = noise_matrix(noise, H.num_users, H.num_subcarriers)
    power = np.abs(stream_gains(H, P)) ** 2                         # (K, K+1, M)
    K = H.num_users
    own = power[np.arange(K), np.arange(1, K + 1), :]                # |h_k^H p_k|²
    interference_private = power[:, 1:, :].sum(axis=1) - own + sigma
    return RateReport(
        signal_common=power[:, 0, :],
        interference_common=own + interference_private,
        signal_private=own,
        interference_private=interference_private,
        noise=sigma,
    )


def rates_from_powers(report: RateReport) -> RateReport:
    sinr_c = report.signal_common / report.interference_common
    sinr_p = report.signal_private / report.interference_private
    return replace(
        report,
        sinr_common=sinr_c,
        sinr_private=sinr_p,
        rate_common=np.log2(1 + sinr_c),
        rate_private=np.log2(1 + sinr_p),
    )


def rate_report(H: ChannelSet, P: DigitalEquivalent, noise) -> RateReport:
    return rates_from_powers(received_powers(H, P, noise))


# ─── Common-rate allocation ───────────────────────────────────────────────────

def allocate_common_rates(caps: np.ndarray, private: np.ndarray, *, tol: float = 1e-7) -> RateAllocation:
    """
    Split each subcarrier's common rate among users to maximize min_k Σ_m (C_{k,m} + R^p_{k,m}).

    Solved as the LP  max R  s.t.  R <= Σ_m (C_{k,m} + R^p_{k,m}),  Σ_k C_{k,m} <= cap_m,  C >= 0
    by the interior-point core, started from the equal split.
    """
    caps = np.asarray(caps, dtype=float)
    private = np.asarray(private, dtype=float)
    K, M = private.shape
    if caps.shape != (M,):
        raise ValueError(f"Expected {M} common-rate caps, got shape {caps.shape}.")
    if np.any(caps < -CAP_EPS):
        raise ValueError("Common-rate caps must be non-negative.")
    caps = np.maximum(caps, 0.0)

    if K == 1:
        common = caps[None, :].copy()
        return RateAllocation(common, float(np.sum(common + private)))

    active = np.flatnonzero(caps > CAP_EPS)
    common = np.zeros((K, M))
    if active.size == 0:
        return RateAllocation(common, float(private.sum(axis=1).min()))

    # variables: C[:, active] flattened row-major, then R
    Ma = active.size
    n = K * Ma + 1
    base = private.sum(axis=1)
    rows = []
    rhs = []
    for k in range(K):                  # R − Σ_m C_{k,m} − Σ_m R^p_{k,m} <= 0
        row = np.zeros(n)
        row[k * Ma:(k + 1) * Ma] = -1.0
        row[-1] = 1.0
        rows.append(row)
        rhs.append(-base[k])
    for i, m in enumerate(active):      # Σ_k C_{k,m} − cap_m <= 0
        row = np.zeros(n)
        row[i:K * Ma:Ma] = 1.0
        rows.append(row)
        rhs.append(-caps[m])
    for v in range(K * Ma):             # −C <= 0
        row = np.zeros(n)
        row[v] = -1.0
        rows.append(row)
        rhs.append(0.0)

    objective = np.zeros(n)
    objective[-1] = -1.0
    problem = QCQP(
        objective_linear=objective,
        constraint_linear=sp.csr_matrix(np.array(rows)),
        constraint_constant=np.array(rhs),
    )
    start = np.zeros(n)
    start[:-1] = np.repeat(caps[active][None, :] / K, K, axis=0).ravel()
    start[-1] = float((base + caps[active].sum() / K).min())

    result = solve_qcqp(problem, start, tol=tol)
    common[:, active] = np.clip(result.x[:-1].reshape(K, Ma), 0.0, None)

    # Shave rounding excess so Σ_k C_{k,m} <= cap_m holds exactly.
    totals = common.sum(axis=0)
    over = totals > caps
    common[:, over] *= caps[over] / totals[over]

    min_rate = float((common + private).sum(axis=1).min())
    if not result.certificate.certified:
        logger.warning("Common-rate LP not certified: %s", result.certificate)
    return RateAllocation(common, min_rate, result.certificate.certified)


def evaluate_max_min(H: ChannelSet, precoders: Union[HybridBeamformer, DigitalEquivalent],
                     alloc: RateAllocation, noise, *, slack: float = 1e-9) -> float:
    """True-rate min_k R_k; raises InfeasibleAllocationError if alloc exceeds the caps."""
    P = effective_precoders(precoders) if isinstance(precoders, HybridBeamformer) else precoders
    report = rate_report(H, P, noise)
    excess = alloc.common.sum(axis=0) - report.common_cap
    if np.any(excess > slack):
        m = int(np.argmax(excess))
        raise InfeasibleAllocationError(
            f"Common-rate allocation exceeds the cap on subcarrier {m} by {excess[m]:.3e} bits/s/Hz."
        )
    return report.with_allocation(alloc).min_rate


def sum_rate(report: RateReport) -> float:
    return float(report.user_rates.sum())
