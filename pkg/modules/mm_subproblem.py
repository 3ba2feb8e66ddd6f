"""
MM subproblem – concave quadratic minorizers of the RSMA rates and the
convex problem solved at every minorization-maximization step.

For stream τ of user k on subcarrier m, expanded at P̃:

  f^τ(P) = x^τ Σ_{j∈J_τ} |h^H p_j|² + 2 Re(y^τ p_τ) + z^τ  <=  log2(1 + γ^τ(P))

with J_c = {0..K}, J_p = {1..K}, p_c = p_0, p_p = p_k, and

  ũ = h^H p̃_τ / T̃,   ṽ = Ĩ / T̃ ∈ (0, 1]
  x = −|ũ|² / (ṽ ln2)         (X = x·h h^H is rank one and NSD)
  y = ũ* h^H / (ṽ ln2)
  z = −(σ²|ũ|² + 1)/(ṽ ln2) + 1/ln2 − log2 ṽ

Equality holds at P = P̃. The convex problem maximizes
R_r − (1/ρ)Σ_m ‖P_m − B_m‖² (B_m = F T_m W_m) subject to the common-rate caps,
the per-user rate floor R_r and the per-subcarrier power budget.

Each p_{j,m} is solved for in the span of {h_{1,m} … h_{K,m}, b_{j,m}}: the
surrogates only see h^H p, and a component outside the span only adds to both
‖P_m‖² and ‖P_m − B_m‖². Complex coordinates are stacked as [Re; Im].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import orth

from modules.channel_model import ChannelSet
from modules.interior_point import QCQP, Certificate, solve_qcqp
from modules.persistence import write_csv_atomic
from modules.rsma_rates import DigitalEquivalent, noise_matrix, rate_report, stream_gains

logger = logging.getLogger(__name__)

LN2 = math.log(2)
COMMON, PRIVATE = 0, 1

DIAGNOSTICS_HEADER = ["mm_run", "iteration", "objective", "primal", "dual", "complementarity"]


# ─── Surrogate coefficients ───────────────────────────────────────────────────

@dataclass
class Auxiliaries:
    u: np.ndarray       # (K, M, 2) complex, [..., COMMON] / [..., PRIVATE]
    v: np.ndarray       # (K, M, 2) real in (0, 1]


@dataclass
class SurrogateCoeffs:
    x: np.ndarray       # (K, M, 2) real, <= 0
    y: np.ndarray       # (K, M, 2, N) complex row vectors
    z: np.ndarray       # (K, M, 2) real
    aux: Auxiliaries
    channels: ChannelSet

    def matrix(self, k: int, m: int, tau: int) -> np.ndarray:
        """X^τ_{k,m} = x·h h^H."""
        h = self.channels.column(k, m)
        return self.x[k, m, tau] * np.outer(h, h.conj())


def compute_auxiliaries(H: ChannelSet, P: DigitalEquivalent, noise) -> Auxiliaries:
    sigma = noise_matrix(noise, H.num_users, H.num_subcarriers)
    K = H.num_users
    gains = stream_gains(H, P)                               # (K, K+1, M)
    power = np.abs(gains) ** 2
    own = power[np.arange(K), np.arange(1, K + 1), :]
    own_gain = gains[np.arange(K), np.arange(1, K + 1), :]

    interference_p = power[:, 1:, :].sum(axis=1) - own + sigma   # Ĩ^p
    total_p = interference_p + own                               # T̃^p = Ĩ^c
    total_c = total_p + power[:, 0, :]                           # T̃^c

    u = np.stack([gains[:, 0, :] / total_c, own_gain / total_p], axis=-1)
    v = np.stack([total_p / total_c, interference_p / total_p], axis=-1)
    return Auxiliaries(u=u, v=v)


def build_surrogates(H: ChannelSet, aux: Auxiliaries, noise) -> SurrogateCoeffs:
    sigma = noise_matrix(noise, H.num_users, H.num_subcarriers)[..., None]
    u, v = aux.u, aux.v
    x = -np.abs(u) ** 2 / (v * LN2)
    z = -(sigma * np.abs(u) ** 2 + 1) / (v * LN2) + 1 / LN2 - np.log2(v)
    h_conj = np.transpose(H.channels.conj(), (2, 0, 1))         # (K, M, N): h^H as rows
    y = (u.conj() / (v * LN2))[..., None] * h_conj[:, :, None, :]
    return SurrogateCoeffs(x=x, y=y, z=z, aux=aux, channels=H)


def surrogate_values(coeffs: SurrogateCoeffs, P: DigitalEquivalent) -> np.ndarray:
    """f^τ_{k,m}(P), shape (K, M, 2)."""
    H = coeffs.channels
    K = H.num_users
    power = np.abs(stream_gains(H, P)) ** 2
    linear_c = np.einsum("kmn,mn->km", coeffs.y[:, :, COMMON, :], P.precoders[:, :, 0])
    linear_p = np.einsum("kmn,mnk->km", coeffs.y[:, :, PRIVATE, :], P.precoders[:, :, 1:])
    quad_c = power.sum(axis=1)
    quad_p = power[:, 1:, :].sum(axis=1)
    f_c = coeffs.x[..., COMMON] * quad_c + 2 * linear_c.real + coeffs.z[..., COMMON]
    f_p = coeffs.x[..., PRIVATE] * quad_p + 2 * linear_p.real + coeffs.z[..., PRIVATE]
    return np.stack([f_c, f_p], axis=-1)


# ─── Convex instance ──────────────────────────────────────────────────────────

@dataclass
class ConvexSolution:
    precoders: DigitalEquivalent
    common: np.ndarray              # C, (K, M)
    min_rate: float                 # R_r
    objective: float = float("nan")
    certificate: Optional[Certificate] = None

    @property
    def certified(self) -> bool:
        return self.certificate is not None and self.certificate.certified


@dataclass
class ConvexInstance:
    coeffs: SurrogateCoeffs
    power_budget: float                         # watts per subcarrier
    penalty_weight: float = 0.0                 # 1/ρ
    target: Optional[np.ndarray] = None         # B_m = F T_m W_m, (M, N, K+1)
    rsma: bool = True

    def __post_init__(self) -> None:
        if self.power_budget < 0:
            raise ValueError(f"Power budget must be non-negative, got {self.power_budget}.")
        if self.penalty_weight < 0:
            raise ValueError(f"Penalty weight must be non-negative, got {self.penalty_weight}.")
        if self.penalty_weight > 0 and self.target is None:
            raise ValueError("A penalty weight needs a target precoder.")

    @property
    def channels(self) -> ChannelSet:
        return self.coeffs.channels

    @property
    def streams(self) -> range:
        K = self.channels.num_users
        return range(0, K + 1) if self.rsma else range(1, K + 1)

    def penalty(self, P: DigitalEquivalent) -> float:
        if self.penalty_weight == 0:
            return 0.0
        return float(np.sum(np.abs(P.precoders - self.target) ** 2))

    def objective(self, P: DigitalEquivalent, min_rate: float) -> float:
        return min_rate - self.penalty_weight * self.penalty(P)

    def floor_and_caps(self, P: DigitalEquivalent, common: np.ndarray) -> Tuple[float, np.ndarray]:
        """Largest feasible R_r and the common-rate caps min_k f^c_{k,m} at P."""
        f = surrogate_values(self.coeffs, P)
        floor = float(np.min(np.sum(common + f[..., PRIVATE], axis=1)))
        return floor, f[..., COMMON].min(axis=0)


def _realify(E: np.ndarray) -> np.ndarray:
    """Real form of c^H E c for stacked z = [Re c; Im c]."""
    return np.block([[E.real, -E.imag], [E.imag, E.real]])


def _stack(w: np.ndarray) -> np.ndarray:
    """Gradient of Re(β e^H c) when w = β* e."""
    return np.concatenate([w.real, w.imag])


class _Layout:
    """
    Variable layout: one real block per (m, j), then C (rsma only), then R_r.

    Fixed for one MM run (channels, budget, streams and target do not change),
    so bases, projected channels and block index patterns are built once.
    """

    def __init__(self, inst: ConvexInstance):
        H = inst.channels
        self.K, self.M = H.num_users, H.num_subcarriers
        self.scale = math.sqrt(inst.power_budget)
        self.bases = {}
        self.offsets = {}
        self.projected = {}
        self._indices = {}
        use_target = inst.penalty_weight > 0
        offset = 0
        for m in range(self.M):
            for j in inst.streams:
                cols = H.channels[m]
                if use_target:
                    cols = np.column_stack([cols, inst.target[m, :, j]])
                U = orth(cols)
                self.bases[m, j] = U
                self.offsets[m, j] = offset
                self.projected[m, j] = U.conj().T @ H.channels[m]          # column k is U^H h_{k,m}
                offset += 2 * U.shape[1]
        self.num_precoder_vars = offset
        self.common_offset = offset
        self.num_vars = offset + (self.K * self.M if inst.rsma else 0) + 1

    def block(self, m: int, j: int) -> slice:
        start = self.offsets[m, j]
        return slice(start, start + 2 * self.bases[m, j].shape[1])

    def block_indices(self, m: int, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """Row and column indices of every entry of the dense (m, j) diagonal block."""
        if (m, j) not in self._indices:
            sl = self.block(m, j)
            d = sl.stop - sl.start
            self._indices[m, j] = (np.repeat(np.arange(d), d) + sl.start, np.tile(np.arange(d), d) + sl.start)
        return self._indices[m, j]

    def common_index(self, k: int, m: int) -> int:
        return self.common_offset + k * self.M + m

    def encode(self, P: DigitalEquivalent) -> np.ndarray:
        out = np.zeros(self.num_vars)
        for (m, j), U in self.bases.items():
            c = U.conj().T @ P.precoders[m, :, j] / self.scale
            out[self.block(m, j)] = np.concatenate([c.real, c.imag])
        return out

    def decode(self, vec: np.ndarray, shape) -> DigitalEquivalent:
        P = np.zeros(shape, dtype=complex)
        for (m, j), U in self.bases.items():
            d = U.shape[1]
            zc = vec[self.block(m, j)]
            P[m, :, j] = self.scale * (U @ (zc[:d] + 1j * zc[d:]))
        return DigitalEquivalent(P)


def _assemble(inst: ConvexInstance, layout: _Layout) -> Tuple[QCQP, float]:
    """Build the QCQP (minimization form) and the constant dropped from its objective."""
    coeffs = inst.coeffs
    K, M, n = layout.K, layout.M, layout.num_vars
    Pth = inst.power_budget
    scale = layout.scale

    def sparse_quad(blocks: List[Tuple[Tuple[int, int], np.ndarray]]):
        rows, cols, data = [], [], []
        for (m, j), mat in blocks:
            r, c = layout.block_indices(m, j)
            rows.append(r)
            cols.append(c)
            data.append(mat.ravel())
        if not data:
            return None
        return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))

    def projected(k: int, m: int, j: int) -> np.ndarray:
        return layout.projected[m, j][:, k]

    lin_rows, consts, quads = [], [], []

    if inst.rsma:
        for k in range(K):
            for m in range(M):
                row = np.zeros(n)
                for kk in range(K):
                    row[layout.common_index(kk, m)] = 1.0
                x = coeffs.x[k, m, COMMON]
                blocks = []
                for j in inst.streams:
                    e = projected(k, m, j)
                    blocks.append(((m, j), -2 * x * Pth * _realify(np.outer(e, e.conj()))))
                beta = 2 * scale * np.conj(coeffs.aux.u[k, m, COMMON]) / (coeffs.aux.v[k, m, COMMON] * LN2)
                row[layout.block(m, 0)] -= _stack(np.conj(beta) * projected(k, m, 0))
                lin_rows.append(row)
                consts.append(-coeffs.z[k, m, COMMON])
                quads.append(sparse_quad(blocks))

    for k in range(K):
        row = np.zeros(n)
        row[-1] = 1.0
        blocks = []
        const = 0.0
        for m in range(M):
            if inst.rsma:
                row[layout.common_index(k, m)] = -1.0
            x = coeffs.x[k, m, PRIVATE]
            for j in range(1, K + 1):
                e = projected(k, m, j)
                blocks.append(((m, j), -2 * x * Pth * _realify(np.outer(e, e.conj()))))
            beta = 2 * scale * np.conj(coeffs.aux.u[k, m, PRIVATE]) / (coeffs.aux.v[k, m, PRIVATE] * LN2)
            row[layout.block(m, k + 1)] -= _stack(np.conj(beta) * projected(k, m, k + 1))
            const -= coeffs.z[k, m, PRIVATE]
        lin_rows.append(row)
        consts.append(const)
        quads.append(sparse_quad(blocks))

    for m in range(M):
        blocks = [((m, j), 2 * np.eye(2 * layout.bases[m, j].shape[1])) for j in inst.streams]
        lin_rows.append(np.zeros(n))
        consts.append(-1.0)
        quads.append(sparse_quad(blocks))

    if inst.rsma:
        for k in range(K):
            for m in range(M):
                row = np.zeros(n)
                row[layout.common_index(k, m)] = -1.0
                lin_rows.append(row)
                consts.append(0.0)
                quads.append(None)

    objective = np.zeros(n)
    objective[-1] = -1.0
    objective_quad = None
    dropped = 0.0
    w = inst.penalty_weight
    if w > 0:
        diag = np.zeros(n)
        for (m, j), U in layout.bases.items():
            b = inst.target[m, :, j]
            diag[layout.block(m, j)] = 2 * w * Pth
            objective[layout.block(m, j)] -= 2 * w * scale * _stack(U.conj().T @ b)
            dropped += w * float(np.vdot(b, b).real)
        objective_quad = sp.diags(diag, format="csr")

    problem = QCQP(
        objective_linear=objective,
        constraint_linear=sp.csr_matrix(np.array(lin_rows)),
        constraint_constant=np.array(consts),
        objective_quadratic=objective_quad,
        constraint_quadratics=quads,
    )
    return problem, dropped


# ─── Solve ────────────────────────────────────────────────────────────────────

def _feasible_warm_start(inst: ConvexInstance, layout: _Layout, warm: ConvexSolution) -> ConvexSolution:
    """Project the warm start onto the solver's span and recompute a feasible C and R_r."""
    shape = warm.precoders.precoders.shape
    P = layout.decode(layout.encode(warm.precoders), shape)
    common = np.zeros((layout.K, layout.M))
    if inst.rsma:
        common = np.clip(warm.common, 0.0, None)
        _, caps = inst.floor_and_caps(P, common)
        totals = common.sum(axis=0)
        over = totals > np.maximum(caps, 0.0)
        common[:, over] *= np.maximum(caps[over], 0.0) / totals[over]
    floor, _ = inst.floor_and_caps(P, common)
    return ConvexSolution(P, common, floor, inst.objective(P, floor))


def solve_convex(inst: ConvexInstance, warm_start: ConvexSolution, tol: float = 1e-7,
                 max_iter: int = 200, layout: Optional[_Layout] = None) -> ConvexSolution:
    """
    Solve the convex surrogate problem from a warm start.

    A non-certified solver return is kept only if it is primal feasible and
    does not lose objective against the warm start; otherwise the warm start
    is returned, flagged non-certified.
    """
    H = inst.channels
    K, M = H.num_users, H.num_subcarriers
    shape = (M, H.num_antennas, K + 1)

    if inst.power_budget == 0:
        P = DigitalEquivalent(np.zeros(shape, dtype=complex))
        floor, _ = inst.floor_and_caps(P, np.zeros((K, M)))
        cert = Certificate(0.0, 0.0, 0.0, 0, tol)
        return ConvexSolution(P, np.zeros((K, M)), floor, inst.objective(P, floor), cert)

    if layout is None:
        layout = _Layout(inst)
    warm = _feasible_warm_start(inst, layout, warm_start)
    problem, dropped = _assemble(inst, layout)

    start = layout.encode(warm.precoders)
    if inst.rsma:
        for k in range(K):
            for m in range(M):
                start[layout.common_index(k, m)] = warm.common[k, m]
    start[-1] = warm.min_rate

    result = solve_qcqp(problem, start, tol=tol, max_iter=max_iter)
    P = layout.decode(result.x, shape)
    # pull solver-tolerance overshoot back onto the power budget
    power = P.power()
    over = power > inst.power_budget
    if np.any(over):
        P.precoders[over] *= np.sqrt(inst.power_budget / power[over])[:, None, None]
    common = np.zeros((K, M))
    if inst.rsma:
        common = np.clip(result.x[layout.common_offset:layout.common_offset + K * M].reshape(K, M), 0.0, None)
        _, caps = inst.floor_and_caps(P, common)
        totals = common.sum(axis=0)
        over = totals > np.maximum(caps, 0.0)
        common[:, over] *= np.maximum(caps[over], 0.0) / totals[over]
    floor, _ = inst.floor_and_caps(P, common)
    min_rate = min(float(result.x[-1]), floor)
    solution = ConvexSolution(P, common, min_rate, inst.objective(P, min_rate), result.certificate)

    logger.debug("solve_convex: n=%d m=%d objective=%.6f (ipm %.6f) %s",
                 problem.num_variables, problem.num_constraints, solution.objective,
                 -result.objective - dropped, result.certificate)

    if not result.certificate.certified:
        if result.certificate.primal > 1e-6 or solution.objective < warm.objective - tol:
            logger.warning("Convex solve not certified (%s); keeping the warm start.", result.certificate)
            warm.certificate = result.certificate
            return warm
        logger.warning("Convex solve not certified (%s); keeping the improved iterate.", result.certificate)
    return solution


# ─── Algorithm 1 ──────────────────────────────────────────────────────────────

@dataclass
class MMResult:
    solution: ConvexSolution
    objectives: List[float] = field(default_factory=list)     # entry 0 is the start point
    residuals: List[Tuple[float, float, float]] = field(default_factory=list)
    iterations: int = 0
    certified: bool = True
    converged: bool = False

    def diagnostic_rows(self, run: int = 0) -> List[Tuple]:
        """(run, iteration, objective, primal, dual, complementarity); iteration 0 is the start point."""
        rows = [(run, 0, self.objectives[0], 0.0, 0.0, 0.0)]
        for i, (obj, res) in enumerate(zip(self.objectives[1:], self.residuals), start=1):
            rows.append((run, i, obj, *res))
        return rows


def algorithm1(H: ChannelSet, noise, start: ConvexSolution, *, power_budget: float,
               penalty_weight: float = 0.0, target: Optional[np.ndarray] = None, rsma: bool = True,
               xi: float = 1e-4, max_iter: int = 50, tol: float = 1e-7) -> MMResult:
    """
    MM iterations on (P, C, R_r): expand at the current P, rebuild the
    minorizers, solve the convex problem, stop once the objective gains less
    than xi. The start point must satisfy the power budget.
    """
    if np.any(start.precoders.power() > power_budget * (1 + 1e-6) + 1e-15):
        raise ValueError("Algorithm 1 start point violates the power budget.")

    report = rate_report(H, start.precoders, noise)
    common = start.common if rsma else np.zeros_like(start.common)
    floor = float(np.min(np.sum(common + report.rate_private, axis=1)))
    penalty = 0.0 if penalty_weight == 0 else float(np.sum(np.abs(start.precoders.precoders - target) ** 2))
    current = ConvexSolution(start.precoders, common, floor, floor - penalty_weight * penalty)

    result = MMResult(solution=current, objectives=[current.objective])
    layout = None
    for it in range(1, max_iter + 1):
        aux = compute_auxiliaries(H, current.precoders, noise)
        coeffs = build_surrogates(H, aux, noise)
        inst = ConvexInstance(coeffs, power_budget, penalty_weight, target, rsma)
        if layout is None and power_budget > 0:
            layout = _Layout(inst)
        nxt = solve_convex(inst, current, tol=tol, layout=layout)

        result.iterations = it
        result.certified &= nxt.certified
        cert = nxt.certificate
        result.residuals.append((cert.primal, cert.dual, cert.complementarity) if cert else (0.0, 0.0, 0.0))
        result.objectives.append(nxt.objective)
        gain = nxt.objective - current.objective
        logger.debug("MM iter %d: objective=%.6f gain=%.2e", it, nxt.objective, gain)
        current = nxt
        if gain < xi:
            result.converged = True
            break
    else:
        logger.warning("Algorithm 1 hit its cap of %d iterations.", max_iter)

    result.solution = current
    return result


def problem_size(num_antennas: int, num_users: int, num_subcarriers: int) -> int:
    """Number of scalar decision variables of the penalized problem: M·N·(K+1) + M·K."""
    return num_subcarriers * num_antennas * (num_users + 1) + num_subcarriers * num_users


def dump_diagnostics(rows: Sequence[Tuple], path: str | Path) -> Path:
    """Per-iteration objective and scaled KKT residuals of one or more MM runs, as CSV."""
    return write_csv_atomic(path, DIAGNOSTICS_HEADER, rows)
