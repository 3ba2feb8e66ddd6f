"""
Interior-point core for small convex QCQPs.

    minimize    ½ xᵀQ₀x + q₀ᵀx
    subject to  ½ xᵀQᵢx + aᵢᵀx + bᵢ <= 0,   i = 1..m

with every Qᵢ positive semidefinite (LPs leave all of them out). Constraints are
turned into equalities g(x) + s = 0 with slacks s > 0, so the start point does
not need to be strictly feasible. Each iteration takes a Mehrotra
predictor-corrector Newton step on the perturbed KKT system and backtracks on
the residual norm.

A return is certified when the scaled residuals

    primal  max(g(x), 0) / (1 + ‖b‖∞)          <= tol
    dual    ‖∇f₀ + Jᵀλ‖∞ / (1 + ‖∇f₀‖∞)       <= tol
    comp    max |λᵢ gᵢ(x)| / (1 + |f₀(x)|)     <= tol

are all below tol. Otherwise the best iterate seen is returned with
certified = False, either at the iteration cap or once the worst residual has
not improved by STALL_GAIN for STALL_ITERS iterations.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from modules.exceptions import SolverError

logger = logging.getLogger(__name__)

SLACK_FLOOR = 1e-2
STEP_TO_BOUNDARY = 0.99
MAX_BACKTRACKS = 30
STALL_ITERS = 15
STALL_GAIN = 0.1


# ─── Problem / result types ───────────────────────────────────────────────────

@dataclass
class QCQP:
    objective_linear: np.ndarray
    constraint_linear: object                               # (m, n) dense or scipy.sparse
    constraint_constant: np.ndarray                         # (m,)
    objective_quadratic: Optional[object] = None            # (n, n)
    constraint_quadratics: Optional[Sequence[Optional[object]]] = None   # length m, None = linear row

    def __post_init__(self) -> None:
        self.objective_linear = np.asarray(self.objective_linear, dtype=float)
        self.constraint_linear = sp.csr_matrix(self.constraint_linear, dtype=float)
        self.constraint_constant = np.asarray(self.constraint_constant, dtype=float)
        n = self.objective_linear.size
        m = self.constraint_constant.size
        if self.constraint_linear.shape != (m, n):
            raise ValueError(f"Constraint matrix must have shape {(m, n)}, got {self.constraint_linear.shape}.")
        if self.constraint_quadratics is not None and len(self.constraint_quadratics) != m:
            raise ValueError(f"Expected {m} constraint quadratics, got {len(self.constraint_quadratics)}.")

    @property
    def num_variables(self) -> int:
        return self.objective_linear.size

    @property
    def num_constraints(self) -> int:
        return self.constraint_constant.size


@dataclass
class Certificate:
    primal: float
    dual: float
    complementarity: float
    iterations: int
    tol: float

    @property
    def certified(self) -> bool:
        return max(self.primal, self.dual, self.complementarity) <= self.tol

    @property
    def worst(self) -> float:
        return max(self.primal, self.dual, self.complementarity)

    def __str__(self) -> str:
        return (f"primal={self.primal:.2e} dual={self.dual:.2e} comp={self.complementarity:.2e} "
                f"iters={self.iterations}")


@dataclass
class QCQPResult:
    x: np.ndarray
    multipliers: np.ndarray
    objective: float
    certificate: Certificate
    iterations: int = 0          # iterations run, not the index of the returned iterate


# ─── Function evaluation ──────────────────────────────────────────────────────

class _Oracle:
    """Values, Jacobian and Lagrangian Hessian of a QCQP."""

    def __init__(self, problem: QCQP):
        n, m = problem.num_variables, problem.num_constraints
        self.n, self.m = n, m
        self.c = problem.objective_linear
        self.A = problem.constraint_linear
        self.b = problem.constraint_constant
        self.Q0 = None if problem.objective_quadratic is None else sp.csr_matrix(problem.objective_quadratic)

        self.stack = None
        quads = problem.constraint_quadratics
        if quads is not None and any(Q is not None for Q in quads):
            blocks = [sp.csr_matrix(Q) if Q is not None else sp.csr_matrix((n, n)) for Q in quads]
            self.stack = sp.vstack(blocks, format="csr")                 # (m·n, n)
            coo = self.stack.tocoo()
            owner, row = np.divmod(coo.row, n)
            # column i holds vec(Qᵢ); flat @ λ = vec(Σ λᵢ Qᵢ)
            self.flat = sp.csr_matrix((coo.data, (row * n + coo.col, owner)), shape=(n * n, m))

    def _quad_products(self, x: np.ndarray) -> Optional[np.ndarray]:
        return None if self.stack is None else (self.stack @ x).reshape(self.m, self.n)

    def objective(self, x: np.ndarray) -> float:
        value = float(self.c @ x)
        if self.Q0 is not None:
            value += 0.5 * float(x @ (self.Q0 @ x))
        return value

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.c + (self.Q0 @ x if self.Q0 is not None else 0.0)

    def constraints(self, x: np.ndarray) -> np.ndarray:
        g = self.A @ x + self.b
        Qx = self._quad_products(x)
        if Qx is not None:
            g = g + 0.5 * (Qx @ x)
        return g

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        J = self.A.toarray()
        Qx = self._quad_products(x)
        return J + Qx if Qx is not None else J

    def hessian(self, lam: np.ndarray) -> np.ndarray:
        H = self.Q0.toarray() if self.Q0 is not None else np.zeros((self.n, self.n))
        if self.stack is not None:
            H = H + (self.flat @ lam).reshape(self.n, self.n)
        return H


# ─── Helpers ──────────────────────────────────────────────────────────────────

def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest α in (0, 1] keeping v + α·dv >= 0."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _factorize(K: np.ndarray):
    scale = max(1.0, float(np.max(np.abs(np.diag(K)))))
    delta = 1e-14 * scale
    eye = np.eye(K.shape[0])
    for _ in range(8):
        try:
            return cho_factor(K + delta * eye, check_finite=True)
        except (LinAlgError, ValueError):
            delta *= 100
    raise SolverError(f"Newton system could not be factorized (last regularization {delta:.1e}).")


def _certificate(g, r_d, lam, iterations, tol, *, primal_scale=1.0, dual_scale=1.0, comp_scale=1.0) -> Certificate:
    return Certificate(
        primal=float(max(0.0, np.max(g))) / primal_scale if g.size else 0.0,
        dual=float(np.max(np.abs(r_d))) / dual_scale if r_d.size else 0.0,
        complementarity=float(np.max(np.abs(lam * g))) / comp_scale if g.size else 0.0,
        iterations=iterations,
        tol=tol,
    )


# ─── Solver ───────────────────────────────────────────────────────────────────

def solve_qcqp(problem: QCQP, x0: np.ndarray, *, tol: float = 1e-7, max_iter: int = 200) -> QCQPResult:
    """Primal-dual interior-point method; x0 may be infeasible."""
    oracle = _Oracle(problem)
    if oracle.m == 0:
        raise ValueError("solve_qcqp needs at least one constraint.")
    x = np.asarray(x0, dtype=float).copy()
    if x.size != oracle.n:
        raise ValueError(f"Start point has {x.size} entries, problem has {oracle.n} variables.")

    s = np.maximum(-oracle.constraints(x), SLACK_FLOOR)
    lam = np.ones(oracle.m)

    def residuals(x_, s_, lam_, target):
        g_ = oracle.constraints(x_)
        J_ = oracle.jacobian(x_)
        return g_, J_, oracle.gradient(x_) + J_.T @ lam_, g_ + s_, s_ * lam_ - target

    primal_scale = 1.0 + float(np.max(np.abs(oracle.b)))
    best: Optional[QCQPResult] = None
    stall = 0
    for it in range(max_iter + 1):
        g, J, r_d, r_p, _ = residuals(x, s, lam, 0.0)
        value = oracle.objective(x)
        cert = _certificate(g, r_d, lam, it, tol, primal_scale=primal_scale,
                            dual_scale=1.0 + float(np.max(np.abs(oracle.gradient(x)))),
                            comp_scale=1.0 + abs(value))
        if best is None or cert.worst < (1 - STALL_GAIN) * best.certificate.worst:
            stall = 0
        else:
            stall += 1
        if best is None or cert.worst < best.certificate.worst:
            best = QCQPResult(x.copy(), lam.copy(), value, cert)
        if cert.certified or it == max_iter:
            break
        if stall >= STALL_ITERS:
            logger.debug("IPM stalled at iteration %d (best %s).", it, best.certificate)
            break

        mu = float(s @ lam) / oracle.m
        D = lam / s
        factor = _factorize(oracle.hessian(lam) + J.T @ (D[:, None] * J))

        def direction(r_c):
            rhs = -(r_d + J.T @ ((lam * r_p - r_c) / s))
            dx = cho_solve(factor, rhs)
            Jdx = J @ dx
            return dx, -r_p - Jdx, (lam * (Jdx + r_p) - r_c) / s

        # predictor
        dx, ds, dlam = direction(s * lam)
        a_aff = min(_max_step(s, ds), _max_step(lam, dlam))
        mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam)) / oracle.m
        sigma = min(1.0, (max(mu_aff, 0.0) / mu) ** 3) if mu > 0 else 0.0
        target = sigma * mu

        # corrector
        dx, ds, dlam = direction(s * lam + ds * dlam - target)
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dlam))):
            logger.warning("Non-finite Newton step at iteration %d; stopping.", it)
            break

        alpha = min(1.0, STEP_TO_BOUNDARY * min(_max_step(s, ds), _max_step(lam, dlam)))
        base_norm = np.linalg.norm(np.concatenate([r_d, r_p, s * lam - target]))
        for _ in range(MAX_BACKTRACKS):
            xt, st, lt = x + alpha * dx, s + alpha * ds, lam + alpha * dlam
            _, _, rd_t, rp_t, rc_t = residuals(xt, st, lt, target)
            if np.linalg.norm(np.concatenate([rd_t, rp_t, rc_t])) <= (1 - 0.01 * alpha) * base_norm:
                break
            alpha *= 0.5
        x, s, lam = xt, st, lt
        logger.debug("IPM iter %d: mu=%.2e sigma=%.2e alpha=%.3f %s", it, mu, sigma, alpha, cert)

    best.iterations = it
    if not best.certificate.certified:
        logger.debug("IPM returned best iterate without certificate: %s", best.certificate)
    return best
