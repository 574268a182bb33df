"""Equality-constrained Gauss-Newton SQP.

Solves ``min ||r(z)||^2  s.t.  c(z) = 0`` where the caller supplies
residuals, constraints and their Jacobians.  Each iteration solves the
QP built from the Gauss-Newton Hessian ``2 Jr'Jr + lam I`` and the
linearized constraints through its KKT system, then backtracks on an
l1 merit function.

Rank-deficient constraint Jacobians (more constraints than can be met
independently, e.g. a terminal constraint on a one-step horizon) are
handled with a least-squares constraint step plus a null-space
optimality step.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import OffsetFreeError

log = logging.getLogger(__name__)

RANK_TOL = 1e-10


@dataclass
class SqpResult:
    z: np.ndarray
    multipliers: np.ndarray
    iterations: int
    objective: float
    constraint_residual: float
    kkt_residual: float
    converged: bool
    rank_deficient: bool = False


@dataclass
class _Point:
    z: np.ndarray
    r: np.ndarray
    Jr: np.ndarray
    c: np.ndarray
    Jc: np.ndarray

    @property
    def cost(self):
        return float(self.r @ self.r)

    @property
    def grad(self):
        return 2.0 * self.Jr.T @ self.r


def _refined_solve(K, K0, rhs, assume_a, refinements=2):
    # the damping in K biases the step by about lam*|d|; a few refinement
    # sweeps against the undamped K0 remove it when K0 is nonsingular
    sol = sla.solve(K, rhs, assume_a=assume_a)
    for _ in range(refinements):
        sol = sol + sla.solve(K, rhs - K0 @ sol, assume_a=assume_a)
    return sol


def _qp_step(H, g, c, Jc, regularization=0.0):
    """Step and multipliers of ``min 0.5 d'Hd + g'd  s.t.  Jc d + c = 0``.

    ``H`` is the undamped Hessian; ``regularization * I`` is added for the
    factorization only.
    """
    n, m = H.shape[0], Jc.shape[0]
    Hr = H + regularization * np.eye(n)
    if m == 0:
        return _refined_solve(Hr, H, -g, "pos"), np.zeros(0), False
    if m <= n:
        K = np.block([[Hr, Jc.T], [Jc, np.zeros((m, m))]])
        K0 = np.block([[H, Jc.T], [Jc, np.zeros((m, m))]])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", sla.LinAlgWarning)
                sol = _refined_solve(K, K0, -np.concatenate([g, c]), "sym")
            return sol[:n], sol[n:], False
        except (np.linalg.LinAlgError, sla.LinAlgWarning):
            pass
    # least-squares constraint step, then optimize over the null space of Jc
    U, s, Vt = np.linalg.svd(Jc)
    rank = int(np.sum(s > RANK_TOL * max(s[0], 1.0)))
    d_c = -Vt[:rank].T @ ((U[:, :rank].T @ c) / s[:rank])
    Z = Vt[rank:].T
    if Z.shape[1]:
        w = sla.solve(Z.T @ Hr @ Z, -Z.T @ (g + Hr @ d_c), assume_a="pos")
        d = d_c + Z @ w
    else:
        d = d_c
    nu = np.linalg.lstsq(Jc.T, -(g + H @ d), rcond=None)[0]
    return d, nu, True


def _trial(evaluate, z):
    try:
        # a long trial step may overflow; it is rejected, not reported
        with np.errstate(over="ignore", invalid="ignore"):
            return _Point(z, *evaluate(z))
    except (OffsetFreeError, FloatingPointError, ValueError) as exc:
        log.debug("trial step rejected: %s", exc)
        return None


def solve(evaluate, z0, *, tol=1e-8, max_iter=50, regularization=1e-8, max_halvings=20,
          constraint_tol=None, min_iterations=1):
    """Run Gauss-Newton SQP from ``z0``.

    Parameters
    ----------
    evaluate : callable
        ``evaluate(z) -> (r, Jr, c, Jc)``.
    tol : float
        Convergence threshold on the KKT residual
        ``max(|grad L|_inf, |c|_inf)``.
    constraint_tol : float, optional
        Separate threshold on ``|c|_inf`` (defaults to ``tol``).
    """
    ctol = tol if constraint_tol is None else constraint_tol
    pt = _Point(np.asarray(z0, dtype=float).copy(), *evaluate(z0))
    n = pt.z.size
    mu = 1.0
    best = None
    nu = np.zeros(pt.c.size)
    rank_deficient = False
    kkt = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        H = 2.0 * pt.Jr.T @ pt.Jr
        g = pt.grad
        d, nu, deficient = _qp_step(H, g, pt.c, pt.Jc, regularization)
        rank_deficient |= deficient
        mu = max(mu, 2.0 * float(np.max(np.abs(nu), initial=0.0)) + 1e-6)
        phi0 = pt.cost + mu * np.abs(pt.c).sum()
        slope = g @ d - mu * np.abs(pt.c).sum()
        alpha, new = 1.0, None
        for _ in range(max_halvings + 1):
            trial = _trial(evaluate, pt.z + alpha * d)
            if trial is not None:
                new = trial
                if slope >= 0 or trial.cost + mu * np.abs(trial.c).sum() <= phi0 + 1e-4 * alpha * slope:
                    break
            alpha *= 0.5
        if new is None:
            break
        step = new.z - pt.z
        pt = new
        stationarity = float(np.max(np.abs(pt.grad + pt.Jc.T @ nu), initial=0.0))
        cres = float(np.max(np.abs(pt.c), initial=0.0))
        kkt = max(stationarity, cres)
        if best is None or kkt < best[1]:
            best = (pt, kkt, nu)
        if it >= min_iterations and cres <= ctol and (
            stationarity <= tol or float(np.max(np.abs(step))) <= 1e-3 * tol
        ):
            return SqpResult(pt.z, nu, it, pt.cost, cres, kkt, True, rank_deficient)
    pt, kkt, nu = best if best is not None else (pt, kkt, nu)
    cres = float(np.max(np.abs(pt.c), initial=0.0))
    return SqpResult(pt.z, nu, it, pt.cost, cres, kkt, False, rank_deficient)
