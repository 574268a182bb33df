"""Tracking NMPC with a terminal equality constraint.

Multiple-shooting transcription over ``(x_1..x_N, u_0..u_{N-1})``::

    min  sum_j ||x_j - x_r(j)||^2_Wx + ||u_j - u_r(j)||^2_Wu
    s.t. x_0 = x(k|k),  x_{j+1} = F(x_j, u_j, theta),  x_N = x_r(N)

solved by Gauss-Newton SQP (:mod:`offsetfree.sqp`).  Optional box bounds
on inputs and outputs enter as quadratic penalties whose weight grows by
100x over three rounds; inputs are then clipped into the box and the
states re-simulated.
"""

from dataclasses import dataclass, field

import numpy as np

from . import sqp
from .errors import DimensionError, InfeasibleProblemError, SolverFailure

__all__ = ["NmpcConfig", "NmpcSolution", "solve"]

PENALTY_START = 1e2
PENALTY_GROWTH = 1e2
PENALTY_ROUNDS = 3


@dataclass
class NmpcConfig:
    N: int = 5
    W_x: np.ndarray = None
    W_u: np.ndarray = None
    terminal: str = "equality"
    input_bounds: tuple = None
    output_bounds: tuple = None
    sqp_tol: float = 1e-8
    sqp_max_iter: int = 50
    regularization: float = 1e-8

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be >= 1")
        if self.terminal not in ("equality", "none"):
            raise ValueError(f"unknown terminal mode {self.terminal!r}")
        if self.W_x is not None:
            self.W_x = np.atleast_2d(np.asarray(self.W_x, dtype=float))
            if np.min(np.linalg.eigvalsh(self.W_x)) < -1e-12:
                raise ValueError("W_x must be positive semidefinite")
        if self.W_u is not None:
            self.W_u = np.atleast_2d(np.asarray(self.W_u, dtype=float))
            if np.min(np.linalg.eigvalsh(self.W_u)) <= 0:
                raise ValueError("W_u must be positive definite")

    def weights(self, nx, nu):
        Wx = 10.0 * np.eye(nx) if self.W_x is None else self.W_x
        Wu = np.eye(nu) if self.W_u is None else self.W_u
        return Wx, Wu


@dataclass
class NmpcSolution:
    u0: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float
    constraint_residual: float = 0.0
    multipliers: np.ndarray = field(default=None, repr=False)

    def shifted(self):
        """Warm start for the next sample: drop the first move, repeat the last."""
        states = np.vstack([self.states[1:], self.states[-1:]])
        inputs = np.vstack([self.inputs[1:], self.inputs[-1:]])
        return NmpcSolution(inputs[0], states, inputs, self.objective, 0, self.kkt_residual)


def _sqrt_psd(W):
    w, V = np.linalg.eigh(W)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _problem(config, model, x0, theta, xr, ur, penalty):
    N, nx, nu = config.N, model.n_x, model.n_u
    Wx, Wu = config.weights(nx, nu)
    Sx, Su = _sqrt_psd(Wx), _sqrt_psd(Wu)
    nX = N * nx
    terminal = config.terminal == "equality"
    lo_u, hi_u = (None, None) if config.input_bounds is None else map(np.asarray, config.input_bounds)
    lo_y, hi_y = (None, None) if config.output_bounds is None else map(np.asarray, config.output_bounds)

    def split(z):
        X = np.vstack([x0[None, :], z[:nX].reshape(N, nx)])
        return X, z[nX:].reshape(N, nu)

    def evaluate(z):
        X, U = split(z)
        nz = z.size
        # tracking residuals: x_1..x_{N-1} (x_0 is fixed, x_N terminal) and u_0..u_{N-1}
        res, rows = [], []
        for j in range(1, N):
            res.append(Sx @ (X[j] - xr[j]))
            J = np.zeros((nx, nz))
            J[:, (j - 1) * nx:j * nx] = Sx
            rows.append(J)
        if not terminal:
            res.append(Sx @ (X[N] - xr[N]))
            J = np.zeros((nx, nz))
            J[:, (N - 1) * nx:N * nx] = Sx
            rows.append(J)
        for j in range(N):
            res.append(Su @ (U[j] - ur[j]))
            J = np.zeros((nu, nz))
            J[:, nX + j * nu:nX + (j + 1) * nu] = Su
            rows.append(J)
        if penalty and lo_u is not None:
            w = np.sqrt(penalty)
            for j in range(N):
                for bound, sign in ((hi_u, 1.0), (lo_u, -1.0)):
                    viol = sign * (U[j] - bound)
                    active = viol > 0
                    res.append(w * np.where(active, viol, 0.0))
                    J = np.zeros((nu, nz))
                    J[:, nX + j * nu:nX + (j + 1) * nu] = w * sign * np.diag(active.astype(float))
                    rows.append(J)
        if penalty and lo_y is not None and N > 1:
            Y, Cy = model.output_jacobians(X[1:N], theta)
            w = np.sqrt(penalty)
            for j in range(1, N):
                for bound, sign in ((hi_y, 1.0), (lo_y, -1.0)):
                    viol = sign * (Y[j - 1] - bound)
                    active = viol > 0
                    res.append(w * np.where(active, viol, 0.0))
                    J = np.zeros((model.n_y, nz))
                    J[:, (j - 1) * nx:j * nx] = w * sign * (active[:, None] * Cy[j - 1])
                    rows.append(J)
        F, Jf = model.stage_jacobians(X[:N], U, theta)
        c = (X[1:] - F).ravel()
        Jc = np.zeros((N * nx + (nx if terminal else 0), nz))
        for j in range(N):
            r_ = slice(j * nx, (j + 1) * nx)
            Jc[r_, j * nx:(j + 1) * nx] = np.eye(nx)
            if j > 0:
                Jc[r_, (j - 1) * nx:j * nx] = -Jf[j, :, :nx]
            Jc[r_, nX + j * nu:nX + (j + 1) * nu] = -Jf[j, :, nx:]
        if terminal:
            c = np.concatenate([c, X[N] - xr[N]])
            Jc[N * nx:, (N - 1) * nx:N * nx] = np.eye(nx)
        return np.concatenate(res), np.vstack(rows), c, Jc

    return evaluate, split


def _objective(config, model, X, U, xr, ur):
    Wx, Wu = config.weights(model.n_x, model.n_u)
    N = config.N
    cost = 0.0
    for j in range(N):
        dx, du = X[j] - xr[j], U[j] - ur[j]
        cost += dx @ Wx @ dx + du @ Wu @ du
    if config.terminal == "none":
        dx = X[N] - xr[N]
        cost += dx @ Wx @ dx
    return float(cost)


def solve(config, model, x0, theta, targets, warm_start=None, shift_warm_start=True):
    """Solve the tracking problem from ``x0`` and return an :class:`NmpcSolution`.

    ``targets`` supplies ``x_r``/``u_r`` for indices ``0..N`` (any object
    with those attributes, or a ``(x_r, u_r)`` tuple).
    """
    N, nx, nu = config.N, model.n_x, model.n_u
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    xr, ur = (targets.x_r, targets.u_r) if hasattr(targets, "x_r") else targets
    xr = np.atleast_2d(np.asarray(xr, dtype=float))
    ur = np.atleast_2d(np.asarray(ur, dtype=float).reshape(len(ur), -1))
    if len(xr) < N + 1 or len(ur) < N:
        raise DimensionError(f"targets must cover {N + 1} samples")
    theta = np.asarray(theta, dtype=float)

    if warm_start is not None:
        ws = warm_start.shifted() if shift_warm_start else warm_start
        X0, U0 = ws.states[1:N + 1], ws.inputs[:N]
    else:
        X0, U0 = xr[1:N + 1], ur[:N]
    z = np.concatenate([np.asarray(X0, float).ravel(), np.asarray(U0, float).ravel()])

    rounds = [0.0]
    if config.input_bounds is not None or config.output_bounds is not None:
        rounds = [PENALTY_START * PENALTY_GROWTH**i for i in range(PENALTY_ROUNDS)]
    iterations = 0
    for penalty in rounds:
        evaluate, split = _problem(config, model, x0, theta, xr, ur, penalty)
        try:
            res = sqp.solve(evaluate, z, tol=config.sqp_tol, max_iter=config.sqp_max_iter,
                            regularization=config.regularization)
        except np.linalg.LinAlgError as exc:
            raise InfeasibleProblemError(f"singular KKT system: {exc}") from exc
        iterations += res.iterations
        z = res.z
    X, U = split(z)
    sol = NmpcSolution(U[0].copy(), X, U, _objective(config, model, X, U, xr, ur), iterations,
                       res.kkt_residual, res.constraint_residual, res.multipliers)
    if config.input_bounds is not None:
        lo, hi = map(np.asarray, config.input_bounds)
        U = np.clip(U, lo, hi)
        for j in range(N):
            X[j + 1] = model.predict_state(X[j], U[j], theta)
        sol = NmpcSolution(U[0].copy(), X, U, _objective(config, model, X, U, xr, ur), iterations,
                           res.kkt_residual, res.constraint_residual, res.multipliers)
    if not res.converged:
        if res.rank_deficient and res.constraint_residual > config.sqp_tol:
            raise InfeasibleProblemError(
                f"terminal constraint cannot be met (residual {res.constraint_residual:.3g})",
                best=sol, residual=res.kkt_residual)
        raise SolverFailure(
            f"SQP did not converge in {config.sqp_max_iter} iterations "
            f"(KKT residual {res.kkt_residual:.3g})", best=sol, residual=res.kkt_residual)
    return sol
