"""Joint state/parameter extended Kalman filter.

The parameters follow a random walk, so the filter trains the disturbance
model online from the output prediction error.  One sample is a
:func:`measurement_update` on ``y(k)`` followed by a :func:`time_update`
with the applied input ``u(k)``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, FilterDivergenceError, NonFiniteError

__all__ = ["EkfState", "FilteredEstimate", "measurement_update", "time_update", "initial_state"]

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class EkfState:
    """Prediction ``(x(k|k-1), theta(k|k-1), P(k|k-1))`` and noise covariances."""

    x_pred: np.ndarray
    theta_pred: np.ndarray
    P_pred: np.ndarray
    Q_x: np.ndarray
    Q_theta: np.ndarray
    Q_y: np.ndarray

    @property
    def n_x(self):
        return self.x_pred.size

    @property
    def n_theta(self):
        return self.theta_pred.size


@dataclass(frozen=True)
class FilteredEstimate:
    """Result of a measurement update."""

    x: np.ndarray
    theta: np.ndarray
    P: np.ndarray
    e: np.ndarray
    Q_x: np.ndarray
    Q_theta: np.ndarray
    Q_y: np.ndarray


def initial_state(x0, theta0, Q_x, Q_theta, Q_y, P0=None):
    """Build an :class:`EkfState`; ``P0`` defaults to the identity."""
    x0 = np.asarray(x0, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    n = x0.size + theta0.size
    P0 = np.eye(n) if P0 is None else np.asarray(P0, dtype=float)
    if P0.shape != (n, n):
        raise DimensionError(f"P0 must be {n}x{n}")
    return EkfState(x0, theta0, P0, np.asarray(Q_x, float), np.asarray(Q_theta, float), np.asarray(Q_y, float))


def _symmetrize(P):
    return 0.5 * (P + P.T)


def measurement_update(ekf, model, y):
    """Correct the prediction with measurement ``y``.

    Returns a :class:`FilteredEstimate` carrying ``x(k|k)``,
    ``theta(k|k)``, ``P(k|k)`` and the innovation ``e(k)``.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    nx = ekf.n_x
    y_pred = np.asarray(model.predict_output(ekf.x_pred, ekf.theta_pred), dtype=float)
    e = y - y_pred
    if not np.all(np.isfinite(e)):
        raise NonFiniteError("non-finite innovation")
    C = model.output_matrix(ekf.x_pred, ekf.theta_pred)
    P = ekf.P_pred
    PCt = P @ C.T
    B = _symmetrize(C @ PCt + ekf.Q_y)
    if np.linalg.cond(B) > MAX_CONDITION:
        raise FilterDivergenceError(f"innovation covariance is singular (cond={np.linalg.cond(B):.3g})")
    # M = P C' B^{-1}, via a symmetric solve of B M' = C P
    M = sla.solve(B, PCt.T, assume_a="sym").T
    z = np.concatenate([ekf.x_pred, ekf.theta_pred]) + M @ e
    P_filt = _symmetrize((np.eye(P.shape[0]) - M @ C) @ P)
    return FilteredEstimate(z[:nx], z[nx:], P_filt, e, ekf.Q_x, ekf.Q_theta, ekf.Q_y)


def time_update(est, model, u):
    """Propagate a filtered estimate through the model under input ``u``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    x_next = np.asarray(model.predict_state(est.x, u, est.theta), dtype=float)
    A = model.transition_matrix(est.x, u, est.theta)
    Q = sla.block_diag(est.Q_x, est.Q_theta)
    P_next = _symmetrize(A @ est.P @ A.T + Q)
    return EkfState(x_next, est.theta.copy(), P_next, est.Q_x, est.Q_theta, est.Q_y)

