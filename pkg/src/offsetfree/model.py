"""Prediction model: nominal dynamics plus a learned disturbance model.

The discrete map integrates ``dx/dt = f_c(x, u, h_x(x, u, theta))`` over one
sample with RK4, evaluating ``h_x`` at every Runge-Kutta stage, so a PDM
with the right ``theta`` reproduces the plant step exactly.  The output is
``y = x[output_index] + h_y(x, theta)`` (or just the selected state when
``h_y`` is empty).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .disturbance import eval_hx, eval_hy, param_count
from .dynamics import rk4
from .errors import DimensionError, NonFiniteError

__all__ = ["PredictionModel"]


@dataclass(frozen=True)
class PredictionModel:
    """Nominal ``OdeSystem`` (with mismatched parameters) and a disturbance model."""

    system: object
    disturbance: object
    sample_time: float = 0.5
    substeps: int = 8

    def __post_init__(self):
        if self.disturbance.n_x != self.system.n_state or self.disturbance.n_u != self.system.n_input:
            raise DimensionError("disturbance model dimensions do not match the nominal system")

    @property
    def n_x(self):
        return self.system.n_state

    @property
    def n_u(self):
        return self.system.n_input

    @property
    def n_y(self):
        return self.disturbance.n_y

    @property
    def n_theta(self):
        return param_count(self.disturbance)

    def continuous_rhs(self, x, u, theta):
        dx = eval_hx(self.disturbance, x, u, theta)
        return self.system.rhs(x, u, dx if ad.value_of(dx).shape[-1] else None)

    def predict_state(self, x, u, theta):
        """One sample of the composed model; accepts batched ``x``/``u``."""
        if not ad.is_dual(u):
            u = np.atleast_1d(np.asarray(u, dtype=float))
        if not ad.is_dual(x):
            x = np.asarray(x, dtype=float)
        if self.system.discrete:
            return self.continuous_rhs(x, u, theta)
        return rk4(lambda z: self.continuous_rhs(z, u, theta), x, self.sample_time, self.substeps)

    def predict_output(self, x, theta):
        y = x[..., self.system.output_index:self.system.output_index + 1]
        if self.disturbance.n_dy:
            y = y + eval_hy(self.disturbance, x, theta)
        return y

    def disturbance_values(self, x, u, theta):
        """Concatenated ``(d_x, d_y)`` at a point."""
        dx = ad.value_of(eval_hx(self.disturbance, x, u, theta))
        dy = ad.value_of(eval_hy(self.disturbance, x, theta))
        return np.concatenate([dx, dy], axis=-1)

    # -- Jacobians ---------------------------------------------------------
    def linearize(self, x, u, theta):
        """EKF matrices ``A`` (augmented transition) and ``C`` (output).

        ``A`` is evaluated at ``(x, theta, u)`` and ``C`` at ``(x, theta)``;
        the caller chooses the points (filtered vs predicted estimates).
        """
        return self.transition_matrix(x, u, theta), self.output_matrix(x, theta)

    def transition_matrix(self, x, u, theta):
        nx, nt = self.n_x, self.n_theta
        z = np.concatenate([np.asarray(x, float), np.asarray(theta, float)])
        u = np.atleast_1d(np.asarray(u, dtype=float))
        Jf = ad.jacobian(lambda s: self.predict_state(s[:nx], u, s[nx:]), z)
        lower = np.hstack([np.zeros((nt, nx)), np.eye(nt)])
        A = np.vstack([Jf, lower])
        if not np.all(np.isfinite(A)):
            raise NonFiniteError("non-finite entry in transition Jacobian")
        return A

    def output_matrix(self, x, theta):
        nx = self.n_x
        z = np.concatenate([np.asarray(x, float), np.asarray(theta, float)])
        C = ad.jacobian(lambda s: self.predict_output(s[:nx], s[nx:]), z)
        if not np.all(np.isfinite(C)):
            raise NonFiniteError("non-finite entry in output Jacobian")
        return C

    def stage_jacobians(self, X, U, theta):
        """Batched state-step values and Jacobians w.r.t. ``(x, u)``.

        Returns ``F`` of shape ``(B, n_x)`` and ``J`` of shape
        ``(B, n_x, n_x + n_u)``.
        """
        nx = self.n_x
        Z = np.concatenate([np.atleast_2d(X), np.atleast_2d(U)], axis=-1)
        theta = np.asarray(theta, dtype=float)
        return ad.batch_jacobian(lambda z: self.predict_state(z[..., :nx], z[..., nx:], theta), Z)

    def output_jacobians(self, X, theta):
        """Batched outputs ``(B, p)`` and Jacobians ``(B, p, n_x)``."""
        theta = np.asarray(theta, dtype=float)
        return ad.batch_jacobian(lambda z: self.predict_output(z, theta), np.atleast_2d(X))
