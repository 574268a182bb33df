"""Reference generator: output previews to consistent state/input targets.

Given the current parameter estimate, each solver finds model
trajectories ``(x_r, u_r, d_r)`` whose output equals the reference:

* :func:`solve_preview` over a truncated preview ``j = 0..M``,
* :func:`solve_steady_state` for a single set-point,
* :func:`solve_periodic` for a ``T``-periodic reference with the cyclic
  state constraint ``x_r(T) = x_r(0)``.

The remaining freedom is fixed by the least-squares cost
``sum ||u_hat - u_nom||^2`` when a nominal input trajectory is known, and
``sum ||u_hat||^2 + eps ||x_hat||^2`` otherwise.
"""

from dataclasses import dataclass, field

import numpy as np

from . import sqp
from .errors import DimensionError, InfeasibleReferenceError, NoSteadyStateError, OffsetFreeError

__all__ = [
    "ReferenceSignal",
    "TargetTrajectory",
    "solve_preview",
    "solve_steady_state",
    "steady_state_targets",
    "solve_periodic",
    "constraint_residual",
    "FALLBACK_STATE_WEIGHT",
]

FALLBACK_STATE_WEIGHT = 1e-6


@dataclass
class ReferenceSignal:
    """Sampled output reference.

    ``kind`` is ``"piecewise-constant"``, ``"sampled-trajectory"`` or
    ``"periodic"`` (with ``period`` in samples).  ``nominal_input`` is an
    optional input trajectory known to make the plant follow ``samples``.
    """

    samples: np.ndarray
    kind: str = "sampled-trajectory"
    period: int = 0
    nominal_input: np.ndarray = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float).T).T
        if self.nominal_input is not None:
            self.nominal_input = np.atleast_2d(np.asarray(self.nominal_input, dtype=float).T).T
        if self.kind == "periodic":
            T = self.period
            if T < 1:
                raise ValueError("periodic reference needs a positive period")
            if len(self.samples) > T and not np.allclose(self.samples[T:], self.samples[:-T], atol=1e-12):
                raise ValueError("samples are not periodic with the declared period")

    def __len__(self):
        return len(self.samples)

    def window(self, k, length):
        """Samples ``k .. k+length-1``; the last sample repeats past the end."""
        idx = np.minimum(np.arange(k, k + length), len(self.samples) - 1)
        r = self.samples[idx]
        u = None if self.nominal_input is None else self.nominal_input[
            np.minimum(np.arange(k, k + length), len(self.nominal_input) - 1)]
        return r, u


@dataclass
class TargetTrajectory:
    """Targets ``x_r``, ``u_r``, ``d_r`` over ``horizon + 1`` samples."""

    x_r: np.ndarray
    u_r: np.ndarray
    d_r: np.ndarray
    theta: np.ndarray = field(repr=False, default=None)
    residual: float = 0.0
    iterations: int = 0

    @property
    def horizon(self):
        return len(self.x_r) - 1

    def shifted(self):
        """Drop the first sample and repeat the last one."""
        return TargetTrajectory(
            np.vstack([self.x_r[1:], self.x_r[-1:]]),
            np.vstack([self.u_r[1:], self.u_r[-1:]]),
            np.vstack([self.d_r[1:], self.d_r[-1:]]),
            self.theta,
        )


def _default_guess(model, r0, guess):
    if guess is not None:
        return np.asarray(guess[0], float), np.atleast_1d(np.asarray(guess[1], float))
    x = np.zeros(model.n_x)
    x[model.system.output_index] = float(np.asarray(r0).ravel()[0])
    return x, np.zeros(model.n_u)


def _trajectory_problem(model, theta, r, u_nom, periodic):
    """Residual/constraint evaluator over ``len(r)`` samples."""
    L, nx, nu, p = len(r), model.n_x, model.n_u, model.n_y
    n_dyn = L if periodic else L - 1
    nX = L * nx

    def split(z):
        return z[:nX].reshape(L, nx), z[nX:].reshape(L, nu)

    def evaluate(z):
        X, U = split(z)
        if u_nom is not None:
            res = (U - u_nom).ravel()
            Jr = np.hstack([np.zeros((L * nu, nX)), np.eye(L * nu)])
        else:
            s = np.sqrt(FALLBACK_STATE_WEIGHT)
            res = np.concatenate([U.ravel(), s * X.ravel()])
            Jr = np.block([
                [np.zeros((L * nu, nX)), np.eye(L * nu)],
                [s * np.eye(nX), np.zeros((nX, L * nu))],
            ])
        Y, Cy = model.output_jacobians(X, theta)
        c_out = (Y - r).ravel()
        J_out = np.zeros((L * p, z.size))
        for j in range(L):
            J_out[j * p:(j + 1) * p, j * nx:(j + 1) * nx] = Cy[j]
        c_dyn = np.zeros(n_dyn * nx)
        J_dyn = np.zeros((n_dyn * nx, z.size))
        if n_dyn:
            F, Jf = model.stage_jacobians(X[:n_dyn], U[:n_dyn], theta)
            nxt = np.arange(1, n_dyn + 1) % L
            c_dyn = (F - X[nxt]).ravel()
            for j in range(n_dyn):
                rows = slice(j * nx, (j + 1) * nx)
                J_dyn[rows, j * nx:(j + 1) * nx] += Jf[j, :, :nx]
                J_dyn[rows, nX + j * nu:nX + (j + 1) * nu] = Jf[j, :, nx:]
                J_dyn[rows, nxt[j] * nx:(nxt[j] + 1) * nx] -= np.eye(nx)
        return res, Jr, np.concatenate([c_out, c_dyn]), np.vstack([J_out, J_dyn])

    return evaluate, split


def _solve_trajectory(model, theta, r, u_nom, periodic, tol, max_iter, x_init, u_init):
    theta = np.asarray(theta, dtype=float)
    evaluate, split = _trajectory_problem(model, theta, r, u_nom, periodic)
    z0 = np.concatenate([np.asarray(x_init, float).ravel(), np.asarray(u_init, float).ravel()])
    try:
        res = sqp.solve(evaluate, z0, tol=1e-8, constraint_tol=tol, max_iter=max_iter)
    except OffsetFreeError as exc:
        raise InfeasibleReferenceError(f"reference problem could not be evaluated: {exc}") from exc
    except np.linalg.LinAlgError as exc:
        raise InfeasibleReferenceError(f"singular reference problem: {exc}") from exc
    z, cres, iters = res.z, res.constraint_residual, res.iterations
    if cres > tol:
        z, cres, extra = _restore_feasibility(evaluate, z, tol)
        iters += extra
    if cres > tol:
        raise InfeasibleReferenceError(
            f"reference constraints not met after {iters} iterations (residual {cres:.3g})",
            residual=cres,
        )
    X, U = split(z)
    D = model.disturbance_values(X, U, theta)
    return TargetTrajectory(X, U, D, theta, cres, iters)


def _restore_feasibility(evaluate, z, tol, max_iter=10):
    # Gauss-Newton SQP converges only linearly when large multipliers make
    # the ignored constraint curvature dominate; minimum-norm Newton steps
    # on the constraints alone finish the job quadratically.
    cres = np.inf
    for it in range(max_iter + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                _, _, c, Jc = evaluate(z)
        except OffsetFreeError:
            return z, np.inf, it
        cres = float(np.max(np.abs(c)))
        if not np.isfinite(cres) or cres <= tol or it == max_iter:
            break
        z = z - np.linalg.lstsq(Jc, c, rcond=None)[0]
    return z, cres, it


def solve_preview(model, theta, r_preview, nominal_input=None, tol=1e-9, max_iter=50,
                  warm_start=None, guess=None):
    """Targets for the truncated preview ``r(k..k+M)``.

    Parameters
    ----------
    r_preview : array_like, shape (M+1, p) or (M+1,)
        Reference samples.
    nominal_input : array_like, optional
        Input trajectory the targets should stay close to.
    warm_start : TargetTrajectory, optional
        Previous solution; it is shifted by one sample before use.
    guess : tuple, optional
        ``(x, u)`` replicated over the preview when there is no warm start.
    """
    r = np.atleast_2d(np.asarray(r_preview, dtype=float).T).T
    if r.shape[1] != model.n_y:
        raise DimensionError(f"reference must have {model.n_y} outputs")
    if not np.all(np.isfinite(r)):
        raise ValueError("reference preview contains non-finite values")
    u_nom = None if nominal_input is None else np.atleast_2d(np.asarray(nominal_input, float).T).T
    L = len(r)
    if warm_start is not None and warm_start.horizon + 1 == L:
        prev = warm_start.shifted()
        x_init, u_init = prev.x_r, prev.u_r
    else:
        x0, u0 = _default_guess(model, r[0], guess)
        x_init = np.tile(x0, (L, 1))
        u_init = np.tile(u0, (L, 1)) if u_nom is None else u_nom.copy()
    return _solve_trajectory(model, theta, r, u_nom, False, tol, max_iter, x_init, u_init)


def solve_periodic(model, theta, r, tol=1e-9, max_iter=50, nominal_input=None, guess=None, warm_start=None):
    """Targets for one period ``r(0..T-1)`` of a periodic reference."""
    r = np.atleast_2d(np.asarray(r, dtype=float).T).T
    T = len(r)
    u_nom = None if nominal_input is None else np.atleast_2d(np.asarray(nominal_input, float).T).T
    if warm_start is not None and warm_start.horizon + 1 == T:
        x_init, u_init = warm_start.x_r, warm_start.u_r
    else:
        x0, u0 = _default_guess(model, r[0], guess)
        x_init, u_init = np.tile(x0, (T, 1)), np.tile(u0, (T, 1))
    return _solve_trajectory(model, theta, r, u_nom, True, tol, max_iter, x_init, u_init)


def solve_steady_state(model, theta, r, tol=1e-9, max_iter=50, guess=None):
    """Newton's method on ``x = F(x, u)``, ``r = g(x)``; returns ``(x_r, u_r, d_r)``."""
    x, u, d, _, _ = _steady_state(model, theta, r, tol, max_iter, guess)
    return x, u, d


def steady_state_targets(model, theta, r, length, tol=1e-9, max_iter=50, guess=None):
    """Set-point targets: the steady state for ``r`` repeated ``length`` times."""
    x, u, d, norm, iters = _steady_state(model, theta, r, tol, max_iter, guess)
    rep = lambda a: np.tile(a, (length, 1))
    return TargetTrajectory(rep(x), rep(u), rep(d), np.asarray(theta, dtype=float), norm, iters)


def _steady_state(model, theta, r, tol, max_iter, guess):
    theta = np.asarray(theta, dtype=float)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    nx = model.n_x
    x, u = _default_guess(model, r, guess)
    w = np.concatenate([x, u])

    def residual(w):
        F, Jf = model.stage_jacobians(w[None, :nx], w[None, nx:], theta)
        Y, Cy = model.output_jacobians(w[None, :nx], theta)
        res = np.concatenate([F[0] - w[:nx], Y[0] - r])
        J = np.vstack([Jf[0] - np.hstack([np.eye(nx), np.zeros((nx, model.n_u))]),
                       np.hstack([Cy[0], np.zeros((model.n_y, model.n_u))])])
        return res, J

    it = 0
    try:
        res, J = residual(w)
        for it in range(max_iter):
            norm = np.max(np.abs(res))
            if norm <= tol:
                break
            step = np.linalg.lstsq(J, -res, rcond=None)[0]
            alpha = 1.0
            for _ in range(30):
                try:
                    res_new, J_new = residual(w + alpha * step)
                    if np.max(np.abs(res_new)) < norm:
                        break
                except OffsetFreeError:
                    pass
                alpha *= 0.5
            else:
                raise NoSteadyStateError("Newton line search failed", residual=norm)
            w, res, J = w + alpha * step, res_new, J_new
    except (OffsetFreeError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, NoSteadyStateError):
            raise
        raise NoSteadyStateError(f"steady-state solve failed: {exc}") from exc
    norm = float(np.max(np.abs(res)))
    if norm > tol:
        raise NoSteadyStateError(f"no steady state for r={r} (residual {norm:.3g})", residual=norm)
    x, u = w[:nx], w[nx:]
    return x, u, model.disturbance_values(x, u, theta), norm, it


def constraint_residual(model, targets, r, periodic=False):
    """Max violation of the output and dynamics constraints by ``targets``."""
    r = np.atleast_2d(np.asarray(r, dtype=float).T).T
    theta = targets.theta
    X, U = targets.x_r, targets.u_r
    Y = np.asarray(model.predict_output(X, theta))
    worst = np.max(np.abs(Y - r))
    n = len(X) if periodic else len(X) - 1
    for j in range(n):
        nxt = X[(j + 1) % len(X)]
        worst = max(worst, np.max(np.abs(model.predict_state(X[j], U[j], theta) - nxt)))
    return float(worst)
