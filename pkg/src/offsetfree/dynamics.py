"""Continuous-time plants and a fixed-step RK4 integrator.

All right-hand sides index state components with ``x[..., i]`` so they
accept a single state, a batch of states, or :class:`~offsetfree.autodiff.Dual`
arrays of either.
"""

from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, DomainError, NonFiniteError

__all__ = [
    "OdeSystem",
    "VanDerPolParams",
    "CstrParams",
    "vanderpol_rhs",
    "cstr_rhs",
    "vanderpol_system",
    "cstr_system",
    "rk4",
    "rk4_step",
    "CSTR_NOMINAL",
]


@dataclass(frozen=True)
class VanDerPolParams:
    mu: float = 1.0
    beta: float = 1.0
    rho: float = 1.0

    def __post_init__(self):
        if min(self.mu, self.beta, self.rho) < 0:
            raise DomainError(f"Van der Pol parameters must be >= 0, got {self}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CstrParams:
    """Exothermic CSTR parameters (time unit: minutes).

    Defaults are the MATLAB MPC-toolbox reactor: F/V = 1, CAf = 10,
    Tf = 298.15 K, k0 = 34930800, E/R = 5963.6 K, -dH/(rho Cp) = 11.92,
    UA/(V rho Cp) = 0.3.
    """

    flow_over_volume: float = 1.0
    feed_concentration: float = 10.0
    feed_temperature: float = 298.15
    arrhenius_prefactor: float = 34930800.0
    activation_energy_over_R: float = 5963.6
    heat_of_reaction_term: float = 11.92
    heat_transfer_term: float = 0.3

    def __post_init__(self):
        # zero reaction / heat terms are allowed so the mixing-only limit can be built
        if (
            self.flow_over_volume <= 0
            or self.feed_concentration < 0
            or self.feed_temperature <= 0
            or self.activation_energy_over_R <= 0
            or min(self.arrhenius_prefactor, self.heat_of_reaction_term, self.heat_transfer_term) < 0
        ):
            raise DomainError(f"non-physical CSTR parameters: {self}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class OdeSystem:
    """Continuous-time system ``dx/dt = rhs(x, u, d)``.

    ``d`` is an additive disturbance of at most ``n_dist`` entries; the
    right-hand side decides where each entry enters.  ``output_index``
    selects the measured state.  With ``discrete=True`` the function is
    already the one-sample map ``x+ = rhs(x, u, d)`` and is not integrated.
    """

    name: str
    n_state: int
    n_input: int
    n_dist: int
    rhs: Callable
    output_index: int = 0
    params: object = None
    discrete: bool = False

    def __post_init__(self):
        if self.n_state <= 0 or self.n_input <= 0 or self.n_dist < 0:
            raise DimensionError(f"invalid dimensions for {self.name}")

    def __call__(self, x, u, d=None):
        return self.rhs(x, u, d)


def _check_finite(*arrays):
    for a in arrays:
        if a is None:
            continue
        v = a.value if isinstance(a, ad.Dual) else np.asarray(a, dtype=float)
        if not np.isfinite(v).all():
            raise NonFiniteError("non-finite state, input or disturbance")


def vanderpol_rhs(x, u, d=None, params=VanDerPolParams()):
    """Van der Pol oscillator with state ``(dv/dt, v)``.

    ``d`` may be absent, a 1-vector added to the acceleration, or a
    2-vector added componentwise.
    """
    _check_finite(x, u, d)
    vdot, v = x[..., 0], x[..., 1]
    uu = u[..., 0]
    acc = params.mu * (1.0 - params.beta * v * v) * vdot - v - params.rho * uu
    if d is not None and ad.value_of(d).shape[-1] > 0:
        n_d = ad.value_of(d).shape[-1]
        if n_d == 1:
            acc = acc + d[..., 0]
        elif n_d == 2:
            return ad.stack([acc + d[..., 0], vdot + d[..., 1]], axis=-1)
        else:
            raise DimensionError(f"Van der Pol disturbance must have 1 or 2 entries, got {n_d}")
    return ad.stack([acc, vdot], axis=-1)


def cstr_rhs(x, u, d=None, params=CstrParams()):
    """Two-state exothermic CSTR with state ``(T_r, C_A)`` and input ``T_c``.

    dT/dt  = F/V (Tf - T) + dH k0 exp(-E/RT) C_A - UA (T - T_c)
    dCA/dt = F/V (CAf - C_A) - k0 exp(-E/RT) C_A

    ``d`` (2-vector, optional) is added to the derivative.
    """
    _check_finite(x, u, d)
    T, ca = x[..., 0], x[..., 1]
    if np.any(ad.value_of(ca) < 0) or np.any(ad.value_of(T) <= 0):
        raise DomainError("CSTR state must have C_A >= 0 and T_r > 0")
    tc = u[..., 0]
    p = params
    rate = p.arrhenius_prefactor * np.exp(-p.activation_energy_over_R / T) * ca
    dT = p.flow_over_volume * (p.feed_temperature - T) + p.heat_of_reaction_term * rate - p.heat_transfer_term * (T - tc)
    dca = p.flow_over_volume * (p.feed_concentration - ca) - rate
    out = ad.stack([dT, dca], axis=-1)
    if d is not None and ad.value_of(d).shape[-1] > 0:
        if ad.value_of(d).shape[-1] != 2:
            raise DimensionError("CSTR disturbance must have 2 entries")
        out = out + d
    return out


def vanderpol_system(params=VanDerPolParams()):
    return OdeSystem(
        name="vanderpol",
        n_state=2,
        n_input=1,
        n_dist=2,
        rhs=lambda x, u, d=None: vanderpol_rhs(x, u, d, params),
        output_index=1,
        params=params,
    )


def cstr_system(params=CstrParams()):
    return OdeSystem(
        name="cstr",
        n_state=2,
        n_input=1,
        n_dist=2,
        rhs=lambda x, u, d=None: cstr_rhs(x, u, d, params),
        output_index=1,
        params=params,
    )


def rk4(fun, x, dt, substeps=1):
    """Integrate ``dx/dt = fun(x)`` over ``dt`` with classic RK4.

    Raises :class:`NonFiniteError` naming the first substep that produced
    a non-finite state.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    h = dt / substeps
    for i in range(substeps):
        k1 = fun(x)
        k2 = fun(x + (0.5 * h) * k1)
        k3 = fun(x + (0.5 * h) * k2)
        k4 = fun(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(ad.value_of(x))):
            raise NonFiniteError(f"non-finite state after RK4 substep {i}")
    return x


def rk4_step(system, state, u, d=None, dt=0.5, substeps=8):
    """One sample of ``system`` under zero-order-hold ``u`` and ``d``."""
    if not isinstance(state, ad.Dual):
        state = np.asarray(state, dtype=float)
    if not isinstance(u, ad.Dual):
        u = np.atleast_1d(np.asarray(u, dtype=float))
    if ad.value_of(state).shape[-1] != system.n_state:
        raise DimensionError(f"{system.name}: state must have {system.n_state} entries")
    return rk4(lambda x: system.rhs(x, u, d), state, dt, substeps)


# Nominal operating point of the default CSTR: dx/dt = 0 at T_c = 298.15 K.
# Computed by Newton's method on cstr_rhs (see tests/test_dynamics.py).
CSTR_NOMINAL = {
    "T_r": 311.263853307800,
    "C_A": 8.569797877505,
    "T_c": 298.15,
}
