"""Parametric disturbance functions ``d_x = h_x(x, u, theta)``, ``d_y = h_y(x, theta)``.

Three families are provided:

* ``CDM``: constant output disturbance, ``h_x`` empty and ``h_y = theta``.
* ``PDM``: ``h_x`` linear in ``theta`` over a fixed basis of state and
  input terms, ``h_y`` empty.
* ``FNN``: ``h_x`` and ``h_y`` are feedforward networks with sigmoid hidden
  layers and a linear output layer; ``theta`` stacks their weights and
  biases.

Every function is written against :mod:`offsetfree.autodiff`, so
parameter and state Jacobians come out exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, UnsupportedFamilyError

__all__ = [
    "DisturbanceModel",
    "cdm",
    "pdm_vanderpol",
    "pdm_cstr",
    "fnn",
    "eval_hx",
    "eval_hy",
    "xavier_init",
    "param_count",
    "VDP_PDM_TERMS",
]

FAMILIES = ("CDM", "PDM", "FNN")

VDP_PDM_TERMS = (
    "1", "vdot", "vdot^2", "v", "v^2", "vdot*v", "vdot^2*v", "vdot*v^2", "vdot^2*v^2", "u",
)
CSTR_PDM_TERMS = (
    "T:1", "T:(T-Tf)", "T:rate", "T:(Tc-Tf)", "CA:1", "CA:CA", "CA:rate",
)


@dataclass(frozen=True)
class DisturbanceModel:
    """Architecture of a disturbance model; ``theta`` is kept separately.

    Attributes
    ----------
    family : str
        One of ``"CDM"``, ``"PDM"``, ``"FNN"``.
    n_x, n_u, n_y : int
        Model state, input and output dimensions.
    n_dx, n_dy : int
        Lengths of ``h_x`` and ``h_y``.
    hx_layers, hy_layers : tuple of int
        FNN layer widths from input to output (empty when unused).
    hx_center, hx_scale, hy_center, hy_scale : tuple of float
        FNN input normalization ``(z - center) / scale``.
    basis : str
        PDM basis name (``"vanderpol"`` or ``"cstr"``).
    basis_params : dict
        Constants needed by the PDM basis (CSTR: feed temperature and
        model kinetics).
    """

    family: str
    n_x: int
    n_u: int
    n_y: int
    n_dx: int
    n_dy: int
    hx_layers: tuple = ()
    hy_layers: tuple = ()
    hx_center: tuple = ()
    hx_scale: tuple = ()
    hy_center: tuple = ()
    hy_scale: tuple = ()
    basis: str = ""
    basis_params: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnsupportedFamilyError(f"unknown family {self.family!r}")

    @property
    def n_theta(self):
        return param_count(self)

    @property
    def n_theta_x(self):
        """Number of leading ``theta`` entries that parametrize ``h_x``."""
        if self.family == "FNN":
            return _layers_count(self.hx_layers)
        return self.n_theta if self.family == "PDM" else 0


def cdm(n_x, n_u=1, n_y=1):
    """Classical additive output disturbance: ``y = g(x) + theta``."""
    return DisturbanceModel("CDM", n_x, n_u, n_y, n_dx=0, n_dy=n_y)


def pdm_vanderpol():
    """Polynomial model over all monomials of the Van der Pol equation."""
    return DisturbanceModel("PDM", 2, 1, 1, n_dx=1, n_dy=0, basis="vanderpol")


def pdm_cstr(model_params):
    """Basis built from the terms of the CSTR balances.

    ``d_T  = t1 + t2 (T - Tf) + t3 rate + t4 (Tc - Tf)``
    ``d_CA = t5 + t6 C_A + t7 rate``

    where ``rate`` is the reaction rate of the nominal model.  Any mismatch
    in flow, feed, pre-exponential factor, heat of reaction or heat
    transfer is exactly representable.
    """
    bp = {
        "feed_temperature": model_params.feed_temperature,
        "arrhenius_prefactor": model_params.arrhenius_prefactor,
        "activation_energy_over_R": model_params.activation_energy_over_R,
    }
    return DisturbanceModel("PDM", 2, 1, 1, n_dx=2, n_dy=0, basis="cstr", basis_params=bp)


def fnn(n_x, n_u=1, n_y=1, hx_hidden=(6, 6), hy_hidden=(4,), hx_center=None, hx_scale=None,
        hy_center=None, hy_scale=None):
    """Feedforward networks for ``h_x`` (input ``(x, u)``) and ``h_y`` (input ``x``)."""
    nin_x, nin_y = n_x + n_u, n_x
    return DisturbanceModel(
        "FNN", n_x, n_u, n_y, n_dx=n_x, n_dy=n_y,
        hx_layers=(nin_x, *hx_hidden, n_x),
        hy_layers=(nin_y, *hy_hidden, n_y),
        hx_center=tuple(hx_center) if hx_center is not None else (0.0,) * nin_x,
        hx_scale=tuple(hx_scale) if hx_scale is not None else (1.0,) * nin_x,
        hy_center=tuple(hy_center) if hy_center is not None else (0.0,) * nin_y,
        hy_scale=tuple(hy_scale) if hy_scale is not None else (1.0,) * nin_y,
    )


def _layers_count(layers):
    return sum(a * b + b for a, b in zip(layers[:-1], layers[1:]))


def param_count(model):
    """Exact length of ``theta`` for ``model``."""
    if model.family == "CDM":
        return model.n_dy
    if model.family == "PDM":
        return len(VDP_PDM_TERMS) if model.basis == "vanderpol" else len(CSTR_PDM_TERMS)
    return _layers_count(model.hx_layers) + _layers_count(model.hy_layers)


def _check_theta(model, theta):
    n = ad.value_of(theta).shape
    if n != (param_count(model),):
        raise DimensionError(f"{model.family}: theta must have shape ({param_count(model)},), got {n}")


def _check_state(model, x, u=None):
    if ad.value_of(x).shape[-1:] != (model.n_x,):
        raise DimensionError(f"state must end in dimension {model.n_x}")
    if u is not None and ad.value_of(u).shape[-1:] != (model.n_u,):
        raise DimensionError(f"input must end in dimension {model.n_u}")


def _vdp_basis(x, u):
    vd, v = x[..., 0], x[..., 1]
    vd2, v2 = vd * vd, v * v
    one = np.ones(ad.value_of(vd).shape)
    return ad.stack([one, vd, vd2, v, v2, vd * v, vd2 * v, vd * v2, vd2 * v2, u[..., 0]], axis=-1)


def _cstr_basis(x, u, bp):
    T, ca = x[..., 0], x[..., 1]
    rate = bp["arrhenius_prefactor"] * np.exp(-bp["activation_energy_over_R"] / T) * ca
    one = np.ones(ad.value_of(T).shape)
    tf = bp["feed_temperature"]
    return ad.stack([one, T - tf, rate, u[..., 0] - tf, one, ca, rate], axis=-1)


def _vdp_hx(x, u, theta):
    # theta . basis, grouped by powers of dv/dt
    vd, v = x[..., 0], x[..., 1]
    v2 = v * v
    c0 = theta[0] + theta[3] * v + theta[4] * v2
    c1 = theta[1] + theta[5] * v + theta[7] * v2
    c2 = theta[2] + theta[6] * v + theta[8] * v2
    d = c0 + vd * (c1 + vd * c2) + theta[9] * u[..., 0]
    return d.reshape(d.shape + (1,))


_CSTR_ROWS = np.array([[1, 1, 1, 1, 0, 0, 0], [0, 0, 0, 0, 1, 1, 1]], dtype=float)


def pdm_basis(model, x, u):
    """Basis terms of a PDM evaluated at ``(x, u)``, shape ``(..., n_theta)``."""
    if model.basis == "vanderpol":
        return _vdp_basis(x, u)
    return _cstr_basis(x, u, model.basis_params)


def _unpack_layers(theta, layers):
    params, i = [], 0
    for a, b in zip(layers[:-1], layers[1:]):
        W = theta[i:i + a * b].reshape(b, a)
        i += a * b
        params.append((W, theta[i:i + b]))
        i += b
    return params


def _forward(theta, layers, z, center, scale):
    z = (z - np.asarray(center)) / np.asarray(scale)
    params = _unpack_layers(theta, layers)
    for W, b in params[:-1]:
        z = ad.sigmoid(ad.matvec(W, z) + b)
    W, b = params[-1]
    return ad.matvec(W, z) + b


def eval_hx(model, x, u, theta):
    """Process disturbance ``d_x``; shape ``x.shape[:-1] + (n_dx,)``."""
    _check_state(model, x, u)
    _check_theta(model, theta)
    batch = ad.value_of(x).shape[:-1]
    if model.family == "CDM":
        return np.zeros(batch + (0,))
    if model.family == "PDM":
        if model.basis == "vanderpol":
            return _vdp_hx(x, u, theta)
        return ad.matvec(_CSTR_ROWS, pdm_basis(model, x, u) * theta)
    nx = _layers_count(model.hx_layers)
    z = ad.concatenate([x, u + np.zeros(batch + (model.n_u,))], axis=-1)
    return _forward(theta[:nx], model.hx_layers, z, model.hx_center, model.hx_scale)


def eval_hy(model, x, theta):
    """Output disturbance ``d_y``; shape ``x.shape[:-1] + (n_dy,)``."""
    _check_state(model, x)
    _check_theta(model, theta)
    batch = ad.value_of(x).shape[:-1]
    if model.family == "CDM":
        return theta + np.zeros(batch + (model.n_dy,))
    if model.family == "PDM":
        return np.zeros(batch + (0,))
    nx = _layers_count(model.hx_layers)
    return _forward(theta[nx:], model.hy_layers, x, model.hy_center, model.hy_scale)


def xavier_init(model, seed):
    """Xavier-uniform weights and zero biases for both networks of an FNN."""
    if model.family != "FNN":
        raise UnsupportedFamilyError(f"xavier_init is only defined for FNN, not {model.family}")
    rng = np.random.default_rng(seed)
    chunks = []
    for layers in (model.hx_layers, model.hy_layers):
        for a, b in zip(layers[:-1], layers[1:]):
            bound = np.sqrt(6.0 / (a + b))
            chunks.append(rng.uniform(-bound, bound, size=a * b))
            chunks.append(np.zeros(b))
    return np.concatenate(chunks)


def layer_slices(model):
    """``(name, slice, kind)`` for every weight/bias block of an FNN ``theta``."""
    out, i = [], 0
    for net, layers in (("hx", model.hx_layers), ("hy", model.hy_layers)):
        for k, (a, b) in enumerate(zip(layers[:-1], layers[1:])):
            out.append((f"{net}.W{k}", slice(i, i + a * b), "weight", a, b))
            i += a * b
            out.append((f"{net}.b{k}", slice(i, i + b), "bias", a, b))
            i += b
    return out


def initial_theta(model, seed=0):
    """Zero for CDM/PDM, Xavier for FNN."""
    if model.family == "FNN":
        return xavier_init(model, seed)
    return np.zeros(param_count(model))


def to_config(model):
    d = {"family": model.family, "n_x": model.n_x, "n_u": model.n_u, "n_y": model.n_y}
    if model.family == "FNN":
        d.update(
            hx_hidden=list(model.hx_layers[1:-1]),
            hy_hidden=list(model.hy_layers[1:-1]),
            hx_center=list(model.hx_center),
            hx_scale=list(model.hx_scale),
            hy_center=list(model.hy_center),
            hy_scale=list(model.hy_scale),
        )
    if model.family == "PDM":
        d["basis"] = model.basis
    return d
