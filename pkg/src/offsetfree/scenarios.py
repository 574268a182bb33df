"""Scenario presets and the YAML config format.

A config is a nested mapping (see ``presets/*.yaml`` for complete
examples)::

    name: vdp-generic-pdm
    steps: 300
    seed: 0
    plant:       {system: vanderpol, params: {...}, x0: null}
    model:       {system: vanderpol, params: {...}, sample_time: 0.5, substeps: 8}
    disturbance: {family: PDM, basis: vanderpol}
    ekf:         {Q_x: 1.0e-10, Q_theta: 50.0, Q_y: 0.25, P0: null, x0: null}
    nmpc:        {N: 5, W_x: [[10, 0], [0, 10]], W_u: [[1]], terminal: equality, ...}
    reference:   {preset: vdp-generic, nominal_input: plant, preview: null}

Scalar covariances mean ``scalar * I``.  ``plant.x0: null`` starts the
plant at its equilibrium for the first reference sample.  With
``reference.nominal_input: plant`` the input trajectory that makes the
true plant follow the reference is computed once, offline, and used as
``u_r`` in the reference generator cost; ``none`` selects the fallback
cost.
"""

import copy
import functools
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import disturbance as dist
from .closedloop import Scenario
from .dynamics import CSTR_NOMINAL, CstrParams, VanDerPolParams, cstr_system, vanderpol_system
from .errors import ConfigError
from .model import PredictionModel
from .nmpc import NmpcConfig
from .refgen import ReferenceSignal, solve_preview, solve_steady_state

__all__ = [
    "PRESET_NAMES",
    "load_preset_config",
    "load_config",
    "save_config",
    "build_scenario",
    "preset",
    "reference_samples",
    "plant_reference_input",
    "plant_equilibrium_input",
    "ConfigError",
]

PRESET_NAMES = tuple(
    f"{plant}-{ref}-{fam}"
    for plant, ref in (("vdp", "pwc"), ("vdp", "generic"), ("cstr", "generic"))
    for fam in ("cdm", "pdm", "fnn")
)

_SYSTEMS = {
    "vanderpol": (vanderpol_system, VanDerPolParams),
    "cstr": (cstr_system, CstrParams),
}


def _system(name):
    try:
        return _SYSTEMS[name]
    except KeyError:
        raise ConfigError(f"unknown system {name!r}; choose from {', '.join(_SYSTEMS)}") from None


# -- references ----------------------------------------------------------------


def _vdp_pwc(n):
    levels = np.array([0.5, 1.5, -1.0, 0.8])
    return levels[np.minimum(np.arange(n) // 50, len(levels) - 1)]


def _vdp_generic(n):
    t = 0.5 * np.arange(n)
    return 0.8 * np.sin(2 * np.pi * t / 40) + 0.4 * np.sin(2 * np.pi * t / 17)


def _cstr_generic(n):
    # slow drift for the first 50 samples, then a faster oscillation fades in
    k = np.arange(n, dtype=float)
    t = 0.5 * k
    ramp = np.clip((k - 50.0) / 20.0, 0.0, 1.0)
    ramp = ramp * ramp * (3.0 - 2.0 * ramp)
    return CSTR_NOMINAL["C_A"] - 0.25 * (1.0 - np.cos(2 * np.pi * t / 80.0)) + 0.15 * ramp * np.sin(2 * np.pi * t / 12.0)


_REFERENCE_PRESETS = {
    "vdp-pwc": (_vdp_pwc, "piecewise-constant"),
    "vdp-generic": (_vdp_generic, "sampled-trajectory"),
    "cstr-generic": (_cstr_generic, "sampled-trajectory"),
}


def _pwc_from_breakpoints(breakpoints, n):
    bp = sorted((int(k), float(v)) for k, v in breakpoints)
    out = np.empty(n)
    for i, (k, v) in enumerate(bp):
        end = bp[i + 1][0] if i + 1 < len(bp) else n
        out[k:end] = v
    if bp[0][0] > 0:
        out[: bp[0][0]] = bp[0][1]
    return out


def reference_samples(ref_cfg, n, base_dir=None):
    """Reference values for samples ``0..n-1`` described by ``ref_cfg``."""
    if ref_cfg.get("preset"):
        if ref_cfg["preset"] not in _REFERENCE_PRESETS:
            raise ConfigError(f"unknown reference preset {ref_cfg['preset']!r}")
        fn, _ = _REFERENCE_PRESETS[ref_cfg["preset"]]
        return fn(n)
    if ref_cfg.get("breakpoints"):
        return _pwc_from_breakpoints(ref_cfg["breakpoints"], n)
    if ref_cfg.get("samples") is not None:
        s = np.asarray(ref_cfg["samples"], dtype=float)
    elif ref_cfg.get("csv"):
        path = Path(ref_cfg["csv"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        s = np.loadtxt(path, delimiter=",", ndmin=1)
    else:
        raise ConfigError("reference needs one of preset, breakpoints, samples or csv")
    if ref_cfg.get("kind") == "periodic":
        period = int(ref_cfg["period"])
        return s[np.arange(n) % period]
    return s[np.minimum(np.arange(n), len(s) - 1)]


def _equilibrium(system_name, params, r0, guess):
    make, param_cls = _SYSTEMS[system_name]
    pm = PredictionModel(make(param_cls(**params)), dist.cdm(2))
    x, u, _ = solve_steady_state(pm, np.zeros(1), r0, guess=guess)
    return x, u


def plant_equilibrium_input(system, params, samples, guess=None):
    """Per-sample plant equilibrium input for a piecewise-constant reference.

    Returns ``(u_r, x_pr)``; each distinct level is solved once, starting
    from the previous level's equilibrium.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    cache = {}
    U, X = [], []
    for r in samples:
        if r not in cache:
            cache[r] = _equilibrium(system, params, r, guess)
            guess = cache[r]
        x, u = cache[r]
        X.append(x)
        U.append(u)
    return np.array(U), np.array(X)


@functools.lru_cache(maxsize=32)
def _plant_inverse(system, params_items, samples_bytes, dt, substeps, guess_items):
    params = dict(params_items)
    make, param_cls = _SYSTEMS[system]
    plant = make(param_cls(**params))
    pm = PredictionModel(plant, dist.cdm(plant.n_state, plant.n_input), dt, substeps)
    r = np.frombuffer(samples_bytes, dtype=float)
    guess = None if guess_items is None else (np.array(guess_items[0]), np.array(guess_items[1]))
    u_eq, x_eq = plant_equilibrium_input(system, params, r, guess)
    tr = solve_preview(pm, np.zeros(1), r, nominal_input=u_eq, guess=(x_eq[0], u_eq[0]), max_iter=100)
    return tr.u_r.copy(), tr.x_r.copy()


def plant_reference_input(system, params, samples, dt=0.5, substeps=8, guess=None):
    """Input trajectory driving the true plant exactly along ``samples``.

    Among all exact solutions over the whole reference, picks the one
    closest (least squares) to the pointwise plant equilibrium inputs.
    Returns ``(u_r, x_pr)``.
    """
    g = None if guess is None else (tuple(np.ravel(guess[0])), tuple(np.ravel(guess[1])))
    u, x = _plant_inverse(system, tuple(sorted(params.items())), np.asarray(samples, float).tobytes(),
                          float(dt), int(substeps), g)
    return u.copy(), x.copy()


# -- configs -------------------------------------------------------------------


def load_preset_config(name):
    """Config mapping of a shipped preset (``vdp-generic-pdm`` etc.)."""
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    text = resources.files("offsetfree").joinpath(f"presets/{name}.yaml").read_text()
    return yaml.safe_load(text)


def load_config(path):
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    cfg.setdefault("_base_dir", str(Path(path).resolve().parent))
    return cfg


def save_config(cfg, path):
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    with open(path, "w") as fh:
        yaml.safe_dump(clean, fh, sort_keys=False)


def _matrix(v, n):
    if v is None:
        return None
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.ndim == 1:
        return np.diag(a)
    if a.shape != (n, n):
        raise ConfigError(f"expected a {n}x{n} matrix, got shape {a.shape}")
    return a


def _build_disturbance(dcfg, n_x, n_u, n_y, model_params):
    fam = dcfg["family"].upper()
    if fam == "CDM":
        return dist.cdm(n_x, n_u, n_y)
    if fam == "PDM":
        basis = dcfg.get("basis", "vanderpol")
        if basis == "vanderpol":
            return dist.pdm_vanderpol()
        if basis == "cstr":
            return dist.pdm_cstr(model_params)
        raise ConfigError(f"unknown PDM basis {basis!r}")
    if fam == "FNN":
        return dist.fnn(
            n_x, n_u, n_y,
            hx_hidden=tuple(dcfg.get("hx_hidden", (6, 6))),
            hy_hidden=tuple(dcfg.get("hy_hidden", (4,))),
            hx_center=dcfg.get("hx_center"), hx_scale=dcfg.get("hx_scale"),
            hy_center=dcfg.get("hy_center"), hy_scale=dcfg.get("hy_scale"),
        )
    raise ConfigError(f"unknown disturbance family {dcfg['family']!r}")


def build_scenario(cfg, seed=None, steps=None):
    """Turn a config mapping into a :class:`~offsetfree.closedloop.Scenario`."""
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    if steps is not None:
        cfg["steps"] = int(steps)
    try:
        name = cfg.get("name", "scenario")
        n_steps = int(cfg["steps"])
        seed_ = int(cfg.get("seed", 0))
        pc, mc, dc, ec, nc, rc = (cfg[k] for k in ("plant", "model", "disturbance", "ekf", "nmpc", "reference"))
    except KeyError as exc:
        raise ConfigError(f"config is missing section {exc}") from exc

    make_p, pcls_p = _system(pc["system"])
    plant = make_p(pcls_p(**pc.get("params", {})))
    make_m, pcls_m = _system(mc["system"])
    mparams = pcls_m(**mc.get("params", {}))
    nominal = make_m(mparams)
    dt = float(mc.get("sample_time", 0.5))
    substeps = int(mc.get("substeps", 8))
    dmodel = _build_disturbance(dc, nominal.n_state, nominal.n_input, 1, mparams)
    model = PredictionModel(nominal, dmodel, dt, substeps)

    guess = None
    if cfg.get("state_guess") is not None:
        g = cfg["state_guess"]
        guess = (np.asarray(g["x"], float), np.atleast_1d(np.asarray(g["u"], float)))

    nmpc = NmpcConfig(
        N=int(nc.get("N", 5)),
        W_x=_matrix(nc.get("W_x", 10.0), nominal.n_state),
        W_u=_matrix(nc.get("W_u", 1.0), nominal.n_input),
        terminal=nc.get("terminal", "equality"),
        input_bounds=None if nc.get("input_bounds") is None else tuple(map(np.asarray, nc["input_bounds"])),
        output_bounds=None if nc.get("output_bounds") is None else tuple(map(np.asarray, nc["output_bounds"])),
        sqp_tol=float(nc.get("sqp_tol", 1e-8)),
        sqp_max_iter=int(nc.get("sqp_max_iter", 50)),
    )
    M = rc.get("preview")
    M = nmpc.N + 5 if M is None else int(M)
    if M < nmpc.N:
        raise ConfigError("reference preview M must be >= the NMPC horizon N")

    n_ref = n_steps + M + 1
    samples = reference_samples(rc, n_ref, cfg.get("_base_dir"))
    kind = rc.get("kind") or (_REFERENCE_PRESETS[rc["preset"]][1] if rc.get("preset") else "sampled-trajectory")
    nominal_input = None
    x_pr = None
    if rc.get("nominal_input", "plant") == "plant":
        if kind == "piecewise-constant":
            nominal_input, x_pr = plant_equilibrium_input(pc["system"], pc.get("params", {}), samples, guess)
        else:
            nominal_input, x_pr = plant_reference_input(pc["system"], pc.get("params", {}), samples, dt,
                                                        substeps, guess)
    reference = ReferenceSignal(samples, kind=kind, period=int(rc.get("period", 0) or 0), nominal_input=nominal_input)

    if pc.get("x0") is not None:
        x0 = np.asarray(pc["x0"], dtype=float)
    else:
        x0, _ = _equilibrium(pc["system"], pc.get("params", {}), samples[0], guess)

    if dc.get("theta0") is not None:
        theta0 = np.asarray(dc["theta0"], dtype=float)
    else:
        theta0 = dist.initial_theta(dmodel, seed_)

    ekf = {
        "Q_x": _matrix(ec["Q_x"], nominal.n_state),
        "Q_theta": _matrix(ec["Q_theta"], dmodel.n_theta),
        "Q_y": _matrix(ec["Q_y"], 1),
        "P0": None if ec.get("P0") is None else _matrix(ec["P0"], nominal.n_state + dmodel.n_theta),
        "x0": None if ec.get("x0") is None else np.asarray(ec["x0"], dtype=float),
    }
    return Scenario(
        name=name, plant=plant, plant_x0=x0, model=model, theta0=theta0, ekf=ekf, nmpc=nmpc,
        reference=reference, steps=n_steps, seed=seed_, preview=M, state_guess=guess,
        meta={"config": {k: v for k, v in cfg.items() if not k.startswith("_")}, "x_pr": x_pr},
    )


def preset(name, seed=None, steps=None):
    """Build a shipped preset scenario."""
    return build_scenario(load_preset_config(name), seed=seed, steps=steps)
