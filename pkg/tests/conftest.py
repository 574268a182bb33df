import functools
import time

import numpy as np
import pytest

from offsetfree import metrics, preset, run
from offsetfree.dynamics import VanDerPolParams, vanderpol_system
from offsetfree import disturbance as dist
from offsetfree.model import PredictionModel

PLANT_VDP = VanDerPolParams(1.0, 1.0, 1.0)
MODEL_VDP = VanDerPolParams(0.8, 0.9, 0.8)


RUN_SECONDS = {}
CRITERIA = {}


@functools.lru_cache(maxsize=None)
def preset_run(name, steps=None):
    """Closed-loop log of a shipped preset; each preset is simulated once per session."""
    scenario = preset(name, steps=steps)
    t0 = time.perf_counter()
    log = run(scenario)
    RUN_SECONDS[name, steps] = time.perf_counter() - t0
    return log


def record_criterion(number, title, ok, detail):
    """Remember an acceptance verdict for the end-of-session summary."""
    CRITERIA[number] = (title, bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}: {detail}")


@functools.lru_cache(maxsize=None)
def preset_metrics(name):
    return metrics(preset_run(name))


def vdp_theta_star(plant=PLANT_VDP, model=MODEL_VDP):
    """PDM coefficients that turn the mismatched model into the plant.

    The difference of the two second-derivative equations is
    ``(mu_p - mu_m) vd + (mu_m beta_m - mu_p beta_p) v^2 vd + (rho_m - rho_p) u``;
    each term lands on its basis monomial.
    """
    theta = np.zeros(len(dist.VDP_PDM_TERMS))
    terms = list(dist.VDP_PDM_TERMS)
    theta[terms.index("vdot")] = plant.mu - model.mu
    theta[terms.index("vdot*v^2")] = model.mu * model.beta - plant.mu * plant.beta
    theta[terms.index("u")] = model.rho - plant.rho
    return theta


@pytest.fixture
def vdp_plant():
    return vanderpol_system(PLANT_VDP)


@pytest.fixture
def vdp_pdm_model():
    return PredictionModel(vanderpol_system(MODEL_VDP), dist.pdm_vanderpol(), 0.5, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
