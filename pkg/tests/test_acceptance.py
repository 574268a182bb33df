"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The verdicts are printed in an "acceptance criteria" section at the end of
the pytest run (and by each test itself under ``pytest -s``).
"""

import io

import numpy as np
import pytest

from conftest import RUN_SECONDS, preset_metrics, preset_run, record_criterion, vdp_theta_star
from offsetfree import ClosedLoopLog, load_preset_config, preset, run
from offsetfree import autodiff as ad
from offsetfree import disturbance as dist
from offsetfree.dynamics import OdeSystem
from offsetfree.ekf import initial_state, measurement_update, time_update
from offsetfree.model import PredictionModel
from offsetfree.nmpc import NmpcConfig, solve

FAMILIES = ("cdm", "pdm", "fnn")


def verdict(number, title, ok, detail):
    record_criterion(number, title, ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    assert ok, f"criterion {number} ({title}): {detail}"


def segment_ends(r):
    change = np.flatnonzero(np.diff(r) != 0)
    return [int(i) for i in change] + [len(r) - 1]


def test_criterion_01_offset_free_set_point_tracking():
    worst, slowest, lines = 0.0, 0.0, []
    for fam in FAMILIES:
        name = f"vdp-pwc-{fam}"
        lg = preset_run(name)
        assert len(lg) == 200
        ends = segment_ends(lg.r[:, 0])
        errs = np.abs(lg.y[ends, 0] - lg.r[ends, 0])
        secs = RUN_SECONDS[name, None]
        worst, slowest = max(worst, errs.max()), max(slowest, secs)
        lines.append(f"{fam} " + "/".join(f"{e:.1e}" for e in errs) + f" in {secs:.1f}s")
    verdict(1, "set-point tracking on vdp-pwc", worst <= 1e-3 and slowest < 10.0,
            f"segment-end |y-r| {'; '.join(lines)} (need <= 1e-3, < 10 s)")


def test_criterion_02_pdm_generic_tracking():
    m = preset_metrics("vdp-generic-pdm")
    ok = m.max_tail_error <= 1e-3 and m.max_tail_innovation <= 1e-4
    verdict(2, "PDM tracking on vdp-generic", ok,
            f"tail |y-r| {m.max_tail_error:.2e} (<= 1e-3), tail |e| {m.max_tail_innovation:.2e} (<= 1e-4)")


def test_criterion_03_pdm_parameter_convergence():
    theta = preset_run("vdp-generic-pdm").theta[-1]
    star = vdp_theta_star()
    terms = list(dist.VDP_PDM_TERMS)
    tol = np.full(star.size, 0.02)
    tol[terms.index("vdot*v^2")] = 0.03
    dev = np.abs(theta - star)
    ok = bool(np.all(dev <= tol))
    worst = int(np.argmax(dev / tol))
    verdict(3, "PDM parameter convergence", ok,
            f"theta_2 {theta[1]:+.3f} (0.2), theta_8 {theta[7]:+.3f} (-0.28), theta_10 {theta[9]:+.3f} "
            f"({star[9]:+.2f}); worst component theta_{worst + 1} off by {dev[worst]:.3f}")


def test_criterion_04_cdm_degradation_and_ordering():
    rms = {fam: preset_metrics(f"vdp-generic-{fam}").rms_error for fam in FAMILIES}
    ok = rms["cdm"] >= 5 * rms["pdm"] and rms["pdm"] < rms["fnn"] < rms["cdm"]
    verdict(4, "model ordering on vdp-generic", ok,
            f"rms CDM {rms['cdm']:.3g}, FNN {rms['fnn']:.3g}, PDM {rms['pdm']:.3g}")


def test_criterion_05_fnn_parameter_count():
    n = dist.param_count(dist.fnn(2, 1, 1, hx_hidden=(6, 6), hy_hidden=(4,)))
    verdict(5, "Van der Pol FNN parameter count", n == 97, f"{n} (need 97)")


def test_criterion_06_ekf_matches_kalman_filter():
    A = np.array([[0.9, 0.2], [-0.1, 0.8]])
    Bu = np.array([0.5, 1.0])
    sys = OdeSystem("linear2", 2, 1, 0, rhs=lambda x, u, d=None: ad.matvec(A, x) + ad.matvec(Bu[:, None], u),
                    output_index=0, discrete=True)
    model = PredictionModel(sys, dist.cdm(2), 1.0, 1)
    Aa = np.block([[A, np.zeros((2, 1))], [np.zeros((1, 2)), np.eye(1)]])
    C = np.array([[1.0, 0.0, 1.0]])
    Q, R = np.diag([0.01, 0.02, 0.005]), np.array([[0.1]])
    z, P = np.array([0.3, -0.2, 0.1]), np.diag([1.0, 2.0, 0.5])
    ekf = initial_state(z[:2], z[2:], Q[:2, :2], Q[2:, 2:], R, P0=P)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        y, u = rng.normal(size=1), rng.normal(size=1)
        K = P @ C.T @ np.linalg.inv(C @ P @ C.T + R)
        z, P = z + K @ (y - C @ z), (np.eye(3) - K @ C) @ P
        est = measurement_update(ekf, model, y)
        worst = max(worst, np.abs(np.concatenate([est.x, est.theta]) - z).max(), np.abs(est.P - P).max())
        z, P = Aa @ z + np.append(Bu * u, 0.0), Aa @ P @ Aa.T + Q
        ekf = time_update(est, model, u)
        worst = max(worst, np.abs(np.concatenate([ekf.x_pred, ekf.theta_pred]) - z).max(),
                    np.abs(ekf.P_pred - P).max())
    verdict(6, "EKF vs augmented Kalman filter", worst <= 1e-12, f"max deviation {worst:.1e} over 100 steps")


def test_criterion_07_nmpc_matches_kkt_oracle():
    sys = OdeSystem("scalar", 1, 1, 0, rhs=lambda x, u, d=None: 0.5 * x + u, discrete=True)
    model = PredictionModel(sys, dist.cdm(1), 1.0, 1)
    cfg = NmpcConfig(N=2, W_x=[[1.0]], W_u=[[1.0]])
    sol = solve(cfg, model, np.array([1.0]), [0.0], (np.zeros((3, 1)), np.zeros((3, 1))))
    # dense KKT over (x1, x2, u0, u1): cost x1^2 + u0^2 + u1^2, dynamics and x2 = 0
    H = 2 * np.diag([1.0, 0.0, 1.0, 1.0])
    E = np.array([[1.0, 0.0, -1.0, 0.0], [-0.5, 1.0, 0.0, -1.0], [0.0, 1.0, 0.0, 0.0]])
    e = np.array([0.5, 0.0, 0.0])
    K = np.block([[H, E.T], [E, np.zeros((3, 3))]])
    oracle = np.linalg.solve(K, np.concatenate([np.zeros(4), e]))[:4]
    got = np.array([sol.states[1, 0], sol.states[2, 0], sol.inputs[0, 0], sol.inputs[1, 0]])
    dev = np.abs(got - oracle).max()
    verdict(7, "NMPC vs dense KKT on scalar LQ", dev <= 1e-8 and sol.iterations == 1,
            f"deviation {dev:.1e}, {sol.iterations} SQP iteration(s)")


def _random_point(system, family, n_theta, rng):
    if system == "vdp":
        x, u = rng.uniform(-1.5, 1.5, size=2), rng.uniform(-1, 1, size=1)
    else:
        x, u = np.array([rng.uniform(300, 325), rng.uniform(7.5, 9.5)]), rng.uniform(290, 306, size=1)
    theta = rng.uniform(-0.5, 0.5, size=n_theta) if family != "pdm" else rng.uniform(-0.1, 0.1, size=n_theta)
    return x, u, theta


def _central(f, z, h):
    cols = []
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h[i]
        cols.append((f(z + e) - f(z - e)) / (2 * h[i]))
    return np.stack(cols, axis=-1)


def test_criterion_08_jacobian_consistency():
    rng = np.random.default_rng(8)
    worst, lines = 0.0, []
    for system in ("vdp", "cstr"):
        for fam in FAMILIES:
            model = preset(f"{system}-generic-{fam}", steps=1).model
            nx, nt = model.n_x, model.n_theta
            fam_worst = 0.0
            for _ in range(100):
                x, u, theta = _random_point(system, fam, nt, rng)
                z = np.concatenate([x, theta])
                h = 1e-6 * np.maximum(1.0, np.abs(z))
                A, C = model.linearize(x, u, theta)
                fd_f = _central(lambda s: model.predict_state(s[:nx], u, s[nx:]), z, h)
                fd_h = _central(lambda s: model.predict_output(s[:nx], s[nx:]), z, h)
                for an, fd in ((A[:nx], fd_f), (C, fd_h)):
                    # mixed absolute/relative error, so kelvin-sized entries are judged fairly
                    fam_worst = max(fam_worst, float(np.max(np.abs(an - fd) / np.maximum(1.0, np.abs(fd)))))
            worst = max(worst, fam_worst)
            lines.append(f"{system}-{fam} {fam_worst:.1e}")
    verdict(8, "linearize vs central differences", worst <= 1e-6,
            "worst error " + ", ".join(lines) + " over 100 points each")


def test_criterion_09_cstr_reproduction():
    m = {fam: preset_metrics(f"cstr-generic-{fam}") for fam in FAMILIES}
    rms = {fam: m[fam].rms_error for fam in FAMILIES}
    ordered = rms["cdm"] > rms["fnn"] > rms["pdm"]
    ok = m["pdm"].max_tail_error <= 1e-3 and ordered
    verdict(9, "CSTR qualitative reproduction", ok,
            f"PDM tail |y-r| {m['pdm'].max_tail_error:.2e} (<= 1e-3); rms CDM {rms['cdm']:.3g} > "
            f"FNN {rms['fnn']:.3g} > PDM {rms['pdm']:.3g}: {ordered}")


def test_criterion_10_determinism():
    name = "vdp-pwc-fnn"
    first = preset_run(name).to_csv_string()
    second = run(preset(name)).to_csv_string()
    assert ClosedLoopLog.from_csv(io.StringIO(second)).k.size == 200
    verdict(10, "byte-identical logs for equal seeds", first == second,
            f"{name}: two {len(first)}-byte CSV logs {'identical' if first == second else 'differ'}")


@pytest.mark.parametrize("name", [f"{s}-{fam}" for s in ("vdp-pwc", "vdp-generic", "cstr-generic")
                                  for fam in FAMILIES])
def test_presets_complete(name):
    lg = preset_run(name)
    assert len(lg) == load_preset_config(name)["steps"]
    assert np.all(np.isfinite(lg.y))
