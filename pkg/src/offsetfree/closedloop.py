"""Closed-loop simulation: plant, EKF, reference generator and NMPC.

Every sample runs, in order:

1. measure ``y(k)`` from the plant,
2. EKF measurement update -> ``x(k|k)``, ``theta(k|k)``, ``e(k)``,
3. reference generator with ``theta(k|k)``: steady-state targets for
   piecewise-constant references, one period for periodic ones, and the
   preview ``r(k..k+M)`` otherwise,
4. NMPC from ``x(k|k)`` -> ``u(k)``,
5. plant step under ``u(k)``,
6. EKF time update with ``u(k)``.
"""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import ekf as ekf_mod
from . import nmpc as nmpc_mod
from . import refgen
from .disturbance import cdm
from .dynamics import rk4_step
from .errors import ClosedLoopError, EmptyLogError, NoSteadyStateError, OffsetFreeError
from .model import PredictionModel

log = logging.getLogger(__name__)

__all__ = ["Scenario", "ClosedLoop", "ClosedLoopLog", "Metrics", "run", "metrics"]


@dataclass
class Scenario:
    """Everything needed to simulate one closed loop.

    ``ekf`` holds ``Q_x``, ``Q_theta``, ``Q_y`` and optionally ``P0`` and
    ``x0`` (the initial state estimate; by default the plant's initial
    output lifted to a model steady state).
    """

    name: str
    plant: object
    plant_x0: np.ndarray
    model: object
    theta0: np.ndarray
    ekf: dict
    nmpc: object
    reference: object
    steps: int
    seed: int = 0
    preview: int = None
    state_guess: tuple = None
    meta: dict = field(default_factory=dict)

    @property
    def M(self):
        return self.nmpc.N + 5 if self.preview is None else self.preview


@dataclass
class ClosedLoopLog:
    """Per-sample record of a run (arrays have one row per sample)."""

    k: np.ndarray
    t: np.ndarray
    r: np.ndarray
    y: np.ndarray
    e: np.ndarray
    u: np.ndarray
    xhat: np.ndarray
    theta: np.ndarray
    nmpc_iters: np.ndarray
    nmpc_kkt: np.ndarray
    refgen_res: np.ndarray

    def __len__(self):
        return len(self.k)

    @classmethod
    def from_records(cls, records, p=1, nu=1, nx=2, ntheta=1):
        if not records:
            return cls(np.zeros(0, int), np.zeros(0), np.zeros((0, p)), np.zeros((0, p)),
                       np.zeros((0, p)), np.zeros((0, nu)), np.zeros((0, nx)),
                       np.zeros((0, ntheta)), np.zeros(0, int), np.zeros(0), np.zeros(0))
        cols = {f: [rec[f] for rec in records] for f in records[0]}
        return cls(
            k=np.array(cols["k"], dtype=int),
            t=np.array(cols["t"], dtype=float),
            r=np.vstack(cols["r"]),
            y=np.vstack(cols["y"]),
            e=np.vstack(cols["e"]),
            u=np.vstack(cols["u"]),
            xhat=np.vstack(cols["xhat"]),
            theta=np.vstack(cols["theta"]),
            nmpc_iters=np.array(cols["nmpc_iters"], dtype=int),
            nmpc_kkt=np.array(cols["nmpc_kkt"], dtype=float),
            refgen_res=np.array(cols["refgen_res"], dtype=float),
        )

    # -- CSV ---------------------------------------------------------------
    _GROUPS = ("r", "y", "e", "u", "xhat", "theta")

    def header(self):
        cols = ["k", "t"]
        for g in self._GROUPS:
            cols += [f"{g}_{i}" for i in range(getattr(self, g).shape[1])]
        return cols + ["nmpc_iters", "nmpc_kkt", "refgen_res"]

    def to_csv(self, path_or_buffer):
        """Write one row per sample; floats use ``repr`` so they round-trip exactly."""
        own = isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__")
        fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for i in range(len(self)):
                row = [str(int(self.k[i])), repr(float(self.t[i]))]
                for g in self._GROUPS:
                    row += [repr(float(v)) for v in getattr(self, g)[i]]
                row += [str(int(self.nmpc_iters[i])), repr(float(self.nmpc_kkt[i])),
                        repr(float(self.refgen_res[i]))]
                w.writerow(row)
        finally:
            if own:
                fh.close()

    def to_csv_string(self):
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path_or_buffer):
        own = isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__")
        fh = open(path_or_buffer, newline="") if own else path_or_buffer
        try:
            rows = list(csv.reader(fh))
        finally:
            if own:
                fh.close()
        head, body = rows[0], rows[1:]
        data = np.array(body, dtype=float).reshape(len(body), len(head))
        col = {name: i for i, name in enumerate(head)}

        def group(g):
            idx = [i for name, i in col.items() if name.rsplit("_", 1)[0] == g and name[len(g):len(g) + 1] == "_"
                   and name[len(g) + 1:].isdigit()]
            return data[:, sorted(idx)]

        return cls(
            k=data[:, col["k"]].astype(int),
            t=data[:, col["t"]],
            r=group("r"), y=group("y"), e=group("e"), u=group("u"),
            xhat=group("xhat"), theta=group("theta"),
            nmpc_iters=data[:, col["nmpc_iters"]].astype(int),
            nmpc_kkt=data[:, col["nmpc_kkt"]],
            refgen_res=data[:, col["refgen_res"]],
        )


class ClosedLoop:
    """Mutable state of one run; call :meth:`step` once per sample."""

    def __init__(self, scenario):
        self.scenario = sc = scenario
        self.model = sc.model
        self.k = 0
        self.x_plant = np.asarray(sc.plant_x0, dtype=float).copy()
        y0 = self.plant_output()
        cfg = sc.ekf
        theta0 = np.asarray(sc.theta0, dtype=float)
        if cfg.get("x0") is not None:
            x0 = np.asarray(cfg["x0"], dtype=float)
        else:
            x0 = self._initial_estimate(theta0, y0)
        self.ekf = ekf_mod.initial_state(x0, theta0, cfg["Q_x"], cfg["Q_theta"], cfg["Q_y"], cfg.get("P0"))
        self.targets = None
        self._cycle = None
        self.solution = None
        self.records = []

    def _initial_estimate(self, theta0, y0):
        # model steady state at the first measurement; an untrained network may
        # have none nearby, then the undisturbed nominal model is used instead
        sc = self.scenario
        try:
            return refgen.solve_steady_state(self.model, theta0, y0, guess=sc.state_guess)[0]
        except NoSteadyStateError as exc:
            log.info("no model steady state at theta0 (%s); using the nominal model", exc)
        nominal = PredictionModel(self.model.system, cdm(self.model.n_x, self.model.n_u, self.model.n_y),
                                  self.model.sample_time, self.model.substeps)
        try:
            return refgen.solve_steady_state(nominal, np.zeros(1), y0, guess=sc.state_guess)[0]
        except OffsetFreeError as exc:
            raise ClosedLoopError(0, "initialization", exc) from exc

    def plant_output(self):
        return np.atleast_1d(self.x_plant[self.scenario.plant.output_index])

    def _targets(self, k, est, r_win, u_win):
        sc, m = self.scenario, self.model
        guess = (est.x, np.zeros(m.n_u)) if sc.state_guess is None else sc.state_guess
        kind = sc.reference.kind
        if kind == "piecewise-constant":
            # set-point: steady state for the current sample only, no preview
            if self.targets is not None:
                guess = (self.targets.x_r[0], self.targets.u_r[0])
            return refgen.steady_state_targets(m, est.theta, r_win[0], len(r_win), guess=guess)
        if kind == "periodic":
            T = sc.reference.period
            r_per, u_per = sc.reference.window(k, T)
            prev = self._cycle
            if prev is not None:
                prev = refgen.TargetTrajectory(np.roll(prev.x_r, -1, axis=0), np.roll(prev.u_r, -1, axis=0),
                                               np.roll(prev.d_r, -1, axis=0), prev.theta)
            self._cycle = cyc = refgen.solve_periodic(m, est.theta, r_per, nominal_input=u_per,
                                                      guess=guess, warm_start=prev)
            idx = np.arange(len(r_win)) % T
            return refgen.TargetTrajectory(cyc.x_r[idx], cyc.u_r[idx], cyc.d_r[idx], cyc.theta,
                                           cyc.residual, cyc.iterations)
        return refgen.solve_preview(m, est.theta, r_win, u_win, warm_start=self.targets, guess=guess)

    def step(self):
        """Advance one sample and return the log record."""
        sc, k = self.scenario, self.k
        stage = "plant"
        try:
            y = self.plant_output()
            stage = "ekf"
            est = ekf_mod.measurement_update(self.ekf, self.model, y)
            stage = "refgen"
            r_win, u_win = sc.reference.window(k, sc.M + 1)
            self.targets = self._targets(k, est, r_win, u_win)
            stage = "nmpc"
            self.solution = nmpc_mod.solve(sc.nmpc, self.model, est.x, est.theta, self.targets,
                                           warm_start=self.solution)
            u = self.solution.u0
            stage = "plant"
            self.x_plant = np.asarray(rk4_step(sc.plant, self.x_plant, u, None,
                                               self.model.sample_time, self.model.substeps))
            stage = "ekf"
            self.ekf = ekf_mod.time_update(est, self.model, u)
        except OffsetFreeError as exc:
            raise ClosedLoopError(k, stage, exc) from exc
        rec = {
            "k": k,
            "t": k * self.model.sample_time,
            "r": r_win[0],
            "y": y,
            "e": est.e,
            "u": np.atleast_1d(u),
            "xhat": est.x,
            "theta": est.theta,
            "nmpc_iters": self.solution.iterations,
            "nmpc_kkt": self.solution.kkt_residual,
            "refgen_res": self.targets.residual,
        }
        self.records.append(rec)
        self.k += 1
        return rec

    def log(self):
        m = self.model
        return ClosedLoopLog.from_records(self.records, m.n_y, m.n_u, m.n_x, m.n_theta)


def run(scenario, steps=None):
    """Simulate ``scenario`` for ``steps`` samples (default ``scenario.steps``)."""
    loop = ClosedLoop(scenario)
    n = scenario.steps if steps is None else steps
    for _ in range(n):
        loop.step()
    return loop.log()


@dataclass
class Metrics:
    rms_error: float
    max_tail_error: float
    max_tail_innovation: float
    tail_fraction: float
    theorem1_inconsistent: bool = False

    def report(self, name=""):
        lines = [f"scenario: {name}"] if name else []
        lines += [
            f"rms_error: {self.rms_error!r}",
            f"max_tail_error: {self.max_tail_error!r}",
            f"max_tail_innovation: {self.max_tail_innovation!r}",
            f"tail_fraction: {self.tail_fraction!r}",
            f"theorem1_inconsistent: {self.theorem1_inconsistent}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse_report(cls, text):
        vals = {}
        for line in text.splitlines():
            key, _, v = line.partition(":")
            vals[key.strip()] = v.strip()
        return cls(float(vals["rms_error"]), float(vals["max_tail_error"]),
                   float(vals["max_tail_innovation"]), float(vals["tail_fraction"]),
                   vals["theorem1_inconsistent"] == "True")


def metrics(log, tail_fraction=0.2, innovation_tol=1e-8, error_gain=10.0, error_floor=1e-6):
    """Tracking metrics of a run.

    ``rms_error`` covers the whole run; the ``max_tail_*`` values cover the
    final ``tail_fraction`` of samples.  ``theorem1_inconsistent`` is set
    when the tail innovation has vanished (``<= innovation_tol``) while the
    tail tracking error stays above ``max(error_gain * innovation,
    error_floor)``: a vanishing prediction error should imply tracking, so
    this points at a model or controller that cannot reproduce the
    reference.
    """
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    n = len(log)
    if n == 0:
        raise EmptyLogError("cannot compute metrics of an empty log")
    err = log.y - log.r
    start = n - max(1, int(np.ceil(tail_fraction * n)))
    tail_err = float(np.max(np.abs(err[start:])))
    tail_inn = float(np.max(np.abs(log.e[start:])))
    inconsistent = tail_inn <= innovation_tol and tail_err > max(error_gain * tail_inn, error_floor)
    return Metrics(float(np.sqrt(np.mean(err**2))), tail_err, tail_inn, tail_fraction, inconsistent)
