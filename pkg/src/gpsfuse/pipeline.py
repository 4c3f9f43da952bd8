"""Chronological estimator: odometry keyframes, IMU links, GPS through the
global-frame stage machine, and a sliding-window solve per keyframe."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from . import factors as F
from .align import DEFAULT_SIGMA_THETA, GlobalFrameManager
from .geom import Pose3
from .graph import GraphProblem, SolverSettings
from .imu import (ImuNoise, ImuSample, NavState, PreintegratedImu, Preintegrator, correct_bias,
                  interpolate_sample, predict)

logger = logging.getLogger(__name__)

_EPS = 1e-9

ALIGNMENT_MODES = ("full", "svd_once", "none")


@dataclass
class EstimatorConfig:
    solver: SolverSettings = field(default_factory=SolverSettings)
    imu_noise: ImuNoise = field(default_factory=ImuNoise)
    p_SA: tuple = (0.0, 0.0, 0.0)
    sigma_theta: float = DEFAULT_SIGMA_THETA  # rad
    alignment: str = "full"  # "full" | "svd_once" | "none" (GPS ignored)
    bias_prior_sigma: tuple = (0.01, 0.1)  # rad/s, m/s^2
    reinit_timeout: float = 30.0  # s

    def __post_init__(self):
        if self.alignment not in ALIGNMENT_MODES:
            raise ValueError(f"alignment must be one of {ALIGNMENT_MODES}")


@dataclass
class LiveEstimate:
    t: float
    p_W: np.ndarray
    p_G: np.ndarray | None  # through the extrinsics known at that moment


@dataclass
class EstimatorResult:
    problem: GraphProblem
    events: list
    live: list
    rejected_gps: int
    final_report: object = None

    @property
    def ext(self) -> F.ExtrinsicsGW | None:
        return self.problem.ext

    def trajectory(self) -> tuple[np.ndarray, np.ndarray]:
        """Final state times and positions in W."""
        ids = self.problem.state_ids()
        t = np.array([self.problem.states[i].t for i in ids])
        p = np.array([self.problem.states[i].p for i in ids])
        return t, p


class _ImuStream:
    """Walks an IMU sample list forward, one pre-integration interval at a time."""

    def __init__(self, samples: list[ImuSample]):
        self.samples = samples
        self.times = np.array([s.t for s in samples])
        self.k = 0

    def at(self, t: float) -> ImuSample:
        i = int(np.searchsorted(self.times, t - _EPS))
        if i < len(self.times) and abs(self.times[i] - t) <= _EPS:
            return self.samples[i]
        if i == 0 or i >= len(self.times):
            raise ValueError(f"IMU data does not cover t={t}")
        return interpolate_sample(self.samples[i - 1], self.samples[i], t)

    def start(self, t0: float, bias_g, bias_a, noise) -> Preintegrator:
        pi = Preintegrator(bias_g, bias_a, noise)
        pi.add(self.at(t0))
        self.k = int(np.searchsorted(self.times, t0 + _EPS, side="right"))
        return pi

    def advance(self, pi: Preintegrator, t: float) -> PreintegratedImu:
        """Integrate up to ``t`` and return a snapshot ending exactly at ``t``."""
        while self.k < len(self.times) and self.times[self.k] < t - _EPS:
            pi.add(self.samples[self.k])
            self.k += 1
        if pi.t0 is not None and pi.t0 + pi.dt >= t - _EPS:
            return pi.result()
        if self.k < len(self.times) and abs(self.times[self.k] - t) <= _EPS:
            pi.add(self.samples[self.k])
            self.k += 1
            return pi.result()
        tail = copy.deepcopy(pi)
        tail.add(self.at(t))
        return tail.result()


def _initial_guess(prev: NavState, odo: F.RelPoseFactor, pre: PreintegratedImu, gravity) -> NavState:
    pred, _ = predict(prev, correct_bias(pre, prev.bg, prev.ba), gravity)
    T = Pose3(prev.q, prev.p) @ odo.T_ij
    return NavState(T.translation.copy(), T.rotation, pred.v, prev.bg.copy(), prev.ba.copy(), pred.t)


def run_estimator(initial: NavState, imu: list[ImuSample], odometry: list[F.RelPoseFactor],
                  gps: list[F.GpsMeasurement] | None = None,
                  config: EstimatorConfig | None = None, event_log=None) -> EstimatorResult:
    """Feed all data in time order and return the optimised problem.

    ``odometry[k]`` links keyframe ``k`` to ``k + 1``; keyframe 0 is
    ``initial`` (which also defines the world frame W).
    """
    cfg = config or EstimatorConfig()
    s = cfg.solver
    gps = [] if cfg.alignment == "none" or gps is None else sorted(gps, key=lambda g: g.t)
    if not odometry:
        raise ValueError("need at least one odometry factor")
    times = [odometry[0].t_i if odometry[0].t_i is not None else initial.t]
    times += [f.t_j for f in odometry]
    if any(t is None for t in times):
        raise ValueError("odometry factors must carry timestamps")

    problem = GraphProblem(s)
    grav = problem.gravity
    start = initial.copy()
    start.t = times[0]
    problem.add_state(start)
    problem.add_factor(F.BiasPriorFactor(0, start.bg.copy(), start.ba.copy(), *cfg.bias_prior_sigma))
    manager = GlobalFrameManager(problem, cfg.sigma_theta,
                                 "svd_once" if cfg.alignment == "svd_once" else "full",
                                 reinit_timeout=cfg.reinit_timeout, event_log=event_log)
    stream = _ImuStream(imu)
    p_SA = np.asarray(cfg.p_SA, dtype=float)
    live = [LiveEstimate(times[0], start.p.copy(), None)]
    rejected = 0
    gi = 0
    n_kf = len(times)

    for k in range(n_kf):
        t_k = times[k]
        sk = problem.states[k]
        pi = stream.start(t_k, sk.bg, sk.ba, cfg.imu_noise)
        t_next = times[k + 1] if k + 1 < n_kf else np.inf
        while gi < len(gps) and gps[gi].t < t_next - _EPS:
            g = gps[gi]
            gi += 1
            if g.t < t_k - _EPS:
                continue
            if g.t - t_k > s.max_gps_delay:
                rejected += 1
                continue
            if g.t > stream.times[-1] + _EPS:
                rejected += 1
                continue
            if g.t - t_k <= _EPS:
                pre = PreintegratedImu.empty(sk.bg, sk.ba, t_k)
            else:
                pre = stream.advance(pi, g.t)
            manager.add_measurement(F.GpsFactor(g, k, pre, p_SA))
        if k + 1 == n_kf:
            break
        pre = stream.advance(pi, t_next)
        odo = odometry[k]
        prev = problem.states[k]
        sid = problem.add_state(_initial_guess(prev, odo, pre, grav))
        problem.add_factor(F.ImuFactor(k, sid, pre))
        problem.add_factor(F.RelPoseFactor(k, sid, odo.T_ij, odo.covariance, t_k, t_next))
        problem.solve_window()
        manager.after_window_solve(t_next)
        new = problem.states[sid]
        ext = problem.ext
        live.append(LiveEstimate(t_next, new.p.copy(), ext.to_global(new.p) if ext is not None else None))

    manager.finish(times[-1])
    if cfg.alignment == "svd_once":
        # no alignment machinery: states fixed by the window stay as they are
        report = problem.solve_full(respect_fixation=True)
    else:
        report = problem.solve_full()
    if not np.isfinite(report.final_cost):
        raise FloatingPointError("estimator diverged: non-finite cost")
    return EstimatorResult(problem, manager.events, live, rejected, report)
