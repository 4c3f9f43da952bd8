"""Global-frame initialisation, observability gating and dropout alignment.

The W->G extrinsics start free, become fixed once their yaw is observable,
and after a GPS dropout the drifted trajectory segment is pulled back onto
the fixed frame in two steps: a uniform position shift as soon as GPS
returns, then a rotation + position correction once enough post-dropout
measurements make a fresh yaw estimate observable.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import factors as F
from .geom import Pose3, Rot3, exp_so3, log_so3
from .graph import GraphError, GraphProblem
from .imu import GRAVITY, NavState

logger = logging.getLogger(__name__)

DEFAULT_SIGMA_THETA = np.radians(1.0)


@dataclass
class ObservabilityReport:
    H: np.ndarray  # 4x4 over [dp_GW, dtheta]
    P: np.ndarray
    p_theta_theta: float  # rad^2
    observable: bool
    num_measurements: int


@dataclass
class AlignmentCorrection:
    T_Wnew_W: Pose3
    segment: tuple  # (first, last) state ids that were moved
    mode: str  # "position" | "full"
    delta_p: np.ndarray = field(default_factory=lambda: np.zeros(3))


# --- initialisation ------------------------------------------------------------

def svd_init(pairs) -> F.ExtrinsicsGW:
    """Closed-form yaw + translation fit of ``z_G ~ R_z(theta) p_W + t``.

    ``pairs`` is a sequence of ``(p_W, z_G)``. The horizontal cross-covariance
    of the centred point sets gives the yaw directly; the 2x2 Procrustes
    problem restricted to proper rotations reduces to one ``atan2``.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("svd_init needs at least two pairs")
    Pw = np.array([np.asarray(p, dtype=float) for p, _ in pairs])
    Zg = np.array([np.asarray(z, dtype=float) for _, z in pairs])
    pw_bar, zg_bar = Pw.mean(axis=0), Zg.mean(axis=0)
    a = Pw[:, :2] - pw_bar[:2]
    b = Zg[:, :2] - zg_bar[:2]
    if np.sum(a * a) < 1e-18:
        raise ValueError("degenerate pairs: no horizontal spread in p_W")
    s = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    c = np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1])
    theta = float(np.arctan2(s, c))
    ext = F.ExtrinsicsGW(theta, np.zeros(3))
    return F.ExtrinsicsGW(theta, zg_bar - ext.C @ pw_bar)


def horizontal_baseline(points) -> float:
    """Largest horizontal distance between any two points."""
    P = np.asarray(points, dtype=float)[:, :2]
    if len(P) < 2:
        return 0.0
    d = P[:, None, :] - P[None, :, :]
    return float(np.sqrt(np.max(np.sum(d * d, axis=-1))))


def gps_pairs(gps: list[F.GpsFactor], states: dict, gravity=GRAVITY) -> list[tuple]:
    """``(antenna position in W, z_G)`` for each factor at the current estimate."""
    out = []
    for f in gps:
        pred, _, _ = F.predicted_pose(f, states[f.state_id], gravity)
        out.append((F.antenna_position(pred, f.p_SA), f.measurement.z))
    return out


def assess_observability(gps: list[F.GpsFactor], states: dict, ext: F.ExtrinsicsGW,
                         sigma_theta: float = DEFAULT_SIGMA_THETA,
                         gravity=GRAVITY) -> ObservabilityReport:
    """Yaw observability of the extrinsics from the approximate Hessian."""
    if not gps:
        raise ValueError("assess_observability needs at least one GPS factor")
    H = np.zeros((4, 4))
    for f in gps:
        pred, cov, _ = F.predicted_pose(f, states[f.state_id], gravity)
        _, W = F._gps_residual_from_prediction(f, pred, cov, ext)
        E = F.gps_ext_jacobian(ext, F.antenna_position(pred, f.p_SA))
        H += E.T @ W @ E
    H = 0.5 * (H + H.T)
    ev = np.linalg.eigvalsh(H)
    if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
        P = np.full((4, 4), np.inf)
        return ObservabilityReport(H, P, float("inf"), False, len(gps))
    P = np.linalg.inv(H)
    ptt = float(P[3, 3])
    return ObservabilityReport(H, P, ptt, ptt < sigma_theta ** 2, len(gps))


# --- dropout handling ----------------------------------------------------------

def detect_dropout(problem: GraphProblem, incoming: F.GpsMeasurement | None = None) -> bool:
    """True when the newest state carrying a GPS factor is already fixed."""
    last = problem.last_gps_state()
    if last is None:
        return False
    return bool(problem.fixed[last])


def _pivot_for(problem: GraphProblem, anchor: int) -> int:
    older = [f.state_id for f in problem.gps_factors if f.state_id < anchor]
    if not older:
        raise GraphError("no GPS-anchored state before the dropout")
    return max(older)


def _implied_offset(problem: GraphProblem, trigger) -> tuple[int, np.ndarray]:
    """Matching state and the shift that makes the prediction agree with GPS."""
    ext = problem.ext
    if isinstance(trigger, F.GpsFactor):
        sid = trigger.state_id
        if sid not in problem.states:
            raise GraphError(f"no matching state for GPS at t={trigger.measurement.t}")
        pred, _, _ = F.predicted_pose(trigger, problem.states[sid], problem.gravity)
        z, p_SA = trigger.measurement.z, trigger.p_SA
    else:
        sid = problem.anchor_state_for(trigger.t)
        if sid is None:
            raise GraphError(f"no matching state for GPS at t={trigger.t}")
        s = problem.states[sid]
        # no pre-integration available: constant-velocity extrapolation
        pred = NavState(s.p + s.v * (trigger.t - s.t), s.q, s.v, s.bg, s.ba, trigger.t)
        z, p_SA = trigger.z, np.zeros(3)
    implied = ext.to_world(z) - pred.C @ p_SA
    return sid, implied - pred.p


def _shift_segment(problem: GraphProblem, pivot: int, last: int, delta: np.ndarray) -> None:
    """State ``pivot + k`` moves by ``k/K * delta``; later states by ``delta``."""
    K = last - pivot
    for sid in problem.state_ids():
        if sid <= pivot:
            continue
        frac = min(1.0, (sid - pivot) / K)
        s = problem.states[sid].copy()
        s.p = s.p + frac * delta
        problem.set_state(sid, s)


def position_align(problem: GraphProblem, trigger, pivot: int | None = None,
                   solve: bool = True) -> AlignmentCorrection:
    """Distribute the GPS position discrepancy uniformly over the dropout segment.

    ``trigger`` is the first post-dropout :class:`GpsFactor` (or a bare
    measurement, predicted at constant velocity from its anchor state).
    ``pivot`` is the last GPS-anchored state before the dropout; it is
    looked up in the problem when omitted.
    """
    if problem.ext is None:
        raise GraphError("position_align needs initialised extrinsics")
    sid, delta = _implied_offset(problem, trigger)
    if pivot is None:
        pivot = _pivot_for(problem, sid)
    if sid <= pivot:
        raise GraphError("matching state precedes the alignment pivot")
    _shift_segment(problem, pivot, sid, delta)
    if solve:
        problem.solve_full()
    return AlignmentCorrection(Pose3(Rot3(), delta), (pivot + 1, sid), "position", delta)


def full_align(problem: GraphProblem, new_gps: list[F.GpsFactor], pivot: int | None = None,
               ext_new: F.ExtrinsicsGW | None = None, solve: bool = True) -> AlignmentCorrection:
    """Rotate and shift the drifted segment using a re-initialised extrinsics estimate.

    ``ext_new`` is fitted from ``new_gps`` (post-dropout factors, evaluated
    at the current estimates) when not supplied. The drift
    ``T_Wnew_W = T_GWnew^-1 T_GW`` is undone fractionally: segment state
    ``k`` of ``K`` is rotated by ``Exp(k/K Log(dC))`` about the pivot
    position, then the position discrepancy at the last new measurement is
    distributed as in :func:`position_align`.
    """
    if problem.ext is None:
        raise GraphError("full_align needs initialised extrinsics")
    if not new_gps:
        raise ValueError("full_align needs post-dropout GPS factors")
    if ext_new is None:
        ext_new = svd_init(gps_pairs(new_gps, problem.states, problem.gravity))
    T_Wnew_W = ext_new.pose().inverse() @ problem.ext.pose()
    # maps drifted coordinates back into W
    corr = T_Wnew_W.inverse().rotation
    phi = log_so3(corr)
    if pivot is None:
        pivot = _pivot_for(problem, min(f.state_id for f in new_gps))
    ids = [i for i in problem.state_ids() if i > pivot]
    if not ids:
        raise GraphError("no states after the pivot")
    last = ids[-1]
    K = last - pivot
    p0 = problem.states[pivot].p
    for sid in ids:
        R = exp_so3((sid - pivot) / K * phi)
        Cm = R.matrix()
        s = problem.states[sid].copy()
        s.p = p0 + Cm @ (s.p - p0)
        s.q = R @ s.q
        s.v = Cm @ s.v
        problem.set_state(sid, s)
    trigger = new_gps[-1]
    sid, delta = _implied_offset(problem, trigger)
    _shift_segment(problem, pivot, sid, delta)
    if solve:
        problem.solve_full()
    return AlignmentCorrection(T_Wnew_W, (pivot + 1, last), "full", delta)


# --- stage machine ---------------------------------------------------------------

class Stage(enum.Enum):
    INITIALISATION = "initialisation"
    INITIALISED = "initialised"
    REINITIALISATION = "reinitialisation"


class GlobalFrameManager:
    """Feeds GPS factors into a problem and runs initialisation/alignment.

    ``mode="full"`` is the complete scheme. ``mode="svd_once"`` is the naive
    baseline: extrinsics fitted once as soon as the baseline allows, never
    gated, never fixed, and no dropout alignment.
    """

    def __init__(self, problem: GraphProblem, sigma_theta: float = DEFAULT_SIGMA_THETA,
                 mode: str = "full", baseline_factor: float = 3.0,
                 reinit_timeout: float = 30.0, event_log=None):
        if mode not in ("full", "svd_once"):
            raise ValueError(f"unknown alignment mode {mode!r}")
        self.problem = problem
        self.sigma_theta = float(sigma_theta)
        self.mode = mode
        self.baseline_factor = float(baseline_factor)
        self.reinit_timeout = float(reinit_timeout)
        self.stage = Stage.INITIALISATION
        self.pending: list[F.GpsFactor] = []
        self.reinit: list[F.GpsFactor] = []
        self.pivot: int | None = None
        self.events: list[dict] = []
        self._log = event_log

    def _event(self, t: float, kind: str, **data) -> None:
        rec = {"t": round(float(t), 9), "event": kind, "stage": self.stage.value}
        rec.update(data)
        self.events.append(rec)
        logger.info("align %s at t=%.3f", kind, t)
        if self._log is not None:
            self._log.write(json.dumps(rec) + "\n")

    def _baseline_ok(self, gps: list[F.GpsFactor]) -> bool:
        sig = gps[0].measurement.cov
        need = self.baseline_factor * np.sqrt(np.trace(sig))
        return horizontal_baseline([f.measurement.z for f in gps]) > need

    # --- feeding ---

    def add_measurement(self, factor: F.GpsFactor) -> None:
        t = factor.measurement.t
        if self.stage is Stage.INITIALISATION:
            self._add_initialising(factor, t)
        elif self.stage is Stage.INITIALISED:
            if detect_dropout(self.problem, factor.measurement):
                self._start_reinit(factor, t)
            else:
                self.problem.add_factor(factor)
        else:
            self._add_reinit(factor, t)

    def _add_initialising(self, factor: F.GpsFactor, t: float) -> None:
        p = self.problem
        if p.ext is not None:
            p.add_factor(factor)
            return
        self.pending.append(factor)
        if len(self.pending) < 2 or not self._baseline_ok(self.pending):
            return
        try:
            ext = svd_init(gps_pairs(self.pending, p.states, p.gravity))
        except ValueError:
            return
        p.set_extrinsics(ext)
        for f in self.pending:
            p.add_factor(f)
        self._event(t, "svd_init", yaw=ext.yaw, p_GW=ext.p_GW.tolist(), n=len(self.pending))
        self.pending = []

    def after_window_solve(self, t: float) -> None:
        """Gate the extrinsics after each window optimisation."""
        p = self.problem
        if self.mode != "full" or self.stage is not Stage.INITIALISATION or p.ext is None:
            return
        rep = assess_observability(p.gps_factors, p.states, p.ext, self.sigma_theta, p.gravity)
        if rep.observable:
            p.set_extrinsics(F.ExtrinsicsGW(p.ext.yaw, p.ext.p_GW, fixed=True))
            self.stage = Stage.INITIALISED
            self._event(t, "fixed", yaw=p.ext.yaw, p_GW=p.ext.p_GW.tolist(),
                        sigma_theta=float(np.sqrt(rep.p_theta_theta)))

    def _start_reinit(self, factor: F.GpsFactor, t: float) -> None:
        p = self.problem
        self.pivot = p.last_gps_state()
        p.add_factor(factor)
        corr = position_align(p, factor, self.pivot, solve=True)
        self.stage = Stage.REINITIALISATION
        self.reinit = [factor]
        self._event(t, "position_align", segment=list(corr.segment),
                    delta_p=corr.delta_p.tolist())

    def _add_reinit(self, factor: F.GpsFactor, t: float) -> None:
        # Post-dropout measurements stay out of the graph until the fresh yaw
        # estimate is observable; otherwise the window would already bend the
        # new states onto the old frame and hide the drift.
        p = self.problem
        self.reinit.append(factor)
        ext_new = None
        if self._baseline_ok(self.reinit):
            try:
                ext_new = svd_init(gps_pairs(self.reinit, p.states, p.gravity))
            except ValueError:
                ext_new = None
        if ext_new is not None:
            rep = assess_observability(self.reinit, p.states, ext_new, self.sigma_theta, p.gravity)
            if rep.observable:
                corr = full_align(p, self.reinit, self.pivot, ext_new, solve=False)
                self._flush_reinit()
                p.solve_full()
                T = corr.T_Wnew_W
                self._event(t, "full_align", segment=list(corr.segment),
                            yaw=float(log_so3(T.rotation)[2]),
                            translation=T.translation.tolist(), delta_p=corr.delta_p.tolist())
                return
        # live jump: keep the segment consistent with the newest measurement
        position_align(p, factor, self.pivot, solve=False)
        if t - self.reinit[0].measurement.t > self.reinit_timeout:
            self._flush_reinit()
            p.solve_full()
            self._event(t, "reinit_timeout", n=len(self.reinit))

    def _flush_reinit(self) -> None:
        # the first post-dropout factor entered the graph at detection
        for f in self.reinit[1:]:
            self.problem.add_factor(f)
        self.reinit = []
        self.stage = Stage.INITIALISED

    def finish(self, t: float) -> None:
        """Flush anything still buffered at the end of a run."""
        p = self.problem
        if self.stage is Stage.REINITIALISATION:
            self._flush_reinit()
            self._event(t, "reinit_unfinished")
        if self.pending and p.ext is None and len(self.pending) >= 2:
            try:
                ext = svd_init(gps_pairs(self.pending, p.states, p.gravity))
            except ValueError:
                return
            p.set_extrinsics(ext)
            for f in self.pending:
                p.add_factor(f)
            self.pending = []
            self._event(t, "svd_init", yaw=ext.yaw, p_GW=ext.p_GW.tolist(), n=len(p.gps_factors))
