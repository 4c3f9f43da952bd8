"""Trapezoidal IMU pre-integration, bias correction and state prediction.

Two error-state orderings appear in this module:

* pre-integration error ``[d_alpha, d_beta, d_gamma, d_bg, d_ba]``
  (rotation, velocity, position, gyro bias, accel bias),
* navigation-state error ``[dp, dphi, dv, dbg, dba]`` used by the graph.

The pre-integrated rotation error is a left perturbation,
``alpha = Exp(d_alpha) @ alpha_bar``, matching the pose convention.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geom import Rot3, exp_matrix, exp_so3, right_jacobian, skew

logger = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])

# navigation-state error slices
P, PHI, V, BG, BA = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)
# pre-integration error slices
IA, IB, IG = slice(0, 3), slice(3, 6), slice(6, 9)

_BIAS_WARN_G = 0.05
_BIAS_WARN_A = 0.5
_TIME_EPS = 1e-9


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray  # rad/s, body frame
    accel: np.ndarray  # m/s^2, specific force in body frame


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time noise densities."""

    gyro: float = 1e-3  # rad/s/sqrt(Hz)
    accel: float = 1e-2  # m/s^2/sqrt(Hz)
    gyro_walk: float = 1e-5  # rad/s^2/sqrt(Hz)
    accel_walk: float = 1e-4  # m/s^3/sqrt(Hz)


@dataclass
class NavState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: Rot3 = field(default_factory=Rot3)
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.bg = np.asarray(self.bg, dtype=float).reshape(3)
        self.ba = np.asarray(self.ba, dtype=float).reshape(3)

    @property
    def C(self) -> np.ndarray:
        return self.q.matrix()

    def copy(self) -> NavState:
        return NavState(self.p.copy(), self.q, self.v.copy(), self.bg.copy(), self.ba.copy(), self.t)

    def retract(self, dx: np.ndarray) -> NavState:
        """Apply a 15-dim error-state increment."""
        return NavState(self.p + dx[P], exp_so3(dx[PHI]) @ self.q, self.v + dx[V],
                        self.bg + dx[BG], self.ba + dx[BA], self.t)


@dataclass(frozen=True)
class PreintegratedImu:
    """Relative motion terms between two timestamps.

    ``alpha``, ``beta``, ``gamma`` hold the terms for the bias
    ``(bias_g, bias_a)``; ``alpha0`` etc. hold them at the linearisation
    bias ``(lin_bias_g, lin_bias_a)``. ``jacobian`` is 9x6 with rows
    ``[alpha, beta, gamma]`` and columns ``[b_g, b_a]``; its rotation rows
    are a right perturbation, ``alpha(b) = alpha0 @ Exp(J_ag @ db_g)``.
    """

    alpha: Rot3
    beta: np.ndarray
    gamma: np.ndarray
    dt: float
    bias_g: np.ndarray
    bias_a: np.ndarray
    jacobian: np.ndarray
    covariance: np.ndarray
    t0: float = 0.0
    alpha0: Rot3 | None = None
    beta0: np.ndarray | None = None
    gamma0: np.ndarray | None = None
    lin_bias_g: np.ndarray | None = None
    lin_bias_a: np.ndarray | None = None

    def __post_init__(self):
        if self.alpha0 is None:
            object.__setattr__(self, "alpha0", self.alpha)
            object.__setattr__(self, "beta0", self.beta)
            object.__setattr__(self, "gamma0", self.gamma)
            object.__setattr__(self, "lin_bias_g", self.bias_g)
            object.__setattr__(self, "lin_bias_a", self.bias_a)

    @property
    def t1(self) -> float:
        return self.t0 + self.dt

    @classmethod
    def empty(cls, bias_g=None, bias_a=None, t0: float = 0.0) -> PreintegratedImu:
        bg = np.zeros(3) if bias_g is None else np.asarray(bias_g, dtype=float)
        ba = np.zeros(3) if bias_a is None else np.asarray(bias_a, dtype=float)
        return cls(Rot3(), np.zeros(3), np.zeros(3), 0.0, bg, ba,
                   np.zeros((9, 6)), np.zeros((15, 15)), t0)


class Preintegrator:
    """Incremental trapezoidal pre-integration.

    Feed samples in time order with :meth:`add`; :meth:`result` may be
    called at any point to snapshot the terms accumulated so far.
    """

    def __init__(self, bias_g=None, bias_a=None, noise: ImuNoise | None = None):
        self.bias_g = np.zeros(3) if bias_g is None else np.array(bias_g, dtype=float)
        self.bias_a = np.zeros(3) if bias_a is None else np.array(bias_a, dtype=float)
        self.noise = noise or ImuNoise()
        self._prev: ImuSample | None = None
        self.t0 = None
        self.dt = 0.0
        self.alpha = np.eye(3)
        self.beta = np.zeros(3)
        self.gamma = np.zeros(3)
        self.jac = np.zeros((9, 6))  # left-perturbation form internally
        self.cov = np.zeros((15, 15))
        self._F = np.eye(15)
        self._eye3 = np.eye(3)
        n = self.noise
        self._q_white = np.repeat([n.gyro ** 2, n.accel ** 2], 3)
        self._q_walk = np.repeat([n.gyro_walk ** 2, n.accel_walk ** 2], 3)
        self._walk_idx = (np.arange(9, 15), np.arange(9, 15))

    def add(self, sample: ImuSample) -> None:
        if self._prev is None:
            self._prev = sample
            self.t0 = sample.t
            return
        h = sample.t - self._prev.t
        if h <= 0.0:
            raise ValueError(f"non-monotone IMU timestamps: {self._prev.t} -> {sample.t}")
        w = 0.5 * (self._prev.gyro + sample.gyro) - self.bias_g
        a = 0.5 * (self._prev.accel + sample.accel) - self.bias_a
        self._step(w, a, h)
        self._prev = sample

    def _step(self, w: np.ndarray, a: np.ndarray, h: float) -> None:
        # Rodrigues terms shared by Exp(w h) and its right Jacobian
        phi = w * h
        th2 = float(phi @ phi)
        K = np.array([[0.0, -phi[2], phi[1]], [phi[2], 0.0, -phi[0]], [-phi[1], phi[0], 0.0]])
        KK = K @ K
        if th2 < 1e-10:
            c1, c2, c3 = 1.0 - th2 / 6.0, 0.5 - th2 / 24.0, 1.0 / 6.0 - th2 / 120.0
        else:
            th = np.sqrt(th2)
            sn, cs = np.sin(th), np.cos(th)
            c1, c2, c3 = sn / th, (1.0 - cs) / th2, (th - sn) / (th2 * th)
        expm = self._eye3 + c1 * K + c2 * KK
        Jr = self._eye3 - c2 * K + c3 * KK

        R0 = self.alpha
        R1 = R0 @ expm
        Ra0, Ra1 = R0 @ a, R1 @ a
        Rbar = 0.5 * (R0 + R1)

        dbeta = Rbar @ a * h
        self.gamma = self.gamma + self.beta * h + 0.5 * dbeta * h
        self.beta = self.beta + dbeta
        self.alpha = R1

        # linearised transition of [d_alpha, d_beta, d_gamma, d_bg, d_ba];
        # only the blocks written below differ from the identity
        F = self._F
        A_bg = -(R1 @ Jr) * h
        s = Ra0 + Ra1
        B_a = -0.5 * h * np.array([[0.0, -s[2], s[1]], [s[2], 0.0, -s[0]], [-s[1], s[0], 0.0]])
        S1 = np.array([[0.0, -Ra1[2], Ra1[1]], [Ra1[2], 0.0, -Ra1[0]], [-Ra1[1], Ra1[0], 0.0]])
        B_bg = -0.5 * h * S1 @ A_bg
        B_ba = -Rbar * h
        F[IA, 9:12] = A_bg
        F[IB, IA] = B_a
        F[IB, 9:12] = B_bg
        F[IB, 12:15] = B_ba
        F[IG, IB] = self._eye3 * h
        F[IG, IA] = 0.5 * h * B_a
        F[IG, 9:12] = 0.5 * h * B_bg
        F[IG, 12:15] = 0.5 * h * B_ba

        # white noise enters exactly like a bias error on the same step
        B = F[:9, 9:15]
        cov = F @ self.cov @ F.T
        cov[:9, :9] += (B * (self._q_white / h)) @ B.T
        cov[self._walk_idx] += self._q_walk * h
        self.cov = cov
        self.jac = F[:9, :9] @ self.jac + B
        self.dt += h

    def result(self) -> PreintegratedImu:
        if self.t0 is None:
            raise ValueError("no samples integrated")
        jac = self.jac.copy()
        jac[0:3] = self.alpha.T @ jac[0:3]
        cov = 0.5 * (self.cov + self.cov.T)
        return PreintegratedImu(Rot3.from_matrix(self.alpha), self.beta.copy(), self.gamma.copy(),
                                self.dt, self.bias_g.copy(), self.bias_a.copy(), jac, cov, self.t0)


def preintegrate(samples: Sequence[ImuSample], bias=(None, None),
                 noise: ImuNoise | None = None) -> PreintegratedImu:
    """Pre-integrate an ordered list of samples (at least two)."""
    if len(samples) < 2:
        raise ValueError("pre-integration needs at least two samples")
    pi = Preintegrator(bias[0], bias[1], noise)
    for s in samples:
        pi.add(s)
    return pi.result()


def interpolate_sample(a: ImuSample, b: ImuSample, t: float) -> ImuSample:
    u = (t - a.t) / (b.t - a.t)
    return ImuSample(t, (1.0 - u) * a.gyro + u * b.gyro, (1.0 - u) * a.accel + u * b.accel)


def slice_samples(samples: Sequence[ImuSample], t0: float, t1: float,
                  times: np.ndarray | None = None) -> list[ImuSample]:
    """Samples covering ``[t0, t1]``; boundary samples linearly interpolated.

    ``times`` may carry the precomputed array of sample timestamps.
    """
    if times is None:
        times = np.array([s.t for s in samples])
    if t0 < times[0] - _TIME_EPS or t1 > times[-1] + _TIME_EPS or t1 < t0:
        raise ValueError(f"interval [{t0}, {t1}] outside IMU buffer")

    def at(t):
        i = int(np.searchsorted(times, t - _TIME_EPS))
        if i < len(times) and abs(times[i] - t) <= _TIME_EPS:
            return samples[i]
        return interpolate_sample(samples[i - 1], samples[i], t)

    if t1 - t0 <= _TIME_EPS:
        return [at(t0)]
    lo = int(np.searchsorted(times, t0 + _TIME_EPS, side="right"))
    hi = int(np.searchsorted(times, t1 - _TIME_EPS, side="left"))
    return [at(t0), *samples[lo:hi], at(t1)]


def correct_bias(pre: PreintegratedImu, bias_g, bias_a) -> PreintegratedImu:
    """First-order bias update about the linearisation point."""
    bias_g = np.asarray(bias_g, dtype=float)
    bias_a = np.asarray(bias_a, dtype=float)
    if np.array_equal(bias_g, pre.bias_g) and np.array_equal(bias_a, pre.bias_a):
        return pre
    dbg = bias_g - pre.lin_bias_g
    dba = bias_a - pre.lin_bias_a
    if not dbg.any() and not dba.any():
        return replace(pre, alpha=pre.alpha0, beta=pre.beta0, gamma=pre.gamma0,
                       bias_g=pre.lin_bias_g, bias_a=pre.lin_bias_a)
    if np.linalg.norm(dbg) > _BIAS_WARN_G or np.linalg.norm(dba) > _BIAS_WARN_A:
        logger.warning("large bias correction (|dbg|=%.3g, |dba|=%.3g); first-order update "
                       "may be inaccurate", np.linalg.norm(dbg), np.linalg.norm(dba))
    J = pre.jacobian
    db = np.concatenate((dbg, dba))
    return replace(pre,
                   alpha=pre.alpha0 @ exp_so3(J[0:3, 0:3] @ dbg),
                   beta=pre.beta0 + J[3:6] @ db,
                   gamma=pre.gamma0 + J[6:9] @ db,
                   bias_g=bias_g.copy(), bias_a=bias_a.copy())


def _check_bias(state: NavState, pre: PreintegratedImu, tol: float) -> None:
    if (np.max(np.abs(state.bg - pre.bias_g)) > tol
            or np.max(np.abs(state.ba - pre.bias_a)) > tol):
        raise ValueError("pre-integration bias does not match state bias; call correct_bias first")


def predict(state: NavState, pre: PreintegratedImu, gravity=GRAVITY,
            bias_tol: float = 1e-9) -> tuple[NavState, np.ndarray]:
    """Propagate ``state`` over ``pre``.

    Returns the predicted state and its 15x15 covariance in state-error
    ordering, conditioned on ``state`` (only pre-integration noise).
    """
    _check_bias(state, pre, bias_tol)
    g = np.asarray(gravity, dtype=float)
    Ci = state.C
    dt = pre.dt
    p = state.p + state.v * dt + 0.5 * g * dt * dt + Ci @ pre.gamma
    v = state.v + Ci @ pre.beta + g * dt
    out = NavState(p, state.q @ pre.alpha, v, state.bg.copy(), state.ba.copy(), state.t + dt)
    T = np.zeros((15, 15))
    T[P, IG] = Ci
    T[PHI, IA] = Ci
    T[V, IB] = Ci
    T[9:15, 9:15] = np.eye(6)
    return out, T @ pre.covariance @ T.T


def prediction_jacobian(state: NavState, pre: PreintegratedImu) -> np.ndarray:
    """15x15 derivative of the predicted state error w.r.t. ``state``'s error.

    ``pre`` must already be bias-corrected to ``state``'s biases.
    """
    Ci = state.C
    Cj = Ci @ pre.alpha.matrix()
    dt = pre.dt
    J = np.eye(15)
    Jac = pre.jacobian
    J[P, PHI] = -skew(Ci @ pre.gamma)
    J[P, V] = np.eye(3) * dt
    J[P, BG] = Ci @ Jac[6:9, 0:3]
    J[P, BA] = Ci @ Jac[6:9, 3:6]
    phi_c = Jac[0:3, 0:3] @ (pre.bias_g - pre.lin_bias_g)
    J[PHI, BG] = Cj @ right_jacobian(phi_c) @ Jac[0:3, 0:3]
    J[V, PHI] = -skew(Ci @ pre.beta)
    J[V, BG] = Ci @ Jac[3:6, 0:3]
    J[V, BA] = Ci @ Jac[3:6, 3:6]
    return J
