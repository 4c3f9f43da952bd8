"""Residuals, Jacobians and weights of the graph factors.

All Jacobians are taken w.r.t. the navigation-state error
``[dp, dphi, dv, dbg, dba]`` with the left orientation perturbation
``C = Exp(dphi) @ C_bar``, and w.r.t. the 4-DoF extrinsics error
``[dp_GW, dtheta]`` where ``yaw <- yaw + dtheta`` (a rotation about the
up-axis of G, again applied on the left).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import (Pose3, Rot3, exp_batch, log_batch, log_so3, quat_to_matrix_batch,
                   right_jacobian, right_jacobian_batch, right_jacobian_inv,
                   right_jacobian_inv_batch, skew, skew_batch, yaw_matrix, yaw_rotation)
from .imu import (BA, BG, GRAVITY, PHI, P, V, NavState, PreintegratedImu, correct_bias,
                  predict, prediction_jacobian)

EZ = np.array([0.0, 0.0, 1.0])


class SingularCovarianceError(ValueError):
    """Combined measurement covariance is not positive definite."""


@dataclass(frozen=True)
class GpsMeasurement:
    t: float
    z: np.ndarray  # ENU metres, frame G
    cov: np.ndarray  # 3x3, m^2

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).reshape(3))
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 1:
            cov = np.diag(cov)
        object.__setattr__(self, "cov", cov.reshape(3, 3))


@dataclass(frozen=True)
class ExtrinsicsGW:
    """4-DoF transform from the estimator world frame W to the ENU frame G."""

    yaw: float = 0.0
    p_GW: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fixed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "yaw", float(self.yaw))
        object.__setattr__(self, "p_GW", np.asarray(self.p_GW, dtype=float).reshape(3))

    @property
    def C(self) -> np.ndarray:
        return yaw_matrix(self.yaw)

    @property
    def rotation(self) -> Rot3:
        return yaw_rotation(self.yaw)

    def pose(self) -> Pose3:
        return Pose3(self.rotation, self.p_GW)

    def to_global(self, p_W) -> np.ndarray:
        p_W = np.asarray(p_W, dtype=float)
        return p_W @ self.C.T + self.p_GW

    def to_world(self, p_G) -> np.ndarray:
        p_G = np.asarray(p_G, dtype=float)
        return (p_G - self.p_GW) @ self.C

    def retract(self, d: np.ndarray) -> ExtrinsicsGW:
        return ExtrinsicsGW(self.yaw + d[3], self.p_GW + d[:3], self.fixed)


@dataclass
class GpsFactor:
    measurement: GpsMeasurement
    state_id: int
    pre: PreintegratedImu
    p_SA: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.p_SA = np.asarray(self.p_SA, dtype=float).reshape(3)


@dataclass
class RelPoseFactor:
    i: int
    j: int
    T_ij: Pose3
    covariance: np.ndarray
    t_i: float | None = None
    t_j: float | None = None

    def __post_init__(self):
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(6, 6)
        self.sqrt_info = _sqrt_information(self.covariance)


@dataclass
class ImuFactor:
    """Pre-integrated IMU link between consecutive states."""

    i: int
    j: int
    pre: PreintegratedImu

    def __post_init__(self):
        T = np.eye(15)
        T[0:3, 0:3] = self.pre.alpha.matrix().T
        self.sqrt_info = _sqrt_information(T @ self.pre.covariance @ T.T)


@dataclass
class BiasPriorFactor:
    state_id: int
    bg: np.ndarray
    ba: np.ndarray
    sigma_g: float
    sigma_a: float

    def __post_init__(self):
        self.sqrt_info = np.diag(np.repeat([1.0 / self.sigma_g, 1.0 / self.sigma_a], 3))


def _sqrt_information(cov: np.ndarray) -> np.ndarray:
    """Upper factor ``U`` with ``U.T @ U = inv(cov)``."""
    cov = 0.5 * (cov + cov.T)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance is not positive definite") from exc
    return np.linalg.inv(L)


# --- GPS -----------------------------------------------------------------

def predicted_pose(factor: GpsFactor, state_i: NavState, gravity=GRAVITY):
    """Predicted state at the measurement time, its covariance, and the
    bias-corrected pre-integration."""
    pre = correct_bias(factor.pre, state_i.bg, state_i.ba)
    pred, cov = predict(state_i, pre, gravity)
    return pred, cov, pre


def antenna_position(state: NavState, p_SA) -> np.ndarray:
    return state.p + state.C @ np.asarray(p_SA, dtype=float)


def _gps_pose_jacobian(C_GW: np.ndarray, C_WS: np.ndarray, p_SA: np.ndarray) -> np.ndarray:
    return np.hstack((-C_GW, C_GW @ skew(C_WS @ p_SA)))


def gps_residual(factor: GpsFactor, state_i: NavState, ext: ExtrinsicsGW, gravity=GRAVITY):
    """Residual ``z - [C_GW (p + C p_SA) + p_GW]`` and its 3x3 weight."""
    pred, cov, _ = predicted_pose(factor, state_i, gravity)
    return _gps_residual_from_prediction(factor, pred, cov, ext)


def _gps_residual_from_prediction(factor, pred, cov, ext):
    C_GW = ext.C
    Cj = pred.C
    e = factor.measurement.z - (C_GW @ (pred.p + Cj @ factor.p_SA) + ext.p_GW)
    J = _gps_pose_jacobian(C_GW, Cj, factor.p_SA)
    sigma = factor.measurement.cov + J @ cov[0:6, 0:6] @ J.T
    sigma = 0.5 * (sigma + sigma.T)
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("GPS covariance is not positive definite") from exc
    return e, np.linalg.inv(sigma)


def gps_ext_jacobian(ext: ExtrinsicsGW, x_W: np.ndarray) -> np.ndarray:
    """3x4 Jacobian w.r.t. ``[dp_GW, dtheta]`` for the world point ``x_W``."""
    J = np.empty((3, 4))
    J[:, 0:3] = -np.eye(3)
    J[:, 3] = np.cross(ext.C @ x_W, EZ)
    return J


def gps_jacobians(factor: GpsFactor, state_i: NavState, ext: ExtrinsicsGW, gravity=GRAVITY):
    """Returns ``(J_state_i (3x15), J_ext (3x4))``."""
    pred, _, pre = predicted_pose(factor, state_i, gravity)
    Cj = pred.C
    J_pose = _gps_pose_jacobian(ext.C, Cj, factor.p_SA)
    J_state = J_pose @ prediction_jacobian(state_i, pre)[0:6]
    return J_state, gps_ext_jacobian(ext, pred.p + Cj @ factor.p_SA)


def linearize_gps(factor: GpsFactor, state_i: NavState, ext: ExtrinsicsGW, gravity=GRAVITY):
    """Residual, weight and both Jacobians with one prediction."""
    pred, cov, pre = predicted_pose(factor, state_i, gravity)
    e, W = _gps_residual_from_prediction(factor, pred, cov, ext)
    Cj = pred.C
    J_pose = _gps_pose_jacobian(ext.C, Cj, factor.p_SA)
    J_state = J_pose @ prediction_jacobian(state_i, pre)[0:6]
    return e, W, J_state, gps_ext_jacobian(ext, pred.p + Cj @ factor.p_SA)


def gps_measurement_model(state_j: NavState, ext: ExtrinsicsGW, p_SA=np.zeros(3)) -> np.ndarray:
    """Noise-free measurement of the antenna at ``state_j``."""
    return ext.C @ antenna_position(state_j, p_SA) + ext.p_GW


# --- relative pose ---------------------------------------------------------

def relative_pose(state_i: NavState, state_j: NavState) -> Pose3:
    qi_inv = state_i.q.inverse()
    return Pose3(qi_inv @ state_j.q, qi_inv.rotate(state_j.p - state_i.p))


def relpose_residual(factor: RelPoseFactor, state_i: NavState, state_j: NavState):
    """Residual ``[C_i^T (p_j - p_i) - t_ij ; Log(C_ij_meas^T C_i^T C_j)]``
    with Jacobians w.r.t. both states."""
    Ci, Cj = state_i.C, state_j.C
    dp = state_j.p - state_i.p
    Cm = factor.T_ij.rotation.matrix()
    E = Cm.T @ Ci.T @ Cj
    rR = log_so3(Rot3.from_matrix(E))
    r = np.concatenate((Ci.T @ dp - factor.T_ij.translation, rR))
    Ji = np.zeros((6, 15))
    Jj = np.zeros((6, 15))
    Ji[0:3, P] = -Ci.T
    Jj[0:3, P] = Ci.T
    Ji[0:3, PHI] = Ci.T @ skew(dp)
    Jr = right_jacobian_inv(rR) @ Cj.T
    Ji[3:6, PHI] = -Jr
    Jj[3:6, PHI] = Jr
    return r, Ji, Jj


# --- IMU -------------------------------------------------------------------

def imu_residual(factor: ImuFactor, state_i: NavState, state_j: NavState, gravity=GRAVITY):
    """15-dim residual ``[rot, vel, pos, bg, ba]`` in the frame of state i."""
    g = np.asarray(gravity, dtype=float)
    pre = correct_bias(factor.pre, state_i.bg, state_i.ba)
    Ci, Cj = state_i.C, state_j.C
    dt = pre.dt
    A = pre.alpha.matrix()
    E = A.T @ Ci.T @ Cj
    rR = log_so3(Rot3.from_matrix(E))
    dv = state_j.v - state_i.v - g * dt
    dp = state_j.p - state_i.p - state_i.v * dt - 0.5 * g * dt * dt
    r = np.concatenate((rR, Ci.T @ dv - pre.beta, Ci.T @ dp - pre.gamma,
                        state_j.bg - state_i.bg, state_j.ba - state_i.ba))

    Jac = pre.jacobian
    Jri = right_jacobian_inv(rR)
    phi_c = Jac[0:3, 0:3] @ (pre.bias_g - pre.lin_bias_g)
    Ji = np.zeros((15, 15))
    Jj = np.zeros((15, 15))
    Ji[0:3, PHI] = -Jri @ Cj.T
    Jj[0:3, PHI] = Jri @ Cj.T
    Ji[0:3, BG] = -Jri @ E.T @ right_jacobian(phi_c) @ Jac[0:3, 0:3]
    Ji[3:6, PHI] = Ci.T @ skew(dv)
    Ji[3:6, V] = -Ci.T
    Jj[3:6, V] = Ci.T
    Ji[3:6, BG] = -Jac[3:6, 0:3]
    Ji[3:6, BA] = -Jac[3:6, 3:6]
    Ji[6:9, PHI] = Ci.T @ skew(dp)
    Ji[6:9, P] = -Ci.T
    Jj[6:9, P] = Ci.T
    Ji[6:9, V] = -Ci.T * dt
    Ji[6:9, BG] = -Jac[6:9, 0:3]
    Ji[6:9, BA] = -Jac[6:9, 3:6]
    Ji[9:12, BG] = -np.eye(3)
    Jj[9:12, BG] = np.eye(3)
    Ji[12:15, BA] = -np.eye(3)
    Jj[12:15, BA] = np.eye(3)
    return r, Ji, Jj


def bias_prior_residual(factor: BiasPriorFactor, state: NavState):
    r = np.concatenate((state.bg - factor.bg, state.ba - factor.ba))
    J = np.zeros((6, 15))
    J[0:3, BG] = np.eye(3)
    J[3:6, BA] = np.eye(3)
    return r, J


# --- stacked evaluation ------------------------------------------------------
#
# The graph evaluates many factors of one type at once. These kernels mirror
# the single-factor functions above (which remain the reference) on arrays
# with a leading factor axis.

@dataclass
class StateArrays:
    """Navigation states gathered into arrays, one row per slot."""

    p: np.ndarray
    C: np.ndarray
    v: np.ndarray
    bg: np.ndarray
    ba: np.ndarray

    @classmethod
    def from_states(cls, states) -> StateArrays:
        states = list(states)
        q = np.array([s.q.q for s in states]).reshape(-1, 4)
        return cls(np.array([s.p for s in states]).reshape(-1, 3), quat_to_matrix_batch(q),
                   np.array([s.v for s in states]).reshape(-1, 3),
                   np.array([s.bg for s in states]).reshape(-1, 3),
                   np.array([s.ba for s in states]).reshape(-1, 3))

    def take(self, idx) -> StateArrays:
        return StateArrays(self.p[idx], self.C[idx], self.v[idx], self.bg[idx], self.ba[idx])


def _pre_rows(pres):
    return dict(
        alpha0=np.array([p.alpha0.matrix() for p in pres]).reshape(-1, 3, 3),
        beta0=np.array([p.beta0 for p in pres]).reshape(-1, 3),
        gamma0=np.array([p.gamma0 for p in pres]).reshape(-1, 3),
        jac=np.array([p.jacobian for p in pres]).reshape(-1, 9, 6),
        lin_bg=np.array([p.lin_bias_g for p in pres]).reshape(-1, 3),
        lin_ba=np.array([p.lin_bias_a for p in pres]).reshape(-1, 3),
        dt=np.array([p.dt for p in pres], dtype=float),
    )


def _corrected(pk, si: StateArrays):
    dbg = si.bg - pk["lin_bg"]
    db = np.concatenate((dbg, si.ba - pk["lin_ba"]), axis=1)
    jac = pk["jac"]
    phi_c = np.einsum("nij,nj->ni", jac[:, 0:3, 0:3], dbg)
    A = pk["alpha0"] @ exp_batch(phi_c)
    beta = pk["beta0"] + np.einsum("nij,nj->ni", jac[:, 3:6], db)
    gamma = pk["gamma0"] + np.einsum("nij,nj->ni", jac[:, 6:9], db)
    return phi_c, A, beta, gamma


def pack_gps(factors: list[GpsFactor]) -> dict:
    pk = _pre_rows([f.pre for f in factors])
    sel = np.r_[6:9, 0:3]  # [gamma, alpha] blocks of the pre-integration covariance
    pk["cov"] = np.array([f.pre.covariance[np.ix_(sel, sel)] for f in factors]).reshape(-1, 6, 6)
    pk["z"] = np.array([f.measurement.z for f in factors]).reshape(-1, 3)
    pk["S0"] = np.array([f.measurement.cov for f in factors]).reshape(-1, 3, 3)
    pk["p_SA"] = np.array([f.p_SA for f in factors]).reshape(-1, 3)
    return pk


def gps_batch(pk: dict, si: StateArrays, ext: ExtrinsicsGW, gravity=GRAVITY, jac: bool = True):
    """Stacked :func:`linearize_gps`: ``(e, W, J_state, J_ext)``.

    Jacobians are ``None`` when ``jac`` is false.
    """
    g = np.asarray(gravity, dtype=float)
    dt = pk["dt"]
    phi_c, A, _, gamma = _corrected(pk, si)
    Ci = si.C
    Cj = Ci @ A
    Cg = Ci @ gamma[..., None]
    pj = si.p + si.v * dt[:, None] + 0.5 * g * (dt * dt)[:, None] + Cg[..., 0]
    lever = np.einsum("nij,nj->ni", Cj, pk["p_SA"])
    x = pj + lever
    C_GW = ext.C
    e = pk["z"] - (x @ C_GW.T + ext.p_GW)

    B = np.zeros((len(dt), 6, 6))
    B[:, 0:3, 0:3] = Ci
    B[:, 3:6, 3:6] = Ci
    cov = B @ pk["cov"] @ B.transpose(0, 2, 1)
    Sl = skew_batch(lever)
    Jp = np.concatenate((np.broadcast_to(-C_GW, Sl.shape), C_GW @ Sl), axis=2)
    Sig = pk["S0"] + Jp @ cov @ Jp.transpose(0, 2, 1)
    Sig = 0.5 * (Sig + Sig.transpose(0, 2, 1))
    try:
        np.linalg.cholesky(Sig)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("GPS covariance is not positive definite") from exc
    W = np.linalg.inv(Sig)
    if not jac:
        return e, W, None, None

    n = len(dt)
    Js = np.zeros((n, 3, 15))
    Js[:, :, P] = -C_GW
    Js[:, :, PHI] = C_GW @ (skew_batch(Cg[..., 0]) + Sl)
    Js[:, :, V] = -C_GW * dt[:, None, None]
    J = pk["jac"]
    Jr = right_jacobian_batch(phi_c)
    Js[:, :, BG] = C_GW @ (-(Ci @ J[:, 6:9, 0:3]) + Sl @ Cj @ Jr @ J[:, 0:3, 0:3])
    Js[:, :, BA] = -C_GW @ (Ci @ J[:, 6:9, 3:6])
    Je = np.zeros((n, 3, 4))
    Je[:, 0, 0] = Je[:, 1, 1] = Je[:, 2, 2] = -1.0
    Je[:, :, 3] = np.cross(x @ C_GW.T, EZ)
    return e, W, Js, Je


def pack_imu(factors: list[ImuFactor]) -> dict:
    pk = _pre_rows([f.pre for f in factors])
    pk["sqrt_info"] = np.array([f.sqrt_info for f in factors]).reshape(-1, 15, 15)
    return pk


def imu_batch(pk: dict, si: StateArrays, sj: StateArrays, gravity=GRAVITY, jac: bool = True):
    """Stacked :func:`imu_residual`: ``(r, J_i, J_j)`` (not whitened)."""
    g = np.asarray(gravity, dtype=float)
    dt = pk["dt"]
    phi_c, A, beta, gamma = _corrected(pk, si)
    Ci, Cj = si.C, sj.C
    CiT = Ci.transpose(0, 2, 1)
    CjT = Cj.transpose(0, 2, 1)
    E = A.transpose(0, 2, 1) @ CiT @ Cj
    rR = log_batch(E)
    dv = sj.v - si.v - g * dt[:, None]
    dp = sj.p - si.p - si.v * dt[:, None] - 0.5 * g * (dt * dt)[:, None]
    r = np.concatenate((rR, np.einsum("nij,nj->ni", CiT, dv) - beta,
                        np.einsum("nij,nj->ni", CiT, dp) - gamma,
                        sj.bg - si.bg, sj.ba - si.ba), axis=1)
    if not jac:
        return r, None, None
    n = len(dt)
    J = pk["jac"]
    Jri = right_jacobian_inv_batch(rR)
    Ji = np.zeros((n, 15, 15))
    Jj = np.zeros((n, 15, 15))
    JC = Jri @ CjT
    Ji[:, 0:3, PHI] = -JC
    Jj[:, 0:3, PHI] = JC
    Ji[:, 0:3, BG] = -Jri @ E.transpose(0, 2, 1) @ right_jacobian_batch(phi_c) @ J[:, 0:3, 0:3]
    Ji[:, 3:6, PHI] = CiT @ skew_batch(dv)
    Ji[:, 3:6, V] = -CiT
    Jj[:, 3:6, V] = CiT
    Ji[:, 3:6, BG] = -J[:, 3:6, 0:3]
    Ji[:, 3:6, BA] = -J[:, 3:6, 3:6]
    Ji[:, 6:9, PHI] = CiT @ skew_batch(dp)
    Ji[:, 6:9, P] = -CiT
    Jj[:, 6:9, P] = CiT
    Ji[:, 6:9, V] = -CiT * dt[:, None, None]
    Ji[:, 6:9, BG] = -J[:, 6:9, 0:3]
    Ji[:, 6:9, BA] = -J[:, 6:9, 3:6]
    eye = np.eye(3)
    Ji[:, 9:12, BG] = -eye
    Jj[:, 9:12, BG] = eye
    Ji[:, 12:15, BA] = -eye
    Jj[:, 12:15, BA] = eye
    return r, Ji, Jj


def pack_relpose(factors: list[RelPoseFactor]) -> dict:
    return dict(
        Cm=np.array([f.T_ij.rotation.matrix() for f in factors]).reshape(-1, 3, 3),
        t=np.array([f.T_ij.translation for f in factors]).reshape(-1, 3),
        sqrt_info=np.array([f.sqrt_info for f in factors]).reshape(-1, 6, 6),
    )


def relpose_batch(pk: dict, si: StateArrays, sj: StateArrays, jac: bool = True):
    """Stacked :func:`relpose_residual`: ``(r, J_i, J_j)`` (not whitened)."""
    Ci, Cj = si.C, sj.C
    CiT = Ci.transpose(0, 2, 1)
    dp = sj.p - si.p
    E = pk["Cm"].transpose(0, 2, 1) @ CiT @ Cj
    rR = log_batch(E)
    r = np.concatenate((np.einsum("nij,nj->ni", CiT, dp) - pk["t"], rR), axis=1)
    if not jac:
        return r, None, None
    n = len(dp)
    Ji = np.zeros((n, 6, 15))
    Jj = np.zeros((n, 6, 15))
    Ji[:, 0:3, P] = -CiT
    Jj[:, 0:3, P] = CiT
    Ji[:, 0:3, PHI] = CiT @ skew_batch(dp)
    Jr = right_jacobian_inv_batch(rR) @ Cj.transpose(0, 2, 1)
    Ji[:, 3:6, PHI] = -Jr
    Jj[:, 3:6, PHI] = Jr
    return r, Ji, Jj
