"""Rotation and rigid-transform algebra.

Conventions used throughout the package:

* Hamilton quaternions stored as ``(w, x, y, z)``.
* ``C_AB`` maps coordinates of a vector expressed in frame B into frame A,
  i.e. ``p_A = C_AB @ p_B`` and ``p_A = T_AB * p_B``.
* Orientation perturbations are applied on the left,
  ``C = Exp(dphi) @ C_bar``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SMALL_ANGLE = 1e-7

_EZ = np.array([0.0, 0.0, 1.0])


def skew(v) -> np.ndarray:
    """Matrix such that ``skew(v) @ w == cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
    ])


def _matrix_to_quat(m: np.ndarray) -> np.ndarray:
    # Shepperd's method: pivot on the largest of trace and diagonal entries.
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > max(m[0, 0], m[1, 1], m[2, 2]):
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] >= m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class Rot3:
    """Unit quaternion ``(w, x, y, z)``. Immutable."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        q = q / np.linalg.norm(q)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls) -> Rot3:
        return cls()

    @classmethod
    def from_matrix(cls, m) -> Rot3:
        return cls(_matrix_to_quat(np.asarray(m, dtype=float)))

    def matrix(self) -> np.ndarray:
        return _quat_to_matrix(self.q)

    def inverse(self) -> Rot3:
        w, x, y, z = self.q
        return Rot3(np.array([w, -x, -y, -z]))

    def compose(self, other: Rot3) -> Rot3:
        return Rot3(_quat_mul(self.q, other.q))

    def rotate(self, v) -> np.ndarray:
        return self.matrix() @ np.asarray(v, dtype=float)

    def __matmul__(self, other):
        if isinstance(other, Rot3):
            return self.compose(other)
        return self.rotate(other)

    def yaw(self) -> float:
        m = self.matrix()
        return float(np.arctan2(m[1, 0], m[0, 0]))

    def __repr__(self) -> str:
        return "Rot3(w=%.6g, x=%.6g, y=%.6g, z=%.6g)" % tuple(self.q)


def exp_so3(phi) -> Rot3:
    """Rotation by ``|phi|`` radians about ``phi / |phi|``."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    theta = np.sqrt(theta2)
    if theta < SMALL_ANGLE:
        # second-order Taylor expansion of (cos(t/2), sin(t/2)/t * phi)
        return Rot3(np.concatenate(([1.0 - theta2 / 8.0], (0.5 - theta2 / 48.0) * phi)))
    half = 0.5 * theta
    return Rot3(np.concatenate(([np.cos(half)], (np.sin(half) / theta) * phi)))


def log_so3(R: Rot3) -> np.ndarray:
    """Principal rotation vector, ``|result| <= pi``.

    At exactly ``pi`` the axis sign is chosen so that its z component is
    nonnegative, falling back to y and then x.
    """
    w, x, y, z = R.q
    v = np.array([x, y, z])
    if w < 0.0:
        w, v = -w, -v
    n = np.linalg.norm(v)
    if n < 0.5 * SMALL_ANGLE:
        # atan2(n, w) / n ~ (1 - n^2 / (3 w^2)) / w
        return 2.0 * (1.0 - n * n / (3.0 * w * w)) / w * v
    if w < 1e-12:
        for c in (v[2], v[1], v[0]):
            if abs(c) > 1e-12:
                if c < 0.0:
                    v = -v
                break
    theta = 2.0 * np.arctan2(n, w)
    return (theta / n) * v


def exp_matrix(phi) -> np.ndarray:
    """``exp_so3(phi).matrix()`` via Rodrigues; used in inner loops."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < SMALL_ANGLE * SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    theta = np.sqrt(theta2)
    return np.eye(3) + (np.sin(theta) / theta) * K + ((1.0 - np.cos(theta)) / theta2) * K @ K


def log_matrix(C: np.ndarray) -> np.ndarray:
    return log_so3(Rot3.from_matrix(C))


def right_jacobian(phi) -> np.ndarray:
    """Right Jacobian of SO(3): ``Exp(phi + d) ~ Exp(phi) Exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < 1e-10:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    theta = np.sqrt(theta2)
    return (np.eye(3) - ((1.0 - np.cos(theta)) / theta2) * K
            + ((theta - np.sin(theta)) / (theta2 * theta)) * K @ K)


def right_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < 1e-10:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    theta = np.sqrt(theta2)
    coef = 1.0 / theta2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + coef * K @ K


# --- stacked variants, leading axis is the batch ------------------------------

def skew_batch(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _so3_coefficients(phi: np.ndarray):
    theta2 = np.einsum("...i,...i->...", phi, phi)
    theta = np.sqrt(theta2)
    small = theta2 < 1e-10
    safe = np.where(small, 1.0, theta)
    safe2 = safe * safe
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / safe2)
    c = np.where(small, 1.0 / 6.0 - theta2 / 120.0, (safe - np.sin(safe)) / (safe2 * safe))
    return theta, small, safe, a, b, c


def exp_batch(phi: np.ndarray) -> np.ndarray:
    """Stacked Rodrigues formula, ``(..., 3) -> (..., 3, 3)``."""
    phi = np.asarray(phi, dtype=float)
    _, _, _, a, b, _ = _so3_coefficients(phi)
    K = skew_batch(phi)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def right_jacobian_batch(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    _, _, _, _, b, c = _so3_coefficients(phi)
    K = skew_batch(phi)
    return np.eye(3) - b[..., None, None] * K + c[..., None, None] * (K @ K)


def right_jacobian_inv_batch(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta, small, safe, _, _, _ = _so3_coefficients(phi)
    theta2 = theta * theta
    coef = np.where(small, 1.0 / 12.0 + theta2 / 720.0,
                    1.0 / (safe * safe) - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)))
    K = skew_batch(phi)
    return np.eye(3) + 0.5 * K + coef[..., None, None] * (K @ K)


def log_batch(C: np.ndarray) -> np.ndarray:
    """Stacked rotation-matrix logarithm, ``(n, 3, 3) -> (n, 3)``.

    Angles within 1e-4 of pi fall back to :func:`log_matrix`.
    """
    C = np.asarray(C, dtype=float)
    v = 0.5 * np.stack((C[..., 2, 1] - C[..., 1, 2], C[..., 0, 2] - C[..., 2, 0],
                        C[..., 1, 0] - C[..., 0, 1]), -1)
    s = np.linalg.norm(v, axis=-1)
    c = 0.5 * (np.trace(C, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)
    small = s < 1e-12
    scale = np.where(small, 1.0 + theta * theta / 6.0, theta / np.where(small, 1.0, s))
    out = v * scale[..., None]
    near_pi = np.pi - theta < 1e-4
    if np.any(near_pi):
        for k in np.flatnonzero(near_pi.reshape(-1)):
            idx = np.unravel_index(k, near_pi.shape)
            out[idx] = log_matrix(C[idx])
    return out


def quat_to_matrix_batch(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[..., 0, 1] = 2.0 * (x * y - w * z)
    out[..., 0, 2] = 2.0 * (x * z + w * y)
    out[..., 1, 0] = 2.0 * (x * y + w * z)
    out[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[..., 1, 2] = 2.0 * (y * z - w * x)
    out[..., 2, 0] = 2.0 * (x * z - w * y)
    out[..., 2, 1] = 2.0 * (y * z + w * x)
    out[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


def yaw_rotation(theta: float) -> Rot3:
    """Rotation about the ENU up-axis by ``theta``."""
    return exp_so3(np.array([0.0, 0.0, float(theta)]))


def yaw_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def wrap_angle(a: float) -> float:
    return float((a + np.pi) % (2.0 * np.pi) - np.pi)


@dataclass(frozen=True)
class Pose3:
    rotation: Rot3 = field(default_factory=Rot3)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose3:
        return cls()

    @classmethod
    def from_yaw(cls, theta: float, translation) -> Pose3:
        return cls(yaw_rotation(theta), translation)

    def compose(self, other: Pose3) -> Pose3:
        return Pose3(self.rotation @ other.rotation,
                     self.rotation.rotate(other.translation) + self.translation)

    def inverse(self) -> Pose3:
        inv = self.rotation.inverse()
        return Pose3(inv, -inv.rotate(self.translation))

    def transform(self, p) -> np.ndarray:
        return self.rotation.rotate(p) + self.translation

    def __matmul__(self, other):
        if isinstance(other, Pose3):
            return self.compose(other)
        return self.transform(other)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.matrix()
        T[:3, 3] = self.translation
        return T
