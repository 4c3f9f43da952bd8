"""Synthetic ground truth, IMU samples, noisy GPS and drifting odometry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from .factors import ExtrinsicsGW, GpsMeasurement, RelPoseFactor, gps_measurement_model
from .geom import Pose3, Rot3, exp_so3, yaw_rotation
from .imu import GRAVITY, ImuNoise, ImuSample, NavState

SHAPES = ("loop", "figure-eight", "straight", "waypoints")


@dataclass
class TrajectorySpec:
    shape: str = "loop"
    duration: float = 100.0  # s
    speed: float = 2.0  # m/s, mean
    imu_rate: float = 200.0  # Hz
    gps_rate: float = 10.0  # Hz
    seed: int = 0
    waypoints: list | None = None  # [[x, y, z], ...] for shape="waypoints"
    height_amplitude: float = 0.0  # m, sinusoidal altitude change
    imu_noise: ImuNoise | None = None  # None: noise-free samples
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    accel_bias: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.duration <= 0 or self.imu_rate <= 0 or self.gps_rate <= 0:
            raise ValueError("duration and rates must be positive")
        if self.shape == "waypoints" and (self.waypoints is None or len(self.waypoints) < 2):
            raise ValueError("waypoints shape needs at least two waypoints")


@dataclass(frozen=True)
class DropoutPattern:
    """GPS-off intervals as fractions of the trajectory duration."""

    intervals: tuple = ()

    def __post_init__(self):
        iv = tuple(sorted((float(a), float(b)) for a, b in self.intervals))
        for a, b in iv:
            if not 0.0 <= a < b <= 1.0:
                raise ValueError(f"invalid dropout interval ({a}, {b})")
        for (a0, b0), (a1, b1) in zip(iv, iv[1:]):
            if a1 < b0:
                raise ValueError("dropout intervals overlap")
        object.__setattr__(self, "intervals", iv)

    @classmethod
    def none(cls) -> DropoutPattern:
        return cls(())

    @classmethod
    def once(cls, fraction: float = 0.33, center: float = 0.5) -> DropoutPattern:
        return cls(((center - fraction / 2.0, center + fraction / 2.0),))

    @classmethod
    def twice(cls, fraction: float = 0.2) -> DropoutPattern:
        return cls(((1 / 3 - fraction / 2, 1 / 3 + fraction / 2),
                    (2 / 3 - fraction / 2, 2 / 3 + fraction / 2)))

    @classmethod
    def always(cls) -> DropoutPattern:
        return cls(((0.0, 1.0),))

    def is_off(self, u: float) -> bool:
        # the last interval is closed when it reaches the end of the run
        return any(a <= u < b or (b >= 1.0 and u >= a) for a, b in self.intervals)

    @property
    def off_fraction(self) -> float:
        return sum(b - a for a, b in self.intervals)


class Motion:
    """Analytic planar path with level body attitude (yaw follows heading)."""

    def __init__(self, spec: TrajectorySpec):
        self.spec = spec
        T, v = spec.duration, spec.speed
        if spec.shape == "loop":
            self.radius = v * T / (2.0 * np.pi)
            self.omega = v / self.radius
        elif spec.shape == "figure-eight":
            self.omega = 2.0 * np.pi / T
            unit_len, _ = quad(lambda s: np.hypot(np.cos(s), np.cos(2 * s)), 0.0, 2 * np.pi, limit=200)
            self.amp = v * T / unit_len
        elif spec.shape == "waypoints":
            wp = np.asarray(spec.waypoints, dtype=float)
            if wp.shape[1] == 2:
                wp = np.hstack((wp, np.zeros((len(wp), 1))))
            closed = np.allclose(wp[0], wp[-1])
            seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
            knots = np.concatenate(([0.0], np.cumsum(seg))) / np.sum(seg) * T
            self.spline = CubicSpline(knots, wp, bc_type="periodic" if closed else "natural")

    def _planar(self, t):
        s = self.spec
        t = np.asarray(t, dtype=float)
        z = np.zeros_like(t)
        if s.shape == "loop":
            r, w = self.radius, self.omega
            p = np.stack((r * np.sin(w * t), r * (1.0 - np.cos(w * t)), z), -1)
            v = np.stack((r * w * np.cos(w * t), r * w * np.sin(w * t), z), -1)
            a = np.stack((-r * w * w * np.sin(w * t), r * w * w * np.cos(w * t), z), -1)
        elif s.shape == "figure-eight":
            A, w = self.amp, self.omega
            p = np.stack((A * np.sin(w * t), 0.5 * A * np.sin(2 * w * t), z), -1)
            v = np.stack((A * w * np.cos(w * t), A * w * np.cos(2 * w * t), z), -1)
            a = np.stack((-A * w * w * np.sin(w * t), -2 * A * w * w * np.sin(2 * w * t), z), -1)
        elif s.shape == "straight":
            p = np.stack((s.speed * t, z, z), -1)
            v = np.stack((np.full_like(t, s.speed), z, z), -1)
            a = np.stack((z, z, z), -1)
        else:
            p, v, a = self.spline(t), self.spline(t, 1), self.spline(t, 2)
        if s.height_amplitude:
            k = 2.0 * np.pi / s.duration * 2.0
            h = s.height_amplitude
            p = p + np.stack((z, z, h * np.sin(k * t)), -1)
            v = v + np.stack((z, z, h * k * np.cos(k * t)), -1)
            a = a + np.stack((z, z, -h * k * k * np.sin(k * t)), -1)
        return p, v, a

    def evaluate(self, t):
        """Position, velocity, acceleration, yaw and yaw rate at ``t``."""
        p, v, a = self._planar(t)
        vx, vy = v[..., 0], v[..., 1]
        ax, ay = a[..., 0], a[..., 1]
        sp2 = vx * vx + vy * vy
        yaw = np.arctan2(vy, vx)
        with np.errstate(invalid="ignore", divide="ignore"):
            yaw_rate = np.where(sp2 > 1e-12, (vx * ay - vy * ax) / np.where(sp2 > 1e-12, sp2, 1.0), 0.0)
        yaw = np.where(sp2 > 1e-12, yaw, 0.0)
        return p, v, a, yaw, yaw_rate


@dataclass
class Trajectory:
    """Ground truth sampled at the IMU rate, plus the analytic motion."""

    t: np.ndarray
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    bg: np.ndarray
    ba: np.ndarray
    motion: Motion = field(repr=False)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i) -> NavState:
        return NavState(self.p[i], Rot3(self.q[i]), self.v[i], self.bg[i], self.ba[i], float(self.t[i]))

    @property
    def spec(self) -> TrajectorySpec:
        return self.motion.spec

    def at(self, t: float) -> NavState:
        p, v, _, yaw, _ = self.motion.evaluate(np.array([t]))
        bg = np.array([np.interp(t, self.t, self.bg[:, k]) for k in range(3)])
        ba = np.array([np.interp(t, self.t, self.ba[:, k]) for k in range(3)])
        return NavState(p[0], yaw_rotation(yaw[0]), v[0], bg, ba, float(t))


def synthesize(spec: TrajectorySpec, gravity=GRAVITY) -> tuple[Trajectory, list[ImuSample]]:
    """Ground truth and IMU samples ``a = C_WS^T (a_W - g_W)``, ``w = (0, 0, yaw_rate)``."""
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration * spec.imu_rate)) + 1
    t = np.arange(n) / spec.imu_rate
    motion = Motion(spec)
    p, v, a, yaw, yaw_rate = motion.evaluate(t)
    g = np.asarray(gravity, dtype=float)
    c, s = np.cos(yaw), np.sin(yaw)
    f_w = a - g
    # C_WS^T for a pure yaw rotation
    accel = np.stack((c * f_w[:, 0] + s * f_w[:, 1], -s * f_w[:, 0] + c * f_w[:, 1], f_w[:, 2]), -1)
    gyro = np.stack((np.zeros(n), np.zeros(n), yaw_rate), -1)
    q = np.stack((np.cos(yaw / 2), np.zeros(n), np.zeros(n), np.sin(yaw / 2)), -1)

    bg = np.tile(np.asarray(spec.gyro_bias, dtype=float), (n, 1))
    ba = np.tile(np.asarray(spec.accel_bias, dtype=float), (n, 1))
    if spec.imu_noise is not None:
        nz = spec.imu_noise
        h = 1.0 / spec.imu_rate
        bg = bg + np.vstack((np.zeros(3), np.cumsum(rng.normal(0, nz.gyro_walk * np.sqrt(h), (n - 1, 3)), 0)))
        ba = ba + np.vstack((np.zeros(3), np.cumsum(rng.normal(0, nz.accel_walk * np.sqrt(h), (n - 1, 3)), 0)))
        gyro = gyro + rng.normal(0, nz.gyro / np.sqrt(h), (n, 3))
        accel = accel + rng.normal(0, nz.accel / np.sqrt(h), (n, 3))
    gyro = gyro + bg
    accel = accel + ba
    samples = [ImuSample(float(t[k]), gyro[k], accel[k]) for k in range(n)]
    return Trajectory(t, p, q, v, bg, ba, motion), samples


def gps_times(truth: Trajectory, rate: float | None = None) -> np.ndarray:
    rate = rate or truth.spec.gps_rate
    T = truth.t[-1] - truth.t[0]
    n = int(np.floor(T * rate + 1e-9)) + 1
    return truth.t[0] + np.arange(n) / rate


def make_gps(truth: Trajectory, ext_true: ExtrinsicsGW, p_SA=np.zeros(3), sigma_n: float = 0.2,
             pattern: DropoutPattern | None = None, seed: int = 0,
             rate: float | None = None) -> list[GpsMeasurement]:
    """Antenna positions mapped into G with isotropic Gaussian noise; dropouts omitted."""
    rng = np.random.default_rng(seed)
    pattern = pattern or DropoutPattern.none()
    T = truth.t[-1] - truth.t[0]
    cov = np.eye(3) * max(sigma_n, 1e-6) ** 2
    out = []
    for t in gps_times(truth, rate):
        noise = rng.normal(0.0, sigma_n, 3)
        if pattern.is_off((t - truth.t[0]) / T):
            continue
        z = gps_measurement_model(truth.at(t), ext_true, p_SA) + noise
        out.append(GpsMeasurement(float(t), z, cov))
    return out


def keyframe_times(truth: Trajectory, rate: float) -> np.ndarray:
    T = truth.t[-1] - truth.t[0]
    n = int(np.floor(T * rate + 1e-9)) + 1
    return truth.t[0] + np.arange(n) / rate


def make_odometry(truth: Trajectory, drift_rate=(0.0, 0.0), noise=(0.0, 0.0), seed: int = 0,
                  rate: float = 2.0, floor=(1e-3, 1e-4)) -> list[RelPoseFactor]:
    """Relative poses between consecutive keyframes with systematic drift.

    ``drift_rate = (scale, yaw)``: translation is scaled by ``1 + scale`` and
    each step picks up ``yaw * |t_ij|`` radians of extra heading.
    ``noise = (sigma_t, sigma_r)`` adds white noise. The attached covariance
    accounts for both, with ``floor`` as a lower bound.
    """
    rng = np.random.default_rng(seed)
    scale, yaw_drift = (float(x) for x in drift_rate)
    sig_t, sig_r = (float(x) for x in noise)
    times = keyframe_times(truth, rate)
    states = [truth.at(t) for t in times]
    out = []
    for k in range(len(times) - 1):
        si, sj = states[k], states[k + 1]
        qi_inv = si.q.inverse()
        t_ij = qi_inv.rotate(sj.p - si.p)
        C_ij = qi_inv @ sj.q
        d = float(np.linalg.norm(t_ij))
        t_meas = (1.0 + scale) * t_ij + rng.normal(0.0, 1.0, 3) * sig_t
        C_meas = C_ij @ exp_so3(np.array([0.0, 0.0, yaw_drift * d]) + rng.normal(0.0, 1.0, 3) * sig_r)
        var_t = sig_t ** 2 + (scale * d) ** 2 + floor[0] ** 2
        var_r = sig_r ** 2 + (yaw_drift * d) ** 2 + floor[1] ** 2
        cov = np.diag([var_t] * 3 + [var_r] * 3)
        out.append(RelPoseFactor(k, k + 1, Pose3(C_meas, t_meas), cov, float(times[k]), float(times[k + 1])))
    return out


def chain_odometry(start: NavState, odometry: list[RelPoseFactor]) -> list[Pose3]:
    """Dead-reckoned poses from chaining relative-pose measurements."""
    T = Pose3(start.q, start.p)
    poses = [T]
    for f in odometry:
        T = T @ f.T_ij
        poses.append(T)
    return poses


def sample_extrinsics(seed: int, max_offset: float = 50.0) -> ExtrinsicsGW:
    """Hidden W->G transform for a scenario."""
    rng = np.random.default_rng(seed)
    return ExtrinsicsGW(rng.uniform(-np.pi, np.pi),
                        np.concatenate((rng.uniform(-max_offset, max_offset, 2),
                                        rng.uniform(-5.0, 5.0, 1))))
