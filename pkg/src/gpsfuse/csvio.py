"""CSV readers and writers for IMU, GPS, odometry and ground-truth streams.

Every file starts with a header line naming the columns. GPS files come in
an ENU form (``t,x,y,z,...``) and a geodetic form (``t,lat,lon,alt,...``);
the latter is converted to ENU about its first fix unless an origin is
given.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .factors import GpsMeasurement, RelPoseFactor
from .geodetic import EnuConverter, GeodeticPoint
from .geom import Pose3, Rot3
from .imu import ImuSample

IMU_HEADER = ["t", "gx", "gy", "gz", "ax", "ay", "az"]
GPS_ENU_HEADER = ["t", "x", "y", "z", "sxx", "syy", "szz"]
GPS_GEO_HEADER = ["t", "lat", "lon", "alt", "sxx", "syy", "szz"]
ODOM_HEADER = ["ti", "tj", "px", "py", "pz", "qw", "qx", "qy", "qz",
               "vpx", "vpy", "vpz", "vrx", "vry", "vrz"]
TRUTH_HEADER = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]


def _read(path, expected: list[str] | tuple) -> tuple[list[str], np.ndarray]:
    with open(Path(path), newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    options = expected if isinstance(expected, tuple) else (expected,)
    if header not in [list(o) for o in options]:
        raise ValueError(f"{path}: header {header} does not match {[list(o) for o in options]}")
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    return header, data


def _write(path, header: list[str], rows) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) for x in r])


def read_imu_csv(path) -> list[ImuSample]:
    _, d = _read(path, IMU_HEADER)
    if len(d) > 1 and np.any(np.diff(d[:, 0]) <= 0):
        raise ValueError(f"{path}: IMU timestamps must be strictly increasing")
    return [ImuSample(r[0], r[1:4].copy(), r[4:7].copy()) for r in d]


def write_imu_csv(path, samples: list[ImuSample]) -> None:
    _write(path, IMU_HEADER, ([s.t, *s.gyro, *s.accel] for s in samples))


def read_gps_csv(path, origin: GeodeticPoint | None = None) -> list[GpsMeasurement]:
    header, d = _read(path, (GPS_ENU_HEADER, GPS_GEO_HEADER))
    if header == GPS_GEO_HEADER:
        conv = EnuConverter(origin)
        enu = [conv(GeodeticPoint(r[1], r[2], r[3])) for r in d]
    else:
        enu = [r[1:4] for r in d]
    return [GpsMeasurement(r[0], z, r[4:7]) for r, z in zip(d, enu)]


def write_gps_csv(path, gps: list[GpsMeasurement]) -> None:
    _write(path, GPS_ENU_HEADER, ([g.t, *g.z, *np.diag(g.cov)] for g in gps))


def write_gps_geodetic_csv(path, rows) -> None:
    """``rows`` of ``(t, GeodeticPoint, variances)``."""
    _write(path, GPS_GEO_HEADER,
           ([t, p.latitude, p.longitude, p.altitude, *var] for t, p, var in rows))


def read_odometry_csv(path) -> list[RelPoseFactor]:
    _, d = _read(path, ODOM_HEADER)
    out = []
    for k, r in enumerate(d):
        T = Pose3(Rot3(r[5:9]), r[2:5])
        out.append(RelPoseFactor(k, k + 1, T, np.diag(r[9:15]), r[0], r[1]))
    return out


def write_odometry_csv(path, odometry: list[RelPoseFactor]) -> None:
    _write(path, ODOM_HEADER,
           ([f.t_i, f.t_j, *f.T_ij.translation, *f.T_ij.rotation.q, *np.diag(f.covariance)]
            for f in odometry))


def read_truth_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Times, positions and quaternions."""
    _, d = _read(path, TRUTH_HEADER)
    return d[:, 0], d[:, 1:4], d[:, 4:8]


def write_truth_csv(path, t, p, q) -> None:
    _write(path, TRUTH_HEADER, (np.concatenate(([ti], pi, qi)) for ti, pi, qi in zip(t, p, q)))


def write_plot_csv(path, columns: list[str], rows) -> None:
    """Comma-separated table with a ``#`` header, for gnuplot's
    ``set datafile separator ","``."""
    with open(Path(path), "w") as fh:
        fh.write("# " + ",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(x)) for x in r) + "\n")
