"""WGS-84 geodetic coordinates to a local East-North-Up frame.

Altitudes are ellipsoidal heights; no geoid model is applied, so
orthometric altitudes from real receivers must be corrected beforehand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import Rot3

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


@dataclass(frozen=True)
class GeodeticPoint:
    latitude: float  # degrees
    longitude: float  # degrees
    altitude: float = 0.0  # metres above the ellipsoid

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")


def geodetic_to_ecef(p: GeodeticPoint) -> np.ndarray:
    lat = np.radians(p.latitude)
    lon = np.radians(p.longitude)
    slat, clat = np.sin(lat), np.cos(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * slat * slat)
    return np.array([
        (n + p.altitude) * clat * np.cos(lon),
        (n + p.altitude) * clat * np.sin(lon),
        (n * (1.0 - WGS84_E2) + p.altitude) * slat,
    ])


def ecef_to_geodetic(xyz) -> GeodeticPoint:
    """Inverse of :func:`geodetic_to_ecef` (Bowring start, Newton refinement)."""
    x, y, z = np.asarray(xyz, dtype=float)
    lon = np.arctan2(y, x)
    rho = np.hypot(x, y)
    if rho < 1e-9:
        lat = np.copysign(np.pi / 2.0, z)
        return GeodeticPoint(np.degrees(lat), np.degrees(lon), abs(z) - WGS84_B)
    ep2 = (WGS84_A ** 2 - WGS84_B ** 2) / WGS84_B ** 2
    beta = np.arctan2(WGS84_A * z, WGS84_B * rho)
    lat = np.arctan2(z + ep2 * WGS84_B * np.sin(beta) ** 3,
                     rho - WGS84_E2 * WGS84_A * np.cos(beta) ** 3)
    for _ in range(5):
        slat = np.sin(lat)
        n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * slat * slat)
        h = rho / np.cos(lat) - n if abs(lat) < np.pi / 4 else z / slat - n * (1.0 - WGS84_E2)
        lat_new = np.arctan2(z, rho * (1.0 - WGS84_E2 * n / (n + h)))
        if abs(lat_new - lat) < 1e-15:
            lat = lat_new
            break
        lat = lat_new
    slat = np.sin(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * slat * slat)
    if abs(lat) < np.pi / 4:
        h = rho / np.cos(lat) - n
    else:
        h = z / slat - n * (1.0 - WGS84_E2)
    return GeodeticPoint(float(np.degrees(lat)), float(np.degrees(lon)), float(h))


def ecef_to_enu_matrix(lat_deg: float, lon_deg: float) -> np.ndarray:
    """Rows are the east, north and up unit vectors in ECEF."""
    lat, lon = np.radians(lat_deg), np.radians(lon_deg)
    sl, cl = np.sin(lat), np.cos(lat)
    so, co = np.sin(lon), np.cos(lon)
    return np.array([
        [-so, co, 0.0],
        [-sl * co, -sl * so, cl],
        [cl * co, cl * so, sl],
    ])


@dataclass(frozen=True)
class EnuOrigin:
    origin: GeodeticPoint
    ecef: np.ndarray
    rotation: Rot3  # C_ENU_ECEF

    @classmethod
    def from_point(cls, origin: GeodeticPoint) -> EnuOrigin:
        return cls(origin, geodetic_to_ecef(origin),
                   Rot3.from_matrix(ecef_to_enu_matrix(origin.latitude, origin.longitude)))

    def matrix(self) -> np.ndarray:
        # rebuilt from lat/lon rather than the quaternion to keep full precision
        return ecef_to_enu_matrix(self.origin.latitude, self.origin.longitude)


def to_enu(p: GeodeticPoint, origin: EnuOrigin) -> np.ndarray:
    return origin.matrix() @ (geodetic_to_ecef(p) - origin.ecef)


def from_enu(enu, origin: EnuOrigin) -> GeodeticPoint:
    return ecef_to_geodetic(origin.matrix().T @ np.asarray(enu, dtype=float) + origin.ecef)


class EnuConverter:
    """Fixes the ENU origin at the first point it converts."""

    def __init__(self, origin: GeodeticPoint | None = None):
        self.origin = EnuOrigin.from_point(origin) if origin is not None else None

    def __call__(self, p: GeodeticPoint) -> np.ndarray:
        if self.origin is None:
            self.origin = EnuOrigin.from_point(p)
        return to_enu(p, self.origin)
