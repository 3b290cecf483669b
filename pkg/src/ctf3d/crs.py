"""Coordinate transforms between WGS84 geographic coordinates and WGS84/UTM
zones, using the exp-series transverse Mercator (accurate to well under a
millimeter). Supported identifiers: "EPSG:4326" (lon/lat degrees) and
"EPSG:326NN"/"EPSG:327NN" (UTM north/south, zone NN). Heights pass through
unchanged.
"""

from __future__ import annotations

import math
from typing import Union

import numpy as np

_A = 6378137.0
_F = 1.0 / 298.257223563
_E2 = _F * (2.0 - _F)
_E = math.sqrt(_E2)
_N = _F / (2.0 - _F)
_K0 = 0.9996
_FE = 500000.0
_FN_SOUTH = 10000000.0

# Rectifying radius and the forward/inverse series coefficients (6th order).
_RECT_A = _A / (1.0 + _N) * (1.0 + _N**2 / 4.0 + _N**4 / 64.0 + _N**6 / 256.0)
_ALPHA = np.array(
    [
        _N / 2 - 2 * _N**2 / 3 + 5 * _N**3 / 16 + 41 * _N**4 / 180 - 127 * _N**5 / 288 + 7891 * _N**6 / 37800,
        13 * _N**2 / 48 - 3 * _N**3 / 5 + 557 * _N**4 / 1440 + 281 * _N**5 / 630 - 1983433 * _N**6 / 1935360,
        61 * _N**3 / 240 - 103 * _N**4 / 140 + 15061 * _N**5 / 26880 + 167603 * _N**6 / 181440,
        49561 * _N**4 / 161280 - 179 * _N**5 / 168 + 6601661 * _N**6 / 7257600,
        34729 * _N**5 / 80640 - 3418889 * _N**6 / 1995840,
        212378941 * _N**6 / 319334400,
    ]
)
_BETA = np.array(
    [
        _N / 2 - 2 * _N**2 / 3 + 37 * _N**3 / 96 - _N**4 / 360 - 81 * _N**5 / 512 + 96199 * _N**6 / 604800,
        _N**2 / 48 + _N**3 / 15 - 437 * _N**4 / 1440 + 46 * _N**5 / 105 - 1118711 * _N**6 / 3870720,
        17 * _N**3 / 480 - 37 * _N**4 / 840 - 209 * _N**5 / 4480 + 5569 * _N**6 / 90720,
        4397 * _N**4 / 161280 - 11 * _N**5 / 504 - 830251 * _N**6 / 7257600,
        4583 * _N**5 / 161280 - 108847 * _N**6 / 3991680,
        20648693 * _N**6 / 638668800,
    ]
)


class CrsError(Exception):
    pass


def parse_crs(crs_id: str) -> tuple[str, int, bool]:
    """Returns (kind, zone, north) where kind is 'geographic' or 'utm'."""
    s = (crs_id or "").strip().upper()
    if not s.startswith("EPSG:"):
        raise CrsError(
            f"unsupported CRS {crs_id!r}; supported: EPSG:4326 and UTM EPSG:326NN/327NN"
        )
    try:
        code = int(s[5:])
    except ValueError as e:
        raise CrsError(f"malformed CRS {crs_id!r}") from e
    if code == 4326:
        return ("geographic", 0, True)
    if 32601 <= code <= 32660:
        return ("utm", code - 32600, True)
    if 32701 <= code <= 32760:
        return ("utm", code - 32700, False)
    raise CrsError(
        f"unsupported CRS {crs_id!r}; supported: EPSG:4326 and UTM EPSG:326NN/327NN"
    )


def _central_meridian_deg(zone: int) -> float:
    return zone * 6.0 - 183.0


def geodetic_to_tm(
    lon_deg: np.ndarray, lat_deg: np.ndarray, zone: int, north: bool
) -> tuple[np.ndarray, np.ndarray]:
    lat = np.radians(np.asarray(lat_deg, dtype=np.float64))
    lon = np.radians(np.asarray(lon_deg, dtype=np.float64))
    if np.any(np.abs(lat) > math.radians(85.0)):
        raise CrsError("latitude beyond +/-85 deg is outside the supported UTM domain")
    lam = lon - math.radians(_central_meridian_deg(zone))
    tau = np.tan(lat)
    sig = np.sinh(_E * np.arctanh(_E * tau / np.sqrt(1.0 + tau**2)))
    taup = tau * np.sqrt(1.0 + sig**2) - sig * np.sqrt(1.0 + tau**2)
    xi_p = np.arctan2(taup, np.cos(lam))
    eta_p = np.arcsinh(np.sin(lam) / np.sqrt(taup**2 + np.cos(lam) ** 2))
    xi = xi_p.copy()
    eta = eta_p.copy()
    for j in range(6):
        k = 2.0 * (j + 1)
        xi += _ALPHA[j] * np.sin(k * xi_p) * np.cosh(k * eta_p)
        eta += _ALPHA[j] * np.cos(k * xi_p) * np.sinh(k * eta_p)
    easting = _FE + _K0 * _RECT_A * eta
    northing = (_FN_SOUTH if not north else 0.0) + _K0 * _RECT_A * xi
    return easting, northing


def tm_to_geodetic(
    easting: np.ndarray, northing: np.ndarray, zone: int, north: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (lon_deg, lat_deg)."""
    lam, phi = _tm_inverse(easting, northing, zone, north)
    return np.degrees(lam) + _central_meridian_deg(zone), np.degrees(phi)


def _tau_from_taup(taup: np.ndarray) -> np.ndarray:
    tau = taup.copy()
    for _ in range(6):
        sig = np.sinh(_E * np.arctanh(_E * tau / np.sqrt(1.0 + tau**2)))
        f = tau * np.sqrt(1.0 + sig**2) - sig * np.sqrt(1.0 + tau**2) - taup
        df = (
            (np.sqrt(1.0 + sig**2) * np.sqrt(1.0 + tau**2) - sig * tau)
            * (1.0 - _E2)
            * np.sqrt(1.0 + tau**2)
            / (1.0 + (1.0 - _E2) * tau**2)
        )
        tau = tau - f / df
    return tau


def transform_points(points: np.ndarray, src_crs: str, dst_crs: str) -> np.ndarray:
    """Transform an (N, 2) or (N, 3) coordinate array; z is passed through."""
    pts = np.array(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise CrsError(f"expected (N, 2) or (N, 3) coordinates, got shape {pts.shape}")
    src = parse_crs(src_crs)
    dst = parse_crs(dst_crs)
    if src == dst:
        return pts
    x, y = pts[:, 0], pts[:, 1]
    if src[0] == "utm":
        lam, phi = _tm_inverse(x, y, src[1], src[2])
        lon = np.degrees(lam) + _central_meridian_deg(src[1])
        lat = np.degrees(phi)
    else:
        lon, lat = x, y
    if dst[0] == "utm":
        ox, oy = geodetic_to_tm(lon, lat, dst[1], dst[2])
    else:
        ox, oy = lon, lat
    out = pts.copy()
    out[:, 0] = ox
    out[:, 1] = oy
    return out


def _tm_inverse(
    easting: np.ndarray, northing: np.ndarray, zone: int, north: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (lambda_from_central_meridian, phi) in radians."""
    e_ = np.asarray(easting, dtype=np.float64)
    n_ = np.asarray(northing, dtype=np.float64)
    xi = (n_ - (0.0 if north else _FN_SOUTH)) / (_K0 * _RECT_A)
    eta = (e_ - _FE) / (_K0 * _RECT_A)
    xi_p = xi.copy()
    eta_p = eta.copy()
    for j in range(6):
        k = 2.0 * (j + 1)
        xi_p -= _BETA[j] * np.sin(k * xi) * np.cosh(k * eta)
        eta_p -= _BETA[j] * np.cos(k * xi) * np.sinh(k * eta)
    taup = np.sin(xi_p) / np.sqrt(np.sinh(eta_p) ** 2 + np.cos(xi_p) ** 2)
    lam = np.arctan2(np.sinh(eta_p), np.cos(xi_p))
    tau = _tau_from_taup(taup)
    phi = np.arctan(tau)
    return lam, phi


def lonlat_to_utm_epsg(lon: float, lat: float) -> str:
    """EPSG id of the UTM zone containing a lon/lat position."""
    zone = int(math.floor((lon + 180.0) / 6.0)) % 60 + 1
    return f"EPSG:{32600 + zone}" if lat >= 0 else f"EPSG:{32700 + zone}"
