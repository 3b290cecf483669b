import numpy as np
import pytest

from ctf3d.crs import (
    CrsError,
    geodetic_to_tm,
    lonlat_to_utm_epsg,
    parse_crs,
    tm_to_geodetic,
    transform_points,
)

from oracles import redfearn_forward, utm_forward


def test_parse_crs():
    assert parse_crs("EPSG:4326") == ("geographic", 0, True)
    assert parse_crs("EPSG:32611") == ("utm", 11, True)
    assert parse_crs("epsg:32733") == ("utm", 33, False)
    for bad in ("", "EPSG:32661", "EPSG:999999", "UTM11N", "EPSG:abc"):
        with pytest.raises(CrsError):
            parse_crs(bad)


def test_forward_matches_redfearn_series():
    # compare against an independently coded Redfearn-series projection at
    # scattered mid-latitude positions (both methods are sub-mm there)
    rng = np.random.default_rng(12)
    for _ in range(40):
        zone = int(rng.integers(1, 61))
        lon0 = zone * 6.0 - 183.0
        lon = lon0 + rng.uniform(-2.5, 2.5)
        lat = rng.uniform(-70.0, 70.0)
        north = lat >= 0
        e, n = geodetic_to_tm(np.array([lon]), np.array([lat]), zone, north)
        eo, no = utm_forward(lat, lon, zone)  # applies the southern false northing itself
        assert abs(float(e[0]) - eo) < 1e-3, (lat, lon, zone)
        assert abs(float(n[0]) - no) < 1e-3, (lat, lon, zone)


def test_known_point_zone_11():
    # Las Vegas area, zone 11 north
    e, n = geodetic_to_tm(np.array([-115.0]), np.array([36.0]), 11, True)
    eo, no = redfearn_forward(36.0, -115.0, -117.0)
    assert float(e[0]) == pytest.approx(eo, abs=1e-3)
    assert float(n[0]) == pytest.approx(no, abs=1e-3)


def test_central_meridian_on_axis():
    # points on the central meridian map to the false easting exactly
    e, n = geodetic_to_tm(np.array([-117.0]), np.array([47.3]), 11, True)
    assert float(e[0]) == pytest.approx(500000.0, abs=1e-6)
    assert float(n[0]) > 0


def test_equator_zero_northing():
    e, n = geodetic_to_tm(np.array([-116.2]), np.array([0.0]), 11, True)
    assert float(n[0]) == pytest.approx(0.0, abs=1e-6)


def test_southern_hemisphere_false_northing():
    e_s, n_s = geodetic_to_tm(np.array([-116.0]), np.array([-20.0]), 11, False)
    e_n, n_n = geodetic_to_tm(np.array([-116.0]), np.array([20.0]), 11, True)
    assert float(e_s[0]) == pytest.approx(float(e_n[0]), abs=1e-9)
    assert float(n_s[0]) == pytest.approx(10000000.0 - float(n_n[0]), abs=1e-6)


def test_round_trip_forward_inverse():
    rng = np.random.default_rng(13)
    lons = rng.uniform(-2.8, 2.8, 200) - 117.0
    lats = rng.uniform(-80.0, 80.0, 200)
    e, n = geodetic_to_tm(lons, lats, 11, True)
    lon2, lat2 = tm_to_geodetic(e, n, 11, True)
    assert np.max(np.abs(lon2 - lons)) < 1e-9
    assert np.max(np.abs(lat2 - lats)) < 1e-9


def test_transform_points_utm_to_neighbor_zone():
    # oracle: project the same geodetic positions into both zones with the
    # independent series; the library must agree when rezoning directly
    rng = np.random.default_rng(14)
    lats = rng.uniform(30.0, 45.0, 30)
    lons = rng.uniform(-114.5, -113.5, 30)  # near the 11/12 boundary
    src = np.array([utm_forward(la, lo, 11) for la, lo in zip(lats, lons)])
    expect = np.array([utm_forward(la, lo, 12) for la, lo in zip(lats, lons)])
    got = transform_points(src, "EPSG:32611", "EPSG:32612")
    assert np.max(np.abs(got[:, :2] - expect)) < 2e-3


def test_transform_points_z_passthrough_and_identity():
    pts = np.array([[400000.0, 4000000.0, 123.25], [500000.0, 3900000.0, -7.5]])
    out = transform_points(pts, "EPSG:32611", "EPSG:4326")
    assert np.array_equal(out[:, 2], pts[:, 2])
    same = transform_points(pts, "EPSG:32611", "EPSG:32611")
    assert np.array_equal(same, pts)


def test_transform_points_geographic_to_utm():
    pts = np.array([[-115.0, 36.0]])
    out = transform_points(pts, "EPSG:4326", "EPSG:32611")
    eo, no = redfearn_forward(36.0, -115.0, -117.0)
    assert out[0, 0] == pytest.approx(eo, abs=1e-3)
    assert out[0, 1] == pytest.approx(no, abs=1e-3)


def test_transform_points_shape_validation():
    with pytest.raises(CrsError):
        transform_points(np.zeros((3,)), "EPSG:4326", "EPSG:32611")
    with pytest.raises(CrsError):
        transform_points(np.zeros((2, 5)), "EPSG:4326", "EPSG:32611")


def test_polar_latitudes_rejected():
    with pytest.raises(CrsError):
        geodetic_to_tm(np.array([0.0]), np.array([86.0]), 31, True)


def test_lonlat_to_utm_epsg():
    assert lonlat_to_utm_epsg(-115.0, 36.0) == "EPSG:32611"
    assert lonlat_to_utm_epsg(-115.0, -36.0) == "EPSG:32711"
    assert lonlat_to_utm_epsg(3.0, 50.0) == "EPSG:32631"
    assert lonlat_to_utm_epsg(179.9, 10.0) == "EPSG:32660"
    assert lonlat_to_utm_epsg(-180.0, 10.0) == "EPSG:32601"
