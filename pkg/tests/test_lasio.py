import struct

import numpy as np
import pytest

from ctf3d.lasio import (
    LasParseError,
    read_las,
    read_sidecar,
    write_las,
    write_sidecar,
)

from helpers import CRS, ORIGIN


def _cloud(n=200, seed=0):
    rng = np.random.default_rng(seed)
    xyz = np.column_stack(
        [
            rng.uniform(ORIGIN[0], ORIGIN[0] + 50, n),
            rng.uniform(ORIGIN[1] - 50, ORIGIN[1], n),
            rng.uniform(-5, 40, n),
        ]
    )
    cls = rng.integers(0, 20, n).astype(np.uint8)
    withheld = rng.uniform(size=n) < 0.1
    return xyz, cls, withheld


def test_round_trip_format6(tmp_path):
    xyz, cls, withheld = _cloud()
    p = tmp_path / "a.las"
    write_las(p, xyz, cls, withheld, crs_id=CRS, point_format=6)
    got = read_las(p)
    assert got.version == (1, 4)
    assert got.point_format == 6
    assert got.crs_id == CRS
    assert np.max(np.abs(got.xyz - xyz)) <= 5.001e-4  # half the 1 mm quantization
    assert np.array_equal(got.classification, cls)
    assert np.array_equal(got.withheld, withheld)


def test_round_trip_format0_legacy(tmp_path):
    xyz, cls, withheld = _cloud(seed=1)
    cls = (cls % 32).astype(np.uint8)
    p = tmp_path / "b.las"
    write_las(p, xyz, cls, withheld, crs_id=CRS, point_format=0)
    got = read_las(p)
    assert got.version == (1, 2)
    assert np.array_equal(got.classification, cls)
    assert np.array_equal(got.withheld, withheld)
    assert np.max(np.abs(got.xyz - xyz)) <= 5.001e-4


def test_all_formats_round_trip(tmp_path):
    xyz, cls, withheld = _cloud(n=37, seed=2)
    cls = (cls % 32).astype(np.uint8)
    for pf in (0, 1, 2, 3, 6, 7, 8):
        p = tmp_path / f"pf{pf}.las"
        write_las(p, xyz, cls, withheld, crs_id=CRS, point_format=pf)
        got = read_las(p)
        assert got.point_format == pf
        assert np.array_equal(got.classification, cls), pf
        assert np.array_equal(got.withheld, withheld), pf


def test_high_class_codes_need_modern_format(tmp_path):
    xyz = np.zeros((2, 3))
    cls = np.array([64, 65], dtype=np.uint8)
    with pytest.raises(LasParseError, match="31"):
        write_las(tmp_path / "x.las", xyz, cls, np.zeros(2, bool), point_format=0)
    p = tmp_path / "ok.las"
    write_las(p, xyz, cls, np.zeros(2, bool), point_format=6)
    assert np.array_equal(read_las(p).classification, cls)


def test_geographic_crs_geokeys(tmp_path):
    p = tmp_path / "geo.las"
    write_las(p, np.array([[-115.0, 36.0, 0.0]]), np.zeros(1, np.uint8), np.zeros(1, bool),
              crs_id="EPSG:4326", point_format=6, scale=(1e-7, 1e-7, 0.001))
    assert read_las(p).crs_id == "EPSG:4326"


def test_empty_cloud(tmp_path):
    p = tmp_path / "empty.las"
    write_las(p, np.zeros((0, 3)), np.zeros(0, np.uint8), np.zeros(0, bool), crs_id=CRS)
    got = read_las(p)
    assert got.xyz.shape == (0, 3)


def test_coordinate_overflow(tmp_path):
    xyz = np.array([[0.0, 0.0, 0.0], [3e6, 0.0, 0.0]])
    with pytest.raises(LasParseError, match="overflow"):
        write_las(tmp_path / "x.las", xyz, np.zeros(2, np.uint8), np.zeros(2, bool))


def test_rejects_non_las(tmp_path):
    p = tmp_path / "no.las"
    p.write_bytes(b"\x00" * 300)
    with pytest.raises(LasParseError, match="LASF"):
        read_las(p)
    p.write_bytes(b"LASF")
    with pytest.raises(LasParseError, match="too small"):
        read_las(p)


def test_rejects_unsupported_version(tmp_path):
    xyz, cls, withheld = _cloud(n=3)
    p = tmp_path / "v.las"
    write_las(p, xyz, cls, withheld)
    raw = bytearray(p.read_bytes())
    raw[25] = 9  # minor version
    p.write_bytes(bytes(raw))
    with pytest.raises(LasParseError, match="1.9"):
        read_las(p)


def test_rejects_laz_bit(tmp_path):
    xyz, cls, withheld = _cloud(n=3)
    p = tmp_path / "laz.las"
    write_las(p, xyz, cls, withheld)
    raw = bytearray(p.read_bytes())
    raw[104] |= 0x80
    p.write_bytes(bytes(raw))
    with pytest.raises(LasParseError, match="LAZ"):
        read_las(p)


def test_rejects_truncated_points(tmp_path):
    xyz, cls, withheld = _cloud(n=10)
    p = tmp_path / "t.las"
    write_las(p, xyz, cls, withheld)
    raw = p.read_bytes()
    p.write_bytes(raw[:-7])
    with pytest.raises(LasParseError, match="truncated"):
        read_las(p)


def test_wkt_crs_vlr(tmp_path):
    # splice a WKT VLR (record id 2112) into a file written without CRS keys
    p = tmp_path / "wkt.las"
    write_las(p, np.zeros((0, 3)), np.zeros(0, np.uint8), np.zeros(0, bool), crs_id="")
    raw = bytearray(p.read_bytes())
    (header_size,) = struct.unpack_from("<H", raw, 94)
    wkt = b'PROJCRS["WGS 84 / UTM zone 11N",ID["EPSG",32611]]\x00'
    vlr = (
        struct.pack("<H", 0)
        + b"LASF_Projection".ljust(16, b"\x00")
        + struct.pack("<HH", 2112, len(wkt))
        + b"wkt".ljust(32, b"\x00")
        + wkt
    )
    out = raw[:header_size] + vlr + raw[header_size:]
    struct.pack_into("<I", out, 96, header_size + len(vlr))  # point data offset
    struct.pack_into("<I", out, 100, 1)  # vlr count
    p.write_bytes(bytes(out))
    assert read_las(p).crs_id == "EPSG:32611"


def test_sidecar_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 7, 500).astype(np.uint8)
    conf = rng.uniform(0, 1, 500).astype(np.float32)
    p = tmp_path / "x.c3dl"
    write_sidecar(p, labels, conf)
    l2, c2 = read_sidecar(p)
    assert np.array_equal(l2, labels)
    assert np.array_equal(c2.astype(np.float32), conf)


def test_sidecar_rejects_garbage(tmp_path):
    p = tmp_path / "bad.c3dl"
    p.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(LasParseError, match="magic"):
        read_sidecar(p)


def test_sidecar_rejects_truncation(tmp_path):
    p = tmp_path / "t.c3dl"
    write_sidecar(p, np.zeros(10, np.uint8), np.zeros(10, np.float32))
    raw = p.read_bytes()
    p.write_bytes(raw[:-3])
    with pytest.raises(LasParseError, match="expected"):
        read_sidecar(p)


def test_sidecar_length_mismatch(tmp_path):
    with pytest.raises(LasParseError, match="same length"):
        write_sidecar(tmp_path / "m.c3dl", np.zeros(3, np.uint8), np.zeros(4, np.float32))
