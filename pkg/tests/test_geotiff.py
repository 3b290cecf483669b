import numpy as np
import pytest
import tifffile

from ctf3d.geotiff import GeoTiffError, read_geotiff, write_geotiff
from ctf3d.raster import Raster

from helpers import CRS, ORIGIN, make_raster


def _random_raster(seed=0, shape=(11, 7), gsd=0.5):
    rng = np.random.default_rng(seed)
    # quarter-integers survive the float32 storage round trip exactly
    vals = rng.integers(-40, 400, size=shape).astype(np.float64) / 4.0
    vals[rng.uniform(size=shape) < 0.15] = -9999.0
    return make_raster(vals, gsd=gsd)


def test_round_trip_values_and_grid(tmp_path):
    src = _random_raster()
    p = tmp_path / "r.tif"
    write_geotiff(src, p)
    got = read_geotiff(p)
    assert np.array_equal(got.values, src.values)
    assert np.array_equal(got.valid_mask, src.valid_mask)
    assert got.origin_x == src.origin_x
    assert got.origin_y == src.origin_y
    assert got.gsd_x == src.gsd_x
    assert got.gsd_y == src.gsd_y
    assert got.crs_id == src.crs_id
    assert got.nodata == src.nodata


def test_round_trip_geographic_crs(tmp_path):
    src = Raster(np.zeros((2, 2)), -115.0, 36.0, 1e-4, -1e-4, "EPSG:4326")
    p = tmp_path / "g.tif"
    write_geotiff(src, p)
    assert read_geotiff(p).crs_id == "EPSG:4326"


def test_rewrite_is_byte_identical(tmp_path):
    src = _random_raster(seed=3)
    a, b = tmp_path / "a.tif", tmp_path / "b.tif"
    write_geotiff(src, a)
    write_geotiff(src, b)
    assert a.read_bytes() == b.read_bytes()


def test_tifffile_decodes_our_output(tmp_path):
    src = _random_raster(seed=4)
    p = tmp_path / "x.tif"
    write_geotiff(src, p)
    arr = tifffile.imread(p)
    assert arr.dtype == np.float32
    assert np.array_equal(arr.astype(np.float64), src.values)
    with tifffile.TiffFile(p) as tf:
        tags = tf.pages[0].tags
        assert tuple(tags[33550].value) == (src.gsd_x, -src.gsd_y, 0.0)
        tie = tuple(tags[33922].value)
        assert tie[3] == src.origin_x and tie[4] == src.origin_y
        assert tags[42113].value.strip("\x00") == "-9999"


def test_reads_tifffile_output(tmp_path):
    vals = (np.arange(24, dtype=np.float64) / 2.0).reshape(4, 6)
    p = tmp_path / "t.tif"
    tifffile.imwrite(
        p,
        vals.astype(np.float32),
        photometric="minisblack",
        extratags=[
            (33550, "d", 3, (0.5, 0.5, 0.0)),
            (33922, "d", 6, (0.0, 0.0, 0.0, ORIGIN[0], ORIGIN[1], 0.0)),
            (42113, "s", None, "-9999"),
        ],
    )
    got = read_geotiff(p)
    assert np.array_equal(got.values, vals)
    assert got.origin_x == ORIGIN[0] and got.origin_y == ORIGIN[1]
    assert got.gsd_x == 0.5 and got.gsd_y == -0.5


def test_reads_big_endian(tmp_path):
    vals = np.array([[1.5, 2.5], [3.5, 4.5]], dtype=np.float32)
    p = tmp_path / "be.tif"
    tifffile.imwrite(
        p,
        vals,
        byteorder=">",
        photometric="minisblack",
        extratags=[
            (33550, "d", 3, (1.0, 1.0, 0.0)),
            (33922, "d", 6, (0.0, 0.0, 0.0, 10.0, 20.0, 0.0)),
        ],
    )
    got = read_geotiff(p)
    assert np.array_equal(got.values, vals.astype(np.float64))


def test_nan_cells_become_nodata(tmp_path):
    vals = np.array([[1.0, np.nan], [2.0, 3.0]], dtype=np.float32)
    p = tmp_path / "nan.tif"
    tifffile.imwrite(
        p,
        vals,
        photometric="minisblack",
        extratags=[
            (33550, "d", 3, (1.0, 1.0, 0.0)),
            (33922, "d", 6, (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)),
            (42113, "s", None, "-9999"),
        ],
    )
    got = read_geotiff(p)
    assert not got.valid_mask[0, 1]
    assert got.valid_mask[0, 0]


def test_rejects_non_tiff(tmp_path):
    p = tmp_path / "nope.tif"
    p.write_bytes(b"PNG whatever")
    with pytest.raises(GeoTiffError, match="byte-order"):
        read_geotiff(p)
    p.write_bytes(b"II")
    with pytest.raises(GeoTiffError, match="too small"):
        read_geotiff(p)


def test_rejects_bigtiff(tmp_path):
    p = tmp_path / "big.tif"
    tifffile.imwrite(p, np.zeros((4, 4), dtype=np.float32), bigtiff=True)
    with pytest.raises(GeoTiffError, match="BigTIFF"):
        read_geotiff(p)


def test_rejects_compressed(tmp_path):
    p = tmp_path / "z.tif"
    tifffile.imwrite(p, np.zeros((16, 16), dtype=np.float32), compression="zlib")
    with pytest.raises(GeoTiffError, match="[Cc]ompression"):
        read_geotiff(p)


def test_rejects_tiled(tmp_path):
    p = tmp_path / "tiled.tif"
    tifffile.imwrite(p, np.zeros((64, 64), dtype=np.float32), tile=(16, 16))
    with pytest.raises(GeoTiffError, match="tiled"):
        read_geotiff(p)


def test_rejects_wrong_dtype(tmp_path):
    p = tmp_path / "u16.tif"
    tifffile.imwrite(p, np.zeros((4, 4), dtype=np.uint16))
    with pytest.raises(GeoTiffError, match="not supported"):
        read_geotiff(p)


def test_rejects_missing_georeferencing(tmp_path):
    p = tmp_path / "plain.tif"
    tifffile.imwrite(p, np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(GeoTiffError, match="georeferencing"):
        read_geotiff(p)


def test_rejects_rgb(tmp_path):
    p = tmp_path / "rgb.tif"
    tifffile.imwrite(p, np.zeros((4, 4, 3), dtype=np.float32), photometric="rgb")
    with pytest.raises(GeoTiffError, match="single band|samples"):
        read_geotiff(p)


def test_write_rejects_non_epsg_crs(tmp_path):
    r = make_raster(np.zeros((2, 2)), crs="ESRI:102008")
    with pytest.raises(GeoTiffError, match="EPSG"):
        write_geotiff(r, tmp_path / "x.tif")


def test_default_nodata_when_tag_absent(tmp_path):
    p = tmp_path / "nd.tif"
    tifffile.imwrite(
        p,
        np.ones((2, 2), dtype=np.float32),
        photometric="minisblack",
        extratags=[
            (33550, "d", 3, (1.0, 1.0, 0.0)),
            (33922, "d", 6, (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)),
        ],
    )
    got = read_geotiff(p)
    assert got.nodata == -9999.0
    assert got.valid_mask.all()


def test_crs_preserved_through_file(tmp_path):
    src = make_raster(np.ones((3, 3)), crs=CRS)
    p = tmp_path / "crs.tif"
    write_geotiff(src, p)
    assert read_geotiff(p).crs_id == CRS
