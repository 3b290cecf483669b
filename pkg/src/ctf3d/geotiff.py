"""Minimal GeoTIFF codec for single-band 32-bit float rasters.

Writes classic little-endian TIFF with one strip, no compression, and the
georeferencing tags (pixel scale, tiepoint, geokey directory, nodata string).
The writer emits a fixed tag layout so equal rasters produce byte-identical
files. The reader accepts striped uncompressed single-band float32 TIFFs in
either byte order and rejects everything else with a specific error.
"""

from __future__ import annotations

import math
import struct
from typing import Optional

import numpy as np

from .raster import DEFAULT_NODATA, Raster

_TYPE_SIZES = {1: 1, 2: 1, 3: 2, 4: 4, 5: 8, 11: 4, 12: 8, 16: 8}
_ASCII, _SHORT, _LONG, _DOUBLE = 2, 3, 4, 12

TAG_WIDTH = 256
TAG_HEIGHT = 257
TAG_BITS = 258
TAG_COMPRESSION = 259
TAG_PHOTOMETRIC = 262
TAG_STRIP_OFFSETS = 273
TAG_SPP = 277
TAG_ROWS_PER_STRIP = 278
TAG_STRIP_COUNTS = 279
TAG_PREDICTOR = 317
TAG_TILE_WIDTH = 322
TAG_TILE_OFFSETS = 324
TAG_SAMPLE_FORMAT = 339
TAG_PIXEL_SCALE = 33550
TAG_TIEPOINT = 33922
TAG_TRANSFORM = 34264
TAG_GEOKEYS = 34735
TAG_NODATA = 42113


class GeoTiffError(Exception):
    pass


def _crs_to_geokeys(crs_id: str) -> Optional[list[int]]:
    if not crs_id:
        return None
    try:
        auth, code_s = crs_id.split(":")
        code = int(code_s)
    except ValueError as e:
        raise GeoTiffError(f"cannot encode CRS {crs_id!r}; expected 'EPSG:<code>'") from e
    if auth.upper() != "EPSG":
        raise GeoTiffError(f"cannot encode CRS {crs_id!r}; only EPSG codes supported")
    keys: list[tuple[int, int, int, int]]
    if code == 4326:
        keys = [(1024, 0, 1, 2), (1025, 0, 1, 1), (2048, 0, 1, code)]
    else:
        keys = [(1024, 0, 1, 1), (1025, 0, 1, 1), (3072, 0, 1, code)]
    flat = [1, 1, 0, len(keys)]
    for k in keys:
        flat.extend(k)
    return flat


def _geokeys_to_crs(shorts: tuple[int, ...]) -> str:
    if len(shorts) < 4:
        return ""
    nkeys = shorts[3]
    entries = {}
    for i in range(nkeys):
        base = 4 + 4 * i
        if base + 3 >= len(shorts):
            break
        kid, loc, cnt, val = shorts[base : base + 4]
        if loc == 0:
            entries[kid] = val
    if 3072 in entries and entries[3072] not in (0, 32767):
        return f"EPSG:{entries[3072]}"
    if 2048 in entries and entries[2048] not in (0, 32767):
        return f"EPSG:{entries[2048]}"
    return ""


def _format_nodata(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_geotiff(raster: Raster, path) -> None:
    """Write a single-strip float32 GeoTIFF; nodata cells carry the sentinel."""
    w, h = raster.width, raster.height
    data = np.where(raster.valid_mask, raster.values, raster.nodata).astype("<f4").tobytes()

    entries: list[tuple[int, int, int, bytes]] = []  # (tag, type, count, payload)

    def add(tag: int, typ: int, values) -> None:
        if typ == _ASCII:
            payload = values.encode("ascii") + b"\x00"
            count = len(payload)
        else:
            fmt = {_SHORT: "H", _LONG: "I", _DOUBLE: "d"}[typ]
            seq = values if isinstance(values, (list, tuple)) else [values]
            payload = struct.pack(f"<{len(seq)}{fmt}", *seq)
            count = len(seq)
        entries.append((tag, typ, count, payload))

    add(TAG_WIDTH, _LONG, w)
    add(TAG_HEIGHT, _LONG, h)
    add(TAG_BITS, _SHORT, 32)
    add(TAG_COMPRESSION, _SHORT, 1)
    add(TAG_PHOTOMETRIC, _SHORT, 1)
    add(TAG_STRIP_OFFSETS, _LONG, 0)  # patched below
    add(TAG_SPP, _SHORT, 1)
    add(TAG_ROWS_PER_STRIP, _LONG, h)
    add(TAG_STRIP_COUNTS, _LONG, len(data))
    add(TAG_SAMPLE_FORMAT, _SHORT, 3)
    add(TAG_PIXEL_SCALE, _DOUBLE, [raster.gsd_x, -raster.gsd_y, 0.0])
    add(TAG_TIEPOINT, _DOUBLE, [0.0, 0.0, 0.0, raster.origin_x, raster.origin_y, 0.0])
    geokeys = _crs_to_geokeys(raster.crs_id)
    if geokeys is not None:
        add(TAG_GEOKEYS, _SHORT, geokeys)
    add(TAG_NODATA, _ASCII, _format_nodata(raster.nodata))

    entries.sort(key=lambda e: e[0])
    ifd_offset = 8
    ifd_size = 2 + 12 * len(entries) + 4
    blob_offset = ifd_offset + ifd_size
    blobs = b""
    located: list[tuple[int, int, int, bytes]] = []
    for tag, typ, count, payload in entries:
        if len(payload) <= 4:
            located.append((tag, typ, count, payload.ljust(4, b"\x00")))
        else:
            located.append((tag, typ, count, struct.pack("<I", blob_offset + len(blobs))))
            pad = payload if len(payload) % 2 == 0 else payload + b"\x00"
            blobs += pad
    data_offset = blob_offset + len(blobs)

    out = bytearray()
    out += b"II*\x00" + struct.pack("<I", ifd_offset)
    out += struct.pack("<H", len(located))
    for tag, typ, count, val4 in located:
        if tag == TAG_STRIP_OFFSETS:
            val4 = struct.pack("<I", data_offset)
        out += struct.pack("<HHI", tag, typ, count) + val4
    out += struct.pack("<I", 0)
    out += blobs
    out += data
    with open(path, "wb") as f:
        f.write(bytes(out))


def _read_values(buf: bytes, bo: str, typ: int, count: int, field: bytes):
    size = _TYPE_SIZES.get(typ)
    if size is None:
        return None
    total = size * count
    if total <= 4:
        raw = field[:total]
    else:
        (off,) = struct.unpack(bo + "I", field)
        raw = buf[off : off + total]
        if len(raw) != total:
            raise GeoTiffError(f"tag data out of bounds (offset {off})")
    if typ == _ASCII:
        return raw.rstrip(b"\x00").decode("ascii", errors="replace")
    fmt = {1: "B", 3: "H", 4: "I", 11: "f", 12: "d", 16: "Q"}.get(typ)
    if fmt is None:
        return None
    return struct.unpack(f"{bo}{count}{fmt}", raw)


def read_geotiff(path) -> Raster:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 8:
        raise GeoTiffError("file too small to be a TIFF")
    if buf[:2] == b"II":
        bo = "<"
    elif buf[:2] == b"MM":
        bo = ">"
    else:
        raise GeoTiffError("not a TIFF (bad byte-order mark)")
    (magic,) = struct.unpack(bo + "H", buf[2:4])
    if magic == 43:
        raise GeoTiffError("BigTIFF is not supported")
    if magic != 42:
        raise GeoTiffError(f"not a TIFF (magic {magic})")
    (ifd_off,) = struct.unpack(bo + "I", buf[4:8])
    if ifd_off + 2 > len(buf):
        raise GeoTiffError("IFD offset out of bounds")
    (n_entries,) = struct.unpack(bo + "H", buf[ifd_off : ifd_off + 2])
    tags: dict[int, tuple] = {}
    for i in range(n_entries):
        base = ifd_off + 2 + 12 * i
        if base + 12 > len(buf):
            raise GeoTiffError("truncated IFD")
        tag, typ, count = struct.unpack(bo + "HHI", buf[base : base + 8])
        vals = _read_values(buf, bo, typ, count, buf[base + 8 : base + 12])
        if vals is not None:
            tags[tag] = vals

    def one(tag: int, default=None):
        v = tags.get(tag)
        if v is None:
            return default
        return v[0] if isinstance(v, tuple) else v

    if TAG_TILE_WIDTH in tags or TAG_TILE_OFFSETS in tags:
        raise GeoTiffError("tiled TIFF layout not supported (striped only)")
    comp = one(TAG_COMPRESSION, 1)
    if comp != 1:
        raise GeoTiffError(f"compression {comp} not supported (uncompressed only)")
    spp = one(TAG_SPP, 1)
    if spp != 1:
        raise GeoTiffError(f"{spp} samples per pixel not supported (single band only)")
    bits = one(TAG_BITS)
    if bits != 32:
        raise GeoTiffError(f"{bits}-bit samples not supported (32-bit float only)")
    sfmt = one(TAG_SAMPLE_FORMAT, 1)
    if sfmt != 3:
        raise GeoTiffError(f"sample format {sfmt} not supported (IEEE float only)")
    pred = one(TAG_PREDICTOR, 1)
    if pred != 1:
        raise GeoTiffError(f"predictor {pred} not supported")
    w = one(TAG_WIDTH)
    h = one(TAG_HEIGHT)
    if not w or not h:
        raise GeoTiffError("missing image dimensions")
    offsets = tags.get(TAG_STRIP_OFFSETS)
    counts = tags.get(TAG_STRIP_COUNTS)
    if offsets is None or counts is None:
        raise GeoTiffError("missing strip offsets/byte counts")
    raw = b"".join(buf[o : o + c] for o, c in zip(offsets, counts))
    expected = w * h * 4
    if len(raw) != expected:
        raise GeoTiffError(f"pixel data is {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype=bo + "f4").reshape(h, w).astype(np.float64)

    scale = tags.get(TAG_PIXEL_SCALE)
    tie = tags.get(TAG_TIEPOINT)
    if scale is None or tie is None:
        if TAG_TRANSFORM in tags:
            raise GeoTiffError(
                "ModelTransformation georeferencing not supported (pixel scale + tiepoint only)"
            )
        raise GeoTiffError("missing georeferencing tags (pixel scale + tiepoint)")
    sx, sy = float(scale[0]), float(scale[1])
    if sx <= 0 or sy <= 0:
        raise GeoTiffError("non-positive pixel scale")
    i, j, _k, x, y, _z = (float(v) for v in tie[:6])
    origin_x = x - i * sx
    origin_y = y + j * sy

    crs_id = ""
    if TAG_GEOKEYS in tags:
        crs_id = _geokeys_to_crs(tags[TAG_GEOKEYS])

    nodata = DEFAULT_NODATA
    nd_s = tags.get(TAG_NODATA)
    if nd_s is not None:
        try:
            nd = float(str(nd_s).strip())
            if math.isfinite(nd):
                nodata = nd
        except ValueError:
            pass
    # Nodata read back from float32 storage must match cell values exactly.
    nodata = float(np.float32(nodata))
    if not np.isfinite(values).all():
        values = np.where(np.isfinite(values), values, nodata)
    return Raster(values, origin_x, origin_y, sx, -sy, crs_id, nodata)
