"""LAS 1.2-1.4 point-record I/O (point formats 0-8) plus a small binary
sidecar that carries per-point semantic labels and confidences when they
don't fit the standard classification byte.

The reader extracts only what the pipeline needs: scaled XYZ, the raw
classification code, and the withheld flag. The writer emits uncompressed
LAS with a GeoKey VLR for the CRS; formats 0-3 write legacy headers, 6-8
write 1.4 headers.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

SIDECAR_MAGIC = b"C3DL"
SIDECAR_VERSION = 1
SIDECAR_SUFFIX = ".c3dl"

_MIN_RECORD_LEN = {0: 20, 1: 28, 2: 26, 3: 34, 4: 57, 5: 63, 6: 30, 7: 36, 8: 38}
# Classification byte offset per point format; formats 6+ also carry a
# separate flags byte at offset 15 (withheld = bit 2).
_CLASS_OFFSET = {0: 15, 1: 15, 2: 15, 3: 15, 4: 15, 5: 15, 6: 16, 7: 16, 8: 16}
_HEADER_SIZE = {(1, 2): 227, (1, 3): 235, (1, 4): 375}


class LasParseError(Exception):
    pass


@dataclass
class LasData:
    xyz: np.ndarray  # (N, 3) float64
    classification: np.ndarray  # (N,) uint8 raw class codes
    withheld: np.ndarray  # (N,) bool
    crs_id: str
    point_format: int
    version: tuple[int, int]


def _parse_geokey_shorts(payload: bytes) -> str:
    n = len(payload) // 2
    shorts = struct.unpack(f"<{n}H", payload[: n * 2])
    if n < 4:
        return ""
    nkeys = shorts[3]
    found = {}
    for i in range(nkeys):
        base = 4 + 4 * i
        if base + 3 >= n:
            break
        kid, loc, cnt, val = shorts[base : base + 4]
        if loc == 0:
            found[kid] = val
    if found.get(3072) not in (None, 0, 32767):
        return f"EPSG:{found[3072]}"
    if found.get(2048) not in (None, 0, 32767):
        return f"EPSG:{found[2048]}"
    return ""


def _parse_wkt_epsg(payload: bytes) -> str:
    text = payload.rstrip(b"\x00").decode("utf-8", errors="replace")
    hits = re.findall(r'(?:ID|AUTHORITY)\[\s*"EPSG"\s*,\s*"?(\d+)"?\s*\]', text)
    return f"EPSG:{hits[-1]}" if hits else ""


def read_las(path) -> LasData:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 227:
        raise LasParseError(f"file is {len(buf)} bytes; too small for a LAS header")
    if buf[:4] != b"LASF":
        raise LasParseError("bad magic at byte 0 (expected 'LASF')")
    major, minor = buf[24], buf[25]
    if (major, minor) not in ((1, 2), (1, 3), (1, 4)):
        raise LasParseError(f"unsupported LAS version {major}.{minor} (supported: 1.2-1.4)")
    (header_size,) = struct.unpack_from("<H", buf, 94)
    (point_offset,) = struct.unpack_from("<I", buf, 96)
    (n_vlr,) = struct.unpack_from("<I", buf, 100)
    pf = buf[104]
    if pf & 0x80:
        raise LasParseError("LAZ-compressed point records are not supported")
    (rec_len,) = struct.unpack_from("<H", buf, 105)
    (n_legacy,) = struct.unpack_from("<I", buf, 107)
    sx, sy, sz = struct.unpack_from("<3d", buf, 131)
    ox, oy, oz = struct.unpack_from("<3d", buf, 155)

    if pf not in _MIN_RECORD_LEN:
        raise LasParseError(f"point data record format {pf} not supported (0-8)")
    if rec_len < _MIN_RECORD_LEN[pf]:
        raise LasParseError(
            f"record length {rec_len} too small for point format {pf} "
            f"(needs >= {_MIN_RECORD_LEN[pf]})"
        )
    n_points = n_legacy
    if (major, minor) >= (1, 4):
        if header_size < 375:
            raise LasParseError(f"LAS 1.4 header of {header_size} bytes at byte 94 (expected 375)")
        (n64,) = struct.unpack_from("<Q", buf, 247)
        if n64:
            n_points = n64

    # Walk VLRs for CRS info.
    crs_id = ""
    pos = header_size
    for _ in range(n_vlr):
        if pos + 54 > len(buf):
            raise LasParseError(f"truncated VLR header at byte {pos}")
        user_id = buf[pos + 2 : pos + 18].rstrip(b"\x00").decode("ascii", errors="replace")
        (record_id,) = struct.unpack_from("<H", buf, pos + 18)
        (rec_after,) = struct.unpack_from("<H", buf, pos + 20)
        payload = buf[pos + 54 : pos + 54 + rec_after]
        if user_id == "laszip encoded":
            raise LasParseError("LAZ-compressed point records are not supported")
        if user_id == "LASF_Projection" and record_id == 34735 and not crs_id:
            crs_id = _parse_geokey_shorts(payload)
        elif user_id == "LASF_Projection" and record_id == 2112 and not crs_id:
            crs_id = _parse_wkt_epsg(payload)
        pos += 54 + rec_after

    need = point_offset + n_points * rec_len
    if need > len(buf):
        raise LasParseError(
            f"point data truncated: need {need} bytes, file is {len(buf)} (at byte {len(buf)})"
        )
    cls_off = _CLASS_OFFSET[pf]
    if pf >= 6:
        names = ["X", "Y", "Z", "flags", "cls"]
        offsets = [0, 4, 8, 15, 16]
        formats = ["<i4", "<i4", "<i4", "u1", "u1"]
    else:
        names = ["X", "Y", "Z", "cls"]
        offsets = [0, 4, 8, cls_off]
        formats = ["<i4", "<i4", "<i4", "u1"]
    dt = np.dtype({"names": names, "formats": formats, "offsets": offsets, "itemsize": rec_len})
    recs = np.frombuffer(buf, dtype=dt, count=n_points, offset=point_offset)

    xyz = np.empty((n_points, 3), dtype=np.float64)
    xyz[:, 0] = recs["X"] * sx + ox
    xyz[:, 1] = recs["Y"] * sy + oy
    xyz[:, 2] = recs["Z"] * sz + oz
    if pf >= 6:
        classification = recs["cls"].astype(np.uint8)
        withheld = (recs["flags"] & 0x04) != 0
    else:
        classification = (recs["cls"] & 0x1F).astype(np.uint8)
        withheld = (recs["cls"] & 0x80) != 0
    return LasData(
        xyz=xyz,
        classification=classification,
        withheld=np.ascontiguousarray(withheld),
        crs_id=crs_id,
        point_format=pf,
        version=(major, minor),
    )


def _geokey_vlr_payload(crs_id: str) -> Optional[bytes]:
    m = re.fullmatch(r"EPSG:(\d+)", (crs_id or "").strip(), flags=re.IGNORECASE)
    if not m:
        return None
    code = int(m.group(1))
    if code == 4326:
        keys = [(1024, 0, 1, 2), (1025, 0, 1, 1), (2048, 0, 1, code)]
    else:
        keys = [(1024, 0, 1, 1), (1025, 0, 1, 1), (3072, 0, 1, code)]
    shorts = [1, 1, 0, len(keys)]
    for k in keys:
        shorts.extend(k)
    return struct.pack(f"<{len(shorts)}H", *shorts)


def write_las(
    path,
    xyz: np.ndarray,
    classification: np.ndarray,
    withheld: np.ndarray,
    crs_id: str = "",
    point_format: int = 6,
    scale: tuple[float, float, float] = (0.001, 0.001, 0.001),
) -> None:
    """Write uncompressed LAS. Formats 0-3 produce LAS 1.2, formats 6-8
    LAS 1.4. Classification codes above 31 need point_format >= 6."""
    xyz = np.asarray(xyz, dtype=np.float64)
    n = xyz.shape[0]
    classification = np.asarray(classification, dtype=np.uint8)
    withheld = np.asarray(withheld, dtype=bool)
    if point_format not in (0, 1, 2, 3, 6, 7, 8):
        raise LasParseError(f"cannot write point format {point_format}")
    version = (1, 4) if point_format >= 6 else (1, 2)
    if point_format < 6 and n and classification.max() > 31:
        raise LasParseError("classification codes above 31 require point format >= 6")

    if n:
        offs = np.floor(xyz.min(axis=0))
        ints = np.round((xyz - offs) / np.asarray(scale)).astype(np.int64)
        if np.abs(ints).max() > 2**31 - 1:
            raise LasParseError("coordinates overflow int32 at the requested scale")
        maxs = xyz.max(axis=0)
        mins = xyz.min(axis=0)
    else:
        offs = np.zeros(3)
        ints = np.zeros((0, 3), dtype=np.int64)
        maxs = mins = np.zeros(3)

    rec_len = _MIN_RECORD_LEN[point_format]
    header_size = _HEADER_SIZE[version]
    vlr_payload = _geokey_vlr_payload(crs_id)
    vlrs = b""
    n_vlr = 0
    if vlr_payload is not None:
        n_vlr = 1
        vlrs = (
            struct.pack("<H", 0)
            + b"LASF_Projection".ljust(16, b"\x00")
            + struct.pack("<HH", 34735, len(vlr_payload))
            + b"geokeys".ljust(32, b"\x00")
            + vlr_payload
        )
    point_offset = header_size + len(vlrs)

    hdr = bytearray(header_size)
    hdr[0:4] = b"LASF"
    hdr[24] = version[0]
    hdr[25] = version[1]
    hdr[26:58] = b"ctf3d".ljust(32, b"\x00")
    hdr[58:90] = b"ctf3d".ljust(32, b"\x00")
    struct.pack_into("<H", hdr, 94, header_size)
    struct.pack_into("<I", hdr, 96, point_offset)
    struct.pack_into("<I", hdr, 100, n_vlr)
    hdr[104] = point_format
    struct.pack_into("<H", hdr, 105, rec_len)
    legacy_n = n if version < (1, 4) else 0
    if version < (1, 4) and n > 0xFFFFFFFF:
        raise LasParseError("too many points for a legacy LAS header")
    struct.pack_into("<I", hdr, 107, legacy_n)
    struct.pack_into("<I", hdr, 111, legacy_n)  # first-return count
    struct.pack_into("<3d", hdr, 131, *scale)
    struct.pack_into("<3d", hdr, 155, *offs)
    struct.pack_into("<6d", hdr, 179, maxs[0], mins[0], maxs[1], mins[1], maxs[2], mins[2])
    if version >= (1, 4):
        struct.pack_into("<Q", hdr, 247, n)
        struct.pack_into("<Q", hdr, 255, n)  # first-return count

    if point_format >= 6:
        dt = np.dtype(
            {
                "names": ["X", "Y", "Z", "intensity", "returns", "flags", "cls", "user", "angle", "src", "gps"],
                "formats": ["<i4", "<i4", "<i4", "<u2", "u1", "u1", "u1", "u1", "<i2", "<u2", "<f8"],
                "offsets": [0, 4, 8, 12, 14, 15, 16, 17, 18, 20, 22],
                "itemsize": rec_len,
            }
        )
        recs = np.zeros(n, dtype=dt)
        recs["returns"] = 0x11  # return 1 of 1
        recs["flags"] = np.where(withheld, 0x04, 0).astype(np.uint8)
        recs["cls"] = classification
    else:
        dt = np.dtype(
            {
                "names": ["X", "Y", "Z", "intensity", "flags", "cls", "angle", "user", "src"],
                "formats": ["<i4", "<i4", "<i4", "<u2", "u1", "u1", "i1", "u1", "<u2"],
                "offsets": [0, 4, 8, 12, 14, 15, 16, 17, 18],
                "itemsize": rec_len,
            }
        )
        recs = np.zeros(n, dtype=dt)
        recs["flags"] = 0x09  # return 1 of 1
        recs["cls"] = (classification & 0x1F) | np.where(withheld, 0x80, 0).astype(np.uint8)
    recs["X"] = ints[:, 0]
    recs["Y"] = ints[:, 1]
    recs["Z"] = ints[:, 2]

    with open(path, "wb") as f:
        f.write(bytes(hdr))
        f.write(vlrs)
        f.write(recs.tobytes())


# ---------------------------------------------------------------------------
# Label/confidence sidecar
# ---------------------------------------------------------------------------


def write_sidecar(path, labels: np.ndarray, confidence: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    confidence = np.asarray(confidence, dtype=np.float32)
    if labels.shape != confidence.shape:
        raise LasParseError("labels and confidence must have the same length")
    n = labels.shape[0]
    recs = np.zeros(n, dtype=np.dtype([("label", "u1"), ("conf", "<f4")]))
    recs["label"] = labels
    recs["conf"] = confidence
    with open(path, "wb") as f:
        f.write(SIDECAR_MAGIC)
        f.write(struct.pack("<HQ", SIDECAR_VERSION, n))
        f.write(recs.tobytes())


def read_sidecar(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 14 or buf[:4] != SIDECAR_MAGIC:
        raise LasParseError(f"{path}: not a label sidecar (bad magic)")
    version, n = struct.unpack_from("<HQ", buf, 4)
    if version != SIDECAR_VERSION:
        raise LasParseError(f"{path}: unsupported sidecar version {version}")
    need = 14 + 5 * n
    if len(buf) != need:
        raise LasParseError(f"{path}: sidecar is {len(buf)} bytes, expected {need}")
    recs = np.frombuffer(buf, dtype=np.dtype([("label", "u1"), ("conf", "<f4")]), offset=14)
    return recs["label"].copy(), recs["conf"].astype(np.float64)
