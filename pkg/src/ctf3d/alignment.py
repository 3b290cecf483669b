"""Global test-to-reference registration: per-subwindow phase correlation for
the horizontal offset, per-subwindow elevation-difference medians for the
vertical offset, and median aggregation across subwindows.

Sign convention: the returned (dx, dy, dz) is the correction to APPLY to the
test raster — a test dataset shifted 3 cells east of the reference yields
dx = -3 * gsd.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .raster import Raster, resample_to_grid

log = logging.getLogger(__name__)


class AlignmentError(Exception):
    pass


class PhaseResult(NamedTuple):
    dx_px: float
    dy_px: float
    confident: bool


@dataclass(frozen=True)
class SubwindowResult:
    col0: int
    row0: int
    dx_m: float
    dy_m: float
    dz_m: float
    valid_fraction: float


@dataclass(frozen=True)
class GlobalAlignment:
    dx_m: float
    dy_m: float
    dz_m: float
    windows: tuple[SubwindowResult, ...]

    def as_dict(self) -> dict:
        return {
            "dx_m": self.dx_m,
            "dy_m": self.dy_m,
            "dz_m": self.dz_m,
            "windows": [
                {
                    "col0": w.col0,
                    "row0": w.row0,
                    "dx_m": w.dx_m,
                    "dy_m": w.dy_m,
                    "dz_m": w.dz_m,
                    "valid_fraction": w.valid_fraction,
                }
                for w in self.windows
            ],
        }


def _wrap(idx: int, n: int) -> float:
    return float(idx - n) if idx > n // 2 else float(idx)


def _parabolic_offset(left: float, mid: float, right: float) -> float:
    denom = left - 2.0 * mid + right
    if abs(denom) < 1e-15:
        return 0.0
    delta = 0.5 * (left - right) / denom
    return float(np.clip(delta, -0.5, 0.5))


def phase_correlate(test_tile: np.ndarray, ref_tile: np.ndarray) -> PhaseResult:
    """Subpixel shift correction for the test tile via the normalized
    cross-power spectrum, with 3-point parabolic peak refinement. Nodata must
    already be NaN; it is replaced by the tile mean. A constant tile returns
    (0, 0) flagged unconfident."""
    if test_tile.shape != ref_tile.shape:
        raise AlignmentError("phase correlation tiles must have equal shapes")
    h, w = test_tile.shape

    def clean(a: np.ndarray) -> Optional[np.ndarray]:
        a = np.asarray(a, dtype=np.float64)
        finite = np.isfinite(a)
        if not finite.any():
            return None
        m = a[finite].mean()
        out = np.where(finite, a, m)
        if out.std() < 1e-12:
            return None
        return out

    t = clean(test_tile)
    r = clean(ref_tile)
    if t is None or r is None:
        return PhaseResult(0.0, 0.0, False)

    ft = np.fft.fft2(t)
    fr = np.fft.fft2(r)
    cross = ft * np.conj(fr)
    mag = np.abs(cross)
    cross = cross / np.maximum(mag, 1e-15)
    corr = np.real(np.fft.ifft2(cross))
    peak = int(np.argmax(corr))
    pr, pc = divmod(peak, w)
    dy = _wrap(pr, h)
    dx = _wrap(pc, w)
    dy += _parabolic_offset(corr[(pr - 1) % h, pc], corr[pr, pc], corr[(pr + 1) % h, pc])
    dx += _parabolic_offset(corr[pr, (pc - 1) % w], corr[pr, pc], corr[pr, (pc + 1) % w])
    # The peak sits at the test tile's displacement; the correction is its negation.
    return PhaseResult(-dx, -dy, True)


def _window_dz(test: np.ndarray, ref: np.ndarray, dx_px: float, dy_px: float) -> Optional[float]:
    """Median of ref - test over mutually valid cells, after applying the
    integer-rounded horizontal correction to the test tile."""
    h, w = test.shape
    ic = int(round(dx_px))
    ir = int(round(dy_px))
    if abs(ic) >= w or abs(ir) >= h:
        return None
    # The correction moves test content by (+ic, +ir); compare test[r, c]
    # against ref[r + ir, c + ic].
    t_r0, t_r1 = max(0, -ir), min(h, h - ir)
    t_c0, t_c1 = max(0, -ic), min(w, w - ic)
    t_win = test[t_r0:t_r1, t_c0:t_c1]
    r_win = ref[t_r0 + ir : t_r1 + ir, t_c0 + ic : t_c1 + ic]
    both = np.isfinite(t_win) & np.isfinite(r_win)
    if not both.any():
        return None
    return float(np.median(r_win[both] - t_win[both]))


def global_align(
    test: Raster,
    ref: Raster,
    window_px: int = 512,
    valid_frac_min: float = 0.95,
) -> GlobalAlignment:
    """Estimate one (dx, dy, dz) correction for the test raster against the
    reference on the same grid. The rasters are cropped to their joint valid
    bounding box (so structural nodata borders don't starve the tiling), then
    tiled into window_px squares; tiles whose test coverage is below
    valid_frac_min, or that are constant, are skipped; the per-tile offsets
    are aggregated by the median."""
    if not test.same_grid(ref):
        raise AlignmentError("global_align requires test and ref on the same grid")
    if window_px < 8:
        raise AlignmentError("window_px too small (needs >= 8)")

    tvals = np.where(test.valid_mask, test.values, np.nan)
    rvals = np.where(ref.valid_mask, ref.values, np.nan)
    joint = test.valid_mask & ref.valid_mask
    if not joint.any():
        raise AlignmentError("test and reference rasters share no valid cells")
    rows = np.flatnonzero(joint.any(axis=1))
    cols = np.flatnonzero(joint.any(axis=0))
    row_off, col_off = int(rows[0]), int(cols[0])
    tvals = tvals[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    rvals = rvals[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]

    h, w = tvals.shape
    win = min(window_px, h, w)

    results: list[SubwindowResult] = []
    for r0 in range(0, h - win + 1, win):
        for c0 in range(0, w - win + 1, win):
            t_tile = tvals[r0 : r0 + win, c0 : c0 + win]
            frac = float(np.isfinite(t_tile).mean())
            if frac < valid_frac_min:
                continue
            r_tile = rvals[r0 : r0 + win, c0 : c0 + win]
            pr = phase_correlate(t_tile, r_tile)
            if not pr.confident:
                continue
            dz = _window_dz(t_tile, r_tile, pr.dx_px, pr.dy_px)
            if dz is None:
                continue
            results.append(
                SubwindowResult(
                    col0=c0 + col_off,
                    row0=r0 + row_off,
                    dx_m=pr.dx_px * test.gsd_x,
                    dy_m=pr.dy_px * test.gsd_y,
                    dz_m=dz,
                    valid_fraction=frac,
                )
            )
    if not results:
        raise AlignmentError(
            "no usable alignment subwindows (all below the valid-coverage threshold "
            "or degenerate); try a smaller window size or supply manual offsets"
        )
    dx = float(np.median([r.dx_m for r in results]))
    dy = float(np.median([r.dy_m for r in results]))
    dz = float(np.median([r.dz_m for r in results]))
    return GlobalAlignment(dx_m=dx, dy_m=dy, dz_m=dz, windows=tuple(results))


def apply_alignment(test: Raster, alignment: GlobalAlignment) -> Raster:
    """Shift the test raster by (dx, dy, dz) and resample it back onto its
    original grid. A zero alignment reproduces the raster exactly."""
    shifted_vals = np.where(test.valid_mask, test.values + alignment.dz_m, test.nodata)
    shifted = Raster(
        shifted_vals,
        test.origin_x + alignment.dx_m,
        test.origin_y + alignment.dy_m,
        test.gsd_x,
        test.gsd_y,
        test.crs_id,
        test.nodata,
    )
    return resample_to_grid(shifted, test)
