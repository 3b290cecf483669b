import numpy as np
import pytest

from ctf3d.alignment import (
    AlignmentError,
    GlobalAlignment,
    apply_alignment,
    global_align,
    phase_correlate,
)

from helpers import make_raster


def _terrain(seed=0, shape=(96, 96), gsd=1.0):
    """Bumpy surface with broadband texture (phase correlation needs spectral
    content beyond a few smooth bumps once shifts are non-circular)."""
    rng = np.random.default_rng(seed)
    h, w = shape
    y, x = np.mgrid[0:h, 0:w]
    vals = np.zeros(shape, dtype=np.float64)
    for _ in range(12):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        amp = rng.uniform(2, 9)
        s = rng.uniform(4, 14)
        vals += amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
    vals += rng.normal(0.0, 0.4, shape)
    return make_raster(vals, gsd=gsd)


def _shift_raster(r, d_col, d_row, dz):
    """Content moved by (d_col, d_row) cells plus a vertical offset; the
    uncovered border becomes nodata."""
    src = np.where(r.valid_mask, r.values, np.nan)
    out = np.full_like(src, np.nan)
    h, w = src.shape
    r0, r1 = max(0, d_row), min(h, h + d_row)
    c0, c1 = max(0, d_col), min(w, w + d_col)
    out[r0:r1, c0:c1] = src[r0 - d_row : r1 - d_row, c0 - d_col : c1 - d_col] + dz
    return r.with_values(np.where(np.isfinite(out), out, r.nodata))


def test_phase_correlate_integer_shift():
    ref = _terrain(seed=1)
    rvals = ref.values
    tvals = np.roll(np.roll(rvals, 2, axis=0), -3, axis=1)  # test content at (+2 rows, -3 cols)
    pr = phase_correlate(tvals, rvals)
    assert pr.confident
    # the correction must undo the displacement
    assert pr.dx_px == pytest.approx(3.0, abs=0.05)
    assert pr.dy_px == pytest.approx(-2.0, abs=0.05)


def test_phase_correlate_subpixel_shift():
    # build a band-limited surface and sample it on shifted lattices
    rng = np.random.default_rng(4)
    n = 128
    kx, ky = np.meshgrid(np.fft.fftfreq(n), np.fft.fftfreq(n))
    spec = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) * np.exp(
        -((kx**2 + ky**2) / (2 * 0.06**2))
    )
    base = np.real(np.fft.ifft2(spec))
    base = base / base.std()

    def sampled(sx, sy):
        fx = np.fft.fft2(base)
        phase = np.exp(-2j * np.pi * (kx * sx + ky * sy))
        return np.real(np.fft.ifft2(fx * phase))

    shift = (0.4, -0.3)  # test displaced by +0.4 col, -0.3 row
    pr = phase_correlate(sampled(*shift), base)
    assert pr.confident
    assert pr.dx_px == pytest.approx(-0.4, abs=0.1)
    assert pr.dy_px == pytest.approx(0.3, abs=0.1)


def test_phase_correlate_constant_tile_unconfident():
    pr = phase_correlate(np.full((32, 32), 5.0), np.zeros((32, 32)))
    assert pr == (0.0, 0.0, False)
    pr = phase_correlate(np.full((16, 16), np.nan), np.zeros((16, 16)))
    assert not pr.confident


def test_phase_correlate_shape_mismatch():
    with pytest.raises(AlignmentError):
        phase_correlate(np.zeros((8, 8)), np.zeros((8, 9)))


def test_global_align_recovers_known_shift():
    ref = _terrain(seed=2, shape=(128, 128), gsd=0.5)
    # content displaced 3 cells east, 2 cells south, 0.75 m up
    test = _shift_raster(ref, 3, 2, 0.75)
    got = global_align(test, ref, window_px=64, valid_frac_min=0.9)
    assert got.dx_m == pytest.approx(-3 * 0.5, abs=0.5 * 0.25)
    assert got.dy_m == pytest.approx(+2 * 0.5, abs=0.5 * 0.25)
    assert got.dz_m == pytest.approx(-0.75, abs=0.05)
    assert len(got.windows) >= 1


def test_global_align_identity():
    ref = _terrain(seed=3)
    got = global_align(ref, ref, window_px=48, valid_frac_min=0.9)
    assert got.dx_m == pytest.approx(0.0, abs=1e-9)
    assert got.dy_m == pytest.approx(0.0, abs=1e-9)
    assert got.dz_m == pytest.approx(0.0, abs=1e-12)


def test_global_align_ignores_nodata_border():
    # surround both rasters with a structural nodata margin wider than what
    # the coverage gate tolerates; the joint-valid crop must rescue the tiling
    ref = _terrain(seed=5, shape=(80, 80))
    pad = np.full((120, 120), np.nan)
    pad[20:100, 20:100] = ref.values
    ref_padded = make_raster(np.where(np.isfinite(pad), pad, -9999.0))
    test_padded = _shift_raster(ref_padded, 1, 1, 0.25)  # 1 cell east + south, 0.25 m up
    got = global_align(test_padded, ref_padded, window_px=64, valid_frac_min=0.95)
    assert got.dx_m == pytest.approx(-1.0, abs=0.25)
    assert got.dy_m == pytest.approx(+1.0, abs=0.25)
    assert got.dz_m == pytest.approx(-0.25, abs=0.05)
    # reported window origins are in full-grid coordinates
    for w in got.windows:
        assert w.col0 >= 20 and w.row0 >= 20


def test_global_align_requires_same_grid():
    a = make_raster(np.zeros((16, 16)), gsd=1.0)
    b = make_raster(np.zeros((16, 16)), gsd=0.5)
    with pytest.raises(AlignmentError, match="same grid"):
        global_align(a, b)


def test_global_align_no_joint_valid_cells():
    vals_a = np.full((32, 32), -9999.0)
    vals_a[:16] = 1.0
    vals_b = np.full((32, 32), -9999.0)
    vals_b[16:] = 1.0
    a = make_raster(vals_a)
    b = make_raster(vals_b)
    with pytest.raises(AlignmentError, match="no valid cells"):
        global_align(a, b, window_px=8)


def test_global_align_all_constant_fails():
    flat = make_raster(np.ones((64, 64)))
    with pytest.raises(AlignmentError, match="no usable"):
        global_align(flat, flat, window_px=32)


def test_apply_alignment_zero_is_identity():
    r = _terrain(seed=6, shape=(40, 40))
    out = apply_alignment(r, GlobalAlignment(0.0, 0.0, 0.0, ()))
    assert np.array_equal(out.values, r.values)


def test_apply_alignment_whole_cell_shift():
    r = _terrain(seed=7, shape=(40, 40), gsd=2.0)
    # dx of exactly +1 cell: content moves one column right; dz adds
    out = apply_alignment(r, GlobalAlignment(2.0, 0.0, 1.5, ()))
    assert np.allclose(out.values[:, 1:][out.valid_mask[:, 1:]],
                       (r.values[:, :-1] + 1.5)[out.valid_mask[:, 1:]])
    # the vacated first column has no source data
    assert not out.valid_mask[:, 0].any()


def test_align_then_apply_closes_loop():
    ref = _terrain(seed=8, shape=(96, 96), gsd=0.5)
    test = _shift_raster(ref, 2, 1, -0.5)
    g = global_align(test, ref, window_px=48, valid_frac_min=0.8)
    corrected = apply_alignment(test, g)
    g2 = global_align(corrected, ref, window_px=48, valid_frac_min=0.8)
    assert abs(g2.dx_m) <= 0.25 * 0.5
    assert abs(g2.dy_m) <= 0.25 * 0.5
    assert abs(g2.dz_m) <= 0.05
