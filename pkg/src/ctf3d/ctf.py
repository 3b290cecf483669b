"""Elevation-contrast metrics over evaluation regions.

For each region the test and reference surfaces are sampled over the two
building rectangles and the gap rectangle, locally normalized (percentile
zero level and roof ceiling, outlier-trimmed means), and reduced to a
two-sided Michelson-style contrast. Contrast-vs-gap-width points are fitted
with c(d) = A * exp(-(pi*sigma/d)^2), whose crossing of a threshold t gives
the resolved-distance figure d* = pi*sigma/sqrt(ln(A/t)).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .raster import Raster, sample_rect
from .regions import EvaluationRegion

log = logging.getLogger(__name__)


class MetricsError(Exception):
    pass


class FitError(MetricsError):
    pass


def percentile(values: np.ndarray, p: float) -> float:
    """Linear-interpolated percentile of finite values; validates inputs."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise MetricsError("percentile of an empty sample")
    if not np.all(np.isfinite(v)):
        raise MetricsError("percentile input contains non-finite values")
    if not (0.0 <= p <= 100.0):
        raise MetricsError(f"percentile rank {p} outside [0, 100]")
    return float(np.percentile(v, p))


def trimmed_mean(values: np.ndarray) -> float:
    """Mean after dropping values beyond 1.5 IQR from the quartiles."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise MetricsError("trimmed mean of an empty sample")
    q1 = np.percentile(v, 25)
    q3 = np.percentile(v, 75)
    spread = 1.5 * (q3 - q1)
    keep = v[(v >= q1 - spread) & (v <= q3 + spread)]
    if keep.size == 0:
        return float(v.mean())
    return float(keep.mean())


@dataclass(frozen=True)
class RegionLevels:
    a1: float  # trimmed mean over the id_a building rectangle, after clip-shift
    a2: float  # same for the id_b side
    b: float  # same for the gap rectangle
    zero_level: float  # reference ground level (P10 of the reference gap)
    max_level: float  # clip ceiling (min of the two P90 roof levels)


@dataclass(frozen=True)
class CtfRecord:
    d: float
    c_test: float
    c_ref: float
    valid: bool
    reason: str  # 'ok' | 'insufficient_samples' | 'low_ref_ctf' | 'zero_test_ctf'
    levels_test: Optional[RegionLevels]
    levels_ref: Optional[RegionLevels]
    n_test: tuple[int, int, int]  # samples in (a1, a2, b)
    n_ref: tuple[int, int, int]
    region: Optional[EvaluationRegion] = None


def region_samples(raster: Raster, region: EvaluationRegion) -> dict[str, np.ndarray]:
    return {
        "a1": sample_rect(raster, region.region_a),
        "a2": sample_rect(raster, region.region_b),
        "b": sample_rect(raster, region.center),
    }


def _two_sided_contrast(a1: float, a2: float, b: float) -> float:
    def side(a: float) -> float:
        s = a + b
        if s <= 1e-12:
            return 0.0
        return (a - b) / s

    return 0.5 * (side(a1) + side(a2))


def aligned_levels(
    primary: dict[str, np.ndarray], reference: dict[str, np.ndarray]
) -> tuple[RegionLevels, float]:
    """Normalize the primary samples against the reference and reduce to a
    contrast value.

    The zero elevation is pinned to the reference gap's P10; the primary is
    shifted so its own gap P10 matches, then lifted by half the roof-level
    difference (min of the two buildings' P90) so ground and roof discrepancies
    are split evenly. Values are clipped to [zero, roof] and re-zeroed, each
    rectangle is reduced by an IQR-trimmed mean, and the two building/gap
    contrasts are averaged. Running the reference against itself yields its
    own contrast with zero shifts."""
    zero_level = percentile(reference["b"], 10)
    zero_offset = zero_level - percentile(primary["b"], 10)
    s = {k: v + zero_offset for k, v in primary.items()}
    p_max = min(percentile(s["a1"], 90), percentile(s["a2"], 90))
    r_max = min(percentile(reference["a1"], 90), percentile(reference["a2"], 90))
    lift = 0.5 * (r_max - p_max)
    s = {k: v + lift for k, v in s.items()}
    p_max = min(percentile(s["a1"], 90), percentile(s["a2"], 90))
    hi = max(p_max, zero_level)
    s = {k: np.clip(v, zero_level, hi) - zero_level for k, v in s.items()}
    a1 = trimmed_mean(s["a1"])
    a2 = trimmed_mean(s["a2"])
    b = trimmed_mean(s["b"])
    c = _two_sided_contrast(a1, a2, b)
    return RegionLevels(a1=a1, a2=a2, b=b, zero_level=zero_level, max_level=hi), c


def local_align(
    test: Raster, ref: Raster, region: EvaluationRegion
) -> tuple[dict[str, np.ndarray], RegionLevels, RegionLevels]:
    """Aligned (shifted, clipped, re-zeroed) test samples per rectangle plus
    the level summaries for test and reference."""
    t_s = region_samples(test, region)
    r_s = region_samples(ref, region)
    levels_ref, _ = aligned_levels(r_s, r_s)
    levels_test, _ = aligned_levels(t_s, r_s)
    zero_level = percentile(r_s["b"], 10)
    zero_offset = zero_level - percentile(t_s["b"], 10)
    s = {k: v + zero_offset for k, v in t_s.items()}
    p_max = min(percentile(s["a1"], 90), percentile(s["a2"], 90))
    r_max = min(percentile(r_s["a1"], 90), percentile(r_s["a2"], 90))
    s = {k: v + 0.5 * (r_max - p_max) for k, v in s.items()}
    p_max = min(percentile(s["a1"], 90), percentile(s["a2"], 90))
    hi = max(p_max, zero_level)
    s = {k: np.clip(v, zero_level, hi) - zero_level for k, v in s.items()}
    return s, levels_test, levels_ref


def compute_ctf(
    test: Raster, ref: Raster, region: EvaluationRegion, min_samples: int = 5
) -> CtfRecord:
    """Contrast record for one region; regions with too few valid cells in
    any rectangle are returned invalid rather than raising."""
    t_s = region_samples(test, region)
    r_s = region_samples(ref, region)
    n_test = (t_s["a1"].size, t_s["a2"].size, t_s["b"].size)
    n_ref = (r_s["a1"].size, r_s["a2"].size, r_s["b"].size)
    if min(*n_test, *n_ref) < min_samples:
        return CtfRecord(
            d=region.d,
            c_test=0.0,
            c_ref=0.0,
            valid=False,
            reason="insufficient_samples",
            levels_test=None,
            levels_ref=None,
            n_test=n_test,
            n_ref=n_ref,
            region=region,
        )
    levels_ref, c_ref = aligned_levels(r_s, r_s)
    levels_test, c_test = aligned_levels(t_s, r_s)
    return CtfRecord(
        d=region.d,
        c_test=c_test,
        c_ref=c_ref,
        valid=True,
        reason="ok",
        levels_test=levels_test,
        levels_ref=levels_ref,
        n_test=n_test,
        n_ref=n_ref,
        region=region,
    )


def filter_records(records: Sequence[CtfRecord], ref_ctf_min: float = 0.95) -> list[CtfRecord]:
    """Invalidate records whose reference contrast is too low (the region
    isn't sharp even in the reference) and records with no remaining test
    contrast. Already-invalid records keep their reason."""
    out: list[CtfRecord] = []
    for r in records:
        if not r.valid:
            out.append(r)
        elif r.c_ref <= ref_ctf_min:
            out.append(replace(r, valid=False, reason="low_ref_ctf"))
        elif r.c_test <= 0.0:
            out.append(replace(r, valid=False, reason="zero_test_ctf"))
        else:
            out.append(r)
    return out


def reason_counts(records: Sequence[CtfRecord]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for r in records:
        counts[r.reason] = counts.get(r.reason, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# Model fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CtfModelFit:
    amplitude: float
    sigma_m: float
    residual_rms: float
    n_points: int
    converged: bool
    poorly_constrained: bool


def ctf_model(d, amplitude: float, sigma_m: float):
    """c(d) = A * exp(-(pi*sigma/d)^2); zero at and below d = 0."""
    d_arr = np.asarray(d, dtype=np.float64)
    out = np.zeros_like(d_arr)
    pos = d_arr > 0
    out[pos] = amplitude * np.exp(-((math.pi * sigma_m / d_arr[pos]) ** 2))
    if np.isscalar(d) or d_arr.ndim == 0:
        return float(out)
    return out


def model_jacobian(d: np.ndarray, amplitude: float, sigma_m: float) -> np.ndarray:
    """(N, 2) partials of the model w.r.t. (amplitude, sigma)."""
    d = np.asarray(d, dtype=np.float64)
    e = np.exp(-((math.pi * sigma_m / d) ** 2))
    j = np.empty((d.size, 2), dtype=np.float64)
    j[:, 0] = e
    j[:, 1] = amplitude * e * (-2.0 * math.pi**2 * sigma_m / d**2)
    return j


def fit_ctf_model(
    records: Sequence[CtfRecord],
    init: Optional[tuple[float, float]] = None,
) -> CtfModelFit:
    """Damped least-squares fit of (amplitude, sigma) to the valid records.

    Needs at least 3 valid records with distinct d. Amplitude is kept in
    (0, 1.5] and sigma in (0, 10 * max d]; the fit is flagged
    poorly_constrained when a parameter sits at its bound or the normal
    equations are near-singular."""
    pts = [(r.d, r.c_test) for r in records if r.valid]
    if len(pts) < 3:
        counts = reason_counts([r for r in records if not r.valid])
        raise FitError(
            f"need at least 3 valid contrast records, have {len(pts)} "
            f"(invalid by reason: {counts or 'none'})"
        )
    d = np.array([p[0] for p in pts], dtype=np.float64)
    c = np.array([p[1] for p in pts], dtype=np.float64)
    if np.unique(d).size < 3:
        raise FitError("need at least 3 distinct gap widths to constrain the fit")

    a_hi = 1.5
    s_hi = 10.0 * float(d.max())
    lo = 1e-9
    if init is not None:
        a, s = float(init[0]), float(init[1])
    else:
        a = min(max(float(np.percentile(c, 95)), 1e-3), a_hi)
        s = float(np.median(d)) * math.sqrt(math.log(max(a / 0.2, 1.01))) / math.pi
    a = min(max(a, lo), a_hi)
    s = min(max(s, lo), s_hi)

    def cost_of(av: float, sv: float) -> tuple[float, np.ndarray]:
        resid = ctf_model(d, av, sv) - c
        return float(resid @ resid), resid

    cost, resid = cost_of(a, s)
    lam = 1e-3
    converged = False
    for _ in range(200):
        j = model_jacobian(d, a, s)
        jtj = j.T @ j
        g = j.T @ resid
        stepped = False
        for _try in range(25):
            damped = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
            try:
                delta = np.linalg.solve(damped, -g)
            except np.linalg.LinAlgError:
                delta, *_ = np.linalg.lstsq(damped, -g, rcond=None)
            a_new = min(max(a + delta[0], lo), a_hi)
            s_new = min(max(s + delta[1], lo), s_hi)
            new_cost, new_resid = cost_of(a_new, s_new)
            if new_cost < cost:
                rel = (cost - new_cost) / max(cost, 1e-30)
                a, s, cost, resid = a_new, s_new, new_cost, new_resid
                lam = max(lam / 3.0, 1e-12)
                stepped = True
                if rel < 1e-10:
                    converged = True
                break
            lam *= 10.0
            if lam > 1e12:
                break
        if not stepped:
            converged = True  # no downhill step exists at any damping
            break
        if converged:
            break

    jtj = model_jacobian(d, a, s).T @ model_jacobian(d, a, s)
    try:
        cond = float(np.linalg.cond(jtj))
    except np.linalg.LinAlgError:
        cond = math.inf
    poorly = (
        s <= 2 * lo
        or a <= 2 * lo
        or not math.isfinite(cond)
        or cond > 1e12
    )
    rms = math.sqrt(cost / d.size)
    return CtfModelFit(
        amplitude=float(a),
        sigma_m=float(s),
        residual_rms=rms,
        n_points=int(d.size),
        converged=converged,
        poorly_constrained=bool(poorly),
    )


def fit_standard_errors(fit: CtfModelFit, records: Sequence[CtfRecord]) -> tuple[float, float]:
    """Asymptotic standard errors of (amplitude, sigma) from the fit's
    linearization."""
    pts = [(r.d, r.c_test) for r in records if r.valid]
    d = np.array([p[0] for p in pts])
    c = np.array([p[1] for p in pts])
    resid = ctf_model(d, fit.amplitude, fit.sigma_m) - c
    dof = max(d.size - 2, 1)
    s2 = float(resid @ resid) / dof
    j = model_jacobian(d, fit.amplitude, fit.sigma_m)
    cov = s2 * np.linalg.inv(j.T @ j)
    return math.sqrt(max(cov[0, 0], 0.0)), math.sqrt(max(cov[1, 1], 0.0))


def threshold_distance(fit: CtfModelFit, threshold: float) -> float:
    """Distance where the fitted curve crosses the contrast threshold."""
    if not (0.0 < threshold):
        raise ValueError("threshold must be positive")
    if threshold >= fit.amplitude:
        raise ValueError(
            f"threshold {threshold} is at or above the fitted amplitude "
            f"{fit.amplitude:.6g}; the curve never reaches it"
        )
    return math.pi * fit.sigma_m / math.sqrt(math.log(fit.amplitude / threshold))


# ---------------------------------------------------------------------------
# Vertical accuracy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VerticalAccuracy:
    rmse_m: float
    median_error_m: float
    le90_m: float
    n_cells: int


def vertical_accuracy(
    test: Raster, ref: Raster, mask: Optional[Raster] = None
) -> VerticalAccuracy:
    """Signed test-minus-reference elevation error statistics over mutually
    valid cells (optionally restricted to mask == 1)."""
    if not test.same_grid(ref):
        raise MetricsError("vertical accuracy requires test and ref on the same grid")
    sel = test.valid_mask & ref.valid_mask
    if mask is not None:
        if not mask.same_grid(test):
            raise MetricsError("mask grid does not match the rasters")
        sel &= mask.values == 1
    if not sel.any():
        raise MetricsError("no overlapping valid cells to compare")
    err = test.values[sel] - ref.values[sel]
    return VerticalAccuracy(
        rmse_m=float(np.sqrt(np.mean(err**2))),
        median_error_m=float(np.median(err)),
        le90_m=float(np.percentile(np.abs(err), 90)),
        n_cells=int(err.size),
    )
