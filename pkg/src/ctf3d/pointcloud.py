"""Labeled point clouds: the in-memory container, semantic label set, LAS
loading/saving with the label sidecar, CRS normalization, and class/flag
filtering.
"""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import lasio
from .crs import CrsError, transform_points

log = logging.getLogger(__name__)


class PointCloudError(Exception):
    pass


class ClassLabel(enum.IntEnum):
    """Semantic classes carried per point; codes are the sidecar encoding."""

    GROUND = 0
    VEGETATION = 1
    BUILDING = 2
    WALL = 3
    POWER_LINE = 4
    CIVILIAN_VEHICLE = 5
    TRUCK = 6
    MILITARY_VEHICLE = 7
    AIRCRAFT = 8
    POLE = 9
    UNLABELED = 10


# ASPRS LAS classification codes <-> semantic labels. Vegetation folds the
# three ASPRS vegetation tiers into one class; anything unmapped is UNLABELED.
_ASPRS_TO_LABEL = {
    2: ClassLabel.GROUND,
    3: ClassLabel.VEGETATION,
    4: ClassLabel.VEGETATION,
    5: ClassLabel.VEGETATION,
    6: ClassLabel.BUILDING,
}
_LABEL_TO_ASPRS = {
    ClassLabel.GROUND: 2,
    ClassLabel.VEGETATION: 5,
    ClassLabel.BUILDING: 6,
    ClassLabel.UNLABELED: 1,
}


@dataclass
class ClassifiedPointCloud:
    xyz: np.ndarray  # (N, 3) float64
    labels: np.ndarray  # (N,) uint8 ClassLabel codes
    confidence: np.ndarray  # (N,) float64 in [0, 1]
    withheld: np.ndarray  # (N,) bool
    crs_id: str

    def __post_init__(self) -> None:
        xyz = np.asarray(self.xyz, dtype=np.float64)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise PointCloudError(f"xyz must be (N, 3), got {xyz.shape}")
        n = xyz.shape[0]
        labels = np.asarray(self.labels, dtype=np.uint8)
        conf = np.asarray(self.confidence, dtype=np.float64)
        withheld = np.asarray(self.withheld, dtype=bool)
        for name, arr in (("labels", labels), ("confidence", conf), ("withheld", withheld)):
            if arr.shape != (n,):
                raise PointCloudError(f"{name} must have shape ({n},), got {arr.shape}")
        if not np.all(np.isfinite(xyz)):
            raise PointCloudError("xyz contains non-finite coordinates")
        if n and labels.max() > max(ClassLabel):
            raise PointCloudError(f"label code {labels.max()} out of range")
        if n and (conf.min() < 0.0 or conf.max() > 1.0):
            raise PointCloudError("confidence must lie in [0, 1]")
        for arr in (xyz, labels, conf, withheld):
            arr.setflags(write=False)
        self.xyz = xyz
        self.labels = labels
        self.confidence = conf
        self.withheld = withheld

    def __len__(self) -> int:
        return self.xyz.shape[0]


def labels_from_asprs(codes: np.ndarray) -> np.ndarray:
    out = np.full(codes.shape, int(ClassLabel.UNLABELED), dtype=np.uint8)
    for code, lab in _ASPRS_TO_LABEL.items():
        out[codes == code] = int(lab)
    return out


def labels_to_asprs(labels: np.ndarray) -> np.ndarray:
    out = np.full(labels.shape, 1, dtype=np.uint8)  # default: unclassified
    for lab, code in _LABEL_TO_ASPRS.items():
        out[labels == int(lab)] = code
    return out


def _sidecar_path(las_path) -> str:
    return str(las_path) + lasio.SIDECAR_SUFFIX


def load_point_cloud(
    path,
    target_crs: Optional[str] = None,
    source_crs: Optional[str] = None,
) -> ClassifiedPointCloud:
    """Read LAS (+ optional label sidecar) and normalize to target_crs.

    The CRS comes from the file's VLRs unless source_crs overrides it; a file
    with no CRS and no override is an error. target_crs=None keeps the source
    CRS.
    """
    las = lasio.read_las(path)
    n = las.xyz.shape[0]
    crs_id = source_crs or las.crs_id
    if not crs_id:
        raise PointCloudError(
            f"{path}: no CRS in the file; pass an explicit source CRS override"
        )

    side = _sidecar_path(path)
    if os.path.exists(side):
        labels, conf = lasio.read_sidecar(side)
        if labels.shape[0] != n:
            raise PointCloudError(
                f"{side}: sidecar has {labels.shape[0]} records for {n} points"
            )
    else:
        labels = labels_from_asprs(las.classification)
        conf = np.ones(n, dtype=np.float64)

    xyz = las.xyz
    if target_crs and target_crs != crs_id:
        xyz = transform_points(xyz, crs_id, target_crs)
        crs_id = target_crs
    return ClassifiedPointCloud(
        xyz=xyz, labels=labels, confidence=conf, withheld=las.withheld, crs_id=crs_id
    )


def save_point_cloud(cloud: ClassifiedPointCloud, path, point_format: int = 6) -> None:
    """Write LAS; a sidecar is added only when labels/confidences don't
    survive the ASPRS classification byte (exotic classes or conf != 1)."""
    asprs = labels_to_asprs(cloud.labels)
    lasio.write_las(
        path,
        cloud.xyz,
        asprs,
        cloud.withheld,
        crs_id=cloud.crs_id,
        point_format=point_format,
    )
    representable = np.isin(
        cloud.labels,
        [int(ClassLabel.GROUND), int(ClassLabel.VEGETATION), int(ClassLabel.BUILDING), int(ClassLabel.UNLABELED)],
    )
    needs_sidecar = (not representable.all()) or np.any(cloud.confidence != 1.0)
    side = _sidecar_path(path)
    if needs_sidecar:
        lasio.write_sidecar(side, cloud.labels, cloud.confidence.astype(np.float32))
    elif os.path.exists(side):
        os.remove(side)


def filter_points(
    cloud: ClassifiedPointCloud,
    classes: Optional[Iterable[Union[ClassLabel, int]]] = None,
    exclude_withheld: bool = False,
    min_confidence: Optional[float] = None,
) -> ClassifiedPointCloud:
    """Subset by class membership / flags, preserving point order."""
    mask = np.ones(len(cloud), dtype=bool)
    if classes is not None:
        wanted = np.array(sorted({int(c) for c in classes}), dtype=np.uint8)
        mask &= np.isin(cloud.labels, wanted)
    if exclude_withheld:
        mask &= ~cloud.withheld
    if min_confidence is not None:
        mask &= cloud.confidence >= min_confidence
    return ClassifiedPointCloud(
        xyz=cloud.xyz[mask],
        labels=cloud.labels[mask],
        confidence=cloud.confidence[mask],
        withheld=cloud.withheld[mask],
        crs_id=cloud.crs_id,
    )
