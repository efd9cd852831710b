"""Parametric 3D blob detector.

Pipeline: brain mask at 10% of max intensity, z-score normalization within
the mask, binarization at a z threshold, 26-connected components, size
filtering, then per-component centroid / radius / confidence. Deterministic
and pure in (volume, params).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .dicom import Detection, Volume


class EmptyVolume(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    z_threshold: float = 2.0
    min_component_vox: int = 2
    max_component_vox: int = 4000
    confidence_scale: float = 1.0

    def __post_init__(self):
        if self.min_component_vox < 1:
            raise ValueError("min_component_vox must be >= 1")
        if self.min_component_vox >= self.max_component_vox:
            raise ValueError("min_component_vox must be < max_component_vox")
        if self.confidence_scale <= 0:
            raise ValueError("confidence_scale must be positive")

    def to_json(self) -> dict:
        return {
            "zThreshold": self.z_threshold,
            "minComponentVox": self.min_component_vox,
            "maxComponentVox": self.max_component_vox,
            "confidenceScale": self.confidence_scale,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelParams":
        return cls(
            z_threshold=float(obj["zThreshold"]),
            min_component_vox=int(obj["minComponentVox"]),
            max_component_vox=int(obj["maxComponentVox"]),
            confidence_scale=float(obj["confidenceScale"]),
        )


@dataclass(frozen=True)
class ComponentStats:
    """Summary of one connected component above a given z threshold."""

    size: int
    centroid: tuple[float, float, float]  # intensity-weighted, index coords
    mean_z: float


@dataclass(frozen=True)
class DetectionSet:
    series_uid: str
    model_version: int
    detections: tuple[Detection, ...]

    def __post_init__(self):
        confs = [d.confidence for d in self.detections]
        if confs != sorted(confs, reverse=True):
            raise ValueError("detections must be sorted by descending confidence")


_STRUCTURE_26 = np.ones((3, 3, 3), dtype=bool)


def component_stats(voxels: np.ndarray, z_threshold: float) -> list[ComponentStats]:
    """Connected-component summaries; independent of the size filter so grid
    sweeps over component-size bounds can reuse one labelling pass."""
    if voxels.size == 0:
        raise EmptyVolume("empty voxel array")
    v = voxels.astype(np.float64)
    mask = v > 0.1 * v.max()
    if not mask.any():
        return []
    mu = v[mask].mean()
    sd = v[mask].std()
    if sd == 0:
        return []
    z = np.where(mask, (v - mu) / sd, -np.inf)
    binary = z >= z_threshold
    labels, n = ndimage.label(binary, structure=_STRUCTURE_26)
    if n == 0:
        return []
    out = []
    idx = ndimage.value_indices(labels)
    for comp in range(1, n + 1):
        coords = idx.get(comp)
        if coords is None:
            continue
        zz, yy, xx = coords
        weights = v[zz, yy, xx]
        wsum = weights.sum()
        centroid = (
            float((weights * zz).sum() / wsum),
            float((weights * yy).sum() / wsum),
            float((weights * xx).sum() / wsum),
        )
        out.append(
            ComponentStats(
                size=int(len(zz)),
                centroid=centroid,
                mean_z=float(z[zz, yy, xx].mean()),
            )
        )
    return out


def detections_from_stats(
    stats: Sequence[ComponentStats], params: ModelParams
) -> list[Detection]:
    dets = []
    for st in stats:
        if not (params.min_component_vox <= st.size <= params.max_component_vox):
            continue
        radius = (3.0 * st.size / (4.0 * math.pi)) ** (1.0 / 3.0)
        conf = 1.0 - math.exp(-params.confidence_scale * (st.mean_z - params.z_threshold))
        conf = min(max(conf, 1e-12), 1.0)
        dets.append(Detection(center=st.centroid, radius_vox=radius, confidence=conf))
    dets.sort(key=lambda d: -d.confidence)
    return dets


def infer(vol: Volume, params: ModelParams, series_uid: str = "", model_version: int = 0) -> DetectionSet:
    stats = component_stats(vol.voxels, params.z_threshold)
    return DetectionSet(
        series_uid=series_uid or "",
        model_version=model_version,
        detections=tuple(detections_from_stats(stats, params)),
    )
