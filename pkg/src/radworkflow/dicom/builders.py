"""Derived-object builders: GSPS overlays and label-mask series.

SEG and SR builders exist behind the same interface but are stubs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .types import (
    Dataset,
    Detection,
    GSPS_STORAGE,
    MR_IMAGE_STORAGE,
    OutOfBoundsDetection,
    SECONDARY_CAPTURE_STORAGE,
    SeriesGeometry,
    T,
    UidFactory,
)

AI_RESULTS_DESCRIPTION = "AI_RESULTS"
AI_MASK_DESCRIPTION = "AI_MASK"


@dataclass(frozen=True)
class SeriesRef:
    """Identity and geometry of the source image series."""

    patient_id: str
    study_uid: str
    series_uid: str
    geometry: SeriesGeometry


def _check_bounds(detections: Sequence[Detection], geo: SeriesGeometry) -> None:
    for det in detections:
        s, r, c = det.center
        if not (0 <= s < geo.slices and 0 <= r < geo.rows and 0 <= c < geo.columns):
            raise OutOfBoundsDetection(f"center {det.center} outside {geo.slices}x{geo.rows}x{geo.columns}")


def nearest_slice_index(center_slice: float, n_slices: int) -> int:
    """Slice containing the continuous position center_slice + 0.5."""
    idx = int(math.floor(center_slice + 0.5))
    return min(max(idx, 0), n_slices - 1)


def ordered_by_confidence(detections: Sequence[Detection]) -> list[Detection]:
    """Descending confidence, ties broken by original index (stable)."""
    return sorted(detections, key=lambda d: -d.confidence)


def build_gsps(
    detections: Sequence[Detection],
    series_ref: SeriesRef,
    uid_factory: UidFactory,
) -> Dataset:
    """One GSPS dataset with a CIRCLE graphic per detection.

    GraphicData is [cx, cy, cx + r, cy] in pixel units with the pixel-center
    convention (voxel index + 0.5). An empty detection set still yields a
    GSPS object: "no findings" is a displayable result.
    """
    geo = series_ref.geometry
    _check_bounds(detections, geo)

    items = []
    for det in detections:
        s, r, c = det.center
        ref_uid = geo.instance_order[nearest_slice_index(s, geo.slices)]
        ref_item = Dataset()
        ref_item.set(T.ReferencedSOPClassUID, "UI", MR_IMAGE_STORAGE)
        ref_item.set(T.ReferencedSOPInstanceUID, "UI", ref_uid)

        cx, cy = c + 0.5, r + 0.5
        graphic = Dataset()
        graphic.set(T.GraphicAnnotationUnits, "CS", "PIXEL")
        graphic.set(T.GraphicDimensions, "US", 2)
        graphic.set(T.NumberOfGraphicPoints, "US", 2)
        graphic.set(T.GraphicData, "DS", (cx, cy, cx + det.radius_vox, cy))
        graphic.set(T.GraphicType, "CS", "CIRCLE")

        item = Dataset()
        item.set(T.ReferencedImageSequence, "SQ", [ref_item])
        item.set(T.GraphicObjectSequence, "SQ", [graphic])
        items.append(item)

    ds = Dataset()
    ds.set(T.SOPClassUID, "UI", GSPS_STORAGE)
    ds.set(T.SOPInstanceUID, "UI", uid_factory.next_uid())
    ds.set(T.SeriesDescription, "LO", AI_RESULTS_DESCRIPTION)
    ds.set(T.PatientID, "LO", series_ref.patient_id)
    ds.set(T.StudyInstanceUID, "UI", series_ref.study_uid)
    ds.set(T.SeriesInstanceUID, "UI", uid_factory.next_uid())
    ds.set(T.InstanceNumber, "IS", 1)
    ds.set(T.GraphicAnnotationSequence, "SQ", items)
    return ds


def rasterize_labels(detections: Sequence[Detection], geo: SeriesGeometry) -> np.ndarray:
    """Label volume: voxel value k = within radius of detection k (1-based,
    descending confidence; earlier (higher-confidence) labels win overlaps)."""
    labels = np.zeros((geo.slices, geo.rows, geo.columns), dtype=np.uint16)
    for k, det in enumerate(ordered_by_confidence(detections), start=1):
        cs, cr, cc = det.center
        rad = det.radius_vox
        s0, s1 = max(0, math.floor(cs - rad)), min(geo.slices - 1, math.ceil(cs + rad))
        r0, r1 = max(0, math.floor(cr - rad)), min(geo.rows - 1, math.ceil(cr + rad))
        c0, c1 = max(0, math.floor(cc - rad)), min(geo.columns - 1, math.ceil(cc + rad))
        if s0 > s1 or r0 > r1 or c0 > c1:
            continue
        zz, yy, xx = np.mgrid[s0 : s1 + 1, r0 : r1 + 1, c0 : c1 + 1]
        dist2 = (zz - cs) ** 2 + (yy - cr) ** 2 + (xx - cc) ** 2
        region = labels[s0 : s1 + 1, r0 : r1 + 1, c0 : c1 + 1]
        sel = (dist2 <= rad * rad) & (region == 0)
        region[sel] = k
    return labels


def build_mask(
    detections: Sequence[Detection],
    series_ref: SeriesRef,
    uid_factory: UidFactory,
) -> list[Dataset]:
    """Secondary image series with per-detection voxel labels."""
    geo = series_ref.geometry
    _check_bounds(detections, geo)
    labels = rasterize_labels(detections, geo)

    mask_series_uid = uid_factory.next_uid()
    out = []
    for i in range(geo.slices):
        ds = Dataset()
        ds.set(T.SOPClassUID, "UI", SECONDARY_CAPTURE_STORAGE)
        ds.set(T.SOPInstanceUID, "UI", uid_factory.next_uid())
        ds.set(T.Modality, "CS", "OT")
        ds.set(T.SeriesDescription, "LO", AI_MASK_DESCRIPTION)
        ds.set(T.PatientID, "LO", series_ref.patient_id)
        ds.set(T.SliceThickness, "DS", geo.slice_thickness)
        ds.set(T.StudyInstanceUID, "UI", series_ref.study_uid)
        ds.set(T.SeriesInstanceUID, "UI", mask_series_uid)
        ds.set(T.InstanceNumber, "IS", i + 1)
        ds.set(T.SamplesPerPixel, "US", 1)
        ds.set(T.PhotometricInterpretation, "CS", "MONOCHROME2")
        ds.set(T.Rows, "US", geo.rows)
        ds.set(T.Columns, "US", geo.columns)
        ds.set(T.PixelSpacing, "DS", geo.pixel_spacing)
        ds.set(T.BitsAllocated, "US", 16)
        ds.set(T.BitsStored, "US", 16)
        ds.set(T.HighBit, "US", 15)
        ds.set(T.PixelRepresentation, "US", 0)
        ds.set(T.PixelData, "OW", labels[i].astype("<u2").tobytes())
        out.append(ds)
    return out


def build_seg(detections, series_ref, uid_factory):
    raise NotImplementedError("DICOM SEG output is not part of this subset")


def build_sr(detections, series_ref, uid_factory):
    raise NotImplementedError("DICOM SR output is not part of this subset")
