"""Slice-to-volume assembly."""
from __future__ import annotations

import numpy as np

from .types import (
    Dataset,
    DuplicateInstanceNumber,
    InconsistentGeometry,
    MissingPixelData,
    SeriesGeometry,
    T,
    Volume,
)


def assemble_volume(series: list[Dataset]) -> Volume:
    """Stack a series of single-frame slices into a 3D volume.

    Slices are ordered ascending by InstanceNumber; all slices must agree on
    SeriesInstanceUID, Rows, Columns and PixelSpacing.
    """
    if not series:
        raise InconsistentGeometry("empty series")

    keyed: dict[int, Dataset] = {}
    for ds in series:
        num = ds.value(T.InstanceNumber)
        if num is None:
            raise InconsistentGeometry("slice without InstanceNumber")
        num = int(num)
        if num in keyed:
            raise DuplicateInstanceNumber(str(num))
        keyed[num] = ds
    ordered = [keyed[n] for n in sorted(keyed)]

    first = ordered[0]
    series_uid = first.value(T.SeriesInstanceUID)
    rows = int(first.value(T.Rows))
    cols = int(first.value(T.Columns))
    spacing = first.value(T.PixelSpacing) or (1.0, 1.0)
    if not isinstance(spacing, (tuple, list)):
        spacing = (float(spacing), float(spacing))
    thickness = float(first.value(T.SliceThickness) or 1.0)

    slices = []
    uids = []
    for ds in ordered:
        if ds.value(T.SeriesInstanceUID) != series_uid:
            raise InconsistentGeometry("mixed SeriesInstanceUID in series")
        if int(ds.value(T.Rows)) != rows or int(ds.value(T.Columns)) != cols:
            raise InconsistentGeometry("slices disagree on Rows/Columns")
        pd = ds.value(T.PixelData)
        if pd is None:
            raise MissingPixelData(str(ds.value(T.SOPInstanceUID)))
        arr = np.frombuffer(pd, dtype="<u2")
        if arr.size != rows * cols:
            raise InconsistentGeometry(
                f"pixel data size {arr.size} != rows*cols {rows * cols}"
            )
        slices.append(arr.reshape(rows, cols))
        uids.append(str(ds.value(T.SOPInstanceUID)))

    geometry = SeriesGeometry(
        rows=rows,
        columns=cols,
        slices=len(slices),
        pixel_spacing=(float(spacing[0]), float(spacing[1])),
        slice_thickness=thickness,
        instance_order=tuple(uids),
    )
    return Volume(voxels=np.stack(slices, axis=0), geometry=geometry)
