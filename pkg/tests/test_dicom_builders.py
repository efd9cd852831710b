import math

import numpy as np
import pytest

from radworkflow.dicom import (
    AI_MASK_DESCRIPTION,
    AI_RESULTS_DESCRIPTION,
    Dataset,
    Detection,
    DuplicateInstanceNumber,
    GSPS_STORAGE,
    InconsistentGeometry,
    MissingPixelData,
    OutOfBoundsDetection,
    SeriesGeometry,
    SeriesRef,
    T,
    UidFactory,
    assemble_volume,
    build_gsps,
    build_mask,
    build_seg,
    build_sr,
    nearest_slice_index,
    rasterize_labels,
)
from tests.conftest import make_series, make_slice


def geometry(slices=16, rows=16, cols=16):
    return SeriesGeometry(
        rows=rows,
        columns=cols,
        slices=slices,
        pixel_spacing=(1.0, 1.0),
        slice_thickness=1.0,
        instance_order=tuple(f"1.2.3.4.{i + 1}" for i in range(slices)),
    )


def series_ref(**kw):
    return SeriesRef(
        patient_id="P0001", study_uid="1.2.3", series_uid="1.2.3.4", geometry=geometry(**kw)
    )


def test_gsps_circle_example():
    # center (slice 10, row 50, col 40), radius 3 → GraphicData
    # [40.5, 50.5, 43.5, 50.5] referencing instance #10's SOP UID.
    ref = series_ref(slices=64, rows=96, cols=96)
    det = Detection(center=(10.0, 50.0, 40.0), radius_vox=3.0, confidence=0.9)
    gsps = build_gsps([det], ref, UidFactory(1))

    items = gsps.value(T.GraphicAnnotationSequence)
    assert len(items) == 1
    ref_item = items[0].value(T.ReferencedImageSequence)[0]
    assert ref_item.value(T.ReferencedSOPInstanceUID) == ref.geometry.instance_order[10]
    graphic = items[0].value(T.GraphicObjectSequence)[0]
    assert graphic.value(T.GraphicData) == (40.5, 50.5, 43.5, 50.5)
    assert graphic.value(T.GraphicType) == "CIRCLE"
    assert graphic.value(T.GraphicAnnotationUnits) == "PIXEL"
    assert gsps.value(T.SeriesDescription) == AI_RESULTS_DESCRIPTION
    assert gsps.value(T.SOPClassUID) == GSPS_STORAGE


def test_gsps_empty_detections_still_a_result():
    gsps = build_gsps([], series_ref(), UidFactory(1))
    assert gsps.value(T.GraphicAnnotationSequence) == []
    assert gsps.value(T.SeriesDescription) == AI_RESULTS_DESCRIPTION


def test_gsps_out_of_bounds():
    det = Detection(center=(99.0, 5.0, 5.0), radius_vox=1.0, confidence=0.5)
    with pytest.raises(OutOfBoundsDetection):
        build_gsps([det], series_ref(), UidFactory(1))


def test_nearest_slice_index_convention():
    assert nearest_slice_index(10.0, 64) == 10
    assert nearest_slice_index(10.6, 64) == 11
    assert nearest_slice_index(0.2, 64) == 0
    assert nearest_slice_index(63.9, 64) == 63


def test_mask_matches_bruteforce_distance_scan():
    # one detection radius 2 at voxel (5,8,8) in 16^3: exactly the voxels
    # whose centers lie within Euclidean distance 2 of (5.5, 8.5, 8.5).
    det = Detection(center=(5.0, 8.0, 8.0), radius_vox=2.0, confidence=0.8)
    geo = geometry()
    labels = rasterize_labels([det], geo)
    for s in range(16):
        for r in range(16):
            for c in range(16):
                d = math.dist((s + 0.5, r + 0.5, c + 0.5), (5.5, 8.5, 8.5))
                assert (labels[s, r, c] == 1) == (d <= 2.0), (s, r, c)


def test_mask_overlap_higher_confidence_wins():
    a = Detection(center=(8.0, 8.0, 8.0), radius_vox=3.0, confidence=0.9)
    b = Detection(center=(8.0, 8.0, 10.0), radius_vox=3.0, confidence=0.5)
    labels = rasterize_labels([b, a], geometry())  # order must not matter
    assert labels[8, 8, 8] == 1  # label 1 = highest confidence
    assert labels[8, 8, 12] == 2
    # overlap voxel claimed by the higher-confidence detection
    assert labels[8, 8, 9] == 1


def test_mask_series_structure():
    det = Detection(center=(5.0, 8.0, 8.0), radius_vox=2.0, confidence=0.8)
    out = build_mask([det], series_ref(), UidFactory(7))
    assert len(out) == 16
    assert all(ds.value(T.SeriesDescription) == AI_MASK_DESCRIPTION for ds in out)
    assert all(ds.value(T.Modality) == "OT" for ds in out)
    assert len({ds.value(T.SeriesInstanceUID) for ds in out}) == 1
    merged = np.stack(
        [np.frombuffer(ds.value(T.PixelData), dtype="<u2").reshape(16, 16) for ds in out]
    )
    assert merged.max() == 1


def test_seg_and_sr_are_stubs():
    with pytest.raises(NotImplementedError):
        build_seg([], series_ref(), UidFactory(1))
    with pytest.raises(NotImplementedError):
        build_sr([], series_ref(), UidFactory(1))


# -- volume assembly -------------------------------------------------------

def test_assemble_out_of_order_instance_numbers():
    slices = make_series(n_slices=3)
    vox = np.arange(3 * 8 * 8, dtype=np.uint16).reshape(3, 8, 8)
    for i, ds in enumerate(slices):
        ds.set(T.PixelData, "OW", vox[i].astype("<u2").tobytes())
    vol = assemble_volume([slices[2], slices[0], slices[1]])
    assert np.array_equal(vol.voxels, vox)
    assert vol.geometry.instance_order == tuple(f"1.2.3.4.{i + 1}" for i in range(3))


def test_assemble_duplicate_instance_number():
    slices = make_series(n_slices=2)
    dup = make_slice("1.2.3.4.99", instance_number=1)
    with pytest.raises(DuplicateInstanceNumber):
        assemble_volume(slices + [dup])


def test_assemble_inconsistent_geometry():
    slices = make_series(n_slices=2)
    bad = make_slice("1.2.3.4.9", instance_number=3, rows=16)
    with pytest.raises(InconsistentGeometry):
        assemble_volume(slices + [bad])


def test_assemble_missing_pixel_data():
    ds = make_slice("1.2.3.4.1")
    object.__getattribute__(ds, "_elements").pop(T.PixelData)
    with pytest.raises(MissingPixelData):
        assemble_volume([ds])
