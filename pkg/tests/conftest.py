import numpy as np
import pytest

from radworkflow.dicom import (
    Dataset,
    MR_IMAGE_STORAGE,
    T,
)


def make_slice(
    sop_uid: str,
    series_uid: str = "1.2.3.4",
    study_uid: str = "1.2.3",
    patient_id: str = "P0001",
    instance_number: int = 1,
    rows: int = 8,
    cols: int = 8,
    modality: str = "MR",
    description: str = "AX T1 3D POST",
    pixels: bytes | None = None,
) -> Dataset:
    """Minimal valid image slice used across the integration tests."""
    ds = Dataset()
    ds.set(T.SOPClassUID, "UI", MR_IMAGE_STORAGE)
    ds.set(T.SOPInstanceUID, "UI", sop_uid)
    ds.set(T.Modality, "CS", modality)
    ds.set(T.SeriesDescription, "LO", description)
    ds.set(T.PatientID, "LO", patient_id)
    ds.set(T.SliceThickness, "DS", 1.0)
    ds.set(T.StudyInstanceUID, "UI", study_uid)
    ds.set(T.SeriesInstanceUID, "UI", series_uid)
    ds.set(T.InstanceNumber, "IS", instance_number)
    ds.set(T.SamplesPerPixel, "US", 1)
    ds.set(T.PhotometricInterpretation, "CS", "MONOCHROME2")
    ds.set(T.Rows, "US", rows)
    ds.set(T.Columns, "US", cols)
    ds.set(T.PixelSpacing, "DS", (1.0, 1.0))
    ds.set(T.BitsAllocated, "US", 16)
    ds.set(T.BitsStored, "US", 16)
    ds.set(T.HighBit, "US", 15)
    ds.set(T.PixelRepresentation, "US", 0)
    if pixels is None:
        pixels = np.zeros((rows, cols), dtype="<u2").tobytes()
    ds.set(T.PixelData, "OW", pixels)
    return ds


def make_series(
    series_uid: str = "1.2.3.4",
    study_uid: str = "1.2.3",
    patient_id: str = "P0001",
    n_slices: int = 8,
    rows: int = 8,
    cols: int = 8,
    modality: str = "MR",
    description: str = "AX T1 3D POST",
    voxels: np.ndarray | None = None,
) -> list[Dataset]:
    out = []
    for i in range(n_slices):
        px = None
        if voxels is not None:
            px = voxels[i].astype("<u2").tobytes()
        out.append(
            make_slice(
                sop_uid=f"{series_uid}.{i + 1}",
                series_uid=series_uid,
                study_uid=study_uid,
                patient_id=patient_id,
                instance_number=i + 1,
                rows=rows,
                cols=cols,
                modality=modality,
                description=description,
                pixels=px,
            )
        )
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
