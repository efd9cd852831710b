"""Synthetic 3D "MRI" cohort generator with ground-truth lesions.

Each phantom is a bright brain ellipsoid over a dark background with
additive Gaussian lesion blobs, fainter distractor blobs whose contrast
overlaps the low end of the lesion range, and i.i.d. Gaussian noise.
Everything is deterministic in the seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dicom import Dataset, MR_IMAGE_STORAGE, T, UidFactory


class SpecInvalid(ValueError):
    pass


class BadCounts(ValueError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 96, 96)  # (slices, rows, cols)
    background_mean: float = 400.0
    background_sd: float = 20.0
    lesion_count_range: tuple[int, int] = (2, 6)
    lesion_radius_range: tuple[float, float] = (2.0, 6.0)
    lesion_contrast_range: tuple[float, float] = (350.0, 800.0)
    distractor_count_range: tuple[int, int] = (16, 28)
    distractor_contrast_range: tuple[float, float] = (140.0, 280.0)
    noise_sd: float = 55.0
    seed: int = 0

    def validate(self) -> None:
        s, r, c = self.dims
        if s < 8 or r < 16 or c < 16:
            raise SpecInvalid(f"dims {self.dims} below minimum (8,16,16)")
        if self.noise_sd < 0:
            raise SpecInvalid("noise_sd must be >= 0")
        for name in ("lesion_count_range", "lesion_radius_range",
                     "lesion_contrast_range", "distractor_count_range",
                     "distractor_contrast_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise SpecInvalid(f"{name} is empty: {lo}..{hi}")


@dataclass(frozen=True)
class Lesion:
    center: tuple[float, float, float]  # voxel-index coordinates
    radius_vox: float


@dataclass(frozen=True)
class GroundTruth:
    patient_id: str
    series_uid: str
    lesions: tuple[Lesion, ...]


@dataclass(frozen=True)
class CohortEntry:
    patient_id: str
    series_uid: str
    ground_truth: GroundTruth


@dataclass
class CohortManifest:
    """Ordered cohort; supports incremental extension with a prefix guarantee."""

    spec: PhantomSpec
    seed: int
    entries: list[CohortEntry] = field(default_factory=list)
    patient_ids: list[str] = field(default_factory=list)

    @property
    def n_series(self) -> int:
        return len(self.entries)

    @property
    def n_patients(self) -> int:
        return len(self.patient_ids)


def _ellipsoid_mask(dims: tuple[int, int, int]) -> np.ndarray:
    s, r, c = dims
    half = (0.8 * s / 2, 0.8 * r / 2, 0.8 * c / 2)
    center = ((s - 1) / 2, (r - 1) / 2, (c - 1) / 2)
    zz, yy, xx = np.mgrid[0:s, 0:r, 0:c].astype(np.float64)
    d = ((zz - center[0]) / half[0]) ** 2 + ((yy - center[1]) / half[1]) ** 2 + (
        (xx - center[2]) / half[2]
    ) ** 2
    return d < 1.0


def _inside_ellipsoid(p, dims, margin: float = 0.9) -> bool:
    s, r, c = dims
    half = (0.8 * s / 2, 0.8 * r / 2, 0.8 * c / 2)
    center = ((s - 1) / 2, (r - 1) / 2, (c - 1) / 2)
    d = sum(((p[i] - center[i]) / half[i]) ** 2 for i in range(3))
    return d < margin**2


def _add_blob(img: np.ndarray, center, radius: float, peak: float) -> None:
    sigma = radius / 2.0
    reach = max(2.0, 4.0 * sigma)
    dims = img.shape
    lo = [max(0, int(np.floor(center[i] - reach))) for i in range(3)]
    hi = [min(dims[i] - 1, int(np.ceil(center[i] + reach))) for i in range(3)]
    zz, yy, xx = np.mgrid[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1]
    d2 = (zz - center[0]) ** 2 + (yy - center[1]) ** 2 + (xx - center[2]) ** 2
    img[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1] += peak * np.exp(
        -d2 / (2.0 * sigma * sigma)
    )


def _sample_centers(rng, n: int, dims, radii) -> list[tuple[float, float, float]]:
    """Rejection-sample centers strictly inside the ellipsoid with no overlap."""
    centers: list[tuple[float, float, float]] = []
    placed_radii: list[float] = []
    attempts = 0
    i = 0
    while i < n and attempts < 2000:
        attempts += 1
        p = tuple(rng.uniform(0, d - 1) for d in dims)
        if not _inside_ellipsoid(p, dims):
            continue
        ok = all(
            np.linalg.norm(np.subtract(p, q)) > radii[i] + pr
            for q, pr in zip(centers, placed_radii)
        )
        if not ok:
            continue
        centers.append(p)
        placed_radii.append(radii[i])
        i += 1
    return centers


def render_phantom(spec: PhantomSpec) -> tuple[np.ndarray, list[Lesion]]:
    """Voxel array (uint16) plus ground-truth lesions, deterministic in seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    dims = spec.dims

    img = np.zeros(dims, dtype=np.float64)
    brain_level = rng.normal(spec.background_mean, spec.background_sd)
    img[_ellipsoid_mask(dims)] = brain_level

    n_lesions = int(rng.integers(spec.lesion_count_range[0], spec.lesion_count_range[1] + 1))
    radii = [float(rng.uniform(*spec.lesion_radius_range)) for _ in range(n_lesions)]
    contrasts = [float(rng.uniform(*spec.lesion_contrast_range)) for _ in range(n_lesions)]
    centers = _sample_centers(rng, n_lesions, dims, radii)
    lesions = []
    for center, radius, contrast in zip(centers, radii, contrasts):
        _add_blob(img, center, radius, contrast)
        lesions.append(Lesion(center=center, radius_vox=radius))

    n_distract = int(
        rng.integers(spec.distractor_count_range[0], spec.distractor_count_range[1] + 1)
    )
    d_radii = [float(rng.uniform(1.5, 3.5)) for _ in range(n_distract)]
    d_contrasts = [float(rng.uniform(*spec.distractor_contrast_range)) for _ in range(n_distract)]
    d_centers = _sample_centers(rng, n_distract, dims, d_radii)
    for center, radius, contrast in zip(d_centers, d_radii, d_contrasts):
        _add_blob(img, center, radius, contrast)

    img += rng.normal(0.0, spec.noise_sd, size=dims)
    return np.clip(img, 0, 65535).astype(np.uint16), lesions


def generate_phantom(
    spec: PhantomSpec,
    patient_id: str = "P0001",
    study_uid: Optional[str] = None,
) -> tuple[list[Dataset], GroundTruth]:
    """Render a phantom and wrap it as a DICOM slice series."""
    voxels, lesions = render_phantom(spec)
    uids = UidFactory(spec.seed)
    study_uid = study_uid or uids.next_uid()
    series_uid = uids.next_uid()

    slices = []
    n_slices, rows, cols = spec.dims
    for i in range(n_slices):
        ds = Dataset()
        ds.set(T.SOPClassUID, "UI", MR_IMAGE_STORAGE)
        ds.set(T.SOPInstanceUID, "UI", uids.next_uid())
        ds.set(T.Modality, "CS", "MR")
        ds.set(T.SeriesDescription, "LO", "AX T1 3D POST")
        ds.set(T.PatientID, "LO", patient_id)
        ds.set(T.SliceThickness, "DS", 1.0)
        ds.set(T.StudyInstanceUID, "UI", study_uid)
        ds.set(T.SeriesInstanceUID, "UI", series_uid)
        ds.set(T.InstanceNumber, "IS", i + 1)
        ds.set(T.SamplesPerPixel, "US", 1)
        ds.set(T.PhotometricInterpretation, "CS", "MONOCHROME2")
        ds.set(T.Rows, "US", rows)
        ds.set(T.Columns, "US", cols)
        ds.set(T.PixelSpacing, "DS", (1.0, 1.0))
        ds.set(T.BitsAllocated, "US", 16)
        ds.set(T.BitsStored, "US", 16)
        ds.set(T.HighBit, "US", 15)
        ds.set(T.PixelRepresentation, "US", 0)
        ds.set(T.PixelData, "OW", voxels[i].astype("<u2").tobytes())
        slices.append(ds)

    gt = GroundTruth(patient_id=patient_id, series_uid=series_uid, lesions=tuple(lesions))
    return slices, gt


def _series_seed(cohort_seed: int, index: int) -> int:
    return int(np.random.default_rng((cohort_seed, 1000 + index)).integers(0, 2**63))


def generate_cohort(
    n_series: int, n_patients: int, spec: PhantomSpec, seed: int
) -> CohortManifest:
    if n_patients > n_series or n_patients < 1:
        raise BadCounts(f"need 1 <= n_patients <= n_series, got {n_patients}/{n_series}")
    manifest = CohortManifest(spec=spec, seed=seed)
    extend_cohort(manifest, n_series, n_patients)
    return manifest


def extend_cohort(manifest: CohortManifest, n_series: int, n_patients: int) -> CohortManifest:
    """Grow the manifest in place; existing entries are untouched (prefix
    property). New patients are introduced first, then surplus series are
    assigned to randomly chosen existing patients."""
    if n_series < manifest.n_series or n_patients < manifest.n_patients:
        raise BadCounts("cohort can only grow")
    if n_patients > n_series:
        raise BadCounts("n_patients must not exceed n_series")
    new_series = n_series - manifest.n_series
    new_patients = n_patients - manifest.n_patients
    if new_patients > new_series:
        raise BadCounts("cannot introduce more patients than new series")

    for _ in range(new_patients):
        manifest.patient_ids.append(f"P{manifest.n_patients + 1:04d}")

    next_new_patient = manifest.n_patients - new_patients
    for j in range(new_series):
        idx = manifest.n_series  # global series index
        if j < new_patients:
            patient = manifest.patient_ids[next_new_patient + j]
        else:
            assign_rng = np.random.default_rng((manifest.seed, 7000 + idx))
            patient = manifest.patient_ids[int(assign_rng.integers(0, manifest.n_patients))]
        series_spec = replace(manifest.spec, seed=_series_seed(manifest.seed, idx))
        _, gt = generate_phantom(series_spec, patient_id=patient)
        manifest.entries.append(
            CohortEntry(patient_id=patient, series_uid=gt.series_uid, ground_truth=gt)
        )
    return manifest


def cohort_series(manifest: CohortManifest, index: int) -> tuple[list[Dataset], GroundTruth]:
    """Re-render the datasets for one manifest entry (deterministic)."""
    entry = manifest.entries[index]
    series_spec = replace(manifest.spec, seed=_series_seed(manifest.seed, index))
    return generate_phantom(series_spec, patient_id=entry.patient_id)


def write_ground_truth_sidecar(path: Path, truths: list[GroundTruth]) -> None:
    """One lesion per line: series UID, slice, row, col, radius."""
    lines = []
    for gt in truths:
        for les in gt.lesions:
            s, r, c = les.center
            lines.append(f"{gt.series_uid} {s:.3f} {r:.3f} {c:.3f} {les.radius_vox:.3f}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_ground_truth_sidecar(path: Path) -> dict[str, list[Lesion]]:
    out: dict[str, list[Lesion]] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        uid, s, r, c, rad = line.split()
        out.setdefault(uid, []).append(
            Lesion(center=(float(s), float(r), float(c)), radius_vox=float(rad))
        )
    return out
