"""Core data model: tags, elements, datasets and volume geometry."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

import numpy as np


class DicomError(Exception):
    """Base class for codec and data-model failures."""


class MissingMagic(DicomError):
    pass


class UnsupportedTransferSyntax(DicomError):
    pass


class TruncatedElement(DicomError):
    pass


class UnknownVR(DicomError):
    pass


class MissingMandatoryTag(DicomError):
    pass


class OddLengthUnpaddable(DicomError):
    pass


class InconsistentGeometry(DicomError):
    pass


class DuplicateInstanceNumber(DicomError):
    pass


class MissingPixelData(DicomError):
    pass


class OutOfBoundsDetection(DicomError):
    pass


@dataclass(frozen=True, order=True)
class Tag:
    group: int
    element: int

    def __post_init__(self):
        if not (0 <= self.group <= 0xFFFF and 0 <= self.element <= 0xFFFF):
            raise ValueError(f"tag out of range: ({self.group:#x},{self.element:#x})")

    def __str__(self) -> str:
        return f"({self.group:04X},{self.element:04X})"


# String VRs padded with a trailing space to even length; UI pads with NUL.
STRING_VRS = {"UI", "SH", "LO", "PN", "DA", "TM", "CS"}
NUMERIC_STRING_VRS = {"IS", "DS"}
BINARY_INT_VRS = {"US", "UL"}
SUPPORTED_VRS = STRING_VRS | NUMERIC_STRING_VRS | BINARY_INT_VRS | {"OW", "SQ"}

# VRs that use the 12-byte (reserved + 32-bit length) header form.
LONG_FORM_VRS = {"OW", "SQ"}

ElementValue = Union[str, int, float, bytes, tuple, list, None]


@dataclass
class Element:
    tag: Tag
    vr: str
    value: ElementValue

    def __post_init__(self):
        if self.vr not in SUPPORTED_VRS:
            raise UnknownVR(f"unsupported VR {self.vr!r} for {self.tag}")


class Dataset:
    """Tag-ordered collection of elements; at most one element per tag."""

    def __init__(self, elements: Optional[Sequence[Element]] = None):
        self._elements: dict[Tag, Element] = {}
        for el in elements or ():
            self.put(el)

    def put(self, el: Element) -> None:
        self._elements[el.tag] = el

    def set(self, tag: Tag, vr: str, value: ElementValue) -> None:
        self.put(Element(tag, vr, value))

    def get(self, tag: Tag) -> Optional[Element]:
        return self._elements.get(tag)

    def value(self, tag: Tag, default: ElementValue = None) -> ElementValue:
        el = self._elements.get(tag)
        return default if el is None else el.value

    def __contains__(self, tag: Tag) -> bool:
        return tag in self._elements

    def __len__(self) -> int:
        return len(self._elements)

    def __iter__(self) -> Iterator[Element]:
        for tag in sorted(self._elements):
            yield self._elements[tag]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if set(self._elements) != set(other._elements):
            return False
        for tag, el in self._elements.items():
            oel = other._elements[tag]
            if el.vr != oel.vr or not _values_equal(el.value, oel.value):
                return False
        return True

    def __repr__(self) -> str:
        return f"Dataset({len(self._elements)} elements)"


def _values_equal(a, b) -> bool:
    if isinstance(a, Dataset) or isinstance(b, Dataset):
        return a == b
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_values_equal(x, y) for x, y in zip(a, b))
    return a == b


@dataclass(frozen=True)
class SeriesGeometry:
    rows: int
    columns: int
    slices: int
    pixel_spacing: tuple[float, float]
    slice_thickness: float
    instance_order: tuple[str, ...]  # SOP instance UIDs, instance-number ascending

    def __post_init__(self):
        if self.rows < 1 or self.columns < 1 or self.slices < 1:
            raise InconsistentGeometry("rows, columns and slices must be >= 1")
        if len(self.instance_order) != self.slices:
            raise InconsistentGeometry("instance_order length must equal slice count")


@dataclass
class Volume:
    voxels: np.ndarray  # (slices, rows, columns)
    geometry: SeriesGeometry

    def __post_init__(self):
        s, r, c = self.voxels.shape
        g = self.geometry
        if (s, r, c) != (g.slices, g.rows, g.columns):
            raise InconsistentGeometry("voxel array shape does not match geometry")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass(frozen=True)
class Detection:
    """One detected lesion in voxel-index coordinates.

    The continuous position of voxel index i is i + 0.5, so display and
    distance computations add 0.5 per axis.
    """

    center: tuple[float, float, float]  # (slice, row, col)
    radius_vox: float
    confidence: float

    def __post_init__(self):
        if self.radius_vox <= 0:
            raise ValueError("radius_vox must be positive")
        if not (0.0 < self.confidence <= 1.0):
            raise ValueError("confidence must be in (0, 1]")


# Well-known tags used throughout the system.
class T:
    FileMetaGroupLength = Tag(0x0002, 0x0000)
    MediaStorageSOPClassUID = Tag(0x0002, 0x0002)
    MediaStorageSOPInstanceUID = Tag(0x0002, 0x0003)
    TransferSyntaxUID = Tag(0x0002, 0x0010)

    SOPClassUID = Tag(0x0008, 0x0016)
    SOPInstanceUID = Tag(0x0008, 0x0018)
    Modality = Tag(0x0008, 0x0060)
    SeriesDescription = Tag(0x0008, 0x103E)
    ReferencedImageSequence = Tag(0x0008, 0x1140)
    ReferencedSOPClassUID = Tag(0x0008, 0x1150)
    ReferencedSOPInstanceUID = Tag(0x0008, 0x1155)

    PatientID = Tag(0x0010, 0x0020)

    SliceThickness = Tag(0x0018, 0x0050)

    StudyInstanceUID = Tag(0x0020, 0x000D)
    SeriesInstanceUID = Tag(0x0020, 0x000E)
    InstanceNumber = Tag(0x0020, 0x0013)

    SamplesPerPixel = Tag(0x0028, 0x0002)
    PhotometricInterpretation = Tag(0x0028, 0x0004)
    Rows = Tag(0x0028, 0x0010)
    Columns = Tag(0x0028, 0x0011)
    PixelSpacing = Tag(0x0028, 0x0030)
    BitsAllocated = Tag(0x0028, 0x0100)
    BitsStored = Tag(0x0028, 0x0101)
    HighBit = Tag(0x0028, 0x0102)
    PixelRepresentation = Tag(0x0028, 0x0103)

    GraphicAnnotationSequence = Tag(0x0070, 0x0001)
    GraphicAnnotationUnits = Tag(0x0070, 0x0005)
    GraphicObjectSequence = Tag(0x0070, 0x0009)
    GraphicDimensions = Tag(0x0070, 0x0020)
    NumberOfGraphicPoints = Tag(0x0070, 0x0021)
    GraphicData = Tag(0x0070, 0x0022)
    GraphicType = Tag(0x0070, 0x0023)

    PixelData = Tag(0x7FE0, 0x0010)

    ItemTag = Tag(0xFFFE, 0xE000)
    ItemDelimiter = Tag(0xFFFE, 0xE00D)
    SequenceDelimiter = Tag(0xFFFE, 0xE0DD)


# SOP class UIDs used by this subset.
EXPLICIT_VR_LITTLE_ENDIAN = "1.2.840.10008.1.2.1"
MR_IMAGE_STORAGE = "1.2.840.10008.5.1.4.1.1.4"
SECONDARY_CAPTURE_STORAGE = "1.2.840.10008.5.1.4.1.1.7"
GSPS_STORAGE = "1.2.840.10008.5.1.4.1.1.11.1"

MANDATORY_IDENTIFIER_TAGS = (
    T.SOPClassUID,
    T.SOPInstanceUID,
    T.PatientID,
    T.StudyInstanceUID,
    T.SeriesInstanceUID,
)


class UidFactory:
    """Deterministic SOP/series/study UID generator under a fixed private root."""

    ROOT = "1.2.826.0.1.3680043.10.424"

    def __init__(self, run_seed: int):
        self.run_seed = int(run_seed)
        self._counter = 0

    def next_uid(self) -> str:
        self._counter += 1
        return f"{self.ROOT}.{self.run_seed}.{self._counter}"
