from .types import (
    BINARY_INT_VRS,
    Dataset,
    Detection,
    DicomError,
    DuplicateInstanceNumber,
    Element,
    EXPLICIT_VR_LITTLE_ENDIAN,
    GSPS_STORAGE,
    InconsistentGeometry,
    MANDATORY_IDENTIFIER_TAGS,
    MR_IMAGE_STORAGE,
    MissingMagic,
    MissingMandatoryTag,
    MissingPixelData,
    NUMERIC_STRING_VRS,
    OddLengthUnpaddable,
    OutOfBoundsDetection,
    SECONDARY_CAPTURE_STORAGE,
    STRING_VRS,
    SUPPORTED_VRS,
    SeriesGeometry,
    T,
    Tag,
    TruncatedElement,
    UidFactory,
    UnknownVR,
    UnsupportedTransferSyntax,
    Volume,
)
from .codec import decode_dataset, encode_dataset, parse_part10, serialize_part10
from .volume import assemble_volume
from .builders import (
    AI_MASK_DESCRIPTION,
    AI_RESULTS_DESCRIPTION,
    SeriesRef,
    build_gsps,
    build_mask,
    build_seg,
    build_sr,
    nearest_slice_index,
    ordered_by_confidence,
    rasterize_labels,
)
