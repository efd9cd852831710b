"""Part-10 subset codec: Explicit VR Little Endian only, deterministic writer."""
from __future__ import annotations

import struct

from .types import (
    BINARY_INT_VRS,
    EXPLICIT_VR_LITTLE_ENDIAN,
    LONG_FORM_VRS,
    MANDATORY_IDENTIFIER_TAGS,
    NUMERIC_STRING_VRS,
    STRING_VRS,
    SUPPORTED_VRS,
    Dataset,
    Element,
    MissingMagic,
    MissingMandatoryTag,
    OddLengthUnpaddable,
    Tag,
    TruncatedElement,
    T,
    UnknownVR,
    UnsupportedTransferSyntax,
)

_PREAMBLE = b"\x00" * 128
_MAGIC = b"DICM"
_UNDEFINED_LENGTH = 0xFFFFFFFF


def _format_ds(v: float) -> str:
    return repr(float(v))


def _encode_value(vr: str, value) -> bytes:
    if vr in STRING_VRS:
        s = "" if value is None else str(value)
        raw = s.encode("ascii")
        if len(raw) % 2:
            raw += b"\x00" if vr == "UI" else b" "
        return raw
    if vr == "IS":
        items = value if isinstance(value, (list, tuple)) else (value,)
        raw = "\\".join(str(int(v)) for v in items).encode("ascii")
        if len(raw) % 2:
            raw += b" "
        return raw
    if vr == "DS":
        items = value if isinstance(value, (list, tuple)) else (value,)
        raw = "\\".join(_format_ds(v) for v in items).encode("ascii")
        if len(raw) % 2:
            raw += b" "
        return raw
    if vr == "US":
        items = value if isinstance(value, (list, tuple)) else (value,)
        return b"".join(struct.pack("<H", int(v)) for v in items)
    if vr == "UL":
        items = value if isinstance(value, (list, tuple)) else (value,)
        return b"".join(struct.pack("<I", int(v)) for v in items)
    if vr == "OW":
        raw = bytes(value or b"")
        if len(raw) % 2:
            raise OddLengthUnpaddable(f"OW value has odd length {len(raw)}")
        return raw
    raise UnknownVR(vr)


def _decode_value(vr: str, raw: bytes):
    if vr in STRING_VRS:
        pad = b"\x00" if vr == "UI" else b" "
        s = raw.rstrip(pad).decode("ascii")
        return s
    if vr == "IS":
        s = raw.rstrip(b" ").decode("ascii")
        if not s:
            return None
        parts = s.split("\\")
        vals = tuple(int(p) for p in parts)
        return vals[0] if len(vals) == 1 else vals
    if vr == "DS":
        s = raw.rstrip(b" ").decode("ascii")
        if not s:
            return None
        parts = s.split("\\")
        vals = tuple(float(p) for p in parts)
        return vals[0] if len(vals) == 1 else vals
    if vr == "US":
        n = len(raw) // 2
        vals = struct.unpack(f"<{n}H", raw)
        return vals[0] if len(vals) == 1 else vals
    if vr == "UL":
        n = len(raw) // 4
        vals = struct.unpack(f"<{n}I", raw)
        return vals[0] if len(vals) == 1 else vals
    if vr == "OW":
        return raw
    raise UnknownVR(vr)


def _encode_element(el: Element) -> bytes:
    if el.vr == "SQ":
        body = b""
        for item in el.value or []:
            item_body = encode_dataset(item)
            body += struct.pack("<HHI", 0xFFFE, 0xE000, len(item_body)) + item_body
        header = struct.pack("<HH", el.tag.group, el.tag.element) + b"SQ\x00\x00"
        return header + struct.pack("<I", len(body)) + body
    raw = _encode_value(el.vr, el.value)
    head = struct.pack("<HH", el.tag.group, el.tag.element) + el.vr.encode("ascii")
    if el.vr in LONG_FORM_VRS:
        return head + b"\x00\x00" + struct.pack("<I", len(raw)) + raw
    if len(raw) > 0xFFFF:
        raise TruncatedElement(f"{el.tag} value too long for short-form VR {el.vr}")
    return head + struct.pack("<H", len(raw)) + raw


def encode_dataset(ds: Dataset) -> bytes:
    """Encode elements in strictly ascending tag order with explicit lengths."""
    return b"".join(_encode_element(el) for el in ds)


class _Reader:
    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def remaining(self) -> int:
        return len(self.buf) - self.pos

    def take(self, n: int) -> bytes:
        if self.remaining() < n:
            raise TruncatedElement(
                f"needed {n} bytes at offset {self.pos}, have {self.remaining()}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def peek_tag(self) -> Tag:
        g, e = struct.unpack_from("<HH", self.buf, self.pos)
        return Tag(g, e)


def _read_element(r: _Reader) -> Element:
    g, e = struct.unpack("<HH", r.take(4))
    tag = Tag(g, e)
    vr = r.take(2).decode("ascii", errors="replace")
    if vr not in SUPPORTED_VRS:
        raise UnknownVR(f"VR {vr!r} at {tag}")
    if vr in LONG_FORM_VRS:
        r.take(2)  # reserved
        (length,) = struct.unpack("<I", r.take(4))
    else:
        (length,) = struct.unpack("<H", r.take(2))
    if vr == "SQ":
        return Element(tag, "SQ", _read_sequence(r, length))
    if length == _UNDEFINED_LENGTH:
        raise TruncatedElement(f"undefined length only valid for SQ, got {vr} at {tag}")
    raw = r.take(length)
    return Element(tag, vr, _decode_value(vr, raw))


def _read_sequence(r: _Reader, length: int) -> list[Dataset]:
    items: list[Dataset] = []
    if length == _UNDEFINED_LENGTH:
        while True:
            g, e, item_len = struct.unpack("<HHI", r.take(8))
            if (g, e) == (0xFFFE, 0xE0DD):
                break
            if (g, e) != (0xFFFE, 0xE000):
                raise TruncatedElement(f"unexpected tag ({g:04X},{e:04X}) in sequence")
            items.append(_read_item(r, item_len))
        return items
    end = r.pos + length
    while r.pos < end:
        g, e, item_len = struct.unpack("<HHI", r.take(8))
        if (g, e) != (0xFFFE, 0xE000):
            raise TruncatedElement(f"unexpected tag ({g:04X},{e:04X}) in sequence")
        items.append(_read_item(r, item_len))
    if r.pos != end:
        raise TruncatedElement("sequence items overran declared sequence length")
    return items


def _read_item(r: _Reader, item_len: int) -> Dataset:
    ds = Dataset()
    if item_len == _UNDEFINED_LENGTH:
        while True:
            g, e = struct.unpack_from("<HH", r.buf, r.pos)
            if (g, e) == (0xFFFE, 0xE00D):
                r.take(8)  # delimiter tag + zero length
                break
            ds.put(_read_element(r))
        return ds
    end = r.pos + item_len
    while r.pos < end:
        ds.put(_read_element(r))
    if r.pos != end:
        raise TruncatedElement("item elements overran declared item length")
    return ds


def decode_dataset(buf: bytes) -> Dataset:
    r = _Reader(buf)
    ds = Dataset()
    while r.remaining() > 0:
        ds.put(_read_element(r))
    return ds


def serialize_part10(
    ds: Dataset,
    sop_class_uid: str,
    sop_instance_uid: str,
    require_identifiers: bool = False,
) -> bytes:
    """Emit preamble + DICM + group-0002 meta + main dataset, deterministically."""
    if require_identifiers:
        for tag in MANDATORY_IDENTIFIER_TAGS:
            if tag not in ds:
                raise MissingMandatoryTag(str(tag))
    meta = Dataset()
    meta.set(T.MediaStorageSOPClassUID, "UI", sop_class_uid)
    meta.set(T.MediaStorageSOPInstanceUID, "UI", sop_instance_uid)
    meta.set(T.TransferSyntaxUID, "UI", EXPLICIT_VR_LITTLE_ENDIAN)
    meta_body = encode_dataset(meta)
    group_length = Element(T.FileMetaGroupLength, "UL", len(meta_body))
    return (
        _PREAMBLE
        + _MAGIC
        + _encode_element(group_length)
        + meta_body
        + encode_dataset(ds)
    )


def parse_part10(buf: bytes) -> Dataset:
    """Parse a Part-10 stream; validates meta then returns the main dataset."""
    if len(buf) < 132 or buf[128:132] != _MAGIC:
        raise MissingMagic("no DICM marker at offset 128")
    r = _Reader(buf, 132)
    first = _read_element(r)
    if first.tag != T.FileMetaGroupLength or first.vr != "UL":
        raise TruncatedElement("file meta must start with (0002,0000) UL group length")
    meta_end = r.pos + int(first.value)
    meta = Dataset()
    while r.pos < meta_end:
        meta.put(_read_element(r))
    if r.pos != meta_end:
        raise TruncatedElement("file meta overran declared group length")
    ts = meta.value(T.TransferSyntaxUID)
    if ts != EXPLICIT_VR_LITTLE_ENDIAN:
        raise UnsupportedTransferSyntax(str(ts))
    ds = Dataset()
    while r.remaining() > 0:
        ds.put(_read_element(r))
    return ds
