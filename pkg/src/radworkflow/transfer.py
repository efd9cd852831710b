"""RDW1 store-and-forward wire protocol over TCP.

All integers little-endian. One association per TCP connection, strict
request/response lockstep:

  ASSOC-RQ    magic "RDW1", msg_type u8=0x01, version u16=1,
              calling_ae 16 bytes ASCII space-padded, called_ae 16 bytes
  ASSOC-AC/RJ msg_type u8=0x02, status u8 (0 ok, 1 unknown called AE,
              2 version mismatch)
  STORE-RQ    msg_type 0x03, payload_len u64, payload = Part-10 stream
  STORE-RSP   msg_type 0x04, status u16 (0 success, 1 malformed,
              2 storage error, 3 duplicate)
  RELEASE-RQ  msg_type 0x05
  RELEASE-RSP msg_type 0x06
"""
from __future__ import annotations

import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Optional

from .dicom import Dataset, DicomError, parse_part10

MAGIC = b"RDW1"
PROTOCOL_VERSION = 1
MAX_PAYLOAD = 2**32

MSG_ASSOC_RQ = 0x01
MSG_ASSOC_RSP = 0x02
MSG_STORE_RQ = 0x03
MSG_STORE_RSP = 0x04
MSG_RELEASE_RQ = 0x05
MSG_RELEASE_RSP = 0x06

REJECT_UNKNOWN_AE = 1
REJECT_VERSION = 2


class StoreStatus(IntEnum):
    SUCCESS = 0
    MALFORMED = 1
    STORAGE_ERROR = 2
    DUPLICATE = 3


class TransferError(Exception):
    pass


class ConnectionRefusedByPeer(TransferError):
    pass


class AssociationRejected(TransferError):
    def __init__(self, reason: int):
        super().__init__(f"association rejected, reason {reason}")
        self.reason = reason


class ProtocolViolation(TransferError):
    pass


class AssociationClosed(TransferError):
    pass


class FrameTooLarge(TransferError):
    pass


class BindFailure(TransferError):
    pass


def _valid_ae(ae: str) -> bool:
    return 0 < len(ae) <= 16 and all(c.isdigit() or (c.isalpha() and c.isupper()) or c == "_" for c in ae)


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int
    called_ae: str

    def __post_init__(self):
        if not _valid_ae(self.called_ae):
            raise ValueError(f"invalid AE title {self.called_ae!r}")

    def __str__(self) -> str:
        return f"{self.called_ae}@{self.host}:{self.port}"


def _pad_ae(ae: str) -> bytes:
    return ae.encode("ascii").ljust(16, b" ")


def encode_assoc_rq(calling_ae: str, called_ae: str, version: int = PROTOCOL_VERSION) -> bytes:
    return MAGIC + struct.pack("<BH", MSG_ASSOC_RQ, version) + _pad_ae(calling_ae) + _pad_ae(called_ae)


def decode_assoc_rq(buf: bytes) -> tuple[int, str, str]:
    if len(buf) != 39 or buf[:4] != MAGIC:
        raise ProtocolViolation("bad ASSOC-RQ")
    msg_type, version = struct.unpack("<BH", buf[4:7])
    if msg_type != MSG_ASSOC_RQ:
        raise ProtocolViolation(f"expected ASSOC-RQ, got type {msg_type:#x}")
    calling = buf[7:23].decode("ascii").rstrip(" ")
    called = buf[23:39].decode("ascii").rstrip(" ")
    return version, calling, called


def encode_assoc_rsp(status: int) -> bytes:
    return struct.pack("<BB", MSG_ASSOC_RSP, status)


def encode_store_rq(payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise FrameTooLarge(f"payload {len(payload)} exceeds {MAX_PAYLOAD}")
    return struct.pack("<BQ", MSG_STORE_RQ, len(payload)) + payload


def encode_store_rsp(status: int) -> bytes:
    return struct.pack("<BH", MSG_STORE_RSP, int(status))


def encode_release_rq() -> bytes:
    return struct.pack("<B", MSG_RELEASE_RQ)


def encode_release_rsp() -> bytes:
    return struct.pack("<B", MSG_RELEASE_RSP)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            raise AssociationClosed("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


@dataclass
class StoreResult:
    sop_instance_uid: str
    status: StoreStatus


class Association:
    """Client-side association; single caller, request/response lockstep."""

    def __init__(self, sock: socket.socket, calling_ae: str, called_ae: str):
        self._sock = sock
        self.calling_ae = calling_ae
        self.called_ae = called_ae
        self.state = "open"

    def store(self, payload: bytes, sop_instance_uid: str = "") -> StoreResult:
        if self.state != "open":
            raise AssociationClosed(f"association is {self.state}")
        if not payload:
            raise TransferError("empty payload")
        self._sock.sendall(encode_store_rq(payload))
        hdr = _recv_exact(self._sock, 3)
        msg_type, status = struct.unpack("<BH", hdr)
        if msg_type != MSG_STORE_RSP:
            raise ProtocolViolation(f"expected STORE-RSP, got {msg_type:#x}")
        return StoreResult(sop_instance_uid=sop_instance_uid, status=StoreStatus(status))

    def release(self) -> None:
        if self.state != "open":
            raise ProtocolViolation(f"release in state {self.state}")
        self._sock.sendall(encode_release_rq())
        try:
            hdr = _recv_exact(self._sock, 1)
            if hdr[0] != MSG_RELEASE_RSP:
                raise ProtocolViolation(f"expected RELEASE-RSP, got {hdr[0]:#x}")
        finally:
            self.state = "released"
            self._sock.close()

    def abort(self) -> None:
        self.state = "aborted"
        self._sock.close()


def associate(endpoint: Endpoint, calling_ae: str, timeout: float = 10.0) -> Association:
    try:
        sock = socket.create_connection((endpoint.host, endpoint.port), timeout=timeout)
    except OSError as exc:
        raise ConnectionRefusedByPeer(f"cannot connect to {endpoint}: {exc}") from exc
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    try:
        sock.sendall(encode_assoc_rq(calling_ae, endpoint.called_ae))
        rsp = _recv_exact(sock, 2)
        if rsp[0] != MSG_ASSOC_RSP:
            raise ProtocolViolation(f"expected ASSOC-AC/RJ, got {rsp[0]:#x}")
        if rsp[1] != 0:
            raise AssociationRejected(rsp[1])
    except TransferError:
        sock.close()
        raise
    except OSError as exc:
        sock.close()
        raise ProtocolViolation(str(exc)) from exc
    sock.settimeout(None)
    return Association(sock, calling_ae, endpoint.called_ae)


# Handler receives the parsed dataset plus the raw Part-10 bytes and returns
# a StoreStatus; raw bytes let receivers persist blobs without re-encoding.
StoreHandler = Callable[[Dataset, bytes], int]


class _RdwRequestHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: RdwServer = self.server  # type: ignore[assignment]
        sock = self.request
        # lockstep small frames: Nagle + delayed ACK would stall every reply
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            rq = _recv_exact(sock, 39)
            try:
                version, calling, called = decode_assoc_rq(rq)
            except ProtocolViolation:
                return  # garbage greeting: close without a reply
            if version != PROTOCOL_VERSION:
                sock.sendall(encode_assoc_rsp(REJECT_VERSION))
                return
            if called != server.ae_title:
                sock.sendall(encode_assoc_rsp(REJECT_UNKNOWN_AE))
                return
            sock.sendall(encode_assoc_rsp(0))
            while True:
                hdr = _recv_exact(sock, 1)
                if hdr[0] == MSG_RELEASE_RQ:
                    sock.sendall(encode_release_rsp())
                    return
                if hdr[0] != MSG_STORE_RQ:
                    return  # protocol violation: abort
                (payload_len,) = struct.unpack("<Q", _recv_exact(sock, 8))
                if payload_len > MAX_PAYLOAD:
                    return
                payload = _recv_exact(sock, payload_len)
                try:
                    ds = parse_part10(payload)
                except DicomError:
                    sock.sendall(encode_store_rsp(StoreStatus.MALFORMED))
                    continue
                try:
                    status = server.handler(ds, payload)
                except Exception:
                    status = StoreStatus.STORAGE_ERROR
                sock.sendall(encode_store_rsp(int(status)))
        except (AssociationClosed, OSError):
            return  # mid-frame disconnect: abort silently, no partial effects
        finally:
            try:
                sock.close()
            except OSError:
                pass


class RdwServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, listen: Endpoint, handler: StoreHandler):
        self.ae_title = listen.called_ae
        self.handler = handler
        try:
            super().__init__((listen.host, listen.port), _RdwRequestHandler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {listen}: {exc}") from exc
        self._thread: Optional[threading.Thread] = None

    @property
    def endpoint(self) -> Endpoint:
        host, port = self.server_address[:2]
        return Endpoint(host=host, port=port, called_ae=self.ae_title)

    def start(self) -> "RdwServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread:
            self._thread.join(timeout=5)


def serve(listen: Endpoint, handler: StoreHandler) -> RdwServer:
    return RdwServer(listen, handler).start()
