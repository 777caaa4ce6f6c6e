"""odsp frame codec. The byte-level layout is documented in docs/odsp-protocol.md.

Every frame is a 10-byte big-endian header followed by the payload::

    version u8 (0x01) | type u8 | request_id u32 | payload_len u32 | payload

Responses echo the request id and set the high bit of the type.
"""
from __future__ import annotations

import socket
import struct

VERSION = 0x01
HEADER = struct.Struct("!BBII")
MAX_PAYLOAD = 4 * 1024 * 1024 + 1024

OPEN, STAT, READ, WRITE, COMMIT, CLOSE = 0x01, 0x02, 0x03, 0x04, 0x05, 0x06
RESPONSE = 0x80
NAMES = {OPEN: "OPEN", STAT: "STAT", READ: "READ", WRITE: "WRITE", COMMIT: "COMMIT", CLOSE: "CLOSE"}

# OPEN modes
AUTH, OPEN_READ, OPEN_WRITE, OPEN_RESUME = 0, 1, 2, 3
CRED_KINDS = {"none": 0, "password": 1, "token": 2}

# response status byte
OK, NOT_FOUND, DENIED, BAD_REQUEST, INTEGRITY, NO_SPACE, IO_ERROR, BAD_STATE = range(8)

U8 = struct.Struct("!B")
U16 = struct.Struct("!H")
U32 = struct.Struct("!I")
U64 = struct.Struct("!Q")
RANGE = struct.Struct("!QI")          # offset u64, length u32
READ_OK = struct.Struct("!BQI")       # status, size u64, crc u32


class ProtocolError(Exception):
    pass


def frame(ftype: int, request_id: int, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(VERSION, ftype, request_id, len(payload)) + payload


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            raise ConnectionError("peer closed the connection")
        got += k
    return bytes(buf)


def read_frame(sock: socket.socket) -> tuple[int, int, bytes]:
    version, ftype, rid, n = HEADER.unpack(recv_exact(sock, HEADER.size))
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version:#x}")
    if n > MAX_PAYLOAD:
        raise ProtocolError(f"frame payload {n} exceeds limit")
    return ftype, rid, recv_exact(sock, n) if n else b""


def pack_str(s: str | bytes) -> bytes:
    b = s.encode() if isinstance(s, str) else s
    if len(b) > 0xFFFF:
        raise ProtocolError("string field longer than 65535 bytes")
    return U16.pack(len(b)) + b


def unpack_str(buf: bytes, pos: int) -> tuple[bytes, int]:
    (n,) = U16.unpack_from(buf, pos)
    pos += 2
    if pos + n > len(buf):
        raise ProtocolError("truncated string field")
    return buf[pos:pos + n], pos + n


def open_auth(kind: str, principal: str, secret: bytes) -> bytes:
    return U8.pack(AUTH) + U8.pack(CRED_KINDS[kind]) + pack_str(principal) + pack_str(secret)


def open_read(path: str) -> bytes:
    return U8.pack(OPEN_READ) + pack_str(path)


def open_write(path: str, size: int, transfer_id: str, resume: bool) -> bytes:
    return U8.pack(OPEN_RESUME if resume else OPEN_WRITE) + pack_str(path) + U64.pack(size) + pack_str(transfer_id)


def read_req(offset: int, length: int) -> bytes:
    return RANGE.pack(offset, length)


def write_req(offset: int, data: bytes) -> bytes:
    return RANGE.pack(offset, len(data)) + data


def status_of(payload: bytes) -> int:
    if not payload:
        raise ProtocolError("empty response payload")
    return payload[0]


def error(status: int, message: str) -> bytes:
    return U8.pack(status) + message.encode("utf-8", "replace")
