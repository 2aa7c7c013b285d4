"""The ``MZFD`` framed wire protocol spoken between parameter server and clients.

Frame layout: ``b"MZFD"`` + u8 message type + u32 little-endian payload
length + payload.  Payloads (all integers u32 little-endian):

====  ============  ==============================================
type  message       payload
====  ============  ==============================================
1     ClientHello   client_id, num_samples
2     GlobalModel   round, MZNN checkpoint bytes
3     LocalUpdate   round, num_samples, MZNN checkpoint bytes
4     Done          round, optionally followed by the final checkpoint
====  ============  ==============================================
"""
from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

MAGIC = b"MZFD"
HEADER = struct.Struct("<4sBI")
# a 1147-256-15 checkpoint is ~1.2 MB; anything far beyond that is corrupt
MAX_PAYLOAD = 16 * 1024 * 1024


class ProtocolError(Exception):
    pass


class PeerDisconnected(ConnectionError):
    """The peer closed the stream, possibly in the middle of a frame."""


@dataclass(frozen=True)
class ClientHello:
    client_id: int
    num_samples: int
    TYPE = 1


@dataclass(frozen=True)
class GlobalModel:
    round: int
    checkpoint: bytes
    TYPE = 2


@dataclass(frozen=True)
class LocalUpdate:
    round: int
    num_samples: int
    checkpoint: bytes
    TYPE = 3


@dataclass(frozen=True)
class Done:
    round: int
    checkpoint: bytes = b""
    TYPE = 4


Message = ClientHello | GlobalModel | LocalUpdate | Done

_U32 = struct.Struct("<I")
_U32x2 = struct.Struct("<II")


def _check_u32(*values):
    for v in values:
        if not 0 <= v < 2 ** 32:
            raise ProtocolError(f"value {v} does not fit in u32")


def encode_payload(msg: Message) -> bytes:
    if isinstance(msg, ClientHello):
        _check_u32(msg.client_id, msg.num_samples)
        return _U32x2.pack(msg.client_id, msg.num_samples)
    if isinstance(msg, GlobalModel):
        _check_u32(msg.round)
        return _U32.pack(msg.round) + msg.checkpoint
    if isinstance(msg, LocalUpdate):
        _check_u32(msg.round, msg.num_samples)
        return _U32x2.pack(msg.round, msg.num_samples) + msg.checkpoint
    if isinstance(msg, Done):
        _check_u32(msg.round)
        return _U32.pack(msg.round) + msg.checkpoint
    raise TypeError(f"not a protocol message: {msg!r}")


def encode(msg: Message) -> bytes:
    payload = encode_payload(msg)
    return HEADER.pack(MAGIC, msg.TYPE, len(payload)) + payload


def decode_header(header: bytes) -> tuple[int, int]:
    if len(header) != HEADER.size:
        raise ProtocolError("short frame header")
    magic, msg_type, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if msg_type not in (1, 2, 3, 4):
        raise ProtocolError(f"unknown message type {msg_type}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload length {length} exceeds limit")
    return msg_type, length


def decode_payload(msg_type: int, payload: bytes) -> Message:
    n = len(payload)
    if msg_type == 1:
        if n != 8:
            raise ProtocolError("ClientHello payload must be 8 bytes")
        return ClientHello(*_U32x2.unpack(payload))
    if msg_type == 2:
        if n < 4:
            raise ProtocolError("GlobalModel payload too short")
        return GlobalModel(_U32.unpack_from(payload)[0], bytes(payload[4:]))
    if msg_type == 3:
        if n < 8:
            raise ProtocolError("LocalUpdate payload too short")
        r, k = _U32x2.unpack_from(payload)
        return LocalUpdate(r, k, bytes(payload[8:]))
    if msg_type == 4:
        if n < 4:
            raise ProtocolError("Done payload too short")
        return Done(_U32.unpack_from(payload)[0], bytes(payload[4:]))
    raise ProtocolError(f"unknown message type {msg_type}")


def decode(frame: bytes) -> Message:
    """Decode exactly one complete frame."""
    msg_type, length = decode_header(frame[:HEADER.size])
    payload = frame[HEADER.size:]
    if len(payload) != length:
        raise ProtocolError(f"declared payload length {length}, got {len(payload)}")
    return decode_payload(msg_type, payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            if buf:
                raise ProtocolError(f"stream ended mid-frame ({len(buf)}/{n} bytes)")
            raise PeerDisconnected("peer closed the connection")
        buf += chunk
    return bytes(buf)


def read_message(sock: socket.socket) -> Message:
    """Block until one frame arrives.  Raises ``socket.timeout`` on timeout."""
    msg_type, length = decode_header(_recv_exact(sock, HEADER.size))
    payload = _recv_exact(sock, length) if length else b""
    return decode_payload(msg_type, payload)


def send_message(sock: socket.socket, msg: Message) -> None:
    sock.sendall(encode(msg))


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        raise ValueError(f"address {addr!r} is not host:port")
    return host or "127.0.0.1", int(port)
