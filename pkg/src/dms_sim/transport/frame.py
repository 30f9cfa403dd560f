"""Timestamped messages and their wire encoding.

Frame layout (all integers big-endian)::

    magic "DMS1" | kind u8 | timestamp f64 | label_len u16 | label
                 | body_len u32 | body | seq u64
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

from ..errors import MalformedFrame

DATA, NULL, END = 0, 1, 2
KIND_NAMES = {DATA: "DATA", NULL: "NULL", END: "END"}

MAGIC = b"DMS1"
MAX_LABEL = 0xFFFF
MAX_BODY = 0xFFFFFFFF
MAX_SEQ = 0xFFFFFFFFFFFFFFFF

_HEAD = struct.Struct(">4sBdH")   # magic, kind, timestamp, label_len
_BODY_LEN = struct.Struct(">I")
_SEQ = struct.Struct(">Q")
HEADER_SIZE = _HEAD.size          # 15
MIN_FRAME = HEADER_SIZE + _BODY_LEN.size + _SEQ.size


@dataclass(frozen=True)
class Message:
    kind: int
    timestamp: float
    label: str = ""
    body: str = ""
    seq: int = 0

    def __post_init__(self):
        if self.kind not in KIND_NAMES:
            raise ValueError(f"invalid message kind {self.kind}")
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError(f"timestamp must be finite and >= 0, got {self.timestamp!r}")
        if len(self.label.encode("utf-8")) > MAX_LABEL:
            raise ValueError("label longer than 65535 bytes")
        if len(self.body.encode("utf-8")) > MAX_BODY:
            raise ValueError("body longer than 2^32-1 bytes")
        if self.kind != DATA and self.body:
            raise ValueError(f"{KIND_NAMES[self.kind]} messages carry no body")
        if not 0 <= self.seq <= MAX_SEQ:
            raise ValueError("seq must fit in 64 unsigned bits")

    def __str__(self) -> str:
        return (f"{KIND_NAMES[self.kind]}(t={self.timestamp!r}, label={self.label!r}, "
                f"body={self.body!r}, seq={self.seq})")


def encode(msg: Message) -> bytes:
    label = msg.label.encode("utf-8")
    body = msg.body.encode("utf-8")
    return b"".join((
        _HEAD.pack(MAGIC, msg.kind, msg.timestamp, len(label)),
        label,
        _BODY_LEN.pack(len(body)),
        body,
        _SEQ.pack(msg.seq),
    ))


def decode(data: bytes) -> Message:
    msg, end = decode_from(data, 0)
    if end != len(data):
        raise MalformedFrame(f"{len(data) - end} trailing bytes after frame")
    return msg


def decode_from(data: bytes, offset: int = 0) -> tuple[Message, int]:
    """Decode one frame starting at ``offset``; return it and the next offset."""
    view = memoryview(data)
    pos = offset
    if len(view) - pos < HEADER_SIZE:
        raise MalformedFrame("truncated header")
    magic, kind, ts, label_len = _HEAD.unpack_from(view, pos)
    if magic != MAGIC:
        raise MalformedFrame(f"bad magic {bytes(magic)!r}")
    if kind not in KIND_NAMES:
        raise MalformedFrame(f"invalid kind {kind}")
    pos += HEADER_SIZE
    label_raw = _take(view, pos, label_len, "label")
    pos += label_len
    if len(view) - pos < _BODY_LEN.size:
        raise MalformedFrame("truncated body length")
    (body_len,) = _BODY_LEN.unpack_from(view, pos)
    pos += _BODY_LEN.size
    body_raw = _take(view, pos, body_len, "body")
    pos += body_len
    if len(view) - pos < _SEQ.size:
        raise MalformedFrame("truncated sequence number")
    (seq,) = _SEQ.unpack_from(view, pos)
    pos += _SEQ.size
    try:
        label = label_raw.decode("utf-8")
        body = body_raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFrame(f"text field is not UTF-8: {exc}") from None
    try:
        return Message(kind, ts, label, body, seq), pos
    except ValueError as exc:
        raise MalformedFrame(str(exc)) from None


def _take(view: memoryview, pos: int, n: int, what: str) -> bytes:
    if len(view) - pos < n:
        raise MalformedFrame(f"truncated {what}")
    return bytes(view[pos:pos + n])


def read_frame(recv_exact) -> Message | None:
    """Read one frame using ``recv_exact(n) -> bytes``; None on clean EOF.

    ``recv_exact`` returns fewer than ``n`` bytes only at end of stream.
    """
    head = recv_exact(HEADER_SIZE)
    if not head:
        return None
    if len(head) < HEADER_SIZE:
        raise MalformedFrame("stream ended inside a frame header")
    label_len = struct.unpack_from(">H", head, HEADER_SIZE - 2)[0]
    label = recv_exact(label_len)
    blen_raw = recv_exact(_BODY_LEN.size)
    if len(label) < label_len or len(blen_raw) < _BODY_LEN.size:
        raise MalformedFrame("stream ended inside a frame")
    (body_len,) = _BODY_LEN.unpack(blen_raw)
    rest = recv_exact(body_len + _SEQ.size)
    if len(rest) < body_len + _SEQ.size:
        raise MalformedFrame("stream ended inside a frame")
    return decode(head + label + blen_raw + rest)
