"""Canonical tag-length-value byte encoding.

Every structure that gets signed, hashed, or put on the wire is serialized
the same way: a little-endian u16 field tag, a little-endian u32 payload
length, then the payload. Field order inside a structure is fixed, so each
structure has exactly one byte representation and signatures commit to it
unambiguously. Integers carried inside payloads are little-endian as well.
"""

from __future__ import annotations

import base64
import struct

from .errors import DecodeError

_HEADER = struct.Struct("<HI")


def encode_field(tag: int, payload: bytes) -> bytes:
    return _HEADER.pack(tag, len(payload)) + payload


class FieldWriter:
    """Accumulates TLV fields in a fixed order."""

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def put(self, tag: int, payload: bytes) -> "FieldWriter":
        self._parts.append(encode_field(tag, payload))
        return self

    def put_u16(self, tag: int, value: int) -> "FieldWriter":
        return self.put(tag, struct.pack("<H", value))

    def put_u32(self, tag: int, value: int) -> "FieldWriter":
        return self.put(tag, struct.pack("<I", value))

    def put_u64(self, tag: int, value: int) -> "FieldWriter":
        return self.put(tag, struct.pack("<Q", value))

    def put_str(self, tag: int, value: str) -> "FieldWriter":
        return self.put(tag, value.encode("utf-8"))

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class FieldReader:
    """Strict sequential reader: fields must appear in the expected order."""

    def __init__(self, buf: bytes) -> None:
        self._buf = buf
        self._pos = 0

    def take(self, tag: int) -> bytes:
        if self._pos + _HEADER.size > len(self._buf):
            raise DecodeError(f"truncated field header at offset {self._pos}")
        got, length = _HEADER.unpack_from(self._buf, self._pos)
        if got != tag:
            raise DecodeError(f"expected tag 0x{tag:04x}, found 0x{got:04x}")
        start = self._pos + _HEADER.size
        end = start + length
        if end > len(self._buf):
            raise DecodeError(f"field 0x{tag:04x} runs past end of buffer")
        self._pos = end
        return self._buf[start:end]

    def take_u16(self, tag: int) -> int:
        return self._unpack("<H", 2, tag)

    def take_u32(self, tag: int) -> int:
        return self._unpack("<I", 4, tag)

    def take_u64(self, tag: int) -> int:
        return self._unpack("<Q", 8, tag)

    def take_str(self, tag: int) -> str:
        try:
            return self.take(tag).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"field 0x{tag:04x} is not valid utf-8") from exc

    def _unpack(self, fmt: str, size: int, tag: int) -> int:
        payload = self.take(tag)
        if len(payload) != size:
            raise DecodeError(f"field 0x{tag:04x} has wrong integer width")
        return struct.unpack(fmt, payload)[0]

    def peek_tag(self) -> int:
        if self._pos + _HEADER.size > len(self._buf):
            raise DecodeError(f"truncated field header at offset {self._pos}")
        return _HEADER.unpack_from(self._buf, self._pos)[0]

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._buf)

    def finish(self) -> None:
        if not self.exhausted:
            raise DecodeError(f"{len(self._buf) - self._pos} trailing bytes")


def b64url_encode(data: bytes) -> str:
    """Base64url without padding, as used by the token format."""
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    pad = -len(text) % 4
    try:
        return base64.urlsafe_b64decode(text + "=" * pad)
    except (ValueError, TypeError) as exc:
        raise DecodeError("invalid base64url segment") from exc
