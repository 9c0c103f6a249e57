"""Wire field encoding round-trips and malformed-input rejection."""

import pytest

from ccxtrust.encoding import (
    FieldReader,
    FieldWriter,
    b64url_decode,
    b64url_encode,
    encode_field,
)
from ccxtrust.errors import DecodeError


# ---------------------------------------------------------------------------
# TLV round trips
# ---------------------------------------------------------------------------

def test_single_field_layout():
    raw = encode_field(0x0102, b"abc")
    # u16 tag, u32 length, payload; header integers are little-endian
    assert raw == bytes.fromhex("0201") + bytes.fromhex("03000000") + b"abc"


def test_writer_reader_round_trip():
    w = FieldWriter()
    w.put(1, b"alpha")
    w.put_u16(2, 0xBEEF)
    w.put_u32(3, 0xDEADBEEF)
    w.put_u64(4, 2**40 + 7)
    w.put_str(5, "owner-ca")
    r = FieldReader(w.getvalue())
    assert r.take(1) == b"alpha"
    assert r.take_u16(2) == 0xBEEF
    assert r.take_u32(3) == 0xDEADBEEF
    assert r.take_u64(4) == 2**40 + 7
    assert r.take_str(5) == "owner-ca"
    assert r.exhausted
    r.finish()


def test_empty_payload_round_trip():
    raw = FieldWriter().put(9, b"").getvalue()
    assert FieldReader(raw).take(9) == b""


def test_peek_tag_does_not_consume():
    raw = FieldWriter().put(7, b"x").getvalue()
    r = FieldReader(raw)
    assert r.peek_tag() == 7
    assert r.peek_tag() == 7
    assert r.take(7) == b"x"


# ---------------------------------------------------------------------------
# Malformed input
# ---------------------------------------------------------------------------

def test_wrong_tag_rejected():
    raw = FieldWriter().put(1, b"x").getvalue()
    with pytest.raises(DecodeError):
        FieldReader(raw).take(2)


def test_truncated_header_rejected():
    raw = FieldWriter().put(1, b"abcdef").getvalue()
    with pytest.raises(DecodeError):
        FieldReader(raw[:3]).take(1)


def test_truncated_payload_rejected():
    raw = FieldWriter().put(1, b"abcdef").getvalue()
    with pytest.raises(DecodeError):
        FieldReader(raw[:-2]).take(1)


def test_trailing_garbage_rejected_by_finish():
    raw = FieldWriter().put(1, b"x").getvalue() + b"\x00"
    r = FieldReader(raw)
    r.take(1)
    with pytest.raises(DecodeError):
        r.finish()


def test_integer_width_enforced():
    raw = FieldWriter().put(2, b"\x01\x02\x03").getvalue()  # 3 bytes, not 2
    with pytest.raises(DecodeError):
        FieldReader(raw).take_u16(2)


# ---------------------------------------------------------------------------
# base64url
# ---------------------------------------------------------------------------

def test_b64url_round_trip_various_lengths():
    for n in range(0, 70):
        data = bytes(range(n))
        text = b64url_encode(data)
        assert "=" not in text
        assert "+" not in text and "/" not in text
        assert b64url_decode(text) == data


def test_b64url_decode_rejects_bad_text():
    with pytest.raises(DecodeError):
        b64url_decode("!!!not base64!!!")
