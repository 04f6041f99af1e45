import random

import pytest

from app.chain.tx_codec import (
    OP_RETURN_MAX_BYTES,
    PAYLOAD_SIZE,
    BadLength,
    TxCode,
    UnknownCode,
    classify_payload,
    decode_payload,
    encode_payload,
)
from app.record.record_model import RecordKind

EMPTY_SHA256 = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_wire_codes():
    assert TxCode.IT.wire == b"\x49\x54"
    assert TxCode.UT.wire == b"\x55\x54"
    assert TxCode.RT.wire == b"\x52\x54"


def test_encode_zero_digest():
    payload = encode_payload(TxCode.IT, "00" * 32)
    assert payload == b"IT" + bytes(32)
    assert len(payload) == PAYLOAD_SIZE == 34


def test_encode_empty_input_digest():
    payload = encode_payload(TxCode.UT, EMPTY_SHA256)
    assert payload[:2] == bytes.fromhex("5554")
    assert payload[2:] == bytes.fromhex(EMPTY_SHA256)
    assert len(payload) <= OP_RETURN_MAX_BYTES


def test_decode_roundtrip():
    digest = random.Random(7).randbytes(32).hex()
    decoded = decode_payload(encode_payload(TxCode.RT, digest))
    assert decoded.code is TxCode.RT
    assert decoded.digest == digest


def test_decode_bad_length():
    with pytest.raises(BadLength):
        decode_payload(b"UT" + bytes(31))


def test_decode_unknown_code():
    with pytest.raises(UnknownCode):
        decode_payload(b"XX" + bytes(32))


def test_codes_are_case_sensitive():
    with pytest.raises(UnknownCode):
        decode_payload(b"it" + bytes(32))


def test_classify_is_total():
    rng = random.Random(11)
    assert classify_payload(b"") is None
    assert classify_payload(b"\x00" + rng.randbytes(79)) is None
    assert classify_payload(encode_payload(TxCode.UT, EMPTY_SHA256)).code is TxCode.UT


def test_code_kind_correspondence():
    for code, kind in [(TxCode.IT, RecordKind.INIT), (TxCode.UT, RecordKind.UPDATE), (TxCode.RT, RecordKind.REVOKE)]:
        assert code.kind is kind
        assert TxCode.for_kind(kind) is code
