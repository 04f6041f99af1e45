from __future__ import annotations

from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict

from app.common.digest import DIGEST_SIZE, Digest32, digest_from_bytes, digest_to_bytes
from app.common.errors import TraceError
from app.record.record_model import RecordKind

# --- Константы ---
OP_RETURN_MAX_BYTES = 80  # верхний предел данных в одной транзакции
CODE_SIZE = 2
PAYLOAD_SIZE = CODE_SIZE + DIGEST_SIZE  # 34


class PayloadError(TraceError):
    pass


class BadLength(PayloadError):
    pass


class UnknownCode(PayloadError):
    pass


class TxCode(Enum):
    IT = "IT"  # Initialization Transaction
    UT = "UT"  # Update Transaction
    RT = "RT"  # Revocation Transaction

    @property
    def wire(self) -> bytes:
        return self.value.encode("ascii")

    @property
    def kind(self) -> RecordKind:
        return _CODE_TO_KIND[self]

    @classmethod
    def for_kind(cls, kind: RecordKind) -> "TxCode":
        return _KIND_TO_CODE[kind]


_CODE_TO_KIND = {
    TxCode.IT: RecordKind.INIT,
    TxCode.UT: RecordKind.UPDATE,
    TxCode.RT: RecordKind.REVOKE,
}
_KIND_TO_CODE = {kind: code for code, kind in _CODE_TO_KIND.items()}
_WIRE_TO_CODE = {code.wire: code for code in TxCode}


class TxPayload(BaseModel):
    model_config = ConfigDict(frozen=True)

    code: TxCode
    digest: Digest32


def encode_payload(code: TxCode, digest: str) -> bytes:
    """
    Code schema first, file hash after it:
    bytes 0-1 ASCII code, bytes 2-33 raw SHA-256 digest.
    """
    return code.wire + digest_to_bytes(digest)


def decode_payload(data: bytes) -> TxPayload:
    if len(data) != PAYLOAD_SIZE:
        raise BadLength(f"trace payload must be {PAYLOAD_SIZE} bytes, got {len(data)}")
    code = _WIRE_TO_CODE.get(bytes(data[:CODE_SIZE]))
    if code is None:
        raise UnknownCode(f"unknown code bytes {bytes(data[:CODE_SIZE])!r}")
    return TxPayload(code=code, digest=digest_from_bytes(bytes(data[CODE_SIZE:])))


def classify_payload(data: bytes) -> Optional[TxPayload]:
    """
    Total filter for chain scanning: foreign payloads give None, never an error.
    """
    try:
        return decode_payload(data)
    except PayloadError:
        return None
