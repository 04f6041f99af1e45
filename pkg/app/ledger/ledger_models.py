from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Annotated, NamedTuple, Optional

from pydantic import BaseModel, ConfigDict, Field, StringConstraints, field_validator

from app.chain.tx_codec import OP_RETURN_MAX_BYTES, TxPayload
from app.common.digest import ZERO_DIGEST, Digest32, sha256_hex

HexBytes = Annotated[str, StringConstraints(pattern=r"^([0-9a-f]{2})*$")]


class TxStatus(Enum):
    PENDING = "Pending"
    INCLUDED = "Included"
    VERIFIED = "Verified"


class LedgerConfig(BaseModel):
    """
    Параметры симулятора. 600 s x 3 blocks reproduces the
    "10 minutes to execute, 30 minutes to verify" latency.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    block_interval: int = Field(default=600, gt=0)
    confirmation_depth: int = Field(default=3, ge=1)
    base_fee: int = Field(default=1000, ge=0)
    per_byte_fee: int = Field(default=10, ge=0)
    max_payload: int = OP_RETURN_MAX_BYTES
    genesis_time: int = Field(default=0, ge=0)

    @field_validator("max_payload")
    @classmethod
    def _fixed_cap(cls, value: int) -> int:
        if value != OP_RETURN_MAX_BYTES:
            raise ValueError(f"max_payload is fixed at {OP_RETURN_MAX_BYTES}")
        return value

    def fee_for(self, payload: bytes) -> int:
        return self.base_fee + self.per_byte_fee * len(payload)


def canonical_json(data: dict) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")


class ChainTx(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    txid: Digest32
    payload: HexBytes
    fee: int
    submitted_at: int
    nonce: int = 0

    @property
    def payload_bytes(self) -> bytes:
        return bytes.fromhex(self.payload)

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.model_dump(exclude={"txid"}))

    def computed_txid(self) -> str:
        return sha256_hex(self.canonical_bytes())

    @classmethod
    def create(cls, payload: bytes, fee: int, submitted_at: int, nonce: int) -> "ChainTx":
        unsigned = {"payload": payload.hex(), "fee": fee, "submitted_at": submitted_at, "nonce": nonce}
        return cls(txid=sha256_hex(canonical_json(unsigned)), **unsigned)


class Block(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    height: int = Field(ge=0)
    prev_block_hash: Digest32
    timestamp: int
    txs: tuple[ChainTx, ...] = ()
    block_hash: Digest32

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.model_dump(exclude={"block_hash"}))

    def computed_hash(self) -> str:
        return sha256_hex(self.canonical_bytes())

    @classmethod
    def create(
        cls, height: int, prev_block_hash: str, timestamp: int, txs: tuple[ChainTx, ...]
    ) -> "Block":
        unsigned = {
            "height": height,
            "prev_block_hash": prev_block_hash,
            "timestamp": timestamp,
            "txs": [tx.model_dump() for tx in txs],
        }
        return cls(block_hash=sha256_hex(canonical_json(unsigned)), **unsigned)

    @classmethod
    def genesis(cls, timestamp: int = 0) -> "Block":
        return cls.create(0, ZERO_DIGEST, timestamp, ())


@dataclass(frozen=True)
class ChainIntegrity:
    ok: bool
    bad_height: Optional[int] = None
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


class ScanEntry(NamedTuple):
    height: int
    txid: str
    payload: TxPayload
