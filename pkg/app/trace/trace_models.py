from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from app.chain.tx_codec import TxCode
from app.common.errors import TraceError
from app.record.record_model import RecordKind, TraceRecord

# --- Имена проверок ---
HASH_ANCHORED = "hash_anchored"
CODE_MATCHES_KIND = "code_matches_kind"
SIGNATURE_VALID = "signature_valid"
SIGNER_AUTHORIZED = "signer_authorized"
SPEC_CONFORMANT = "spec_conformant"
TIMESTAMP_MONOTONE = "timestamp_monotone"

VERDICT_NAMES = (
    HASH_ANCHORED,
    CODE_MATCHES_KIND,
    SIGNATURE_VALID,
    SIGNER_AUTHORIZED,
    SPEC_CONFORMANT,
    TIMESTAMP_MONOTONE,
)


class TraceEngineError(TraceError):
    pass


class NoInitRecord(TraceEngineError):
    pass


class MultipleInitRecords(TraceEngineError):
    def __init__(self, product: str, digests: list[str]):
        super().__init__(f"product {product!r} has {len(digests)} init records: {', '.join(digests)}")
        self.product = product
        self.digests = digests


class UnknownDigest(TraceEngineError):
    pass


class BrokenChain(TraceEngineError):
    def __init__(self, missing: Optional[str], message: str):
        super().__init__(message)
        self.missing = missing


@dataclass(frozen=True)
class IndexEntry:
    """Where a trace payload sits on the ledger; height is None while in the mempool."""

    digest: str
    txid: str
    code: TxCode
    height: Optional[int]
    position: Optional[int]
    confirmations: int


@dataclass
class ChainIndex:
    tip_height: int
    confirmation_depth: int
    include_pending: bool = False
    by_digest: dict[str, IndexEntry] = field(default_factory=dict)
    pending: dict[str, IndexEntry] = field(default_factory=dict)
    by_product: dict[str, list[str]] = field(default_factory=dict)
    pending_by_product: dict[str, list[str]] = field(default_factory=dict)
    records: dict[str, TraceRecord] = field(default_factory=dict)
    intact: dict[str, bool] = field(default_factory=dict)
    missing: set[str] = field(default_factory=set)
    # verified digests whose product could not be determined
    unattributed: set[str] = field(default_factory=set)
    anomalies: list[str] = field(default_factory=list)

    def entry(self, digest: str) -> Optional[IndexEntry]:
        return self.by_digest.get(digest) or self.pending.get(digest)

    def products(self) -> list[str]:
        return sorted(self.by_product)

    def is_empty(self) -> bool:
        return not self.by_digest and not self.pending


@dataclass
class VerifiedState:
    record: TraceRecord
    digest: str
    txid: Optional[str]
    height: Optional[int]
    code: Optional[TxCode]
    verdicts: dict[str, bool]
    revoked: bool = False
    revoked_by: Optional[str] = None

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    @property
    def failed(self) -> list[str]:
        return [name for name in VERDICT_NAMES if not self.verdicts.get(name, False)]


@dataclass
class TraceReport:
    product: str
    init: VerifiedState
    states: list[VerifiedState]
    anomalies: list[str]
    tip_height: int
    detached: list[VerifiedState] = field(default_factory=list)
    pending: list[str] = field(default_factory=list)

    @property
    def current(self) -> VerifiedState:
        """Latest non-revoked update, or the init when there is none."""
        for state in reversed(self.states):
            if state.record.kind is RecordKind.UPDATE and not state.revoked:
                return state
        return self.init

    @property
    def all_verdicts_pass(self) -> bool:
        return all(state.passed for state in [self.init, *self.states, *self.detached])

    @property
    def healthy(self) -> bool:
        return not self.anomalies and self.all_verdicts_pass

    def find(self, digest: str) -> Optional[VerifiedState]:
        for state in [self.init, *self.states]:
            if state.digest == digest:
                return state
        return None


class FileStatus(Enum):
    ANCHORED = "Anchored"
    PENDING = "Pending"
    UNANCHORED = "Unanchored"


@dataclass(frozen=True)
class FileVerdict:
    status: FileStatus
    digest: str
    txid: Optional[str] = None
    height: Optional[int] = None
    code: Optional[TxCode] = None
    confirmations: int = 0

    def __bool__(self) -> bool:
        return self.status is FileStatus.ANCHORED
