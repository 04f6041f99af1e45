from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, NamedTuple, Optional

import structlog

from app.chain.tx_codec import TxCode, encode_payload
from app.common.errors import TraceError
from app.identity.identity_keystore import Keystore
from app.identity.identity_profile import DEFAULT_THRESHOLD, meets_threshold
from app.ledger.ledger_backend import LedgerBackend
from app.record.record_codec import canonicalize, sign_record
from app.record.record_conformance import missing_fields
from app.record.record_model import FieldSpec, RecordKind, TraceRecord, build_record, utc_second
from app.storage.blob_store import BlobStore
from app.trace.trace_engine import resolve_chain
from app.trace.trace_index import build_index
from app.trace.trace_models import TraceReport

logger = structlog.get_logger(__name__)


class PipelineError(TraceError):
    pass


class ThresholdNotMet(PipelineError):
    pass


class DuplicateInit(PipelineError):
    pass


class NotAuthorized(PipelineError):
    pass


class SpecViolation(PipelineError):
    def __init__(self, product: str, missing: list[str]):
        names = ", ".join(f'"{name}"' for name in missing)
        super().__init__(f"update for {product!r} is missing required field(s): {names}")
        self.missing = missing


class UnknownTarget(PipelineError):
    pass


class StaleEvent(PipelineError):
    pass


@dataclass
class TraceWorkspace:
    """Всё, с чем работает компания: леджер, хранилище, ключи."""

    ledger: LedgerBackend
    store: BlobStore
    keystore: Keystore
    threshold: int = DEFAULT_THRESHOLD


class Submission(NamedTuple):
    digest: str
    txid: str
    record: TraceRecord


def _utc_now() -> datetime:
    return utc_second(datetime.now(timezone.utc))


def _publish(ws: TraceWorkspace, record: TraceRecord, secret_key: bytes) -> Submission:
    """
    Sign, canonicalize, store the blob, then anchor its digest on the ledger.
    The blob goes first so an anchored digest is always fetchable.
    """
    signed = sign_record(record, secret_key)
    digest = ws.store.put(canonicalize(signed, include_signature=True))
    txid = ws.ledger.submit(encode_payload(TxCode.for_kind(record.kind), digest))
    logger.info(
        "record_published",
        kind=record.kind.value,
        product=record.product,
        digest=digest,
        txid=txid,
    )
    return Submission(digest, txid, signed)


def _company_report(ws: TraceWorkspace, product: str) -> TraceReport:
    index = build_index(ws.ledger, ws.store, include_pending=True)
    return resolve_chain(product, index, ws.keystore.public_key)


def _chain_tip(report: TraceReport):
    return report.states[-1] if report.states else report.init


def _authorize(report: TraceReport, signer: str) -> None:
    if signer != report.init.record.signer:
        raise NotAuthorized(
            f"{signer} may not extend {report.product!r}: only the init signer "
            f"{report.init.record.signer} can"
        )


def _timestamp_after_tip(report: TraceReport, moment: Optional[datetime]) -> datetime:
    timestamp = utc_second(moment) if moment is not None else _utc_now()
    tip_time = _chain_tip(report).record.timestamp
    if tip_time is not None and timestamp < tip_time:
        raise StaleEvent(
            f"timestamp {timestamp.isoformat()} is older than the chain tip of {report.product!r}"
        )
    return timestamp


def init_product(
    ws: TraceWorkspace,
    product: str,
    schema: Iterable[FieldSpec],
    signer: str,
    now: Optional[datetime] = None,
) -> Submission:
    score = ws.keystore.trust_score(signer)
    if not meets_threshold(score, ws.threshold):
        raise ThresholdNotMet(f"signer {signer} has trust score {score}, threshold is {ws.threshold}")

    index = build_index(ws.ledger, ws.store, include_pending=True)
    existing = [
        digest
        for digest in index.by_product.get(product, [])
        if index.entry(digest).code is TxCode.IT
    ]
    if existing:
        raise DuplicateInit(f"product {product!r} already has an init record {existing[0]}")

    record = build_record(
        kind=RecordKind.INIT,
        product=product,
        timestamp=now or _utc_now(),
        schema=tuple(schema),
        signer=signer,
    )
    return _publish(ws, record, ws.keystore.secret_key(signer))


def update_product(
    ws: TraceWorkspace,
    product: str,
    state: dict[str, str],
    signer: str,
    now: Optional[datetime] = None,
) -> Submission:
    report = _company_report(ws, product)
    _authorize(report, signer)

    missing = missing_fields(state, report.init.record)
    if missing:
        raise SpecViolation(product, missing)

    record = build_record(
        kind=RecordKind.UPDATE,
        product=product,
        prev=_chain_tip(report).digest,
        timestamp=_timestamp_after_tip(report, now),
        state=state,
        signer=signer,
    )
    return _publish(ws, record, ws.keystore.secret_key(signer))


def revoke_product(
    ws: TraceWorkspace,
    product: str,
    target: str,
    reason: Optional[str],
    signer: str,
    now: Optional[datetime] = None,
) -> Submission:
    report = _company_report(ws, product)
    _authorize(report, signer)

    state = next((s for s in report.states if s.digest == target), None)
    if state is None:
        raise UnknownTarget(f"{target} is not a state in the chain of {product!r}")
    if state.record.kind is not RecordKind.UPDATE:
        raise UnknownTarget(f"{target} is not an update record")
    revoked_by = state.revoked_by or next(
        (s.digest for s in report.states if s.record.kind is RecordKind.REVOKE and s.record.revokes == target),
        None,
    )
    if revoked_by is not None:
        raise UnknownTarget(f"{target} is already revoked by {revoked_by}")

    record = build_record(
        kind=RecordKind.REVOKE,
        product=product,
        prev=_chain_tip(report).digest,
        timestamp=_timestamp_after_tip(report, now),
        revokes=target,
        reason=reason,
        signer=signer,
    )
    return _publish(ws, record, ws.keystore.secret_key(signer))
