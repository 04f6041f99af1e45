from __future__ import annotations

from typing import Optional

import structlog

from app.chain.tx_codec import TxCode, classify_payload
from app.common.digest import sha256_hex
from app.common.errors import TraceError
from app.ledger.ledger_backend import LedgerBackend
from app.record.record_codec import parse_record, salvage_record
from app.record.record_model import TraceRecord
from app.storage.blob_store import BlobStore, NotFound
from app.trace.trace_models import ChainIndex, IndexEntry

logger = structlog.get_logger(__name__)


def build_index(ledger: LedgerBackend, store: BlobStore, include_pending: bool = False) -> ChainIndex:
    """
    Сканирует весь леджер и собирает индекс трассировки.

    Verified payloads (confirmations >= depth) go to by_digest; Included ones
    under the depth and mempool payloads go to pending. The first on-chain
    occurrence of a digest wins, later ones become anomalies. Every anchored
    blob is read from the store; files that fail their hash or canonical
    check are salvaged so they still show up with failed verdicts.
    """
    tip = ledger.tip_height
    depth = ledger.confirmation_depth
    index = ChainIndex(tip_height=tip, confirmation_depth=depth, include_pending=include_pending)

    for entry in ledger.scan(0, tip):
        digest = entry.payload.digest
        known = index.entry(digest)
        if known is not None:
            index.anomalies.append(
                f"duplicate anchor of {digest} at height {entry.height} (first at height {known.height})"
            )
            continue
        confirmations = tip - entry.height + 1
        position = _position_in_block(ledger, entry.height, entry.txid)
        indexed = IndexEntry(
            digest=digest,
            txid=entry.txid,
            code=entry.payload.code,
            height=entry.height,
            position=position,
            confirmations=confirmations,
        )
        if confirmations >= depth:
            index.by_digest[digest] = indexed
        else:
            index.pending[digest] = indexed

    for tx in ledger.pending():
        payload = classify_payload(tx.payload_bytes)
        if payload is None or index.entry(payload.digest) is not None:
            continue
        index.pending[payload.digest] = IndexEntry(
            digest=payload.digest,
            txid=tx.txid,
            code=payload.code,
            height=None,
            position=None,
            confirmations=0,
        )

    discovery_order = list(index.by_digest) + list(index.pending)
    for digest in discovery_order:
        _load_record(index, store, digest, index.entry(digest).code)

    owners = _attribute(index, discovery_order)
    for digest in discovery_order:
        product = owners.get(digest)
        if product is None:
            continue
        if digest in index.by_digest or include_pending:
            index.by_product.setdefault(product, []).append(digest)
        else:
            index.pending_by_product.setdefault(product, []).append(digest)

    logger.debug(
        "index_built",
        tip=tip,
        verified=len(index.by_digest),
        pending=len(index.pending),
        products=len(index.by_product),
        anomalies=len(index.anomalies),
    )
    return index


def _position_in_block(ledger: LedgerBackend, height: int, txid: str) -> Optional[int]:
    inclusion = getattr(ledger, "inclusion", None)
    if inclusion is None:
        return None
    found = inclusion(txid)
    return found[1] if found is not None and found[0] == height else None


def _load_record(index: ChainIndex, store: BlobStore, digest: str, code: TxCode) -> None:
    try:
        data = store.read_unverified(digest)
    except NotFound:
        index.missing.add(digest)
        index.anomalies.append(f"missing blob {digest}")
        return

    intact = sha256_hex(data) == digest
    record: Optional[TraceRecord] = None
    if intact:
        try:
            record = parse_record(data)
        except TraceError as exc:
            index.anomalies.append(f"non-canonical record file {digest}: {exc}")
    else:
        logger.warning("stored_record_tampered", digest=digest)

    if record is None:
        record = salvage_record(data, kind_hint=code.kind)
    if record is None:
        index.anomalies.append(f"unreadable record file {digest}")
        if digest in index.by_digest:
            index.unattributed.add(digest)
        return
    index.records[digest] = record
    index.intact[digest] = intact


def _attribute(index: ChainIndex, order: list[str]) -> dict[str, str]:
    """
    Intact records belong to the product named inside them. A damaged
    record is attributed through its prev link or through a record whose
    prev names it, and only falls back to its own (possibly damaged)
    product field.
    """
    owners: dict[str, str] = {}
    for digest in order:
        record = index.records.get(digest)
        if record is not None and index.intact[digest] and record.product:
            owners[digest] = record.product

    successors: dict[str, list[str]] = {}
    for digest in order:
        record = index.records.get(digest)
        if record is not None and record.prev:
            successors.setdefault(record.prev, []).append(digest)

    changed = True
    while changed:
        changed = False
        for digest in order:
            if digest in owners or digest not in index.records:
                continue
            record = index.records[digest]
            linked = owners.get(record.prev) if record.prev else None
            if linked is None:
                linked = next((owners[s] for s in successors.get(digest, []) if s in owners), None)
            if linked is not None:
                owners[digest] = linked
                changed = True

    for digest in order:
        if digest in owners or digest not in index.records:
            continue
        product = index.records[digest].product
        if product:
            owners[digest] = product
        else:
            index.anomalies.append(f"record {digest} could not be attributed to a product")
            if digest in index.by_digest:
                index.unattributed.add(digest)
    return owners
