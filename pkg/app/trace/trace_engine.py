from __future__ import annotations

from typing import Mapping, NamedTuple, Optional

import structlog

from app.chain.tx_codec import TxCode
from app.common.errors import TraceError
from app.identity.identity_keys import identity_id_for
from app.identity.identity_profile import KeyResolver
from app.record.record_codec import hash_record, record_signature_valid
from app.record.record_conformance import check_conformance
from app.record.record_model import RecordKind, TraceRecord
from app.trace.trace_models import (
    CODE_MATCHES_KIND,
    HASH_ANCHORED,
    SIGNATURE_VALID,
    SIGNER_AUTHORIZED,
    SPEC_CONFORMANT,
    TIMESTAMP_MONOTONE,
    BrokenChain,
    ChainIndex,
    FileStatus,
    FileVerdict,
    MultipleInitRecords,
    NoInitRecord,
    TraceReport,
    UnknownDigest,
    VerifiedState,
)

logger = structlog.get_logger(__name__)


class ChainOrder(NamedTuple):
    states: list[str]
    fork_at: Optional[str] = None
    branches: tuple[str, ...] = ()


def order_chain(init_digest: str, records: Mapping[str, TraceRecord]) -> ChainOrder:
    """
    Порядок состояний по prev-ссылкам, начиная от init.

    At each digest there must be at most one successor; two or more is a
    fork and the walk stops there. Records that are never reached are simply
    left out of the result.
    """
    successors: dict[str, list[str]] = {}
    for digest, record in records.items():
        if digest != init_digest and record.prev:
            successors.setdefault(record.prev, []).append(digest)

    ordered: list[str] = []
    seen = {init_digest}
    current = init_digest
    while True:
        following = sorted(successors.get(current, []))
        if not following:
            return ChainOrder(ordered)
        if len(following) > 1:
            return ChainOrder(ordered, fork_at=current, branches=tuple(following))
        current = following[0]
        if current in seen:
            return ChainOrder(ordered)
        seen.add(current)
        ordered.append(current)


class _KeyCache:
    def __init__(self, resolve: KeyResolver):
        self._resolve = resolve
        self._keys: dict[str, Optional[bytes]] = {}

    def __call__(self, identity_id: str) -> Optional[bytes]:
        if identity_id not in self._keys:
            key = self._resolve(identity_id)
            if key is not None and identity_id_for(key) != identity_id:
                key = None
            self._keys[identity_id] = key
        return self._keys[identity_id]


def _is_spec_conformant(record: TraceRecord, init: TraceRecord) -> bool:
    if record.kind is RecordKind.INIT:
        return bool(record.schema_fields)
    if record.kind is not RecordKind.UPDATE:
        return True
    try:
        return not check_conformance(record, init)
    except (TraceError, AttributeError, TypeError):
        return False


def _verify_state(
    index: ChainIndex,
    digest: str,
    init: TraceRecord,
    previous: Optional[TraceRecord],
    keys: _KeyCache,
) -> VerifiedState:
    record = index.records[digest]
    entry = index.entry(digest)

    signature_valid = False
    if record.signer:
        public_key = keys(record.signer)
        signature_valid = public_key is not None and record_signature_valid(record, public_key)

    monotone = record.timestamp is not None
    if monotone and previous is not None and previous.timestamp is not None:
        monotone = previous.timestamp <= record.timestamp

    verdicts = {
        HASH_ANCHORED: digest in index.by_digest and index.intact.get(digest, False),
        CODE_MATCHES_KIND: entry is not None and record.kind is entry.code.kind,
        SIGNATURE_VALID: signature_valid,
        SIGNER_AUTHORIZED: bool(record.signer) and record.signer == init.signer,
        SPEC_CONFORMANT: _is_spec_conformant(record, init),
        TIMESTAMP_MONOTONE: monotone,
    }
    return VerifiedState(
        record=record,
        digest=digest,
        txid=entry.txid if entry else None,
        height=entry.height if entry else None,
        code=entry.code if entry else None,
        verdicts=verdicts,
    )


def _find_init(product: str, index: ChainIndex, digests: list[str]) -> str:
    inits = [d for d in digests if index.entry(d) is not None and index.entry(d).code is TxCode.IT]
    if not inits:
        raise NoInitRecord(f"no init record for product {product!r}")
    if len(inits) > 1:
        raise MultipleInitRecords(product, inits)
    return inits[0]


def _apply_revocations(chain: list[VerifiedState], anomalies: list[str]) -> None:
    position = {state.digest: i for i, state in enumerate(chain)}
    for i, state in enumerate(chain):
        if state.record.kind is not RecordKind.REVOKE:
            continue
        target = state.record.revokes
        j = position.get(target)
        if not state.passed:
            anomalies.append(f"ineffective revocation {state.digest}: revocation record failed verification")
        elif j is None or j >= i:
            anomalies.append(f"ineffective revocation {state.digest}: {target} is not an earlier state")
        elif chain[j].record.kind is not RecordKind.UPDATE:
            anomalies.append(f"ineffective revocation {state.digest}: {target} is not an update")
        elif chain[j].revoked:
            anomalies.append(f"ineffective revocation {state.digest}: {target} already revoked")
        else:
            chain[j].revoked = True
            chain[j].revoked_by = state.digest


def resolve_chain(product: str, index: ChainIndex, resolve_key: KeyResolver) -> TraceReport:
    """
    Восстанавливает полную историю продукта от init-записи по prev-ссылкам
    и проверяет каждое звено.
    """
    digests = index.by_product.get(product)
    if not digests:
        raise NoInitRecord(f"no records for product {product!r}")
    init_digest = _find_init(product, index, digests)
    records = {d: index.records[d] for d in digests}
    init = records[init_digest]
    keys = _KeyCache(resolve_key)
    anomalies: list[str] = []

    order = order_chain(init_digest, records)
    if order.fork_at is not None:
        anomalies.append(f"fork after {order.fork_at}: branches {', '.join(order.branches)}")

    chain = [_verify_state(index, init_digest, init, None, keys)]
    for digest in order.states:
        chain.append(_verify_state(index, digest, init, chain[-1].record, keys))
    _apply_revocations(chain, anomalies)

    reached = {init_digest, *order.states}
    detached = []
    for digest in digests:
        if digest in reached:
            continue
        record = records[digest]
        previous = records.get(record.prev) if record.prev else None
        detached.append(_verify_state(index, digest, init, previous, keys))
        if record.prev in index.missing:
            anomalies.append(f"missing blob {record.prev}")
        anomalies.append(f"record {digest} is not on the resolved chain")

    for state in chain + detached:
        if not state.verdicts[SIGNER_AUTHORIZED]:
            anomalies.append(f"unauthorized signer {state.record.signer} on {state.digest}")

    pending = list(index.pending_by_product.get(product, []))
    anomalies.extend(f"unverified tx for {digest}" for digest in pending)
    # a damaged record with no known owner may belong to any product
    related = [*digests, *index.unattributed]
    anomalies.extend(a for a in index.anomalies if any(d in a for d in related))

    report = TraceReport(
        product=product,
        init=chain[0],
        states=chain[1:],
        anomalies=anomalies,
        tip_height=index.tip_height,
        detached=detached,
        pending=pending,
    )
    logger.debug(
        "chain_resolved",
        product=product,
        states=len(report.states),
        detached=len(detached),
        anomalies=len(anomalies),
    )
    return report


def backward_trace(digest: str, index: ChainIndex, resolve_key: KeyResolver) -> list[VerifiedState]:
    """
    The prev-chain from the given state back to the init record, origin first.
    """
    if digest not in index.records:
        raise UnknownDigest(f"digest {digest} is not indexed")

    walked = [digest]
    record = index.records[digest]
    while index.entry(walked[-1]).code is not TxCode.IT:
        prev = record.prev
        if prev is None or prev not in index.records:
            raise BrokenChain(prev, f"prev link {prev} of {walked[-1]} is missing from store or ledger")
        if prev in walked:
            raise BrokenChain(prev, f"prev links loop back to {prev}")
        walked.append(prev)
        record = index.records[prev]
    walked.reverse()

    init = index.records[walked[0]]
    if init.product and init.product in index.by_product:
        try:
            report = resolve_chain(init.product, index, resolve_key)
        except TraceError:
            report = None
        if report is not None:
            found = [report.find(d) for d in walked]
            if all(state is not None for state in found):
                return found

    keys = _KeyCache(resolve_key)
    chain = [_verify_state(index, walked[0], init, None, keys)]
    for state_digest in walked[1:]:
        chain.append(_verify_state(index, state_digest, init, chain[-1].record, keys))
    _apply_revocations(chain, [])
    return chain


def forward_trace(
    criteria: Mapping[str, str],
    index: ChainIndex,
    resolve_key: KeyResolver,
    historical: bool = False,
) -> list[tuple[str, VerifiedState]]:
    """
    Products whose latest verified non-revoked state matches every criterion
    exactly. A state that fails any verdict never matches and never stands
    in as the current one. With historical=True any verified non-revoked
    update in the history may match; the newest matching one is returned.
    """
    found = []
    for product in index.products():
        try:
            report = resolve_chain(product, index, resolve_key)
        except TraceError as exc:
            logger.debug("forward_trace_skipped", product=product, error=str(exc))
            continue

        candidates = [
            s
            for s in reversed(report.states)
            if s.record.kind is RecordKind.UPDATE and not s.revoked and s.passed
        ]
        if not candidates and report.init.passed:
            candidates = [report.init]
        if not historical:
            candidates = candidates[:1]

        for state in candidates:
            fields = state.record.state or {}
            if all(fields.get(name) == value for name, value in criteria.items()):
                found.append((product, state))
                break
    return found


def verify_file_against_chain(file_bytes: bytes, index: ChainIndex) -> FileVerdict:
    digest = hash_record(file_bytes)
    entry = index.by_digest.get(digest)
    if entry is not None:
        status = FileStatus.ANCHORED
    else:
        entry = index.pending.get(digest)
        status = FileStatus.PENDING if entry is not None else FileStatus.UNANCHORED
    if entry is None:
        return FileVerdict(status=status, digest=digest)
    return FileVerdict(
        status=status,
        digest=digest,
        txid=entry.txid,
        height=entry.height,
        code=entry.code,
        confirmations=entry.confirmations,
    )
