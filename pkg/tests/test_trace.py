import json

import pytest

from app.chain.tx_codec import TxCode, encode_payload
from app.record.record_codec import canonicalize, hash_record
from app.record.record_model import RecordKind
from app.trace.trace_engine import backward_trace, forward_trace, order_chain, resolve_chain, verify_file_against_chain
from app.trace.trace_index import build_index
from app.trace.trace_models import (
    CODE_MATCHES_KIND,
    HASH_ANCHORED,
    SIGNATURE_VALID,
    SIGNER_AUTHORIZED,
    SPEC_CONFORMANT,
    TIMESTAMP_MONOTONE,
    BrokenChain,
    FileStatus,
    MultipleInitRecords,
    NoInitRecord,
    UnknownDigest,
)
from app.trace.trace_report_renderer import render_json, render_text

from conftest import SETTLE_SECONDS


@pytest.fixture
def resolve(keypair, other_keypair):
    return {kp.identity_id: kp.public_key for kp in (keypair, other_keypair)}.get


@pytest.fixture
def build_chain(make_record, anchor, keypair):
    """
    Anchors init + n updates for one product and returns
    (digests, records), init first.
    """

    def _build(updates=2, product="milk-42", locations=None):
        sk, signer = keypair.secret_key, keypair.identity_id
        init = make_record(RecordKind.INIT, sk, signer, product=product)
        records, digests = [init], [anchor(init)]
        for i in range(updates):
            location = locations[i] if locations else f"site-{i}"
            update = make_record(
                RecordKind.UPDATE,
                sk,
                signer,
                product=product,
                prev=digests[-1],
                minutes=i + 1,
                state={"origin": "farm-3", "batch": f"B{i}", "location": location},
            )
            records.append(update)
            digests.append(anchor(update))
        return digests, records

    return _build


def _blob_path(store, digest):
    return store.root / digest[:2] / digest[2:]


# ---------- индекс ----------

def test_empty_ledger_gives_empty_index(ledger, store):
    index = build_index(ledger, store)
    assert index.is_empty()
    assert index.by_product == {}


def test_verified_init_is_indexed(ledger, store, build_chain):
    digests, _ = build_chain(updates=0)
    ledger.advance(SETTLE_SECONDS)
    index = build_index(ledger, store)
    assert index.by_product == {"milk-42": [digests[0]]}


def test_unverified_update_is_pending(ledger, store, build_chain, make_record, anchor, keypair):
    digests, _ = build_chain(updates=1)
    ledger.advance(SETTLE_SECONDS)
    late = make_record(
        RecordKind.UPDATE, keypair.secret_key, keypair.identity_id, prev=digests[-1], minutes=9,
        state={"origin": "o", "batch": "b"},
    )
    late_digest = anchor(late)
    ledger.advance(600)

    index = build_index(ledger, store)
    assert late_digest not in index.by_digest
    assert late_digest in index.pending
    assert sorted(index.by_product["milk-42"]) == sorted(digests)
    assert index.pending_by_product["milk-42"] == [late_digest]

    with_pending = build_index(ledger, store, include_pending=True)
    assert sorted(with_pending.by_product["milk-42"]) == sorted(digests + [late_digest])
    assert with_pending.by_product["milk-42"][-1] == late_digest


def test_duplicate_anchor_first_occurrence_wins(ledger, store, build_chain):
    digests, _ = build_chain(updates=0)
    ledger.advance(600)
    ledger.submit(encode_payload(TxCode.IT, digests[0]))
    ledger.advance(SETTLE_SECONDS)

    index = build_index(ledger, store)
    assert index.by_digest[digests[0]].height == 1
    assert any("duplicate anchor" in a for a in index.anomalies)


# ---------- восстановление цепочки ----------

def test_init_only(ledger, store, build_chain, resolve):
    digests, _ = build_chain(updates=0)
    ledger.advance(SETTLE_SECONDS)
    report = resolve_chain("milk-42", build_index(ledger, store), resolve)

    assert report.init.digest == digests[0]
    assert report.init.passed
    assert report.states == []
    assert report.healthy
    assert report.current is report.init


def test_revocation_marks_target(ledger, store, build_chain, make_record, anchor, keypair, resolve):
    digests, _ = build_chain(updates=2)
    revoke = make_record(
        RecordKind.REVOKE, keypair.secret_key, keypair.identity_id, prev=digests[-1], minutes=5,
        revokes=digests[1], reason="wrong batch",
    )
    rt = anchor(revoke)
    ledger.advance(SETTLE_SECONDS)

    report = resolve_chain("milk-42", build_index(ledger, store), resolve)
    assert [s.digest for s in report.states] == [digests[1], digests[2], rt]
    assert report.states[0].revoked and report.states[0].revoked_by == rt
    assert not report.states[1].revoked
    assert report.all_verdicts_pass
    assert report.healthy
    assert report.current.digest == digests[2]


def test_chain_order_soundness(ledger, store, build_chain, resolve):
    digests, _ = build_chain(updates=4)
    ledger.advance(SETTLE_SECONDS)
    report = resolve_chain("milk-42", build_index(ledger, store), resolve)

    assert report.states[0].record.prev == report.init.digest
    for earlier, later in zip(report.states, report.states[1:]):
        assert later.record.prev == earlier.digest


def test_foreign_signer_is_unauthorized(ledger, store, build_chain, make_record, anchor, other_keypair, resolve):
    digests, _ = build_chain(updates=1)
    intruder = make_record(
        RecordKind.UPDATE, other_keypair.secret_key, other_keypair.identity_id, prev=digests[-1], minutes=3,
        state={"origin": "elsewhere", "batch": "X"},
    )
    bad = anchor(intruder)
    ledger.advance(SETTLE_SECONDS)

    report = resolve_chain("milk-42", build_index(ledger, store), resolve)
    state = report.find(bad)
    assert state.verdicts[SIGNATURE_VALID]
    assert not state.verdicts[SIGNER_AUTHORIZED]
    assert any("unauthorized signer" in a for a in report.anomalies)
    assert not report.healthy


def test_unknown_signer_fails_signature(ledger, store, build_chain, resolve):
    build_chain(updates=1)
    ledger.advance(SETTLE_SECONDS)
    report = resolve_chain("milk-42", build_index(ledger, store), lambda identity: None)
    assert not report.init.verdicts[SIGNATURE_VALID]


def test_nonconformant_update_flagged(ledger, store, build_chain, make_record, anchor, keypair, resolve):
    digests, _ = build_chain(updates=1)
    partial = make_record(
        RecordKind.UPDATE, keypair.secret_key, keypair.identity_id, prev=digests[-1], minutes=4,
        state={"origin": "farm-3"},
    )
    bad = anchor(partial)
    ledger.advance(SETTLE_SECONDS)

    state = resolve_chain("milk-42", build_index(ledger, store), resolve).find(bad)
    assert not state.verdicts[SPEC_CONFORMANT]
    assert state.verdicts[SIGNATURE_VALID]


def test_wrong_code_flagged(ledger, store, build_chain, make_record, keypair, resolve):
    digests, _ = build_chain(updates=1)
    update = make_record(
        RecordKind.UPDATE, keypair.secret_key, keypair.identity_id, prev=digests[-1], minutes=4,
        state={"origin": "o", "batch": "b"},
    )
    digest = store.put(canonicalize(update))
    ledger.submit(encode_payload(TxCode.RT, digest))
    ledger.advance(SETTLE_SECONDS)

    state = resolve_chain("milk-42", build_index(ledger, store), resolve).find(digest)
    assert not state.verdicts[CODE_MATCHES_KIND]


def test_timestamp_going_backwards_flagged(ledger, store, build_chain, make_record, anchor, keypair, resolve):
    digests, _ = build_chain(updates=2)
    early = make_record(
        RecordKind.UPDATE, keypair.secret_key, keypair.identity_id, prev=digests[-1], minutes=-30,
        state={"origin": "o", "batch": "b"},
    )
    bad = anchor(early)
    ledger.advance(SETTLE_SECONDS)

    state = resolve_chain("milk-42", build_index(ledger, store), resolve).find(bad)
    assert not state.verdicts[TIMESTAMP_MONOTONE]


def test_fork_stops_chain(ledger, store, build_chain, make_record, anchor, keypair, resolve):
    digests, _ = build_chain(updates=1)
    branches = [
        anchor(
            make_record(
                RecordKind.UPDATE, keypair.secret_key, keypair.identity_id, prev=digests[-1], minutes=5,
                state={"origin": "o", "batch": name},
            )
        )
        for name in ("left", "right")
    ]
    ledger.advance(SETTLE_SECONDS)

    report = resolve_chain("milk-42", build_index(ledger, store), resolve)
    assert [s.digest for s in report.states] == [digests[1]]
    assert sorted(s.digest for s in report.detached) == sorted(branches)
    assert any(a.startswith(f"fork after {digests[1]}") for a in report.anomalies)


def test_tampered_blob_fails_hash_anchored(ledger, store, build_chain, resolve):
    digests, _ = build_chain(updates=2)
    ledger.advance(SETTLE_SECONDS)
    path = _blob_path(store, digests[1])
    path.write_bytes(path.read_bytes().replace(b"farm-3", b"farm-4", 1))

    report = resolve_chain("milk-42", build_index(ledger, store), resolve)
    state = report.find(digests[1])
    assert not state.verdicts[HASH_ANCHORED]
    assert not state.verdicts[SIGNATURE_VALID]
    assert not report.healthy


def test_missing_blob_detaches_successors(ledger, store, build_chain, resolve):
    digests, _ = build_chain(updates=3)
    ledger.advance(SETTLE_SECONDS)
    _blob_path(store, digests[2]).unlink()

    report = resolve_chain("milk-42", build_index(ledger, store), resolve)
    assert [s.digest for s in report.states] == [digests[1]]
    assert [s.digest for s in report.detached] == [digests[3]]
    assert f"missing blob {digests[2]}" in report.anomalies


def test_ineffective_revocation_of_init(ledger, store, build_chain, make_record, anchor, keypair, resolve):
    digests, _ = build_chain(updates=1)
    anchor(
        make_record(
            RecordKind.REVOKE, keypair.secret_key, keypair.identity_id, prev=digests[-1], minutes=5,
            revokes=digests[0],
        )
    )
    ledger.advance(SETTLE_SECONDS)

    report = resolve_chain("milk-42", build_index(ledger, store), resolve)
    assert not any(s.revoked for s in [report.init, *report.states])
    assert any(a.startswith("ineffective revocation") for a in report.anomalies)


def test_revocation_locality(ledger, store, build_chain, make_record, anchor, keypair, resolve):
    digests, _ = build_chain(updates=3)
    ledger.advance(SETTLE_SECONDS)
    before = resolve_chain("milk-42", build_index(ledger, store), resolve)

    anchor(
        make_record(
            RecordKind.REVOKE, keypair.secret_key, keypair.identity_id, prev=digests[-1], minutes=9,
            revokes=digests[2],
        )
    )
    ledger.advance(SETTLE_SECONDS)
    after = resolve_chain("milk-42", build_index(ledger, store), resolve)

    for old, new in zip([before.init, *before.states], [after.init, *after.states]):
        assert old.digest == new.digest
        assert old.verdicts == new.verdicts
        assert new.revoked == (old.revoked or new.digest == digests[2])


def test_multiple_init_records(ledger, store, make_record, anchor, keypair, resolve):
    anchor(make_record(RecordKind.INIT, keypair.secret_key, keypair.identity_id))
    anchor(make_record(RecordKind.INIT, keypair.secret_key, keypair.identity_id, minutes=1))
    ledger.advance(SETTLE_SECONDS)
    with pytest.raises(MultipleInitRecords):
        resolve_chain("milk-42", build_index(ledger, store), resolve)


def test_unknown_product(ledger, store, resolve):
    with pytest.raises(NoInitRecord):
        resolve_chain("nothing-here", build_index(ledger, store), resolve)


def test_order_chain_is_pure(make_record, keypair):
    sk, signer = keypair.secret_key, keypair.identity_id
    init = make_record(RecordKind.INIT, sk, signer)
    init_digest = hash_record(canonicalize(init))
    first = make_record(RecordKind.UPDATE, sk, signer, prev=init_digest, state={"a": "1"})
    first_digest = hash_record(canonicalize(first))
    second = make_record(RecordKind.UPDATE, sk, signer, prev=first_digest, state={"a": "2"})
    second_digest = hash_record(canonicalize(second))

    shuffled = {second_digest: second, init_digest: init, first_digest: first}
    assert order_chain(init_digest, shuffled).states == [first_digest, second_digest]
    assert order_chain(init_digest, shuffled).fork_at is None


# ---------- обратная и прямая трассировка ----------

def test_backward_trace(ledger, store, build_chain, resolve):
    digests, _ = build_chain(updates=2)
    ledger.advance(SETTLE_SECONDS)
    index = build_index(ledger, store)

    assert [s.digest for s in backward_trace(digests[2], index, resolve)] == digests
    assert [s.digest for s in backward_trace(digests[0], index, resolve)] == digests[:1]

    report = resolve_chain("milk-42", index, resolve)
    assert [s.digest for s in backward_trace(digests[-1], index, resolve)] == [
        s.digest for s in [report.init, *report.states]
    ]


def test_backward_trace_unknown_digest(ledger, store, resolve):
    with pytest.raises(UnknownDigest):
        backward_trace("ab" * 32, build_index(ledger, store), resolve)


def test_backward_trace_broken_chain(ledger, store, build_chain, resolve):
    digests, _ = build_chain(updates=2)
    ledger.advance(SETTLE_SECONDS)
    _blob_path(store, digests[1]).unlink()

    with pytest.raises(BrokenChain) as caught:
        backward_trace(digests[2], build_index(ledger, store), resolve)
    assert caught.value.missing == digests[1]


def test_forward_trace(ledger, store, build_chain, make_record, anchor, keypair, resolve):
    build_chain(updates=2, product="milk-1", locations=["farm", "warehouse-7"])
    build_chain(updates=1, product="milk-2", locations=["truck-2"])
    digests, _ = build_chain(updates=2, product="milk-3", locations=["warehouse-7", "shop-1"])
    ledger.advance(SETTLE_SECONDS)
    index = build_index(ledger, store)

    everything = forward_trace({}, index, resolve)
    assert [product for product, _ in everything] == ["milk-1", "milk-2", "milk-3"]

    found = forward_trace({"location": "warehouse-7"}, index, resolve)
    assert [product for product, _ in found] == ["milk-1"]

    historical = forward_trace({"location": "warehouse-7"}, index, resolve, historical=True)
    assert [product for product, _ in historical] == ["milk-1", "milk-3"]


def test_forward_trace_skips_revoked_state(ledger, store, build_chain, make_record, anchor, keypair, resolve):
    digests, _ = build_chain(updates=1, product="milk-9", locations=["warehouse-7"])
    anchor(
        make_record(
            RecordKind.REVOKE, keypair.secret_key, keypair.identity_id, product="milk-9", prev=digests[-1],
            minutes=5, revokes=digests[1],
        )
    )
    ledger.advance(SETTLE_SECONDS)
    assert forward_trace({"location": "warehouse-7"}, build_index(ledger, store), resolve) == []


def test_forward_trace_ignores_unverified_state(ledger, store, build_chain, make_record, anchor, other_keypair, resolve):
    digests, _ = build_chain(updates=1, locations=["farm"])
    anchor(
        make_record(
            RecordKind.UPDATE, other_keypair.secret_key, other_keypair.identity_id, prev=digests[-1], minutes=3,
            state={"origin": "farm-3", "batch": "B9", "location": "warehouse-7"},
        )
    )
    ledger.advance(SETTLE_SECONDS)
    index = build_index(ledger, store)

    assert forward_trace({"location": "warehouse-7"}, index, resolve) == []
    assert forward_trace({"location": "warehouse-7"}, index, resolve, historical=True) == []

    found = forward_trace({"location": "farm"}, index, resolve)
    assert [(product, state.digest) for product, state in found] == [("milk-42", digests[1])]
    assert found[0][1].passed


# ---------- проверка отдельного файла ----------

def test_verify_file_states(ledger, store, build_chain, make_record, anchor, keypair):
    digests, records = build_chain(updates=0)
    ledger.advance(SETTLE_SECONDS)
    data = canonicalize(records[0])

    verdict = verify_file_against_chain(data, build_index(ledger, store))
    assert verdict.status is FileStatus.ANCHORED and verdict.code is TxCode.IT
    assert verdict.txid is not None

    flipped = bytearray(data)
    flipped[40] ^= 0x01
    assert verify_file_against_chain(bytes(flipped), build_index(ledger, store)).status is FileStatus.UNANCHORED

    update = make_record(
        RecordKind.UPDATE, keypair.secret_key, keypair.identity_id, prev=digests[0], minutes=1,
        state={"origin": "o", "batch": "b"},
    )
    anchor(update)
    ledger.advance(600)
    pending = verify_file_against_chain(canonicalize(update), build_index(ledger, store))
    assert pending.status is FileStatus.PENDING
    assert pending.confirmations == 1


def test_renderers(ledger, store, build_chain, resolve):
    build_chain(updates=2)
    ledger.advance(SETTLE_SECONDS)
    report = resolve_chain("milk-42", build_index(ledger, store), resolve)

    text = render_text(report)
    assert "milk-42" in text and "status: OK" in text

    document = json.loads(render_json(report))
    assert document["product"] == "milk-42"
    assert len(document["states"]) == 2
    assert set(document["init"]["verdicts"]) == {
        HASH_ANCHORED, CODE_MATCHES_KIND, SIGNATURE_VALID, SIGNER_AUTHORIZED, SPEC_CONFORMANT, TIMESTAMP_MONOTONE,
    }
