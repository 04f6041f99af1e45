"""
Сквозные сценарии: полезная нагрузка, задержка подтверждения,
обнаружение подделки, порядок цепочки и полный цикл через CLI.
"""
import itertools
import json
import random
from datetime import datetime, timedelta, timezone

import pytest

from app.chain.tx_codec import PAYLOAD_SIZE, TxCode, TxPayload, decode_payload, encode_payload
from app.cli.cli_commands import EXIT_ERROR, EXIT_OK, EXIT_VERIFICATION_FAILED, main
from app.cli.cli_config import ENV_CHAIN, ENV_HOME, ENV_STORE
from app.identity.identity_keystore import Keystore
from app.ledger.ledger_models import LedgerConfig, TxStatus
from app.ledger.ledger_sim import Ledger, PayloadTooLarge
from app.record.record_codec import canonicalize, hash_record, parse_record, sign_record
from app.record.record_model import RecordKind, build_record
from app.storage.blob_store import BlobStore
from app.trace.trace_engine import order_chain
from app.trace.trace_models import HASH_ANCHORED, SPEC_CONFORMANT


@pytest.fixture
def home(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_HOME, str(tmp_path))
    monkeypatch.delenv(ENV_STORE, raising=False)
    monkeypatch.delenv(ENV_CHAIN, raising=False)
    return tmp_path


@pytest.fixture
def run(home, capsys):
    def _run(*argv):
        code = main(list(argv))
        captured = capsys.readouterr()
        return code, captured.out.strip(), captured.err.strip()

    return _run


def _random_digest(rng):
    return rng.randbytes(32).hex()


# ---------- полезная нагрузка ----------

def test_payloads_fit_and_oversize_is_rejected(ledger):
    rng = random.Random(11)
    for _ in range(1000):
        code = rng.choice(list(TxCode))
        digest = _random_digest(rng)
        payload = encode_payload(code, digest)
        assert len(payload) == PAYLOAD_SIZE == 34
        assert decode_payload(payload) == TxPayload(code=code, digest=digest)
        ledger.submit(payload)
    assert len(ledger.pending()) == 1000

    with pytest.raises(PayloadTooLarge):
        ledger.submit(bytes(81))


# ---------- задержка ----------

def test_confirmation_latency():
    rng = random.Random(12)
    for _ in range(20):
        ledger = Ledger(LedgerConfig())
        offset = rng.randrange(0, 600)
        ledger.advance(offset)
        txid = ledger.submit(encode_payload(TxCode.UT, _random_digest(rng)))

        ledger.advance(600 - offset)
        assert ledger.status(txid) is TxStatus.INCLUDED
        ledger.advance(1199)
        assert ledger.status(txid) is TxStatus.INCLUDED
        ledger.advance(1)
        assert ledger.status(txid) is TxStatus.VERIFIED


# ---------- подделка файлов ----------

def _company_with_history(run, updates=2, product="milk-1"):
    company = _identity(run, "Acme Dairy")
    auditor = _identity(run, "Dairy Board")
    assert run("attest", company, "licensed producer", "--signer", auditor)[0] == EXIT_OK
    assert run("product", "init", product, "--field", "origin", "--field", "batch", "--signer", company)[0] == EXIT_OK
    digests = []
    for i in range(updates):
        code, out, _ = run(
            "product", "update", product, "--set", "origin=farm-3", "--set", f"batch=B{i}", "--signer", company
        )
        assert code == EXIT_OK
        digests.append(out.split()[0])
    return company, digests


def _identity(run, name):
    code, out, _ = run("keygen", "--name", name)
    assert code == EXIT_OK
    return out


def _unanchored(document, digest):
    states = [document["init"], *document["states"], *document["detached"]]
    return any(s["digest"] == digest and s["verdicts"][HASH_ANCHORED] is False for s in states)


def test_every_single_byte_change_is_detected(run, home):
    _company_with_history(run, updates=5)
    run("ledger", "advance", "--seconds", "1800")
    assert run("trace", "milk-1")[0] == EXIT_OK

    store = BlobStore(home / "store")
    addresses = store.addresses()
    rng = random.Random(13)
    for _ in range(100):
        digest = rng.choice(addresses)
        path = home / "store" / digest[:2] / digest[2:]
        original = path.read_bytes()
        damaged = bytearray(original)
        damaged[rng.randrange(len(damaged))] ^= rng.randrange(1, 256)
        path.write_bytes(bytes(damaged))
        try:
            code, out, _ = run("trace", "milk-1", "--output", "json")
            assert code == EXIT_VERIFICATION_FAILED
            assert _unanchored(json.loads(out), digest)
        finally:
            path.write_bytes(original)

    assert run("trace", "milk-1")[0] == EXIT_OK


# ---------- порядок цепочки ----------

def _brute_force_order(init_digest, records):
    others = [d for d in records if d != init_digest]
    for candidate in itertools.permutations(others):
        previous = init_digest
        for digest in candidate:
            if records[digest].prev != previous:
                break
            previous = digest
        else:
            return list(candidate)
    return None


def test_chain_order_matches_brute_force(make_record, keypair):
    rng = random.Random(14)
    sk, signer = keypair.secret_key, keypair.identity_id

    def updated(product, prev, minutes):
        return make_record(
            RecordKind.UPDATE, sk, signer, product=product, prev=prev, minutes=minutes,
            state={"origin": "o", "batch": str(minutes)},
        )

    for number in range(200):
        product = f"p-{number}"
        init = make_record(RecordKind.INIT, sk, signer, product=product)
        init_digest = hash_record(canonicalize(init))
        chain = [(init_digest, init)]
        for minutes in range(1, rng.randrange(1, 6) + 1):
            record = updated(product, chain[-1][0], minutes)
            chain.append((hash_record(canonicalize(record)), record))

        forked_at = None
        if len(chain) > 2 and rng.random() < 0.3:
            forked_at = rng.randrange(len(chain) - 1)
            sibling = updated(product, chain[forked_at][0], 100)
            chain.append((hash_record(canonicalize(sibling)), sibling))

        shuffled = chain[:]
        rng.shuffle(shuffled)
        records = dict(shuffled)

        expected = _brute_force_order(init_digest, records)
        order = order_chain(init_digest, records)
        if expected is not None:
            assert forked_at is None
            assert order.fork_at is None
            assert order.states == expected
        else:
            assert order.fork_at == chain[forked_at][0]
            assert order.states == [digest for digest, _ in chain[1 : forked_at + 1]]
            assert len(order.branches) == 2


# ---------- круговые преобразования ----------

def test_roundtrips(keypair, store):
    rng = random.Random(15)
    moment = datetime(2024, 3, 1, tzinfo=timezone.utc)
    for i in range(1000):
        record = sign_record(
            build_record(
                kind=RecordKind.UPDATE,
                product=f"lot-{i}",
                prev=_random_digest(rng),
                timestamp=moment + timedelta(seconds=rng.randrange(10**7)),
                state={f"f{j}": rng.choice(["", "a & b", "<x>", "plain"]) for j in range(rng.randrange(1, 5))},
                signer=keypair.identity_id,
            ),
            keypair.secret_key,
        )
        data = canonicalize(record)
        assert parse_record(data) == record
        assert canonicalize(parse_record(data)) == data
        assert store.get(store.put(data)) == data


# ---------- полный цикл ----------

def test_end_to_end_company_flow(run, home):
    company, digests = _company_with_history(run, updates=5)
    assert run("product", "revoke", "milk-1", digests[1], "--reason", "mislabelled", "--signer", company)[0] == EXIT_OK
    run("ledger", "advance", "--seconds", "1800")

    code, out, _ = run("trace", "milk-1", "--output", "json")
    document = json.loads(out)
    assert code == EXIT_OK
    assert len(document["states"]) == 6
    revoked = [s["digest"] for s in document["states"] if s["revoked"]]
    assert revoked == [digests[1]]
    assert document["current"] == digests[-1]
    assert document["anomalies"] == []

    assert run("ledger", "integrity") == (EXIT_OK, "OK", "")

    chain_file = home / "chain.jsonl"
    lines = chain_file.read_text().split("\n")
    assert '"timestamp":1200' in lines[2]
    lines[2] = lines[2].replace('"timestamp":1200', '"timestamp":1201', 1)
    chain_file.write_text("\n".join(lines))

    code, out, _ = run("ledger", "integrity")
    assert code != EXIT_OK
    assert out.startswith("FAILED at height 2")


def test_conformance_gate_and_injected_record(run, home):
    company, _ = _company_with_history(run, updates=1)

    code, _, err = run("product", "update", "milk-1", "--set", "origin=farm-3", "--signer", company)
    assert code == EXIT_ERROR
    assert '"batch"' in err

    run("ledger", "advance", "--seconds", "1800")
    tip = json.loads(run("trace", "milk-1", "--output", "json")[1])["current"]

    keystore = Keystore(home / "keystore")
    forged = sign_record(
        build_record(
            kind=RecordKind.UPDATE,
            product="milk-1",
            prev=tip,
            timestamp=datetime.now(timezone.utc) + timedelta(minutes=1),
            state={"origin": "farm-3"},
            signer=company,
        ),
        keystore.secret_key(company),
    )

    store = BlobStore(home / "store")
    digest = store.put(canonicalize(forged))
    ledger = Ledger(LedgerConfig(), home / "chain.jsonl")
    ledger.submit(encode_payload(TxCode.UT, digest))
    ledger.advance(1800)

    code, out, _ = run("trace", "milk-1", "--output", "json")
    document = json.loads(out)
    assert code != EXIT_OK
    injected = [s for s in document["states"] if s["digest"] == digest]
    assert len(injected) == 1
    assert injected[0]["verdicts"][SPEC_CONFORMANT] is False
    assert injected[0]["verdicts"][HASH_ANCHORED] is True
