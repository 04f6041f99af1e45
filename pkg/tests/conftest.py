from datetime import datetime, timedelta, timezone

import pytest
import structlog

from app.chain.tx_codec import TxCode, encode_payload
from app.identity.identity_keys import generate_keypair
from app.identity.identity_keystore import Keystore
from app.ledger.ledger_models import LedgerConfig
from app.ledger.ledger_sim import Ledger
from app.pipeline.product_pipeline import TraceWorkspace
from app.record.record_codec import canonicalize, hash_record, sign_record
from app.record.record_model import FieldSpec, RecordKind, build_record
from app.storage.blob_store import BlobStore

BASE_TIME = datetime(2024, 3, 1, 8, 0, 0, tzinfo=timezone.utc)
SETTLE_SECONDS = 1800  # three blocks: everything submitted so far becomes Verified


@pytest.fixture(autouse=True)
def _fresh_logging():
    yield
    structlog.reset_defaults()


@pytest.fixture
def keypair():
    return generate_keypair()


@pytest.fixture
def other_keypair():
    return generate_keypair()


@pytest.fixture
def ledger():
    return Ledger(LedgerConfig())


@pytest.fixture
def store(tmp_path):
    return BlobStore(tmp_path / "store")


@pytest.fixture
def keystore(tmp_path):
    return Keystore(tmp_path / "keystore")


@pytest.fixture
def company(keystore):
    return keystore.create_identity({"name": "Acme Dairy", "registration-number": "RN-1001"})


@pytest.fixture
def workspace(ledger, store, keystore):
    return TraceWorkspace(ledger=ledger, store=store, keystore=keystore, threshold=0)


@pytest.fixture
def make_record():
    """
    Builds and signs records with sane defaults; `minutes` offsets the
    timestamp from BASE_TIME.
    """

    def _make(kind, secret_key, signer, product="milk-42", minutes=0, **fields):
        if kind is RecordKind.INIT:
            fields.setdefault("schema", (FieldSpec(name="origin"), FieldSpec(name="batch")))
        record = build_record(
            kind=kind,
            product=product,
            timestamp=BASE_TIME + timedelta(minutes=minutes),
            signer=signer,
            **fields,
        )
        return sign_record(record, secret_key)

    return _make


@pytest.fixture
def anchor(ledger, store):
    """Stores a signed record and submits its payload; returns the digest."""

    def _anchor(record):
        data = canonicalize(record)
        digest = store.put(data)
        assert digest == hash_record(data)
        ledger.submit(encode_payload(TxCode.for_kind(record.kind), digest))
        return digest

    return _anchor
