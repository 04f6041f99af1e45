from __future__ import annotations

from dataclasses import dataclass, field

import structlog
from cryptography.exceptions import InvalidSignature, UnsupportedAlgorithm
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from app.common.digest import sha256_hex
from app.common.errors import TraceError

logger = structlog.get_logger(__name__)

KEY_SIZE = 32
SIGNATURE_SIZE = 64


class IdentityError(TraceError):
    pass


class EntropyUnavailable(IdentityError):
    pass


class MalformedKey(IdentityError):
    pass


@dataclass(frozen=True)
class KeyPair:
    secret_key: bytes = field(repr=False)
    public_key: bytes

    @property
    def identity_id(self) -> str:
        return identity_id_for(self.public_key)


def identity_id_for(public_key: bytes) -> str:
    """
    IdentityId = SHA-256(raw public key), hex.
    """
    return sha256_hex(public_key)


def _raw_public(key: Ed25519PublicKey) -> bytes:
    return key.public_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PublicFormat.Raw,
    )


def generate_keypair() -> KeyPair:
    try:
        private = Ed25519PrivateKey.generate()
    except (OSError, UnsupportedAlgorithm) as exc:
        raise EntropyUnavailable(f"cannot generate an Ed25519 key: {exc}") from exc

    secret = private.private_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PrivateFormat.Raw,
        encryption_algorithm=serialization.NoEncryption(),
    )
    pair = KeyPair(secret_key=secret, public_key=_raw_public(private.public_key()))
    logger.debug("keypair_generated", identity_id=pair.identity_id)
    return pair


def _load_private(secret_key: bytes) -> Ed25519PrivateKey:
    if len(secret_key) != KEY_SIZE:
        raise MalformedKey(f"secret key must be {KEY_SIZE} bytes, got {len(secret_key)}")
    try:
        return Ed25519PrivateKey.from_private_bytes(secret_key)
    except ValueError as exc:
        raise MalformedKey(str(exc)) from exc


def _load_public(public_key: bytes) -> Ed25519PublicKey:
    if len(public_key) != KEY_SIZE:
        raise MalformedKey(f"public key must be {KEY_SIZE} bytes, got {len(public_key)}")
    try:
        return Ed25519PublicKey.from_public_bytes(public_key)
    except ValueError as exc:
        raise MalformedKey(str(exc)) from exc


def public_key_of(secret_key: bytes) -> bytes:
    return _raw_public(_load_private(secret_key).public_key())


def sign_bytes(secret_key: bytes, message: bytes) -> bytes:
    """
    Ed25519 signatures are deterministic: same key and bytes, same signature.
    """
    return _load_private(secret_key).sign(message)


def verify_bytes(public_key: bytes, message: bytes, signature: bytes) -> bool:
    key = _load_public(public_key)
    if len(signature) != SIGNATURE_SIZE:
        return False
    try:
        key.verify(signature, message)
        return True
    except InvalidSignature:
        return False
