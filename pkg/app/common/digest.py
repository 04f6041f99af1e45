from __future__ import annotations

import hashlib
from typing import Annotated

from pydantic import StringConstraints

# --- Константы ---
DIGEST_SIZE = 32
ZERO_DIGEST = "0" * (DIGEST_SIZE * 2)

HEX_DIGEST_PATTERN = r"^[0-9a-f]{64}$"

Digest32 = Annotated[str, StringConstraints(pattern=HEX_DIGEST_PATTERN)]


def sha256_hex(data: bytes) -> str:
    """
    SHA-256 of the exact bytes, rendered as 64 lowercase hex chars.
    """
    return hashlib.sha256(data).hexdigest()


def digest_to_bytes(digest: str) -> bytes:
    raw = bytes.fromhex(digest)
    if len(raw) != DIGEST_SIZE:
        raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(raw)}")
    return raw


def digest_from_bytes(raw: bytes) -> str:
    if len(raw) != DIGEST_SIZE:
        raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(raw)}")
    return raw.hex()


def is_hex_digest(value: str | None) -> bool:
    if value is None or len(value) != DIGEST_SIZE * 2:
        return False
    return all(c in "0123456789abcdef" for c in value)
