from __future__ import annotations

from pathlib import Path
from typing import Optional

import structlog

from app.common.atomic_file import write_atomic
from app.common.digest import is_hex_digest, sha256_hex
from app.common.errors import TraceError
from app.identity.identity_keys import IdentityError, public_key_of
from app.identity.identity_profile import (
    Attestation,
    IdentityProfile,
    canonical_attestation,
    canonical_profile,
    finalize_profile,
    keygen,
    make_attestation,
    parse_attestation,
    parse_profile,
    profile_valid,
    trust_score,
)

logger = structlog.get_logger(__name__)

KEY_FILE_MODE = 0o600


class KeystoreError(IdentityError):
    pass


class UnknownIdentity(KeystoreError):
    pass


class Keystore:
    """
    Локальное хранилище ключей:

        <root>/<identity-id>.key          hex secret key, hex public key (0600)
        <root>/profiles/<identity-id>.xml  signed public profile
        <root>/attestations/<sha256>.xml   one signed attestation per file

    The profiles directory doubles as the identity resolver for verifiers.
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.profiles_dir = self.root / "profiles"
        self.attestations_dir = self.root / "attestations"

    # ---------- идентичности ----------

    def _key_path(self, identity_id: str) -> Path:
        if not is_hex_digest(identity_id):
            raise KeystoreError(f"not an identity id: {identity_id!r}")
        return self.root / f"{identity_id}.key"

    def create_identity(self, info: dict[str, str]) -> IdentityProfile:
        secret_key, skeleton = keygen()
        profile = finalize_profile(secret_key, skeleton, info)
        key_text = f"{secret_key.hex()}\n{profile.public_key}\n".encode("ascii")
        try:
            write_atomic(self._key_path(profile.id), key_text, mode=KEY_FILE_MODE)
            self.save_profile(profile)
        except OSError as exc:
            raise KeystoreError(f"cannot write keystore {self.root}: {exc}") from exc
        logger.info("identity_created", identity_id=profile.id, name=profile.name)
        return profile

    def save_profile(self, profile: IdentityProfile) -> Path:
        path = self.profiles_dir / f"{profile.id}.xml"
        try:
            write_atomic(path, canonical_profile(profile))
        except OSError as exc:
            raise KeystoreError(f"cannot write profile {path}: {exc}") from exc
        return path

    def secret_key(self, identity_id: str) -> bytes:
        path = self._key_path(identity_id)
        if not path.is_file():
            raise UnknownIdentity(f"no key file for identity {identity_id}")
        try:
            lines = path.read_text(encoding="ascii").split()
            secret_key = bytes.fromhex(lines[0])
            public_key = bytes.fromhex(lines[1])
        except (OSError, ValueError, IndexError) as exc:
            raise KeystoreError(f"unreadable key file {path}: {exc}") from exc
        if public_key_of(secret_key) != public_key:
            raise KeystoreError(f"key file {path} holds a mismatched key pair")
        return secret_key

    def profile(self, identity_id: str) -> Optional[IdentityProfile]:
        path = self.profiles_dir / f"{identity_id}.xml"
        if not path.is_file():
            return None
        try:
            profile = parse_profile(path.read_bytes())
        except (OSError, TraceError) as exc:
            logger.warning("profile_unreadable", identity_id=identity_id, error=str(exc))
            return None
        if profile.id != identity_id or not profile_valid(profile):
            logger.warning("profile_rejected", identity_id=identity_id)
            return None
        return profile

    def public_key(self, identity_id: str) -> Optional[bytes]:
        """
        Resolver used by verifiers: only self-signed profiles whose id matches
        the key resolve.
        """
        profile = self.profile(identity_id)
        if profile is None:
            return None
        return bytes.fromhex(profile.public_key)

    def identities(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(path.stem for path in self.root.glob("*.key"))

    # ---------- аттестации ----------

    def attest(self, attestor_id: str, subject: str, statement: str) -> Attestation:
        attestation = make_attestation(self.secret_key(attestor_id), subject, statement)
        data = canonical_attestation(attestation)
        path = self.attestations_dir / f"{sha256_hex(data)}.xml"
        try:
            write_atomic(path, data)
        except OSError as exc:
            raise KeystoreError(f"cannot write attestation {path}: {exc}") from exc
        logger.info("attestation_added", attestor=attestor_id, subject=subject)
        return attestation

    def attestations(self) -> list[Attestation]:
        if not self.attestations_dir.is_dir():
            return []
        found = []
        for path in sorted(self.attestations_dir.glob("*.xml")):
            try:
                found.append(parse_attestation(path.read_bytes()))
            except (OSError, TraceError) as exc:
                logger.warning("attestation_unreadable", path=str(path), error=str(exc))
        return found

    def trust_score(self, subject: str) -> int:
        return trust_score(subject, self.attestations(), self.public_key)
