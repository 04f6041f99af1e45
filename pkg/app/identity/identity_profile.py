from __future__ import annotations

from typing import Annotated, Callable, Iterable, Optional

import structlog
from lxml import etree
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    StringConstraints,
    ValidationError,
    model_validator,
)

from app.common.canonical_xml import (
    NonCanonical,
    child_text,
    parse_xml,
    serialize_element,
    set_text,
)
from app.common.digest import HEX_DIGEST_PATTERN, Digest32
from app.identity.identity_keys import (
    IdentityError,
    KeyPair,
    MalformedKey,
    generate_keypair,
    identity_id_for,
    public_key_of,
    sign_bytes,
    verify_bytes,
)
from app.record.record_model import FieldName, SignatureHex

logger = structlog.get_logger(__name__)

PROFILE_TAG = "identity-profile"
ATTESTATION_TAG = "attestation"
FORMAT_VERSION = "1"
DEFAULT_THRESHOLD = 1

KeyResolver = Callable[[str], Optional[bytes]]
PublicKeyHex = Annotated[str, StringConstraints(pattern=HEX_DIGEST_PATTERN)]


class InvalidAttestation(IdentityError):
    pass


class InvalidProfile(IdentityError):
    pass


class IdentityProfile(BaseModel):
    """
    Local stand-in for a decentralized company identity:
    public key, company information and a self-signature over both.
    """

    model_config = ConfigDict(frozen=True)

    id: Digest32
    public_key: PublicKeyHex
    info: dict[FieldName, str] = Field(default_factory=dict)
    self_signature: Optional[SignatureHex] = None

    @model_validator(mode="after")
    def _id_matches_key(self) -> "IdentityProfile":
        if self.id != identity_id_for(bytes.fromhex(self.public_key)):
            raise ValueError("identity id must equal SHA-256(public key)")
        if self.self_signature is not None and not self.info.get("name"):
            raise ValueError('signed profile needs a non-empty "name" attribute')
        return self

    @property
    def name(self) -> str:
        return self.info.get("name", "")


class Attestation(BaseModel):
    model_config = ConfigDict(frozen=True)

    subject: Digest32
    attestor: Digest32
    statement: str
    signature: Optional[SignatureHex] = None

    @model_validator(mode="after")
    def _not_self(self) -> "Attestation":
        if self.subject == self.attestor:
            raise ValueError("attestor must differ from subject")
        return self


# ---------- ключи и профиль ----------

def keygen() -> tuple[bytes, IdentityProfile]:
    """
    Fresh Ed25519 key pair plus an unsigned profile skeleton
    (finalize_profile signs it).
    """
    pair: KeyPair = generate_keypair()
    skeleton = IdentityProfile(id=pair.identity_id, public_key=pair.public_key.hex())
    return pair.secret_key, skeleton


def canonical_profile(profile: IdentityProfile, include_signature: bool = True) -> bytes:
    root = etree.Element(PROFILE_TAG, version=FORMAT_VERSION)
    etree.SubElement(root, "id").text = profile.id
    etree.SubElement(root, "public-key").text = profile.public_key
    info = etree.SubElement(root, "info")
    for name, value in sorted(profile.info.items()):
        set_text(etree.SubElement(info, "attribute", name=name), value)
    if include_signature:
        if profile.self_signature is None:
            raise InvalidProfile("profile is not signed")
        etree.SubElement(root, "self-signature").text = profile.self_signature
    try:
        return serialize_element(root)
    except ValueError as exc:
        raise InvalidProfile(f"profile value cannot be represented in XML: {exc}") from exc


def finalize_profile(
    secret_key: bytes, skeleton: IdentityProfile, info: dict[str, str]
) -> IdentityProfile:
    if public_key_of(secret_key).hex() != skeleton.public_key:
        raise MalformedKey("secret key does not match the profile public key")
    try:
        unsigned = IdentityProfile(id=skeleton.id, public_key=skeleton.public_key, info=info)
    except ValidationError as exc:
        raise InvalidProfile(str(exc)) from exc
    if not unsigned.name:
        raise InvalidProfile('profile needs a non-empty "name" attribute')
    signature = sign_bytes(secret_key, canonical_profile(unsigned, include_signature=False))
    return unsigned.model_copy(update={"self_signature": signature.hex()})


def profile_valid(profile: IdentityProfile) -> bool:
    if profile.self_signature is None or not profile.name:
        return False
    return verify_bytes(
        bytes.fromhex(profile.public_key),
        canonical_profile(profile, include_signature=False),
        bytes.fromhex(profile.self_signature),
    )


def parse_profile(data: bytes) -> IdentityProfile:
    root = parse_xml(data)
    if root.tag != PROFILE_TAG or root.get("version") != FORMAT_VERSION:
        raise InvalidProfile(f'root must be <{PROFILE_TAG} version="{FORMAT_VERSION}">')
    info_element = root.find("info")
    info = {}
    if info_element is not None:
        info = {el.get("name") or "": el.text or "" for el in info_element.findall("attribute")}
    try:
        profile = IdentityProfile(
            id=child_text(root, "id"),
            public_key=child_text(root, "public-key"),
            info=info,
            self_signature=child_text(root, "self-signature"),
        )
    except ValidationError as exc:
        raise InvalidProfile(str(exc)) from exc
    if canonical_profile(profile) != data:
        raise NonCanonical("profile differs from its canonical serialization")
    return profile


# ---------- аттестации ----------

def canonical_attestation(attestation: Attestation, include_signature: bool = True) -> bytes:
    root = etree.Element(ATTESTATION_TAG, version=FORMAT_VERSION)
    etree.SubElement(root, "subject").text = attestation.subject
    etree.SubElement(root, "attestor").text = attestation.attestor
    set_text(etree.SubElement(root, "statement"), attestation.statement)
    if include_signature:
        if attestation.signature is None:
            raise InvalidAttestation("attestation is not signed")
        etree.SubElement(root, "signature").text = attestation.signature
    try:
        return serialize_element(root)
    except ValueError as exc:
        raise InvalidAttestation(f"statement cannot be represented in XML: {exc}") from exc


def make_attestation(secret_key: bytes, subject: str, statement: str) -> Attestation:
    attestor = identity_id_for(public_key_of(secret_key))
    try:
        unsigned = Attestation(subject=subject, attestor=attestor, statement=statement)
    except ValidationError as exc:
        raise InvalidAttestation(str(exc)) from exc
    signature = sign_bytes(secret_key, canonical_attestation(unsigned, include_signature=False))
    return unsigned.model_copy(update={"signature": signature.hex()})


def parse_attestation(data: bytes) -> Attestation:
    root = parse_xml(data)
    if root.tag != ATTESTATION_TAG or root.get("version") != FORMAT_VERSION:
        raise InvalidAttestation(f'root must be <{ATTESTATION_TAG} version="{FORMAT_VERSION}">')
    try:
        attestation = Attestation(
            subject=child_text(root, "subject"),
            attestor=child_text(root, "attestor"),
            statement=child_text(root, "statement") or "",
            signature=child_text(root, "signature"),
        )
    except ValidationError as exc:
        raise InvalidAttestation(str(exc)) from exc
    if canonical_attestation(attestation) != data:
        raise NonCanonical("attestation differs from its canonical serialization")
    return attestation


def attestation_valid(attestation: Attestation, resolve: KeyResolver) -> bool:
    if attestation.signature is None or attestation.attestor == attestation.subject:
        return False
    public_key = resolve(attestation.attestor)
    if public_key is None or identity_id_for(public_key) != attestation.attestor:
        return False
    try:
        return verify_bytes(
            public_key,
            canonical_attestation(attestation, include_signature=False),
            bytes.fromhex(attestation.signature),
        )
    except IdentityError:
        return False


def trust_score(subject: str, attestations: Iterable[Attestation], resolve: KeyResolver) -> int:
    """
    Number of distinct attestors with a valid signature over the subject.
    Self-attestations and attestations from unresolvable attestors don't count.
    """
    attestors = {
        attestation.attestor
        for attestation in attestations
        if attestation.subject == subject and attestation_valid(attestation, resolve)
    }
    return len(attestors)


def meets_threshold(score: int, threshold: int = DEFAULT_THRESHOLD) -> bool:
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return score >= threshold
