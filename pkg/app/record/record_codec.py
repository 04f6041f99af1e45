from __future__ import annotations

import re
from typing import Optional

import structlog
from lxml import etree

from app.common.canonical_xml import (
    MalformedXml,
    NonCanonical,
    parse_xml,
    serialize_element,
    set_text,
)
from app.common.digest import is_hex_digest, sha256_hex
from app.common.errors import TraceError
from app.identity.identity_keys import sign_bytes, verify_bytes
from app.record.record_model import (
    NAME_PATTERN,
    FieldSpec,
    InvalidRecord,
    RecordKind,
    TraceRecord,
    build_record,
    format_timestamp,
    parse_timestamp,
)

logger = structlog.get_logger(__name__)

ROOT_TAG = "trace-record"
FORMAT_VERSION = "1"


def _checked(record: TraceRecord) -> TraceRecord:
    return build_record(**record.model_dump(by_alias=True))


def canonicalize(record: TraceRecord, include_signature: bool = True) -> bytes:
    record = _checked(record)
    if include_signature and record.signature is None:
        raise InvalidRecord("signed serialization requested for an unsigned record")

    root = etree.Element(ROOT_TAG, version=FORMAT_VERSION)
    try:
        etree.SubElement(root, "product").text = record.product
        etree.SubElement(root, "type").text = record.kind.value
        if record.prev is not None:
            etree.SubElement(root, "prev").text = record.prev
        etree.SubElement(root, "timestamp").text = format_timestamp(record.timestamp)

        if record.kind is RecordKind.INIT:
            schema = etree.SubElement(root, "schema")
            for spec in record.schema_fields:
                etree.SubElement(
                    schema,
                    "field",
                    name=spec.name,
                    required="true" if spec.required else "false",
                )
        elif record.kind is RecordKind.UPDATE:
            state = etree.SubElement(root, "state")
            for name, value in record.state.items():
                set_text(etree.SubElement(state, "field", name=name), value)
        else:
            etree.SubElement(root, "revokes").text = record.revokes
            if record.reason is not None:
                set_text(etree.SubElement(root, "reason"), record.reason)

        etree.SubElement(root, "signer").text = record.signer
        if include_signature:
            etree.SubElement(root, "signature").text = record.signature
        return serialize_element(root)
    except ValueError as exc:
        raise InvalidRecord(f"value cannot be represented in XML: {exc}") from exc


def hash_record(record_bytes: bytes) -> str:
    return sha256_hex(record_bytes)


# ---------- разбор ----------

def _child_text(root: etree._Element, tag: str, required: bool = True) -> Optional[str]:
    element = root.find(tag)
    if element is None:
        if required:
            raise InvalidRecord(f"missing <{tag}> element")
        return None
    return element.text or ""


def _parse_kind(text: str) -> RecordKind:
    try:
        return RecordKind(text)
    except ValueError as exc:
        raise InvalidRecord(f"unknown record type: {text!r}") from exc


def _parse_required_flag(value: Optional[str]) -> bool:
    if value == "true":
        return True
    if value == "false":
        return False
    raise InvalidRecord(f"field required flag must be true|false, got {value!r}")


def parse_record(data: bytes) -> TraceRecord:
    """
    Inverse of canonicalize(record, True). Non-canonical input is rejected,
    never normalised, so hashes stay byte-exact.
    """
    root = parse_xml(data)
    if root.tag != ROOT_TAG or root.get("version") != FORMAT_VERSION:
        raise InvalidRecord(f'root must be <{ROOT_TAG} version="{FORMAT_VERSION}">')

    kind = _parse_kind(_child_text(root, "type"))
    fields: dict = {
        "kind": kind,
        "product": _child_text(root, "product"),
        "prev": _child_text(root, "prev", required=False),
        "signer": _child_text(root, "signer"),
        "signature": _child_text(root, "signature"),
    }
    try:
        fields["timestamp"] = parse_timestamp(_child_text(root, "timestamp"))
    except ValueError as exc:
        raise InvalidRecord(f"bad timestamp: {exc}") from exc

    if kind is RecordKind.INIT:
        fields["schema"] = [
            {"name": name, "required": _parse_required_flag(el.get("required"))}
            for name, el in _named_fields(root, "schema")
        ]
    elif kind is RecordKind.UPDATE:
        fields["state"] = {name: el.text or "" for name, el in _named_fields(root, "state")}
    else:
        fields["revokes"] = _child_text(root, "revokes")
        fields["reason"] = _child_text(root, "reason", required=False)

    record = build_record(**fields)
    if canonicalize(record, include_signature=True) != data:
        raise NonCanonical("input differs from its canonical serialization")
    return record


def _named_fields(root: etree._Element, container: str) -> list[tuple[str, etree._Element]]:
    body = root.find(container)
    if body is None:
        raise InvalidRecord(f"missing <{container}> element")
    named = []
    for element in body.findall("field"):
        name = element.get("name")
        if not name:
            raise InvalidRecord("<field> element without a name attribute")
        named.append((name, element))
    return named


# ---------- подписи ----------

def sign_record(record: TraceRecord, secret_key: bytes) -> TraceRecord:
    message = canonicalize(record, include_signature=False)
    return record.with_signature(sign_bytes(secret_key, message).hex())


def record_signature_valid(record: TraceRecord, public_key: bytes) -> bool:
    if record.signature is None or record.kind is None or record.timestamp is None:
        return False
    try:
        message = canonicalize(record, include_signature=False)
        return verify_bytes(public_key, message, bytes.fromhex(record.signature))
    except (TraceError, ValueError, TypeError, AttributeError):
        return False


# ---------- восстановление повреждённых файлов ----------

def _line_element(line: str) -> Optional[etree._Element]:
    line = line.strip()
    if not line.startswith("<") or not line.endswith(">"):
        return None
    try:
        return parse_xml(line.encode("utf-8"))
    except (MalformedXml, ValueError):
        return None


def salvage_record(data: bytes, kind_hint: Optional[RecordKind] = None) -> Optional[TraceRecord]:
    """
    Tolerant line-by-line reading of a stored file that failed its integrity
    or canonical check. Each element sits on its own line, so a damaged byte
    costs at most the element on that line.

    The result is NOT validated (model_construct); unreadable values are None.
    Returns None when no record element survives at all.
    """
    name_re = re.compile(NAME_PATTERN)
    found: dict[str, Optional[str]] = {}
    field_elements: list[etree._Element] = []

    for line in data.decode("utf-8", errors="replace").split("\n"):
        element = _line_element(line)
        if element is None or not isinstance(element.tag, str):
            continue
        if element.tag == "field":
            field_elements.append(element)
        elif element.tag not in found:
            found[element.tag] = element.text or ""

    kind = kind_hint
    if found.get("type") in {k.value for k in RecordKind}:
        kind = RecordKind(found["type"])

    product = found.get("product")
    if product is not None and not (0 < len(product) <= 64 and name_re.match(product)):
        product = None

    if not found and not field_elements:
        return None
    prev = found.get("prev") if is_hex_digest(found.get("prev")) else None

    timestamp = None
    if found.get("timestamp"):
        try:
            timestamp = parse_timestamp(found["timestamp"])
        except ValueError:
            timestamp = None

    signature = found.get("signature")
    if signature is not None and not re.fullmatch(r"[0-9a-f]{128}", signature):
        signature = None

    schema_fields: tuple[FieldSpec, ...] = ()
    state: dict[str, str] = {}
    for element in field_elements:
        name = element.get("name")
        if not name or not name_re.match(name):
            continue
        if kind is RecordKind.INIT and element.get("required") in ("true", "false"):
            schema_fields += (FieldSpec(name=name, required=element.get("required") == "true"),)
        elif kind is RecordKind.UPDATE:
            state[name] = element.text or ""

    logger.debug("record_salvaged", product=product, prev=prev, kind=kind)
    return TraceRecord.model_construct(
        kind=kind,
        product=product,
        prev=prev,
        timestamp=timestamp,
        schema_fields=tuple(sorted(schema_fields, key=lambda spec: spec.name)),
        state=dict(sorted(state.items())),
        revokes=found.get("revokes") if is_hex_digest(found.get("revokes")) else None,
        reason=found.get("reason"),
        signer=found.get("signer") if is_hex_digest(found.get("signer")) else None,
        signature=signature,
    )
