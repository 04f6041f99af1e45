from __future__ import annotations

from datetime import datetime, timezone
from enum import Enum
from typing import Annotated, Optional

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    StringConstraints,
    ValidationError,
    field_validator,
    model_validator,
)

from app.common.digest import Digest32
from app.common.errors import TraceError

NAME_PATTERN = r"^[A-Za-z0-9._-]+$"
SIGNATURE_PATTERN = r"^[0-9a-f]{128}$"

ProductId = Annotated[
    str, StringConstraints(min_length=1, max_length=64, pattern=NAME_PATTERN)
]
FieldName = Annotated[str, StringConstraints(min_length=1, pattern=NAME_PATTERN)]
SignatureHex = Annotated[str, StringConstraints(pattern=SIGNATURE_PATTERN)]


class InvalidRecord(TraceError):
    pass


class RecordKind(Enum):
    INIT = "init"
    UPDATE = "update"
    REVOKE = "revoke"


def utc_second(moment: datetime) -> datetime:
    """
    Приводит момент времени к UTC с точностью до секунды.
    """
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(moment: datetime) -> str:
    return utc_second(moment).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


class FieldSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: FieldName
    required: bool = True


class TraceRecord(BaseModel):
    """
    One lifecycle event of a product: init (the field spec), update (a state)
    or revoke (declares an earlier state false).

    The schema is kept sorted by name and the state as a name-sorted mapping,
    so equal content compares equal regardless of construction order.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    kind: RecordKind
    product: ProductId
    prev: Optional[Digest32] = None
    timestamp: datetime
    schema_fields: tuple[FieldSpec, ...] = Field(default=(), alias="schema")
    state: dict[FieldName, str] = Field(default_factory=dict)
    revokes: Optional[Digest32] = None
    reason: Optional[str] = None
    signer: Digest32
    signature: Optional[SignatureHex] = None

    @field_validator("timestamp")
    @classmethod
    def _second_precision(cls, value: datetime) -> datetime:
        return utc_second(value)

    @field_validator("schema_fields")
    @classmethod
    def _sorted_schema(cls, value: tuple[FieldSpec, ...]) -> tuple[FieldSpec, ...]:
        names = [spec.name for spec in value]
        if len(names) != len(set(names)):
            raise ValueError("field spec names must be unique")
        return tuple(sorted(value, key=lambda spec: spec.name))

    @field_validator("state")
    @classmethod
    def _sorted_state(cls, value: dict[str, str]) -> dict[str, str]:
        return dict(sorted(value.items()))

    @model_validator(mode="after")
    def _kind_invariants(self) -> "TraceRecord":
        if self.kind is RecordKind.INIT:
            if self.prev is not None:
                raise ValueError("init record must not carry prev")
            if not self.schema_fields:
                raise ValueError("init record needs a non-empty schema")
            if self.state or self.revokes is not None or self.reason is not None:
                raise ValueError("init record carries only a schema")
        else:
            if self.prev is None:
                raise ValueError(f"{self.kind.value} record needs prev")
            if self.schema_fields:
                raise ValueError("only init records carry a schema")

        if self.kind is RecordKind.UPDATE:
            if not self.state:
                raise ValueError("update record needs a non-empty state")
            if self.revokes is not None or self.reason is not None:
                raise ValueError("update record carries only a state")

        if self.kind is RecordKind.REVOKE:
            if self.revokes is None:
                raise ValueError("revoke record needs revokes")
            if self.state:
                raise ValueError("revoke record carries no state")
        return self

    @property
    def required_fields(self) -> list[str]:
        return [spec.name for spec in self.schema_fields if spec.required]

    def with_signature(self, signature: str) -> "TraceRecord":
        return TraceRecord.model_validate(
            {**self.model_dump(by_alias=True), "signature": signature}
        )


def build_record(**fields) -> TraceRecord:
    """
    Constructs a TraceRecord, turning pydantic validation errors
    into InvalidRecord.
    """
    try:
        return TraceRecord.model_validate(fields)
    except ValidationError as exc:
        raise InvalidRecord(str(exc)) from exc
