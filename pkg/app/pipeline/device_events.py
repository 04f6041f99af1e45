from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path

import structlog
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from app.common.errors import TraceError
from app.pipeline.product_pipeline import PipelineError, Submission, TraceWorkspace, update_product
from app.record.record_model import FieldName, ProductId, utc_second

logger = structlog.get_logger(__name__)


class FileUnreadable(PipelineError):
    pass


class DeviceSource(Enum):
    BARCODE = "barcode"
    RFID = "rfid"
    MANUAL = "manual"


class DeviceEvent(BaseModel):
    """
    Одно событие от сканера штрихкодов, RFID-приёмника или ручного ввода.
    One JSON object per line of an events file.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    product: ProductId
    source: DeviceSource
    fields: dict[FieldName, str]
    observed_at: datetime

    @field_validator("fields")
    @classmethod
    def _non_empty(cls, value: dict[str, str]) -> dict[str, str]:
        if not value:
            raise ValueError("fields must not be empty")
        return value

    @field_validator("observed_at")
    @classmethod
    def _utc(cls, value: datetime) -> datetime:
        return utc_second(value)


@dataclass
class IngestSummary:
    succeeded: list[tuple[int, Submission]] = field(default_factory=list)
    failed: list[tuple[int, str]] = field(default_factory=list)
    sources: Counter = field(default_factory=Counter)

    @property
    def ok(self) -> bool:
        return not self.failed

    def line(self) -> str:
        by_source = ", ".join(f"{name}={count}" for name, count in sorted(self.sources.items()))
        return f"ingested {len(self.succeeded)}/{len(self.failed)}" + (f" ({by_source})" if by_source else "")


def read_event_lines(path: Path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise FileUnreadable(f"cannot read events file {path}: {exc}") from exc


def _first_error(exc: ValidationError) -> str:
    error = exc.errors()[0]
    location = ".".join(str(part) for part in error["loc"])
    return f"{location}: {error['msg']}" if location else error["msg"]


def ingest_events(ws: TraceWorkspace, path: Path, signer: str) -> IngestSummary:
    """
    Каждая строка становится отдельным update; ошибка в строке
    не прерывает обработку остальных.
    """
    summary = IngestSummary()
    for number, line in enumerate(read_event_lines(path), start=1):
        if not line.strip():
            continue
        try:
            event = DeviceEvent.model_validate_json(line)
        except ValidationError as exc:
            summary.failed.append((number, _first_error(exc)))
            logger.warning("event_rejected", line=number, error=_first_error(exc))
            continue

        try:
            submission = update_product(ws, event.product, dict(event.fields), signer, now=event.observed_at)
        except TraceError as exc:
            summary.failed.append((number, str(exc)))
            logger.warning("event_rejected", line=number, product=event.product, error=str(exc))
            continue

        summary.succeeded.append((number, submission))
        summary.sources[event.source.value] += 1
        logger.info(
            "event_ingested",
            line=number,
            product=event.product,
            source=event.source.value,
            digest=submission.digest,
        )
    return summary
