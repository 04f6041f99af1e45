from app.common.errors import TraceError
from app.record.record_model import RecordKind, TraceRecord


class KindMismatch(TraceError):
    pass


class ProductMismatch(TraceError):
    pass


def check_conformance(update: TraceRecord, spec: TraceRecord) -> list[str]:
    """
    Возвращает по одному нарушению на каждое обязательное поле
    из init-спецификации, отсутствующее в update.state.

    Extra fields in the update are allowed.
    """
    if update.kind is not RecordKind.UPDATE:
        raise KindMismatch(f"expected an update record, got {update.kind}")
    if spec.kind is not RecordKind.INIT:
        raise KindMismatch(f"expected an init record as spec, got {spec.kind}")
    if update.product != spec.product:
        raise ProductMismatch(
            f"update is for {update.product!r}, spec is for {spec.product!r}"
        )

    return [
        f'missing "{name}"'
        for name in spec.required_fields
        if name not in update.state
    ]


def missing_fields(state: dict[str, str], spec: TraceRecord) -> list[str]:
    return [name for name in spec.required_fields if name not in state]
