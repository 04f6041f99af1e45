from __future__ import annotations

import json
from typing import Any, Iterable

import pandas as pd

from app.record.record_model import TraceRecord, format_timestamp
from app.trace.trace_models import VERDICT_NAMES, FileVerdict, TraceReport, VerifiedState

# --- Параметры вывода ---
SHORT_DIGEST = 12
TABLE_COLUMNS = ["#", "kind", "digest", "height", "timestamp", "revoked", "failed"]


def record_to_dict(record: TraceRecord) -> dict[str, Any]:
    """
    Plain dict of a record. Salvaged records may carry None anywhere,
    so fields are read one by one instead of via model_dump.
    """
    return {
        "kind": record.kind.value if record.kind is not None else None,
        "product": record.product,
        "prev": record.prev,
        "timestamp": format_timestamp(record.timestamp) if record.timestamp is not None else None,
        "schema": [{"name": s.name, "required": s.required} for s in (record.schema_fields or ())],
        "state": dict(record.state or {}),
        "revokes": record.revokes,
        "reason": record.reason,
        "signer": record.signer,
        "signature": record.signature,
    }


def state_to_dict(state: VerifiedState) -> dict[str, Any]:
    return {
        "digest": state.digest,
        "txid": state.txid,
        "height": state.height,
        "code": state.code.value if state.code is not None else None,
        "verdicts": {name: bool(state.verdicts.get(name, False)) for name in VERDICT_NAMES},
        "revoked": state.revoked,
        "revoked_by": state.revoked_by,
        "record": record_to_dict(state.record),
    }


def report_to_dict(report: TraceReport) -> dict[str, Any]:
    return {
        "product": report.product,
        "tip_height": report.tip_height,
        "healthy": report.healthy,
        "all_verdicts_pass": report.all_verdicts_pass,
        "current": report.current.digest,
        "init": state_to_dict(report.init),
        "states": [state_to_dict(s) for s in report.states],
        "detached": [state_to_dict(s) for s in report.detached],
        "pending": list(report.pending),
        "anomalies": list(report.anomalies),
    }


def file_verdict_to_dict(verdict: FileVerdict) -> dict[str, Any]:
    return {
        "status": verdict.status.value,
        "digest": verdict.digest,
        "txid": verdict.txid,
        "height": verdict.height,
        "code": verdict.code.value if verdict.code is not None else None,
        "confirmations": verdict.confirmations,
    }


def to_json(document: dict[str, Any]) -> str:
    return json.dumps(document, indent=2, sort_keys=False, ensure_ascii=False)


def render_json(report: TraceReport) -> str:
    return to_json(report_to_dict(report))


# ---------- текстовый вывод ----------

def states_frame(states: Iterable[VerifiedState], start: int = 0) -> pd.DataFrame:
    rows = []
    for number, state in enumerate(states, start=start):
        record = state.record
        rows.append(
            {
                "#": number,
                "kind": record.kind.value if record.kind is not None else "?",
                "digest": state.digest[:SHORT_DIGEST],
                "height": "-" if state.height is None else state.height,
                "timestamp": format_timestamp(record.timestamp) if record.timestamp is not None else "?",
                "revoked": "yes" if state.revoked else "",
                "failed": ",".join(state.failed) or "-",
            }
        )
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


def render_states_text(states: list[VerifiedState]) -> str:
    if not states:
        return "(no states)"
    return states_frame(states).to_string(index=False)


def render_text(report: TraceReport) -> str:
    lines = [
        f"product:    {report.product}",
        f"tip height: {report.tip_height}",
        f"init:       {report.init.digest}",
        f"current:    {report.current.digest}",
        "",
        states_frame([report.init, *report.states]).to_string(index=False),
    ]
    current_state = report.current.record.state or {}
    if current_state:
        lines += ["", "current state:"]
        lines += [f"  {name} = {value}" for name, value in current_state.items()]
    if report.detached:
        lines += ["", "detached records:", states_frame(report.detached).to_string(index=False)]
    if report.pending:
        lines += ["", "pending:"] + [f"  {digest}" for digest in report.pending]
    lines += ["", "anomalies:" if report.anomalies else "anomalies: none"]
    lines += [f"  - {anomaly}" for anomaly in report.anomalies]
    lines.append("status: " + ("OK" if report.healthy else "FAILED"))
    return "\n".join(lines)


def render_forward_text(matches: list[tuple[str, VerifiedState]]) -> str:
    if not matches:
        return "(no matching products)"
    frame = pd.DataFrame(
        [
            {
                "product": product,
                "digest": state.digest[:SHORT_DIGEST],
                "height": "-" if state.height is None else state.height,
                "state": ", ".join(f"{k}={v}" for k, v in (state.record.state or {}).items()),
            }
            for product, state in matches
        ]
    )
    return frame.to_string(index=False)


def render_file_verdict_text(verdict: FileVerdict) -> str:
    if verdict.txid is None:
        return f"{verdict.status.value} {verdict.digest}"
    height = "-" if verdict.height is None else verdict.height
    return (
        f"{verdict.status.value} {verdict.digest} txid={verdict.txid} "
        f"height={height} code={verdict.code.value} confirmations={verdict.confirmations}"
    )
