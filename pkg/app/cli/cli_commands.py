from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path
from typing import Any, Optional

import structlog
from pydantic import ValidationError

from app.cli.cli_config import CliConfig, OutputFormat, load_config
from app.common.errors import ConfigError, TraceError
from app.common.log_settings import DEFAULT_LEVEL, VERBOSE_LEVEL, set_log_def_params
from app.identity.identity_keystore import Keystore
from app.identity.identity_profile import meets_threshold
from app.ledger.ledger_sim import Ledger, verify_chain_file
from app.pipeline.device_events import FileUnreadable, ingest_events
from app.pipeline.product_pipeline import (
    Submission,
    TraceWorkspace,
    init_product,
    revoke_product,
    update_product,
)
from app.record.record_model import FieldSpec
from app.storage.blob_store import BlobStore
from app.trace.trace_engine import (
    backward_trace,
    forward_trace,
    resolve_chain,
    verify_file_against_chain,
)
from app.trace.trace_index import build_index
from app.trace.trace_report_renderer import (
    file_verdict_to_dict,
    render_file_verdict_text,
    render_forward_text,
    render_states_text,
    render_text,
    report_to_dict,
    state_to_dict,
    to_json,
)

logger = structlog.get_logger(__name__)

# --- Коды завершения ---
EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_ERROR = 2


# ---------- вспомогательное ----------

def _pairs(items: Optional[list[str]], option: str) -> dict[str, str]:
    pairs = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"{option} expects key=value, got {item!r}")
        pairs[key] = value
    return pairs


def _emit(config: CliConfig, text: str, document: dict[str, Any]) -> None:
    if config.output is OutputFormat.JSON:
        print(to_json(document))
    else:
        print(text)


def _workspace(config: CliConfig) -> TraceWorkspace:
    return TraceWorkspace(
        ledger=Ledger(config.ledger_config(), config.chain_file),
        store=BlobStore(config.store_root),
        keystore=Keystore(config.keystore),
        threshold=config.attestation_threshold,
    )


def _signer(args: argparse.Namespace, keystore: Keystore) -> str:
    if getattr(args, "signer", None):
        return args.signer
    identities = keystore.identities()
    if len(identities) == 1:
        return identities[0]
    raise ConfigError("--signer is required when the keystore holds more than one identity")


def _emit_submission(config: CliConfig, submission: Submission) -> int:
    _emit(
        config,
        f"{submission.digest} {submission.txid}",
        {
            "kind": submission.record.kind.value,
            "product": submission.record.product,
            "digest": submission.digest,
            "txid": submission.txid,
        },
    )
    return EXIT_OK


# ---------- идентичности ----------

def cmd_keygen(args: argparse.Namespace, config: CliConfig) -> int:
    info = {"name": args.name, **_pairs(args.info, "--info")}
    profile = Keystore(config.keystore).create_identity(info)
    _emit(config, profile.id, {"identity": profile.id, "public_key": profile.public_key, "info": profile.info})
    return EXIT_OK


def cmd_attest(args: argparse.Namespace, config: CliConfig) -> int:
    keystore = Keystore(config.keystore)
    attestation = keystore.attest(_signer(args, keystore), args.subject, args.statement)
    _emit(
        config,
        f"{attestation.attestor} attests {attestation.subject}",
        attestation.model_dump(mode="json"),
    )
    return EXIT_OK


def cmd_score(args: argparse.Namespace, config: CliConfig) -> int:
    score = Keystore(config.keystore).trust_score(args.identity)
    meets = meets_threshold(score, config.attestation_threshold)
    _emit(
        config,
        f"{args.identity} score={score} threshold={config.attestation_threshold} "
        f"{'meets' if meets else 'below'}",
        {
            "identity": args.identity,
            "score": score,
            "threshold": config.attestation_threshold,
            "meets_threshold": meets,
        },
    )
    return EXIT_OK


# ---------- продукт ----------

def cmd_product_init(args: argparse.Namespace, config: CliConfig) -> int:
    try:
        schema = [FieldSpec(name=name) for name in args.field or []]
        schema += [FieldSpec(name=name, required=False) for name in args.optional or []]
    except ValidationError as exc:
        raise ConfigError(f"bad field name: {exc.errors()[0]['msg']}") from exc
    ws = _workspace(config)
    return _emit_submission(config, init_product(ws, args.product, schema, _signer(args, ws.keystore)))


def cmd_product_update(args: argparse.Namespace, config: CliConfig) -> int:
    ws = _workspace(config)
    state = _pairs(args.set, "--set")
    return _emit_submission(config, update_product(ws, args.product, state, _signer(args, ws.keystore)))


def cmd_product_revoke(args: argparse.Namespace, config: CliConfig) -> int:
    ws = _workspace(config)
    submission = revoke_product(ws, args.product, args.target, args.reason, _signer(args, ws.keystore))
    return _emit_submission(config, submission)


def cmd_ingest(args: argparse.Namespace, config: CliConfig) -> int:
    ws = _workspace(config)
    summary = ingest_events(ws, Path(args.events), _signer(args, ws.keystore))
    lines = [summary.line()]
    lines += [f"line {number}: {message}" for number, message in summary.failed]
    _emit(
        config,
        "\n".join(lines),
        {
            "succeeded": len(summary.succeeded),
            "failed": len(summary.failed),
            "sources": dict(summary.sources),
            "submissions": [
                {"line": number, "digest": s.digest, "txid": s.txid} for number, s in summary.succeeded
            ],
            "failures": [{"line": number, "error": message} for number, message in summary.failed],
        },
    )
    return EXIT_OK if summary.ok else EXIT_VERIFICATION_FAILED


# ---------- проверка ----------

def cmd_trace(args: argparse.Namespace, config: CliConfig) -> int:
    criteria = _pairs(args.criteria, "--criteria")
    if args.product and criteria:
        raise ConfigError("give either a product or --criteria, not both")
    ws = _workspace(config)
    index = build_index(ws.ledger, ws.store)

    if args.product:
        report = resolve_chain(args.product, index, ws.keystore.public_key)
        _emit(config, render_text(report), report_to_dict(report))
        return EXIT_OK if report.healthy else EXIT_VERIFICATION_FAILED

    if not criteria and not args.all:
        raise ConfigError("give a product, --criteria key=value or --all")
    matches = forward_trace(criteria, index, ws.keystore.public_key, historical=args.historical)
    _emit(
        config,
        render_forward_text(matches),
        {
            "criteria": criteria,
            "historical": args.historical,
            "tip_height": index.tip_height,
            "matches": [{"product": product, "state": state_to_dict(state)} for product, state in matches],
        },
    )
    return EXIT_OK


def cmd_backward(args: argparse.Namespace, config: CliConfig) -> int:
    ws = _workspace(config)
    index = build_index(ws.ledger, ws.store)
    states = backward_trace(args.digest, index, ws.keystore.public_key)
    _emit(
        config,
        render_states_text(states),
        {"digest": args.digest, "tip_height": index.tip_height, "states": [state_to_dict(s) for s in states]},
    )
    return EXIT_OK if all(state.passed for state in states) else EXIT_VERIFICATION_FAILED


def cmd_verify(args: argparse.Namespace, config: CliConfig) -> int:
    try:
        data = Path(args.file).read_bytes()
    except OSError as exc:
        raise FileUnreadable(f"cannot read {args.file}: {exc}") from exc
    ws = _workspace(config)
    verdict = verify_file_against_chain(data, build_index(ws.ledger, ws.store))
    _emit(config, render_file_verdict_text(verdict), file_verdict_to_dict(verdict))
    return EXIT_OK if verdict else EXIT_VERIFICATION_FAILED


# ---------- леджер ----------

def _ledger(config: CliConfig) -> Ledger:
    return Ledger(config.ledger_config(), config.chain_file)


def cmd_ledger_advance(args: argparse.Namespace, config: CliConfig) -> int:
    ledger = _ledger(config)
    blocks = ledger.advance(args.seconds)
    text = "\n".join(f"block {b.height} t={b.timestamp} txs={len(b.txs)}" for b in blocks)
    text = (text + "\n" if text else "") + f"clock={ledger.clock} tip={ledger.tip_height}"
    _emit(
        config,
        text,
        {
            "clock": ledger.clock,
            "tip_height": ledger.tip_height,
            "blocks": [
                {"height": b.height, "timestamp": b.timestamp, "block_hash": b.block_hash, "txs": len(b.txs)}
                for b in blocks
            ],
        },
    )
    return EXIT_OK


def cmd_ledger_status(args: argparse.Namespace, config: CliConfig) -> int:
    ledger = _ledger(config)
    status = ledger.status(args.txid)
    confirmations = ledger.confirmations(args.txid)
    _emit(
        config,
        f"{status.value} confirmations={confirmations}",
        {"txid": args.txid, "status": status.value, "confirmations": confirmations},
    )
    return EXIT_OK


def cmd_ledger_integrity(args: argparse.Namespace, config: CliConfig) -> int:
    # read straight from disk, without loading the ledger
    if not config.chain_file.is_file():
        _ledger(config)
    result = verify_chain_file(config.chain_file)
    text = "OK" if result else f"FAILED at height {result.bad_height}: {result.reason}"
    _emit(config, text, {"ok": result.ok, "bad_height": result.bad_height, "reason": result.reason})
    return EXIT_OK if result else EXIT_VERIFICATION_FAILED


def cmd_ledger_scan(args: argparse.Namespace, config: CliConfig) -> int:
    ledger = _ledger(config)
    to_height = ledger.tip_height if args.to_height is None else args.to_height
    entries = ledger.scan(args.from_height, to_height)
    _emit(
        config,
        "\n".join(f"{e.height} {e.payload.code.value} {e.payload.digest} {e.txid}" for e in entries)
        or "(no trace payloads)",
        {
            "from": args.from_height,
            "to": to_height,
            "entries": [
                {"height": e.height, "txid": e.txid, "code": e.payload.code.value, "digest": e.payload.digest}
                for e in entries
            ],
        },
    )
    return EXIT_OK


# ---------- парсер ----------

def _global_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="config file (key = value lines)")
    common.add_argument("--store", default=argparse.SUPPRESS, help="blob store root")
    common.add_argument("--chain", default=argparse.SUPPRESS, help="ledger chain file")
    common.add_argument("--keystore", default=argparse.SUPPRESS, help="keystore directory")
    common.add_argument("--signer", default=argparse.SUPPRESS, help="identity id used to sign")
    common.add_argument("--output", choices=["text", "json"], default=argparse.SUPPRESS)
    common.add_argument("--threshold", type=int, default=argparse.SUPPRESS, help="attestation threshold")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    ap = argparse.ArgumentParser(prog="tracechain", parents=[common])
    sub = ap.add_subparsers(dest="cmd", required=True)

    k = sub.add_parser("keygen", parents=[common], help="create an identity")
    k.add_argument("--name", required=True)
    k.add_argument("--info", action="append", metavar="KEY=VALUE")
    k.set_defaults(func=cmd_keygen)

    a = sub.add_parser("attest", parents=[common], help="vouch for another identity")
    a.add_argument("subject")
    a.add_argument("statement")
    a.set_defaults(func=cmd_attest)

    s = sub.add_parser("score", parents=[common], help="trust score of an identity")
    s.add_argument("identity")
    s.set_defaults(func=cmd_score)

    p = sub.add_parser("product", help="company-side records")
    p_sub = p.add_subparsers(dest="product_cmd", required=True)

    pi = p_sub.add_parser("init", parents=[common])
    pi.add_argument("product")
    pi.add_argument("--field", action="append", metavar="NAME", help="required field")
    pi.add_argument("--optional", action="append", metavar="NAME", help="optional field")
    pi.set_defaults(func=cmd_product_init)

    pu = p_sub.add_parser("update", parents=[common])
    pu.add_argument("product")
    pu.add_argument("--set", action="append", metavar="KEY=VALUE", required=True)
    pu.set_defaults(func=cmd_product_update)

    pr = p_sub.add_parser("revoke", parents=[common])
    pr.add_argument("product")
    pr.add_argument("target", help="digest of the state to revoke")
    pr.add_argument("--reason")
    pr.set_defaults(func=cmd_product_revoke)

    i = sub.add_parser("ingest", parents=[common], help="device events, JSON Lines")
    i.add_argument("events")
    i.set_defaults(func=cmd_ingest)

    t = sub.add_parser("trace", parents=[common], help="trace report or forward query")
    t.add_argument("product", nargs="?")
    t.add_argument("--criteria", action="append", metavar="KEY=VALUE")
    t.add_argument("--all", action="store_true", help="every product with its current state")
    t.add_argument("--historical", action="store_true", help="match earlier non-revoked states too")
    t.set_defaults(func=cmd_trace)

    b = sub.add_parser("backward", parents=[common], help="origin-first chain of a state")
    b.add_argument("digest")
    b.set_defaults(func=cmd_backward)

    v = sub.add_parser("verify", parents=[common], help="check a file against the chain")
    v.add_argument("file")
    v.set_defaults(func=cmd_verify)

    l = sub.add_parser("ledger", help="simulated ledger")
    l_sub = l.add_subparsers(dest="ledger_cmd", required=True)

    la = l_sub.add_parser("advance", parents=[common])
    la.add_argument("--seconds", type=int, required=True)
    la.set_defaults(func=cmd_ledger_advance)

    ls = l_sub.add_parser("status", parents=[common])
    ls.add_argument("txid")
    ls.set_defaults(func=cmd_ledger_status)

    li = l_sub.add_parser("integrity", parents=[common])
    li.set_defaults(func=cmd_ledger_integrity)

    lsc = l_sub.add_parser("scan", parents=[common])
    lsc.add_argument("--from", dest="from_height", type=int, default=0)
    lsc.add_argument("--to", dest="to_height", type=int)
    lsc.set_defaults(func=cmd_ledger_scan)

    return ap


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR

    verbose = getattr(args, "verbose", False)
    set_log_def_params(VERBOSE_LEVEL if verbose else DEFAULT_LEVEL)

    json_output = getattr(args, "output", None) == "json"
    try:
        config = load_config(
            {
                "config": getattr(args, "config", None),
                "store": getattr(args, "store", None),
                "chain": getattr(args, "chain", None),
                "keystore": getattr(args, "keystore", None),
                "threshold": getattr(args, "threshold", None),
                "output": getattr(args, "output", None),
            }
        )
        json_output = config.output is OutputFormat.JSON
        return args.func(args, config)
    except TraceError as exc:
        logger.debug("command_failed", command=args.cmd, error_type=type(exc).__name__)
        if verbose:
            traceback.print_exc()
        if json_output:
            print(to_json({"error": type(exc).__name__, "message": str(exc)}))
        else:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
