from __future__ import annotations

import os
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

import structlog
from pydantic import BaseModel, ValidationError

from app.chain.tx_codec import OP_RETURN_MAX_BYTES, classify_payload
from app.common.atomic_file import write_atomic
from app.common.digest import ZERO_DIGEST
from app.ledger.ledger_mempool import LedgerError, Mempool
from app.ledger.ledger_models import (
    Block,
    ChainIntegrity,
    ChainTx,
    LedgerConfig,
    ScanEntry,
    TxStatus,
)

try:
    import fcntl
except ImportError:  # Windows
    fcntl = None

logger = structlog.get_logger(__name__)


class PayloadTooLarge(LedgerError):
    pass


class UnknownTx(LedgerError):
    pass


class RangeOutOfBounds(LedgerError):
    pass


class LedgerUnavailable(LedgerError):
    pass


class ClockError(LedgerError):
    pass


class LedgerState(BaseModel):
    """Sidecar state: virtual clock, submission counter, mempool."""

    clock: int
    nonce: int = 0
    mempool: list[ChainTx] = []


def state_path_for(chain_file: Path) -> Path:
    return chain_file.with_name(chain_file.name + ".state.json")


def lock_path_for(chain_file: Path) -> Path:
    return chain_file.with_name(chain_file.name + ".lock")


class Ledger:
    """
    Append-only simulated blockchain on a virtual clock.

    Blocks are produced on schedule (every block_interval seconds of virtual
    time), drain the mempool fee-descending, and are appended to a JSON Lines
    chain file when one is given. All mutations go through one lock; readers
    only ever see committed blocks.

    With a chain file every mutation also holds an exclusive flock on
    `<chain>.lock` and first re-reads blocks and sidecar state written by
    other processes, so concurrent CLI runs never drop a submission.
    Reads use the state as of the last load or mutation.
    """

    def __init__(self, config: Optional[LedgerConfig] = None, chain_file: Optional[Path] = None):
        self.config = config or LedgerConfig()
        self.chain_file = Path(chain_file) if chain_file is not None else None
        self._lock = threading.RLock()
        self._held = 0
        self._blocks: list[Block] = []
        self._inclusion: dict[str, tuple[int, int]] = {}
        self._mempool = Mempool()
        self._clock = self.config.genesis_time
        self._nonce = 0

        with self._exclusive():
            if not self._blocks:
                self._append_block(Block.genesis(self.config.genesis_time))
                self._save_state()
        logger.debug("ledger_loaded", path=str(self.chain_file), tip=self.tip_height, clock=self._clock)

    # ---------- персистентность ----------

    @contextmanager
    def _exclusive(self) -> Iterator[None]:
        with self._lock:
            if self.chain_file is None or self._held:
                self._held += 1
                try:
                    yield
                finally:
                    self._held -= 1
                return

            lock_path = lock_path_for(self.chain_file)
            try:
                lock_path.parent.mkdir(parents=True, exist_ok=True)
                handle = open(lock_path, "a+")
            except OSError as exc:
                raise LedgerUnavailable(f"cannot open ledger lock {lock_path}: {exc}") from exc
            with handle:
                if fcntl is not None:
                    fcntl.flock(handle.fileno(), fcntl.LOCK_EX)
                self._held += 1
                try:
                    self._refresh()
                    yield
                finally:
                    self._held -= 1
                    if fcntl is not None:
                        fcntl.flock(handle.fileno(), fcntl.LOCK_UN)

    def _refresh(self) -> None:
        """Picks up blocks and sidecar state written since the last look."""
        if not self.chain_file.is_file():
            return
        try:
            lines = self.chain_file.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise LedgerUnavailable(f"cannot read chain file {self.chain_file}: {exc}") from exc

        for number in range(len(self._blocks), len(lines)):
            try:
                block = Block.model_validate_json(lines[number])
            except ValidationError as exc:
                raise LedgerUnavailable(
                    f"chain file {self.chain_file} line {number + 1} is unreadable"
                ) from exc
            self._index_block(block)

        state_path = state_path_for(self.chain_file)
        if not state_path.is_file():
            if self._blocks:
                self._clock = max(self._clock, self._blocks[-1].timestamp)
            return
        try:
            state = LedgerState.model_validate_json(state_path.read_text(encoding="utf-8"))
        except (OSError, ValidationError) as exc:
            raise LedgerUnavailable(f"cannot read ledger state {state_path}: {exc}") from exc
        self._clock = state.clock
        self._nonce = state.nonce
        self._mempool = Mempool()
        for tx in state.mempool:
            if tx.txid not in self._inclusion:
                self._mempool.add_transaction(tx)

    def _save_state(self) -> None:
        if self.chain_file is None:
            return
        state = LedgerState(clock=self._clock, nonce=self._nonce, mempool=list(self._mempool.transactions))
        try:
            write_atomic(state_path_for(self.chain_file), state.model_dump_json().encode("utf-8"))
        except OSError as exc:
            raise LedgerUnavailable(f"cannot write ledger state: {exc}") from exc

    def _index_block(self, block: Block) -> None:
        self._blocks.append(block)
        for position, tx in enumerate(block.txs):
            self._inclusion.setdefault(tx.txid, (block.height, position))

    def _append_block(self, block: Block) -> None:
        if self.chain_file is not None:
            try:
                self.chain_file.parent.mkdir(parents=True, exist_ok=True)
                with open(self.chain_file, "a", encoding="utf-8") as f:
                    f.write(block.model_dump_json() + "\n")
                    f.flush()
                    os.fsync(f.fileno())
            except OSError as exc:
                raise LedgerUnavailable(f"cannot append to chain file: {exc}") from exc
        self._index_block(block)

    # ---------- чтение ----------

    @property
    def confirmation_depth(self) -> int:
        return self.config.confirmation_depth

    @property
    def tip_height(self) -> int:
        with self._lock:
            return self._blocks[-1].height

    @property
    def clock(self) -> int:
        with self._lock:
            return self._clock

    @property
    def blocks(self) -> tuple[Block, ...]:
        with self._lock:
            return tuple(self._blocks)

    def block_at(self, height: int) -> Block:
        with self._lock:
            if not 0 <= height < len(self._blocks):
                raise RangeOutOfBounds(f"no block at height {height}")
            return self._blocks[height]

    def pending(self) -> list[ChainTx]:
        with self._lock:
            return list(self._mempool.transactions)

    def inclusion(self, txid: str) -> Optional[tuple[int, int]]:
        """(height, position in block) of an included transaction."""
        with self._lock:
            return self._inclusion.get(txid)

    # ---------- запись ----------

    def submit(self, payload: bytes) -> str:
        if len(payload) > self.config.max_payload:
            raise PayloadTooLarge(
                f"payload has {len(payload)} bytes but is limited to {self.config.max_payload}"
            )
        with self._exclusive():
            self._nonce += 1
            tx = ChainTx.create(
                payload=bytes(payload),
                fee=self.config.fee_for(payload),
                submitted_at=self._clock,
                nonce=self._nonce,
            )
            self._mempool.add_transaction(tx)
            self._save_state()
        logger.info("tx_submitted", txid=tx.txid, size=len(payload), fee=tx.fee, at=tx.submitted_at)
        return tx.txid

    def produce_block(self, now: int) -> Optional[Block]:
        """
        Produces a block at `now` if the block interval has elapsed since the
        tip, draining the whole mempool into it. Empty blocks are produced too.
        """
        with self._exclusive():
            if now < self._clock:
                raise ClockError(f"virtual clock is at {self._clock}, cannot go back to {now}")
            self._clock = now
            tip = self._blocks[-1]
            if now < tip.timestamp + self.config.block_interval:
                self._save_state()
                return None

            txs = tuple(self._mempool.get_block_candidates())
            block = Block.create(tip.height + 1, tip.block_hash, now, txs)
            self._append_block(block)
            self._mempool.remove_confirmed(txs)
            self._save_state()
        logger.info("block_produced", height=block.height, timestamp=now, txs=len(txs))
        return block

    def advance(self, seconds: int) -> list[Block]:
        """
        Moves the virtual clock forward and produces every block that falls
        due on the way, each at its exact schedule point.
        """
        if seconds < 0:
            raise ClockError("virtual time only moves forward")
        produced = []
        with self._exclusive():
            target = self._clock + seconds
            while self._blocks[-1].timestamp + self.config.block_interval <= target:
                due = self._blocks[-1].timestamp + self.config.block_interval
                produced.append(self.produce_block(max(due, self._clock)))
            self._clock = target
            self._save_state()
        return produced

    # ---------- статусы ----------

    def confirmations(self, txid: str) -> int:
        with self._lock:
            included = self._inclusion.get(txid)
            if included is not None:
                return self._blocks[-1].height - included[0] + 1
            if txid in self._mempool:
                return 0
        raise UnknownTx(f"unknown transaction {txid}")

    def status(self, txid: str) -> TxStatus:
        confirmations = self.confirmations(txid)
        if confirmations == 0:
            return TxStatus.PENDING
        if confirmations < self.config.confirmation_depth:
            return TxStatus.INCLUDED
        return TxStatus.VERIFIED

    def scan(self, from_height: int, to_height: int) -> list[ScanEntry]:
        """
        Trace payloads in [from_height, to_height], in chain order.
        Foreign payloads are skipped.
        """
        with self._lock:
            blocks = list(self._blocks)
        tip = blocks[-1].height
        if not 0 <= from_height <= to_height <= tip:
            raise RangeOutOfBounds(f"range {from_height}..{to_height} outside 0..{tip}")

        found = []
        for block in blocks[from_height : to_height + 1]:
            for tx in block.txs:
                payload = classify_payload(tx.payload_bytes)
                if payload is not None:
                    found.append(ScanEntry(block.height, tx.txid, payload))
        return found

    # ---------- целостность ----------

    def verify_chain_integrity(self) -> ChainIntegrity:
        if self.chain_file is not None:
            return verify_chain_file(self.chain_file)
        return verify_blocks(self.blocks)


def verify_blocks(blocks) -> ChainIntegrity:
    """
    Recomputes every txid, block hash and prev link from genesis.
    """
    prev_hash = ZERO_DIGEST
    prev_timestamp = None
    for expected_height, block in enumerate(blocks):
        if block.height != expected_height:
            return ChainIntegrity(False, expected_height, f"height {block.height} out of sequence")
        if block.prev_block_hash != prev_hash:
            return ChainIntegrity(False, block.height, "prev_block_hash does not match previous block")
        if prev_timestamp is not None and block.timestamp < prev_timestamp:
            return ChainIntegrity(False, block.height, "timestamp goes backwards")
        for tx in block.txs:
            if tx.computed_txid() != tx.txid:
                return ChainIntegrity(False, block.height, f"txid mismatch for {tx.txid}")
            if len(tx.payload_bytes) > OP_RETURN_MAX_BYTES:
                return ChainIntegrity(False, block.height, f"oversized payload in {tx.txid}")
        if block.computed_hash() != block.block_hash:
            return ChainIntegrity(False, block.height, "block_hash mismatch")
        prev_hash = block.block_hash
        prev_timestamp = block.timestamp
    if not blocks:
        return ChainIntegrity(False, 0, "chain has no genesis block")
    return ChainIntegrity(True)


def verify_chain_file(path: Path) -> ChainIntegrity:
    """
    Integrity check straight from disk; a line that no longer parses is
    reported at its height (line n holds height n-1).
    """
    try:
        lines = Path(path).read_bytes().split(b"\n")
    except OSError as exc:
        return ChainIntegrity(False, 0, f"cannot read chain file: {exc}")
    if lines and lines[-1] == b"":
        lines.pop()

    blocks = []
    for height, line in enumerate(lines):
        try:
            blocks.append(Block.model_validate_json(line))
        except ValidationError as exc:
            checked = verify_blocks(blocks)
            if not checked and blocks:
                return checked
            return ChainIntegrity(False, height, f"unreadable block: {exc.error_count()} error(s)")
    result = verify_blocks(blocks)
    if result:
        logger.debug("chain_integrity_ok", path=str(path), blocks=len(blocks))
    else:
        logger.warning("chain_integrity_failed", height=result.bad_height, reason=result.reason)
    return result
