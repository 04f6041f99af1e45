from typing import Protocol

from app.ledger.ledger_models import ChainTx, ScanEntry, TxStatus


class LedgerBackend(Protocol):
    """
    The seam the rest of the system depends on. The simulator implements it;
    a real-chain adapter would implement the same calls.
    """

    @property
    def confirmation_depth(self) -> int: ...

    @property
    def tip_height(self) -> int: ...

    def submit(self, payload: bytes) -> str: ...

    def pending(self) -> list[ChainTx]: ...

    def status(self, txid: str) -> TxStatus: ...

    def confirmations(self, txid: str) -> int: ...

    def scan(self, from_height: int, to_height: int) -> list[ScanEntry]: ...
