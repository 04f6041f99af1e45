from app.common.errors import TraceError
from app.ledger.ledger_models import ChainTx


class LedgerError(TraceError):
    pass


class MempoolFull(LedgerError):
    pass


class DuplicateTx(LedgerError):
    pass


class Mempool:
    def __init__(self, max_size: int = 10000):
        self.transactions: list[ChainTx] = []
        self.max_size = max_size  # ограничение памяти

    def __len__(self) -> int:
        return len(self.transactions)

    def __contains__(self, txid: str) -> bool:
        return any(tx.txid == txid for tx in self.transactions)

    def add_transaction(self, tx: ChainTx) -> None:
        if len(self.transactions) >= self.max_size:
            raise MempoolFull("Mempool at capacity")
        if tx.txid in self:
            raise DuplicateTx(f"Transaction {tx.txid} already in mempool")
        self.transactions.append(tx)

    def get_block_candidates(self) -> list[ChainTx]:
        """
        Fee-descending, txid-ascending on ties.
        """
        return sorted(self.transactions, key=lambda tx: (-tx.fee, tx.txid))

    def remove_confirmed(self, block_txs) -> None:
        txids = {tx.txid for tx in block_txs}
        self.transactions = [tx for tx in self.transactions if tx.txid not in txids]
