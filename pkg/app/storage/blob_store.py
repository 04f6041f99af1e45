from __future__ import annotations

import errno
from pathlib import Path

import structlog

from app.common.atomic_file import write_atomic
from app.common.digest import is_hex_digest, sha256_hex
from app.common.errors import TraceError

logger = structlog.get_logger(__name__)


class BlobStoreError(TraceError):
    pass


class NotFound(BlobStoreError):
    pass


class IntegrityFailure(BlobStoreError):
    pass


class StorageFull(BlobStoreError):
    pass


class IoFailure(BlobStoreError):
    pass


class BlobStore:
    """
    Локальное контентно-адресуемое хранилище:

        <root>/<first 2 hex chars>/<remaining 62 hex chars>

    Objects are stored verbatim. Nothing is ever deleted.
    """

    def __init__(self, root: Path):
        self.root = Path(root)

    def _path(self, address: str) -> Path:
        if not is_hex_digest(address):
            raise NotFound(f"not a blob address: {address!r}")
        return self.root / address[:2] / address[2:]

    def put(self, data: bytes) -> str:
        address = sha256_hex(data)
        path = self._path(address)
        if path.is_file():
            return address
        try:
            write_atomic(path, bytes(data))
        except OSError as exc:
            if exc.errno == errno.ENOSPC:
                raise StorageFull(f"no space left in {self.root}") from exc
            raise IoFailure(f"cannot store blob {address}: {exc}") from exc
        logger.debug("blob_stored", address=address, size=len(data))
        return address

    def read_unverified(self, address: str) -> bytes:
        """Stored bytes as they are on disk, without the hash check."""
        path = self._path(address)
        try:
            return path.read_bytes()
        except FileNotFoundError as exc:
            raise NotFound(f"no blob {address}") from exc
        except OSError as exc:
            raise IoFailure(f"cannot read blob {address}: {exc}") from exc

    def get(self, address: str) -> bytes:
        data = self.read_unverified(address)
        if sha256_hex(data) != address:
            logger.warning("blob_integrity_failure", address=address)
            raise IntegrityFailure(f"stored bytes of {address} no longer match their address")
        return data

    def exists(self, address: str) -> bool:
        return is_hex_digest(address) and self._path(address).is_file()

    def addresses(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(
            shard.name + blob.name
            for shard in self.root.iterdir()
            if shard.is_dir() and len(shard.name) == 2
            for blob in shard.iterdir()
            if not blob.name.startswith(".tmp-")
        )
