from __future__ import annotations

import os
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional

import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.common.errors import ConfigError
from app.identity.identity_profile import DEFAULT_THRESHOLD
from app.ledger.ledger_models import LedgerConfig

logger = structlog.get_logger(__name__)

# --- Переменные окружения и значения по умолчанию ---
ENV_HOME = "TRACE_HOME"
ENV_STORE = "TRACE_STORE"
ENV_CHAIN = "TRACE_CHAIN"
DEFAULT_HOME = ".trace"
CONFIG_FILE_NAME = "config"

# ключ конфигурационного файла -> поле CliConfig
CONFIG_KEYS = {
    "store": "store_root",
    "chain": "chain_file",
    "keystore": "keystore",
    "block_interval": "block_interval",
    "confirmation_depth": "confirmation_depth",
    "base_fee": "base_fee",
    "per_byte_fee": "per_byte_fee",
    "threshold": "attestation_threshold",
    "output": "output",
}


class OutputFormat(Enum):
    TEXT = "text"
    JSON = "json"


class CliConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    store_root: Path
    chain_file: Path
    keystore: Path
    block_interval: int = 600
    confirmation_depth: int = 3
    base_fee: int = 1000
    per_byte_fee: int = 10
    attestation_threshold: int = Field(default=DEFAULT_THRESHOLD, ge=0)
    output: OutputFormat = OutputFormat.TEXT

    @model_validator(mode="after")
    def _ledger_params(self) -> "CliConfig":
        self.ledger_config()
        return self

    def ledger_config(self) -> LedgerConfig:
        return LedgerConfig(
            block_interval=self.block_interval,
            confirmation_depth=self.confirmation_depth,
            base_fee=self.base_fee,
            per_byte_fee=self.per_byte_fee,
        )


def default_values(home: Path) -> dict[str, Any]:
    return {
        "store_root": home / "store",
        "chain_file": home / "chain.jsonl",
        "keystore": home / "keystore",
    }


def parse_config_file(path: Path) -> dict[str, str]:
    """
    Строки вида `key = value`; `#` comments and blank lines are ignored,
    unknown keys are an error.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc

    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{number}: expected `key = value`")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{number}: unknown key {key!r}")
        values[CONFIG_KEYS[key]] = value
    return values


def load_config(
    flags: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> CliConfig:
    """
    defaults < config file < command-line flags < environment.

    `flags` uses config-file key names (store, chain, keystore, threshold,
    output) plus `config` for an explicit config file path; None values
    are ignored.
    """
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    environ = os.environ if environ is None else environ

    home = Path(environ.get(ENV_HOME) or DEFAULT_HOME)
    values: dict[str, Any] = default_values(home)

    config_path = flags.pop("config", None)
    if config_path is not None:
        values.update(parse_config_file(Path(config_path)))
    elif (home / CONFIG_FILE_NAME).is_file():
        values.update(parse_config_file(home / CONFIG_FILE_NAME))

    for key, value in flags.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown option {key!r}")
        values[CONFIG_KEYS[key]] = value

    if environ.get(ENV_STORE):
        values["store_root"] = environ[ENV_STORE]
    if environ.get(ENV_CHAIN):
        values["chain_file"] = environ[ENV_CHAIN]

    try:
        config = CliConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    logger.debug(
        "config_loaded",
        store=str(config.store_root),
        chain=str(config.chain_file),
        keystore=str(config.keystore),
    )
    return config
