"""Runtime configuration.

Each setting resolves as: command flag, then ``CONSENTLEDGER_*`` environment
variable, then the JSON config file, then the built-in default.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

ENV_PREFIX = "CONSENTLEDGER_"


@dataclass(frozen=True)
class Config:
    data_dir: str = "./consentledger-data"
    max_batch: int = 100
    clock: str = "real"  # real | fixed
    seed: int = 0
    drop_rate: float = 0.0
    nodes: int = 5
    format: str = "json"  # json | table

    def __post_init__(self) -> None:
        if self.clock not in ("real", "fixed"):
            raise ValueError(f"clock must be 'real' or 'fixed', got {self.clock!r}")
        if self.format not in ("json", "table"):
            raise ValueError(f"format must be 'json' or 'table', got {self.format!r}")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")


def _coerce(name: str, raw: Any) -> Any:
    kind = {f.name: f.type for f in fields(Config)}[name]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return str(raw)


def resolve(
    flags: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
    config_path: str | Path | None = None,
) -> Config:
    flags = flags or {}
    env = os.environ if env is None else env
    if config_path is None:
        config_path = flags.get("config") or env.get(ENV_PREFIX + "CONFIG")
    from_file: dict[str, Any] = {}
    if config_path:
        from_file = json.loads(Path(config_path).read_text(encoding="utf-8"))
        unknown = set(from_file) - {f.name for f in fields(Config)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")

    values: dict[str, Any] = {}
    for f in fields(Config):
        if flags.get(f.name) is not None:
            values[f.name] = _coerce(f.name, flags[f.name])
        elif ENV_PREFIX + f.name.upper() in env:
            values[f.name] = _coerce(f.name, env[ENV_PREFIX + f.name.upper()])
        elif f.name in from_file:
            values[f.name] = _coerce(f.name, from_file[f.name])
    return Config(**values)
