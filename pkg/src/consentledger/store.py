"""Append-only canonical-JSON-lines files and the shared commit queue."""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Iterator

from .domain import canonical_bytes


class CommitQueue:
    """Single-writer serialization point shared by every persisted store.

    Holding one re-entrant lock across stores gives all writes a global
    total order; readers work on snapshots and never take the lock.
    """

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self.sequence = 0

    def __enter__(self) -> "CommitQueue":
        self._lock.acquire()
        self.sequence += 1
        return self

    def __exit__(self, *exc: object) -> None:
        self._lock.release()


class JsonlFile:
    """One canonical-JSON record per line; lines are only ever appended.

    ``path=None`` keeps records in memory only, which tests use heavily.
    """

    def __init__(self, path: str | Path | None, *, fsync: bool = False) -> None:
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self._memory: list[bytes] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch(exist_ok=True)

    def append(self, record: Any) -> bytes:
        line = canonical_bytes(record)
        if self.path is None:
            self._memory.append(line)
            return line
        with open(self.path, "ab") as fh:
            fh.write(line + b"\n")
            if self.fsync:
                fh.flush()
                os.fsync(fh.fileno())
        return line

    def raw(self) -> bytes:
        if self.path is None:
            return b"".join(line + b"\n" for line in self._memory)
        return self.path.read_bytes()

    def lines(self) -> list[bytes]:
        data = self.raw()
        if not data:
            return []
        parts = data.split(b"\n")
        if parts[-1] == b"":
            parts.pop()
        return parts

    def records(self) -> Iterator[Any]:
        for line in self.lines():
            yield json.loads(line)


def parse_canonical_line(line: bytes) -> Any:
    """Parse one line and insist it is byte-for-byte canonical.

    Rejecting non-canonical encodings means any byte-level change to a
    persisted record surfaces either here or as a changed value.
    """
    value = json.loads(line.decode("utf-8"))
    if canonical_bytes(value) != line:
        raise ValueError("record is not in canonical form")
    return value
