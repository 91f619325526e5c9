"""Private audit chain of sharing events plus the simulated public anchor store.

Blocks are hash-linked through their headers; each block's header digest is
also written to an :class:`AnchorStore`, an independent write-once log with
its own hash chain. Tampering with the private chain shows up as a mismatch
against the anchors even when the attacker rewrites the links consistently.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Mapping

from .broker import ProtectionReport
from .domain import ZERO_DIGEST, Clock, Digest, SystemClock, canonical_bytes, digest, digest_value
from .errors import (
    ChainCorrupt,
    ChainUnavailable,
    DuplicateAnchor,
    EmptyBatch,
    EncodingError,
    UnknownBlock,
)
from .store import CommitQueue, JsonlFile, parse_canonical_line

DEFAULT_MAX_BATCH = 100


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditTrail:
    """One recorded authorization event.

    ``trail_id``, ``sic_id``, ``broker_id``, ``broker_report`` and ``timestamp``
    are the five core components. ``decision_payload`` is an extension that
    carries the decision and the originating request so auditors can recompute
    the outcome; it is serialized under the ``ext`` key to keep it visibly
    separate. ``sic_id`` is None when no consent was matched.
    """

    trail_id: str
    sic_id: str | None
    broker_id: str | None
    broker_report: ProtectionReport | None
    timestamp: int
    decision_payload: Mapping[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "trail_id": self.trail_id,
            "sic_id": self.sic_id,
            "broker_id": self.broker_id,
            "broker_report": None if self.broker_report is None else self.broker_report.to_dict(),
            "timestamp": self.timestamp,
            "ext": {"decision_payload": self.decision_payload},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AuditTrail":
        report = d.get("broker_report")
        ext = d.get("ext") or {}
        return cls(
            trail_id=d["trail_id"],
            sic_id=d.get("sic_id"),
            broker_id=d.get("broker_id"),
            broker_report=None if report is None else ProtectionReport.from_dict(report),
            timestamp=d["timestamp"],
            decision_payload=ext.get("decision_payload"),
        )


@dataclass(frozen=True)
class BlockHeader:
    block_id: int
    prev_hash: Digest
    data_hash: Digest
    created_at: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "block_id": self.block_id,
            "prev_hash": self.prev_hash,
            "data_hash": self.data_hash,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BlockHeader":
        return cls(d["block_id"], d["prev_hash"], d["data_hash"], d["created_at"])

    @property
    def digest(self) -> Digest:
        return digest_value(self)


@dataclass(frozen=True)
class AuditBlock:
    header: BlockHeader
    data: tuple[AuditTrail, ...]

    @property
    def block_id(self) -> int:
        return self.header.block_id

    def to_dict(self) -> dict[str, Any]:
        return {"header": self.header.to_dict(), "data": [t.to_dict() for t in self.data]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AuditBlock":
        return cls(BlockHeader.from_dict(d["header"]), tuple(AuditTrail.from_dict(t) for t in d["data"]))


class AnchorKind(str, Enum):
    AUDIT_BLOCK = "AuditBlock"
    PPA_INTEGRITY = "PpaIntegrity"
    COMPLIANCE_REPORT = "ComplianceReport"


@dataclass(frozen=True)
class AnchorEntry:
    kind: AnchorKind
    ref_id: str
    anchored_hash: Digest
    anchored_at: int
    prev_hash: Digest = ZERO_DIGEST
    entry_hash: Digest = ""

    def body(self) -> dict[str, Any]:
        return {
            "kind": AnchorKind(self.kind).value,
            "ref_id": self.ref_id,
            "anchored_hash": self.anchored_hash,
            "anchored_at": self.anchored_at,
            "prev_hash": self.prev_hash,
        }

    def to_dict(self) -> dict[str, Any]:
        return {**self.body(), "entry_hash": self.entry_hash}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AnchorEntry":
        return cls(
            AnchorKind(d["kind"]), d["ref_id"], d["anchored_hash"],
            d["anchored_at"], d["prev_hash"], d["entry_hash"],
        )


class FaultKind(str, Enum):
    LINK_BREAK = "LinkBreak"
    DATA_MISMATCH = "DataMismatch"
    ANCHOR_MISMATCH = "AnchorMismatch"
    MISSING_ANCHOR = "MissingAnchor"


@dataclass(frozen=True, order=True)
class Fault:
    block_id: int
    fault: FaultKind

    def to_dict(self) -> dict[str, Any]:
        return {"block_id": self.block_id, "fault": FaultKind(self.fault).value}


# ---------------------------------------------------------------------------
# anchor store
# ---------------------------------------------------------------------------

class AnchorStore:
    """Write-once anchors, kept in their own hash-chained append-only log."""

    def __init__(
        self,
        path: str | Path | None = None,
        *,
        clock: Clock | None = None,
        queue: CommitQueue | None = None,
        fsync: bool = False,
    ) -> None:
        self.clock = clock or SystemClock()
        self.queue = queue or CommitQueue()
        self._file = JsonlFile(path, fsync=fsync)
        self._entries: list[AnchorEntry] = []
        self._index: dict[tuple[AnchorKind, str], AnchorEntry] = {}
        for rec in self._file.records():
            entry = AnchorEntry.from_dict(rec)
            self._entries.append(entry)
            self._index.setdefault((entry.kind, entry.ref_id), entry)

    @property
    def path(self) -> Path | None:
        return self._file.path

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[AnchorEntry]:
        return list(self._entries)

    def get(self, kind: AnchorKind, ref_id: Any) -> AnchorEntry | None:
        return self._index.get((AnchorKind(kind), str(ref_id)))

    def count(self, kind: AnchorKind) -> int:
        return sum(1 for e in self._entries if e.kind == kind)

    def anchor(self, kind: AnchorKind, ref_id: Any, anchored_hash: Digest) -> AnchorEntry:
        kind, ref_id = AnchorKind(kind), str(ref_id)
        with self.queue:
            if (kind, ref_id) in self._index:
                raise DuplicateAnchor(f"{kind.value} {ref_id} is already anchored")
            prev = self._entries[-1].entry_hash if self._entries else ZERO_DIGEST
            entry = AnchorEntry(kind, ref_id, anchored_hash, self.clock.now(), prev)
            entry = replace(entry, entry_hash=digest_value(entry.body()))
            self._file.append(entry)
            self._entries.append(entry)
            self._index[(kind, ref_id)] = entry
            return entry

    def anchor_block(self, block_id: int, header_digest: Digest) -> AnchorEntry:
        return self.anchor(AnchorKind.AUDIT_BLOCK, block_id, header_digest)

    def anchor_ppa(self, ppa_id: str, composite_digest: Digest) -> AnchorEntry:
        return self.anchor(AnchorKind.PPA_INTEGRITY, ppa_id, composite_digest)

    def verify(self) -> list[int]:
        """Recompute the anchor log's own links from disk; returns bad entry indexes."""
        bad: list[int] = []
        prev = ZERO_DIGEST
        seen: set[tuple[str, str]] = set()
        for i, line in enumerate(self._file.lines()):
            try:
                entry = AnchorEntry.from_dict(_parse(line))
            except (ValueError, KeyError, TypeError):
                bad.append(i)
                prev = None
                continue
            key = (entry.kind.value, entry.ref_id)
            if (
                entry.prev_hash != prev
                or entry.entry_hash != digest_value(entry.body())
                or key in seen
            ):
                bad.append(i)
            seen.add(key)
            prev = entry.entry_hash
        return bad


def _parse(line: bytes) -> Any:
    try:
        return parse_canonical_line(line)
    except EncodingError as exc:
        raise ValueError(str(exc)) from None


# ---------------------------------------------------------------------------
# audit chain
# ---------------------------------------------------------------------------

class IngestToken:
    """Capability to submit trails; a chain hands out exactly one."""

    __slots__ = ("_chain_id",)

    def __init__(self, chain_id: int) -> None:
        self._chain_id = chain_id


class AuditChain:
    """Hash-linked blocks of audit trails with a buffered single-writer append path."""

    def __init__(
        self,
        path: str | Path | None = None,
        anchors: AnchorStore | None = None,
        *,
        max_batch: int = DEFAULT_MAX_BATCH,
        clock: Clock | None = None,
        queue: CommitQueue | None = None,
        fsync: bool = False,
    ) -> None:
        if max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        self.max_batch = max_batch
        self.clock = clock or SystemClock()
        self.queue = queue or (anchors.queue if anchors is not None else CommitQueue())
        self.anchors = anchors if anchors is not None else AnchorStore(clock=self.clock, queue=self.queue)
        self._file = JsonlFile(path, fsync=fsync)
        self._blocks: list[AuditBlock] = []
        self._buffer: list[AuditTrail] = []
        self._token: IngestToken | None = None
        self._token_lock = threading.Lock()
        self._corrupt_on_load = False
        for line in self._file.lines():
            try:
                self._blocks.append(AuditBlock.from_dict(_parse(line)))
            except (ValueError, KeyError, TypeError):
                self._corrupt_on_load = True
        self._tail_size = len(self._file.raw()) if self._file.path else 0
        self._trail_counter = sum(len(b.data) for b in self._blocks)

    @property
    def path(self) -> Path | None:
        return self._file.path

    def __len__(self) -> int:
        return len(self._blocks)

    @property
    def trails_issued(self) -> int:
        """Number of trail ids handed out so far (committed, buffered or reserved)."""
        return self._trail_counter

    @property
    def pending(self) -> int:
        return len(self._buffer)

    # -- ingestion capability ---------------------------------------------

    def ingest_token(self) -> IngestToken:
        with self._token_lock:
            if self._token is not None:
                raise PermissionError("the ingest capability has already been issued")
            self._token = IngestToken(id(self))
            return self._token

    def _check_token(self, token: IngestToken | None) -> None:
        if token is None or token is not self._token:
            raise PermissionError("submitting trails requires the chain's ingest token")

    def reserve_trail_id(self) -> str:
        with self.queue:
            self._trail_counter += 1
            return f"TR-{self._trail_counter:08d}"

    # -- writes ------------------------------------------------------------

    def submit(self, trail: AuditTrail, token: IngestToken) -> list[AuditBlock]:
        """Buffer one trail; returns any blocks committed because the buffer filled."""
        self._check_token(token)
        with self.queue:
            self._buffer.append(trail)
            if len(self._buffer) >= self.max_batch:
                return self._flush_locked()
        return []

    def flush(self) -> list[AuditBlock]:
        with self.queue:
            return self._flush_locked()

    def _flush_locked(self) -> list[AuditBlock]:
        blocks = []
        while self._buffer:
            batch = self._buffer[: self.max_batch]
            blocks.append(self._append_locked(batch))
            del self._buffer[: len(batch)]
        return blocks

    def append_trails(self, trails: list[AuditTrail], token: IngestToken) -> AuditBlock:
        self._check_token(token)
        if not trails:
            raise EmptyBatch("append_trails needs at least one trail")
        if len(trails) > self.max_batch:
            raise ValueError(f"batch of {len(trails)} exceeds max_batch={self.max_batch}")
        with self.queue:
            return self._append_locked(list(trails))

    def _check_tail(self) -> None:
        if self._corrupt_on_load:
            raise ChainCorrupt("persisted chain failed to parse on load")
        if self._blocks:
            tail = self._blocks[-1]
            anchor = self.anchors.get(AnchorKind.AUDIT_BLOCK, tail.block_id)
            if anchor is None or anchor.anchored_hash != tail.header.digest:
                raise ChainCorrupt(f"tail block {tail.block_id} does not match its anchor")
        if self._file.path is not None:
            try:
                size = self._file.path.stat().st_size
            except OSError as exc:
                raise ChainUnavailable(str(exc)) from exc
            if size != self._tail_size:
                raise ChainCorrupt("private chain file changed outside the append path")
            if self._blocks:
                expected = canonical_bytes(self._blocks[-1]) + b"\n"
                with open(self._file.path, "rb") as fh:
                    fh.seek(size - len(expected))
                    if fh.read() != expected:
                        raise ChainCorrupt("private chain tail was modified")

    def _append_locked(self, trails: list[AuditTrail]) -> AuditBlock:
        self._check_tail()
        prev = self._blocks[-1].header.digest if self._blocks else ZERO_DIGEST
        header = BlockHeader(
            block_id=len(self._blocks),
            prev_hash=prev,
            data_hash=digest_value([t.to_dict() for t in trails]),
            created_at=self.clock.now(),
        )
        block = AuditBlock(header, tuple(trails))
        try:
            line = self._file.append(block)
        except OSError as exc:
            raise ChainUnavailable(str(exc)) from exc
        self._tail_size += len(line) + 1
        self._blocks.append(block)
        self.anchors.anchor_block(header.block_id, header.digest)
        return block

    # -- reads -------------------------------------------------------------

    def read_block(self, block_id: int) -> AuditBlock:
        if not 0 <= block_id < len(self._blocks):
            raise UnknownBlock(f"no block {block_id}")
        return self._blocks[block_id]

    def blocks(self, block_range: range | None = None) -> list[AuditBlock]:
        snapshot = list(self._blocks)
        if block_range is None:
            return snapshot
        for b in block_range:
            if not 0 <= b < len(snapshot):
                raise UnknownBlock(f"no block {b}")
        return [snapshot[b] for b in block_range]

    def iterate_trails(self, block_range: range | None = None) -> Iterator[AuditTrail]:
        for block in self.blocks(block_range):
            yield from block.data

    def block_of(self, trail_id: str) -> int | None:
        for block in self._blocks:
            if any(t.trail_id == trail_id for t in block.data):
                return block.block_id
        return None

    # -- verification ------------------------------------------------------

    def verify_chain(self) -> list[Fault]:
        """Check every persisted block against its data, its predecessor and its anchor.

        Reads the persisted bytes (not the in-memory copy) so any on-disk
        modification is visible. Returns an empty list iff the chain is intact.
        """
        faults: set[Fault] = set()
        lines = self._file.lines()
        prev_header_digest: Digest | None = ZERO_DIGEST
        for idx, line in enumerate(lines):
            try:
                raw = _parse(line)
                header = BlockHeader.from_dict(raw["header"])
                data = raw["data"]
                if not isinstance(data, list) or not all(isinstance(t, dict) for t in data):
                    raise TypeError("block data must be a list of trail objects")
                if not isinstance(header.block_id, int) or isinstance(header.block_id, bool):
                    raise TypeError("block_id must be an integer")
            except (ValueError, KeyError, TypeError):
                faults.add(Fault(idx, FaultKind.DATA_MISMATCH))
                if self.anchors.get(AnchorKind.AUDIT_BLOCK, idx) is None:
                    faults.add(Fault(idx, FaultKind.MISSING_ANCHOR))
                else:
                    faults.add(Fault(idx, FaultKind.ANCHOR_MISMATCH))
                prev_header_digest = None
                continue

            if header.block_id != idx:
                faults.add(Fault(idx, FaultKind.LINK_BREAK))
            recomputed_data_hash = digest(canonical_bytes(data))
            if header.data_hash != recomputed_data_hash:
                faults.add(Fault(idx, FaultKind.DATA_MISMATCH))
            if prev_header_digest is not None and header.prev_hash != prev_header_digest:
                faults.add(Fault(idx, FaultKind.LINK_BREAK))
            current = BlockHeader(header.block_id, header.prev_hash, recomputed_data_hash, header.created_at)
            anchor = self.anchors.get(AnchorKind.AUDIT_BLOCK, idx)
            if anchor is None:
                faults.add(Fault(idx, FaultKind.MISSING_ANCHOR))
            elif anchor.anchored_hash != current.digest or anchor.anchored_hash != header.digest:
                faults.add(Fault(idx, FaultKind.ANCHOR_MISMATCH))
            prev_header_digest = header.digest

        # anchored blocks that vanished from the private chain
        for entry in self.anchors.entries():
            if entry.kind == AnchorKind.AUDIT_BLOCK and int(entry.ref_id) >= len(lines):
                faults.add(Fault(int(entry.ref_id), FaultKind.LINK_BREAK))
        return sorted(faults)
