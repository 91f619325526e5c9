"""Proof-of-Compliance audit rounds.

A round takes the trails of a frozen block range through four phases:

1. order: keep transactions whose submitter signature verifies, sorted by
   (timestamp, txn_id);
2. validate: keep well-formed trails from blocks that still match their anchor
   and whose broker report is authentic;
3. compliance: every audit node independently recomputes the authorization
   outcome and classifies each transaction;
4. commit: the committer collects signed verdict vectors over the simulated
   network, takes a strict majority per transaction and appends the report to
   the report ledger, anchoring its digest.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .auditchain import AnchorKind, AnchorStore, AuditChain, AuditTrail, BlockHeader
from .authz import Decision, Outcome, ShareRequest, run_checks
from .broker import Verdict
from .domain import Clock, Keyring, Purpose, Signature, SystemClock, canonical_bytes, digest_value, sign
from .errors import CommitterUnreachable, InsufficientAuditors, UnknownBlock, UnknownPatientContract
from .netsim import NetConfig, Network
from .registry import ConsentRegistry
from .store import CommitQueue, JsonlFile

log = logging.getLogger(__name__)

SUBMITTER = "authorization-module"
MIN_AUDITORS = 3


class ComplianceStatus(str, Enum):
    COMPLIANT = "Compliant"
    NON_COMPLIANT = "NonCompliant"
    NON_DETERMINED = "NonDetermined"


class Role(str, Enum):
    ORDER = "Order"
    VALIDATOR = "Validator"
    AUDIT = "Audit"
    COMMITTER = "Committer"


class Behavior(str, Enum):
    HONEST = "Honest"
    INVERTER = "Inverter"
    ABSTAINER = "Abstainer"


_INVERTED = {
    ComplianceStatus.COMPLIANT: ComplianceStatus.NON_COMPLIANT,
    ComplianceStatus.NON_COMPLIANT: ComplianceStatus.COMPLIANT,
    # a lying node claims compliance it cannot establish
    ComplianceStatus.NON_DETERMINED: ComplianceStatus.COMPLIANT,
}


@dataclass(frozen=True)
class AuditorNode:
    node_id: str
    roles: frozenset[Role] = frozenset({Role.AUDIT})
    behavior: Behavior = Behavior.HONEST

    def has(self, role: Role) -> bool:
        return role in self.roles


def make_nodes(count: int, faulty: int = 0, faulty_behavior: Behavior = Behavior.INVERTER) -> list[AuditorNode]:
    """``count`` audit nodes; the first also orders, validates and commits; the last ``faulty`` misbehave."""
    if faulty > count:
        raise ValueError("more faulty nodes than nodes")
    nodes = []
    for i in range(1, count + 1):
        roles = {Role.AUDIT}
        if i == 1:
            roles |= {Role.ORDER, Role.VALIDATOR, Role.COMMITTER}
        behavior = faulty_behavior if i > count - faulty else Behavior.HONEST
        nodes.append(AuditorNode(f"auditor-{i:02d}", frozenset(roles), behavior))
    return nodes


@dataclass(frozen=True)
class PoCTransaction:
    txn_id: str
    trail: AuditTrail
    block_id: int
    submitter: str
    submitter_signature: Signature | None

    def to_dict(self) -> dict[str, Any]:
        sig = self.submitter_signature
        return {
            "txn_id": self.txn_id,
            "trail": self.trail.to_dict(),
            "block_id": self.block_id,
            "submitter": self.submitter,
            "submitter_signature": None if sig is None else sig.to_dict(),
        }


def build_transactions(
    chain: AuditChain,
    keyring: Keyring,
    block_range: range | None = None,
    submitter: str = SUBMITTER,
) -> list[PoCTransaction]:
    key = keyring.key(submitter)
    txns = []
    for block in chain.blocks(block_range):
        for trail in block.data:
            txns.append(PoCTransaction(
                f"txn-{trail.trail_id}", trail, block.block_id, submitter,
                sign(key, trail.to_dict()),
            ))
    return txns


# ---------------------------------------------------------------------------
# phases
# ---------------------------------------------------------------------------

@dataclass
class OrderResult:
    valid: list[PoCTransaction]
    invalid: list[PoCTransaction]


def phase_order(txns: Iterable[PoCTransaction], keyring: Keyring) -> OrderResult:
    valid, invalid = [], []
    for txn in txns:
        sig = txn.submitter_signature
        if sig is not None and sig.signer == txn.submitter and keyring.verify(txn.trail.to_dict(), sig):
            valid.append(txn)
        else:
            invalid.append(txn)
    valid.sort(key=lambda t: (t.trail.timestamp, t.txn_id))
    return OrderResult(valid, invalid)


@dataclass
class ValidationResult:
    accepted: list[PoCTransaction]
    rejected: list[tuple[PoCTransaction, str]]


def _block_matches_anchor(chain: AuditChain, anchors: AnchorStore, block_id: int, cache: dict[int, bool]) -> bool:
    if block_id not in cache:
        try:
            block = chain.read_block(block_id)
        except UnknownBlock:
            cache[block_id] = False
            return False
        anchor = anchors.get(AnchorKind.AUDIT_BLOCK, block_id)
        current = BlockHeader(
            block.header.block_id, block.header.prev_hash,
            digest_value([t.to_dict() for t in block.data]), block.header.created_at,
        )
        cache[block_id] = anchor is not None and anchor.anchored_hash == current.digest == block.header.digest
    return cache[block_id]


def _trail_problem(trail: AuditTrail, keyring: Keyring) -> str | None:
    if not trail.trail_id or not isinstance(trail.timestamp, int):
        return "malformed trail"
    report = trail.broker_report
    if report is not None:
        if report.broker_id != trail.broker_id:
            return "broker id does not match the embedded report"
        if report.signature is None or report.signature.signer != report.broker_id:
            return "broker report is unsigned"
        if not keyring.verify(report.body(), report.signature):
            return "broker report signature does not verify"
    return None


def phase_validate(
    valid: Sequence[PoCTransaction],
    chain: AuditChain,
    anchors: AnchorStore,
    keyring: Keyring,
) -> ValidationResult:
    accepted, rejected = [], []
    cache: dict[int, bool] = {}
    stored: dict[int, set[bytes]] = {}
    for txn in valid:
        if not _block_matches_anchor(chain, anchors, txn.block_id, cache):
            rejected.append((txn, "block does not match its anchor"))
            continue
        if txn.block_id not in stored:
            stored[txn.block_id] = {canonical_bytes(t) for t in chain.read_block(txn.block_id).data}
        if canonical_bytes(txn.trail) not in stored[txn.block_id]:
            rejected.append((txn, "trail not found in referenced block"))
            continue
        problem = _trail_problem(txn.trail, keyring)
        if problem is not None:
            rejected.append((txn, problem))
            continue
        accepted.append(txn)
    return ValidationResult(accepted, rejected)


PolicySource = Callable[[str], Sequence[Any]]


def compliance_status(
    trail: AuditTrail,
    registry: ConsentRegistry,
    policies_for: PolicySource,
    keyring: Keyring,
) -> ComplianceStatus:
    """Recompute the authorization outcome from the trail's inputs and compare it to the record."""
    payload = trail.decision_payload
    report = trail.broker_report
    if not payload or report is None:
        return ComplianceStatus.NON_DETERMINED
    try:
        request = ShareRequest.from_dict(payload["request"])
        decision = Decision.from_dict(payload["decision"])
    except (KeyError, TypeError, ValueError):
        return ComplianceStatus.NON_DETERMINED
    address = registry.contract_for(request.patient_id)
    if address is None:
        return ComplianceStatus.NON_DETERMINED
    try:
        checks = run_checks(request, registry, report, policies_for(request.patient_id), keyring)
    except UnknownPatientContract:
        return ComplianceStatus.NON_DETERMINED
    recomputed = Outcome.DENY if checks.reasons() else Outcome.PERMIT
    if report.request_id != request.request_id or decision.request_id != request.request_id:
        return ComplianceStatus.NON_COMPLIANT

    if decision.outcome == Outcome.PERMIT:
        consent = None
        if trail.sic_id is not None:
            consent = next((c for c in registry.list_consents(address) if c.sic_id == trail.sic_id), None)
        consent_matches = consent is not None and consent.key == (
            request.patient_id, request.sender, request.receiver, request.phi_id, Purpose(request.purpose)
        )
        if recomputed == Outcome.PERMIT and consent_matches and report.verdict == Verdict.SATISFIED:
            return ComplianceStatus.COMPLIANT
        return ComplianceStatus.NON_COMPLIANT
    return ComplianceStatus.COMPLIANT if recomputed == Outcome.DENY else ComplianceStatus.NON_COMPLIANT


def phase_compliance(
    accepted: Sequence[PoCTransaction],
    registry: ConsentRegistry,
    policies_for: PolicySource,
    keyring: Keyring,
) -> dict[str, ComplianceStatus]:
    return {t.txn_id: compliance_status(t.trail, registry, policies_for, keyring) for t in accepted}


def apply_behavior(behavior: Behavior, verdicts: Mapping[str, ComplianceStatus]) -> dict[str, ComplianceStatus] | None:
    if behavior == Behavior.ABSTAINER:
        return None
    if behavior == Behavior.INVERTER:
        return {k: _INVERTED[v] for k, v in verdicts.items()}
    return dict(verdicts)


def aggregate(verdicts: Sequence[ComplianceStatus]) -> ComplianceStatus:
    """Strict majority among cast verdicts; ties or no verdicts are NonDetermined."""
    if not verdicts:
        return ComplianceStatus.NON_DETERMINED
    status, count = Counter(verdicts).most_common(1)[0]
    return status if count * 2 > len(verdicts) else ComplianceStatus.NON_DETERMINED


# ---------------------------------------------------------------------------
# report + ledger
# ---------------------------------------------------------------------------

@dataclass
class TxnResult:
    txn_id: str
    trail_id: str
    block_id: int
    verdicts: dict[str, ComplianceStatus]
    final: ComplianceStatus

    def to_dict(self) -> dict[str, Any]:
        return {
            "txn_id": self.txn_id,
            "trail_id": self.trail_id,
            "block_id": self.block_id,
            "verdicts": {k: v.value for k, v in sorted(self.verdicts.items())},
            "final": self.final.value,
        }


@dataclass
class ComplianceReport:
    round_id: str
    block_range: tuple[int, int] | None
    committer: str
    results: list[TxnResult]
    accepted: list[str]
    rejected: list[dict[str, str]]
    invalid: list[str]
    dropped_messages: int
    committed_at: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "round_id": self.round_id,
            "block_range": None if self.block_range is None else list(self.block_range),
            "committer": self.committer,
            "results": [r.to_dict() for r in self.results],
            "accepted": list(self.accepted),
            "rejected": list(self.rejected),
            "invalid": list(self.invalid),
            "dropped_messages": self.dropped_messages,
            "committed_at": self.committed_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ComplianceReport":
        return cls(
            round_id=d["round_id"],
            block_range=None if d["block_range"] is None else tuple(d["block_range"]),
            committer=d["committer"],
            results=[
                TxnResult(r["txn_id"], r["trail_id"], r["block_id"],
                          {k: ComplianceStatus(v) for k, v in r["verdicts"].items()},
                          ComplianceStatus(r["final"]))
                for r in d["results"]
            ],
            accepted=list(d["accepted"]),
            rejected=list(d["rejected"]),
            invalid=list(d["invalid"]),
            dropped_messages=d["dropped_messages"],
            committed_at=d["committed_at"],
        )

    def final_by_trail(self) -> dict[str, ComplianceStatus]:
        return {r.trail_id: r.final for r in self.results}

    def to_json(self) -> bytes:
        return canonical_bytes(self)


class ReportLedger:
    """Append-only log of committed compliance reports; each report's digest is anchored."""

    def __init__(self, path: str | Path | None, anchors: AnchorStore, *, queue: CommitQueue | None = None) -> None:
        self.anchors = anchors
        self.queue = queue or anchors.queue
        self._file = JsonlFile(path)
        self._reports = [ComplianceReport.from_dict(r) for r in self._file.records()]

    def __len__(self) -> int:
        return len(self._reports)

    def reports(self) -> list[ComplianceReport]:
        return list(self._reports)

    def append(self, report: ComplianceReport) -> int:
        with self.queue:
            seq = len(self._reports)
            self._file.append(report)
            self._reports.append(report)
            self.anchors.anchor(AnchorKind.COMPLIANCE_REPORT, seq, digest_value(report))
            return seq

    def latest_status(self, trail_id: str) -> ComplianceStatus | None:
        for report in reversed(self._reports):
            status = report.final_by_trail().get(trail_id)
            if status is not None:
                return status
        return None


# ---------------------------------------------------------------------------
# round driver
# ---------------------------------------------------------------------------

def _select(nodes: Sequence[AuditorNode], role: Role) -> list[AuditorNode]:
    return sorted((n for n in nodes if n.has(role)), key=lambda n: n.node_id)


def run_audit(
    chain: AuditChain,
    registry: ConsentRegistry,
    nodes: Sequence[AuditorNode],
    keyring: Keyring,
    *,
    block_range: range | None = None,
    netsim_config: NetConfig | None = None,
    policies_for: PolicySource | None = None,
    clock: Clock | None = None,
    ledger: ReportLedger | None = None,
    transactions: Sequence[PoCTransaction] | None = None,
) -> ComplianceReport:
    """Run one audit round over ``block_range`` (all blocks when None)."""
    auditors = _select(nodes, Role.AUDIT)
    if len(auditors) < MIN_AUDITORS:
        raise InsufficientAuditors(f"need at least {MIN_AUDITORS} audit nodes, got {len(auditors)}")
    for role in (Role.ORDER, Role.VALIDATOR, Role.COMMITTER):
        if not _select(nodes, role):
            raise InsufficientAuditors(f"no node holds the {role.value} role")
    if len({n.node_id for n in nodes}) != len(nodes):
        raise ValueError("node ids must be unique")
    committer = _select(nodes, Role.COMMITTER)[0]
    policies_for = policies_for or (lambda _patient: [])
    clock = clock or SystemClock()
    config = netsim_config or NetConfig()

    # frozen inputs for the whole round
    snapshot = registry.snapshot()
    if transactions is None:
        transactions = build_transactions(chain, keyring, block_range)
    txns = list(transactions)
    ids = [t.txn_id for t in txns]
    if len(set(ids)) != len(ids):
        raise ValueError("transaction ids must be unique within a round")
    round_id = digest_value({
        "range": None if block_range is None else [block_range.start, block_range.stop],
        "txns": sorted(ids),
        "nodes": sorted(n.node_id for n in nodes),
        "seed": config.seed,
    })[:16]

    ordered = phase_order(txns, keyring)
    validated = phase_validate(ordered.valid, chain, chain.anchors, keyring)

    def audit(node: AuditorNode) -> tuple[AuditorNode, dict[str, ComplianceStatus] | None]:
        verdicts = phase_compliance(validated.accepted, snapshot, policies_for, keyring)
        return node, apply_behavior(node.behavior, verdicts)

    net = Network(config)
    with ThreadPoolExecutor(max_workers=len(auditors)) as pool:
        for node, verdicts in pool.map(audit, auditors):
            if verdicts is None:
                continue
            body = {"round_id": round_id, "node_id": node.node_id,
                    "verdicts": {k: v.value for k, v in sorted(verdicts.items())}}
            net.send(node.node_id, committer.node_id, {"body": body, "signature": sign(keyring.key(node.node_id), body)})

    inbox = net.deliver_all().get(committer.node_id, [])
    expected_senders = [n for n in auditors if n.behavior != Behavior.ABSTAINER]
    if expected_senders and not inbox:
        raise CommitterUnreachable(f"no verdict vector reached committer {committer.node_id}")

    collected: dict[str, dict[str, ComplianceStatus]] = {}
    for msg in inbox:
        body, sig = msg.payload["body"], msg.payload["signature"]
        if body.get("round_id") != round_id or sig.signer != body.get("node_id") or msg.src != sig.signer:
            continue
        if not keyring.verify(body, sig) or sig.signer in collected:
            continue
        collected[sig.signer] = {k: ComplianceStatus(v) for k, v in body["verdicts"].items()}

    accepted_ids = {t.txn_id for t in validated.accepted}
    results = []
    for txn in sorted(txns, key=lambda t: (t.trail.timestamp, t.txn_id)):
        if txn.txn_id in accepted_ids:
            votes = {n: v[txn.txn_id] for n, v in collected.items() if txn.txn_id in v}
            final = aggregate(list(votes.values()))
        else:
            votes, final = {}, ComplianceStatus.NON_DETERMINED
        results.append(TxnResult(txn.txn_id, txn.trail.trail_id, txn.block_id, votes, final))

    report = ComplianceReport(
        round_id=round_id,
        block_range=None if block_range is None else (block_range.start, block_range.stop - 1),
        committer=committer.node_id,
        results=results,
        accepted=[t.txn_id for t in validated.accepted],
        rejected=[{"txn_id": t.txn_id, "reason": why} for t, why in validated.rejected],
        invalid=sorted(t.txn_id for t in ordered.invalid),
        dropped_messages=len(net.dropped()),
        committed_at=clock.now(),
    )
    if ledger is not None:
        ledger.append(report)
    return report
