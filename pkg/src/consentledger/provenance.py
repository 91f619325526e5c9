"""Given-consent and executed-consent queries for patients."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

from .auditchain import AuditChain
from .authz import Outcome
from .domain import PHI_ID_PATTERN, Purpose, SharingConsent
from .errors import UnknownPatientContract
from .poc import ReportLedger
from .registry import ConsentRegistry

PENDING = "Pending"


class Orientation(str, Enum):
    SENDER = "SenderOriented"
    RECEIVER = "ReceiverOriented"
    PHI = "PhiOriented"
    PURPOSE = "PurposeOriented"


@dataclass(frozen=True)
class ConsentFilter:
    orientation: Orientation
    key: str | Purpose

    def __post_init__(self) -> None:
        orientation = Orientation(self.orientation)
        object.__setattr__(self, "orientation", orientation)
        if orientation == Orientation.PURPOSE:
            object.__setattr__(self, "key", Purpose(self.key))
        elif not isinstance(self.key, str) or not self.key:
            raise ValueError(f"{orientation.value} filter needs a non-empty string key")
        elif orientation == Orientation.PHI and not PHI_ID_PATTERN.fullmatch(self.key):
            raise ValueError(f"{self.key!r} is not a PHI id")

    def matches(self, sender: str, receiver: str, phi_id: str, purpose: Purpose) -> bool:
        if self.orientation == Orientation.SENDER:
            return sender == self.key
        if self.orientation == Orientation.RECEIVER:
            return receiver == self.key
        if self.orientation == Orientation.PHI:
            return phi_id == self.key
        return Purpose(purpose) == self.key


def _matches(f: ConsentFilter | None, c: SharingConsent) -> bool:
    return f is None or f.matches(c.sender, c.receiver, c.phi_id, c.purpose)


def _contract(registry: ConsentRegistry, patient_id: str) -> str:
    address = registry.contract_for(patient_id)
    if address is None:
        raise UnknownPatientContract(f"patient {patient_id} has no consent contract")
    return address


def given_consents(
    patient_id: str, filter: ConsentFilter | None, registry: ConsentRegistry
) -> list[SharingConsent]:
    """Consents on the patient's contract that match ``filter``, in grant order."""
    return [c for c in registry.list_consents(_contract(registry, patient_id)) if _matches(filter, c)]


@dataclass(frozen=True)
class ExecutedConsentView:
    sic_id: str
    trail_id: str
    sender: str
    receiver: str
    phi_id: str
    purpose: Purpose
    broker_id: str | None
    broker_verdict: str | None
    executed_at: int
    compliance: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "sic_id": self.sic_id,
            "trail_id": self.trail_id,
            "sender": self.sender,
            "receiver": self.receiver,
            "phi_id": self.phi_id,
            "purpose": Purpose(self.purpose).value,
            "broker_id": self.broker_id,
            "broker_verdict": self.broker_verdict,
            "executed_at": self.executed_at,
            "compliance": self.compliance,
        }


def executed_consents(
    patient_id: str,
    filter: ConsentFilter | None,
    registry: ConsentRegistry,
    chain: AuditChain,
    reports: ReportLedger | None = None,
) -> list[ExecutedConsentView]:
    """Permit trails that used one of the patient's consents, joined with the latest audit status."""
    address = _contract(registry, patient_id)
    consents = {c.sic_id: c for c in registry.list_consents(address)}
    views = []
    for trail in chain.iterate_trails():
        payload = trail.decision_payload or {}
        decision = payload.get("decision") or {}
        if decision.get("outcome") != Outcome.PERMIT.value:
            continue
        consent = consents.get(trail.sic_id)
        if consent is None or not _matches(filter, consent):
            continue
        status = reports.latest_status(trail.trail_id) if reports is not None else None
        report = trail.broker_report
        views.append(ExecutedConsentView(
            sic_id=consent.sic_id,
            trail_id=trail.trail_id,
            sender=consent.sender,
            receiver=consent.receiver,
            phi_id=consent.phi_id,
            purpose=consent.purpose,
            broker_id=trail.broker_id,
            broker_verdict=None if report is None else report.verdict.value,
            executed_at=trail.timestamp,
            compliance=PENDING if status is None else status.value,
        ))
    views.sort(key=lambda v: (v.executed_at, v.trail_id))
    return views


def render_table(rows: Sequence[dict[str, Any]], columns: Sequence[str] | None = None) -> str:
    """Plain-text table with left-aligned, padded columns."""
    if not rows:
        return "(no rows)"
    columns = list(columns or rows[0].keys())
    cells = [[("" if r.get(c) is None else str(r.get(c))) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines)
