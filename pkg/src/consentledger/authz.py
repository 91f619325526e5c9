"""Authorization module: decides PHI share requests and records every outcome.

A request is permitted only when four checks all pass: the sender's
credentials, a matching consent on the patient's contract, a satisfied and
authentic broker report, and every applicable policy. Anything else is a Deny
listing each failed check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Mapping, Sequence

from .auditchain import AuditChain, AuditTrail, IngestToken
from .broker import (
    Anonymization,
    BrokerPool,
    Encryption,
    ProtectionMetadata,
    ProtectionReport,
    Verdict,
    mechanism_from_dict,
)
from .domain import Clock, Keyring, Purpose, Signature, SystemClock, digest_value, sign
from .errors import ChainUnavailable, MalformedMetadata, UnknownPatientContract
from .ppa import PolicyRef
from .registry import ConsentRegistry

log = logging.getLogger(__name__)


class Outcome(str, Enum):
    PERMIT = "Permit"
    DENY = "Deny"


class ReasonCode(str, Enum):
    # declaration order is the order reasons are reported in
    NO_CONSENT = "NoConsent"
    BROKER_UNSATISFIED = "BrokerUnsatisfied"
    POLICY_VIOLATION = "PolicyViolation"
    BAD_CREDENTIALS = "BadCredentials"


@dataclass(frozen=True)
class ShareRequest:
    request_id: str
    sender: str
    receiver: str
    patient_id: str
    phi_id: str
    purpose: Purpose
    requested_at: int
    sender_signature: Signature | None = None

    def body(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "sender": self.sender,
            "receiver": self.receiver,
            "patient_id": self.patient_id,
            "phi_id": self.phi_id,
            "purpose": Purpose(self.purpose).value,
            "requested_at": self.requested_at,
        }

    def to_dict(self) -> dict[str, Any]:
        sig = self.sender_signature
        return {**self.body(), "sender_signature": None if sig is None else sig.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ShareRequest":
        sig = d.get("sender_signature")
        return cls(
            d["request_id"], d["sender"], d["receiver"], d["patient_id"], d["phi_id"],
            Purpose(d["purpose"]), d["requested_at"],
            None if sig is None else Signature.from_dict(sig),
        )

    @classmethod
    def signed(
        cls,
        keyring: Keyring,
        *,
        sender: str,
        receiver: str,
        patient_id: str,
        phi_id: str,
        purpose: Purpose | str,
        requested_at: int,
        request_id: str | None = None,
    ) -> "ShareRequest":
        purpose = Purpose(purpose)
        if request_id is None:
            request_id = "REQ-" + digest_value([sender, receiver, patient_id, phi_id, purpose.value, requested_at])[:16]
        unsigned = cls(request_id, sender, receiver, patient_id, phi_id, purpose, requested_at)
        return replace(unsigned, sender_signature=sign(keyring.key(sender), unsigned.body()))


@dataclass(frozen=True)
class Decision:
    request_id: str
    outcome: Outcome
    reasons: tuple[ReasonCode, ...]
    consent_ref: str | None
    broker_report_ref: str | None

    def __post_init__(self) -> None:
        if self.outcome == Outcome.PERMIT and (self.reasons or self.consent_ref is None):
            raise ValueError("a Permit carries no reasons and must reference a consent")

    @property
    def permitted(self) -> bool:
        return self.outcome == Outcome.PERMIT

    def to_dict(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "outcome": Outcome(self.outcome).value,
            "reasons": [ReasonCode(r).value for r in self.reasons],
            "consent_ref": self.consent_ref,
            "broker_report_ref": self.broker_report_ref,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Decision":
        return cls(
            d["request_id"], Outcome(d["outcome"]),
            tuple(ReasonCode(r) for r in d["reasons"]),
            d.get("consent_ref"), d.get("broker_report_ref"),
        )


# ---------------------------------------------------------------------------
# policy predicates
# ---------------------------------------------------------------------------

def policy_applies(policy: PolicyRef, request: ShareRequest) -> bool:
    scope = policy.parameters.get("purposes")
    return scope is None or Purpose(request.purpose).value in scope


def policy_passes(policy: PolicyRef, request: ShareRequest, report: ProtectionReport | None) -> bool:
    """Evaluate one policy's constraints against a request and its broker report.

    Policies outside their ``purposes`` scope pass trivially.
    """
    if not policy_applies(policy, request):
        return True
    p = policy.parameters
    purpose = Purpose(request.purpose).value
    if purpose in p.get("deny_purposes", ()):
        return False
    if "allowed_receivers" in p and request.receiver not in p["allowed_receivers"]:
        return False
    if request.receiver in p.get("denied_receivers", ()):
        return False
    if "allowed_phi" in p and request.phi_id not in p["allowed_phi"]:
        return False
    needs_encryption = "required_algorithm" in p or "min_key_bits" in p
    if needs_encryption or p.get("require_anonymization"):
        try:
            mechanism = mechanism_from_dict(report.mechanism) if report is not None else None
        except MalformedMetadata:
            return False
        if needs_encryption:
            if not isinstance(mechanism, Encryption):
                return False
            if "required_algorithm" in p and mechanism.algorithm.upper() != p["required_algorithm"].upper():
                return False
            if mechanism.key_bits < p.get("min_key_bits", 0):
                return False
        if p.get("require_anonymization"):
            if not isinstance(mechanism, Anonymization) or mechanism.identifier_fields_remaining:
                return False
    return True


# ---------------------------------------------------------------------------
# decision
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Checks:
    """Outcome of the four individual authorization checks."""

    sender_credentials: bool
    consent: str | None
    broker_satisfied: bool
    broker_authentic: bool
    policies: bool

    def reasons(self) -> tuple[ReasonCode, ...]:
        failed = set()
        if self.consent is None:
            failed.add(ReasonCode.NO_CONSENT)
        if not self.broker_satisfied:
            failed.add(ReasonCode.BROKER_UNSATISFIED)
        if not self.policies:
            failed.add(ReasonCode.POLICY_VIOLATION)
        if not (self.sender_credentials and self.broker_authentic):
            failed.add(ReasonCode.BAD_CREDENTIALS)
        return tuple(r for r in ReasonCode if r in failed)


def run_checks(
    request: ShareRequest,
    registry: ConsentRegistry,
    broker_report: ProtectionReport | None,
    policies: Sequence[PolicyRef],
    keyring: Keyring,
) -> Checks:
    address = registry.contract_for(request.patient_id)
    if address is None:
        raise UnknownPatientContract(f"patient {request.patient_id} has no consent contract")
    sig = request.sender_signature
    sender_ok = sig is not None and sig.signer == request.sender and keyring.verify(request.body(), sig)
    consent = registry.find_consent(address, request.sender, request.receiver, request.phi_id, request.purpose)
    if broker_report is None:
        satisfied = authentic = False
    else:
        satisfied = (
            broker_report.verdict == Verdict.SATISFIED
            and broker_report.purpose == Purpose(request.purpose)
        )
        authentic = (
            broker_report.signature is not None
            and broker_report.signature.signer == broker_report.broker_id
            and keyring.verify(broker_report.body(), broker_report.signature)
        )
    policies_ok = all(policy_passes(p, request, broker_report) for p in policies)
    return Checks(sender_ok, None if consent is None else consent.sic_id, satisfied, authentic, policies_ok)


def authorize_share(
    request: ShareRequest,
    registry: ConsentRegistry,
    broker_report: ProtectionReport | None,
    policies: Sequence[PolicyRef],
    keyring: Keyring,
) -> Decision:
    """Deny-by-default decision over the four checks."""
    if broker_report is not None and broker_report.request_id != request.request_id:
        raise ValueError("broker report was issued for a different request")
    checks = run_checks(request, registry, broker_report, policies, keyring)
    reasons = checks.reasons()
    return Decision(
        request_id=request.request_id,
        outcome=Outcome.DENY if reasons else Outcome.PERMIT,
        reasons=reasons,
        consent_ref=checks.consent,
        broker_report_ref=None if broker_report is None else digest_value(broker_report),
    )


def build_trail(
    trail_id: str,
    decision: Decision,
    broker_report: ProtectionReport | None,
    request: ShareRequest,
    timestamp: int,
) -> AuditTrail:
    return AuditTrail(
        trail_id=trail_id,
        sic_id=decision.consent_ref,
        broker_id=None if broker_report is None else broker_report.broker_id,
        broker_report=broker_report,
        timestamp=timestamp,
        decision_payload={"decision": decision.to_dict(), "request": request.to_dict()},
    )


def record_outcome(
    decision: Decision,
    broker_report: ProtectionReport | None,
    auditchain: AuditChain,
    token: IngestToken,
    request: ShareRequest,
    timestamp: int | None = None,
) -> str:
    """Turn a decision into an audit trail and submit it; both outcomes are recorded."""
    try:
        trail_id = auditchain.reserve_trail_id()
        ts = auditchain.clock.now() if timestamp is None else timestamp
        auditchain.submit(build_trail(trail_id, decision, broker_report, request, ts), token)
    except OSError as exc:
        raise ChainUnavailable(str(exc)) from exc
    return trail_id


def deliver(decision: Decision, request: ShareRequest) -> bool:
    """Payload delivery is out of scope; a permitted share is a logged no-op."""
    if decision.permitted:
        log.info("deliver %s -> %s (%s)", request.sender, request.receiver, request.phi_id)
    return decision.permitted


class AuthorizationModule:
    """Wires brokers, the registry, policies and the audit chain for one request flow.

    The module claims the chain's ingest token on construction, so it is the
    only component able to submit trails.
    """

    def __init__(
        self,
        registry: ConsentRegistry,
        chain: AuditChain,
        brokers: BrokerPool,
        keyring: Keyring,
        policy_source: Any = None,
        clock: Clock | None = None,
    ) -> None:
        self.registry = registry
        self.chain = chain
        self.brokers = brokers
        self.keyring = keyring
        self.policy_source = policy_source
        self.clock = clock or SystemClock()
        self._token = chain.ingest_token()

    def policies_for(self, patient_id: str) -> list[PolicyRef]:
        if self.policy_source is None:
            return []
        return self.policy_source.policies_for(patient_id)

    def handle(self, request: ShareRequest, metadata: ProtectionMetadata) -> tuple[Decision, str]:
        report = self.brokers.attest(metadata, request.purpose)
        decision = authorize_share(request, self.registry, report, self.policies_for(request.patient_id), self.keyring)
        trail_id = record_outcome(decision, report, self.chain, self._token, request, self.clock.now())
        deliver(decision, request)
        return decision, trail_id

    def record(self, decision: Decision, report: ProtectionReport | None, request: ShareRequest, timestamp: int | None = None) -> str:
        return record_outcome(decision, report, self.chain, self._token, request, timestamp)

    def flush(self):
        return self.chain.flush()
