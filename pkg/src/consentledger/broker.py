"""Honest broker: certifies the protection status of an outbound PHI payload.

The broker only ever sees :class:`ProtectionMetadata` (mechanism descriptors
plus a payload digest). No function in this module accepts payload bytes.
"""

from __future__ import annotations

import itertools
import re
import threading
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Mapping, Union

from .domain import Clock, KeyPair, Keyring, Purpose, Signature, SystemClock, sign, verify
from .errors import MalformedMetadata

REQUIRED_ALGORITHM = "AES"
MIN_KEY_BITS = 256

_HEX64 = re.compile(r"^[0-9a-f]{64}$")

ENCRYPTION_PURPOSES = frozenset({Purpose.TREATMENT, Purpose.DIAGNOSIS})
ANONYMIZATION_PURPOSES = frozenset({Purpose.MARKETING, Purpose.RESEARCH})


class Verdict(str, Enum):
    SATISFIED = "Satisfied"
    UNSATISFIED = "Unsatisfied"


@dataclass(frozen=True)
class Encryption:
    algorithm: str
    key_bits: int

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "Encryption", "algorithm": self.algorithm, "key_bits": self.key_bits}


@dataclass(frozen=True)
class Anonymization:
    identifier_fields_remaining: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "Anonymization",
            "identifier_fields_remaining": list(self.identifier_fields_remaining),
        }


Mechanism = Union[Encryption, Anonymization, None]


def mechanism_from_dict(d: Mapping[str, Any] | None) -> Mechanism:
    if d is None:
        return None
    if not isinstance(d, Mapping):
        raise MalformedMetadata("mechanism must be an object or null")
    kind = d.get("kind")
    if kind == "Encryption":
        algorithm, key_bits = d.get("algorithm"), d.get("key_bits")
        if not isinstance(algorithm, str) or not algorithm:
            raise MalformedMetadata("encryption algorithm must be a non-empty string")
        if isinstance(key_bits, bool) or not isinstance(key_bits, int) or key_bits <= 0:
            raise MalformedMetadata("key_bits must be a positive integer")
        return Encryption(algorithm, key_bits)
    if kind == "Anonymization":
        fields = d.get("identifier_fields_remaining", [])
        if not isinstance(fields, (list, tuple)) or not all(isinstance(f, str) for f in fields):
            raise MalformedMetadata("identifier_fields_remaining must be a list of field names")
        return Anonymization(tuple(fields))
    raise MalformedMetadata(f"unknown protection mechanism {kind!r}")


def mechanism_to_dict(m: Mechanism) -> dict[str, Any] | None:
    return None if m is None else m.to_dict()


@dataclass(frozen=True)
class ProtectionMetadata:
    request_id: str
    mechanism: Mechanism
    payload_digest: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "mechanism": mechanism_to_dict(self.mechanism),
            "payload_digest": self.payload_digest,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ProtectionMetadata":
        if not isinstance(d, Mapping):
            raise MalformedMetadata("metadata must be an object")
        try:
            return cls(d["request_id"], mechanism_from_dict(d.get("mechanism")), d["payload_digest"])
        except KeyError as exc:
            raise MalformedMetadata(f"missing field {exc.args[0]}") from None


@dataclass(frozen=True)
class ProtectionReport:
    broker_id: str
    request_id: str
    purpose: Purpose
    verdict: Verdict
    reason: str
    attested_at: int
    mechanism: dict[str, Any] | None
    payload_digest: str
    signature: Signature | None = None

    def body(self) -> dict[str, Any]:
        return {
            "broker_id": self.broker_id,
            "request_id": self.request_id,
            "purpose": Purpose(self.purpose).value,
            "verdict": Verdict(self.verdict).value,
            "reason": self.reason,
            "attested_at": self.attested_at,
            "mechanism": self.mechanism,
            "payload_digest": self.payload_digest,
        }

    def to_dict(self) -> dict[str, Any]:
        d = self.body()
        d["signature"] = None if self.signature is None else self.signature.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ProtectionReport":
        sig = d.get("signature")
        return cls(
            broker_id=d["broker_id"],
            request_id=d["request_id"],
            purpose=Purpose(d["purpose"]),
            verdict=Verdict(d["verdict"]),
            reason=d["reason"],
            attested_at=d["attested_at"],
            mechanism=d["mechanism"],
            payload_digest=d["payload_digest"],
            signature=None if sig is None else Signature.from_dict(sig),
        )

    def verify(self, public_key: str) -> bool:
        if self.signature is None or self.signature.signer != self.broker_id:
            return False
        return verify(public_key, self.body(), self.signature)


def _validate(metadata: ProtectionMetadata) -> None:
    if not isinstance(metadata, ProtectionMetadata):
        raise MalformedMetadata("broker accepts ProtectionMetadata only")
    if not isinstance(metadata.request_id, str) or not metadata.request_id:
        raise MalformedMetadata("request_id must be a non-empty string")
    if not isinstance(metadata.payload_digest, str) or not _HEX64.match(metadata.payload_digest):
        raise MalformedMetadata("payload_digest must be 64 lowercase hex chars")
    if metadata.mechanism is not None and not isinstance(metadata.mechanism, (Encryption, Anonymization)):
        raise MalformedMetadata("unsupported mechanism type")


def evaluate_protection(mechanism: Mechanism, purpose: Purpose) -> tuple[Verdict, str]:
    """Apply the purpose-specific protection rule; returns (verdict, reason)."""
    purpose = Purpose(purpose)
    if purpose in ENCRYPTION_PURPOSES:
        if not isinstance(mechanism, Encryption):
            return Verdict.UNSATISFIED, f"encryption required for {purpose.value}"
        problems = []
        if mechanism.algorithm.upper() != REQUIRED_ALGORITHM:
            problems.append(f"algorithm {mechanism.algorithm} is not {REQUIRED_ALGORITHM}")
        if mechanism.key_bits < MIN_KEY_BITS:
            problems.append(f"key below {MIN_KEY_BITS} bits")
        if problems:
            return Verdict.UNSATISFIED, "; ".join(problems)
        return Verdict.SATISFIED, f"{REQUIRED_ALGORITHM}-{mechanism.key_bits} encryption"
    if not isinstance(mechanism, Anonymization):
        return Verdict.UNSATISFIED, f"anonymization required for {purpose.value}"
    if mechanism.identifier_fields_remaining:
        return Verdict.UNSATISFIED, "identifiers remaining: " + ", ".join(mechanism.identifier_fields_remaining)
    return Verdict.SATISFIED, "identifiers removed"


def attest(
    metadata: ProtectionMetadata,
    purpose: Purpose,
    broker_key: KeyPair,
    attested_at: int,
) -> ProtectionReport:
    _validate(metadata)
    verdict, reason = evaluate_protection(metadata.mechanism, purpose)
    report = ProtectionReport(
        broker_id=broker_key.signer,
        request_id=metadata.request_id,
        purpose=Purpose(purpose),
        verdict=verdict,
        reason=reason,
        attested_at=attested_at,
        mechanism=mechanism_to_dict(metadata.mechanism),
        payload_digest=metadata.payload_digest,
    )
    return replace(report, signature=sign(broker_key, report.body()))


class BrokerPool:
    """Several brokers behind one entry point, picked round-robin per request."""

    def __init__(self, broker_ids: list[str], keyring: Keyring, clock: Clock | None = None) -> None:
        if not broker_ids:
            raise ValueError("at least one broker is required")
        self.broker_ids = list(broker_ids)
        self.keyring = keyring
        self.clock = clock or SystemClock()
        self._cycle = itertools.cycle(self.broker_ids)
        self._lock = threading.Lock()

    def next_broker(self) -> str:
        with self._lock:
            return next(self._cycle)

    def attest(self, metadata: ProtectionMetadata, purpose: Purpose) -> ProtectionReport:
        broker_id = self.next_broker()
        return attest(metadata, purpose, self.keyring.key(broker_id), self.clock.now())
