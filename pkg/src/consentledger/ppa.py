"""Patient-provider agreement formation, storage and integrity anchoring.

A PPA bundles five component sets. Formation hashes each set, hashes the five
digests together, checks completeness and conflicts, stores the agreement,
links it to the patient profile and anchors the composite digest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

from .auditchain import AnchorKind, AnchorStore
from .domain import (
    DEFAULT_CATALOGUE,
    Clock,
    Digest,
    PhiCatalogue,
    Purpose,
    SharingConsent,
    SystemClock,
    concat_digests,
    digest,
    digest_value,
)
from .errors import EncodingError, IncompletePpa, MissingAnchor, PpaConflict, UnknownPpa
from .store import CommitQueue, JsonlFile

COMPONENTS = ("pc", "prc", "tic", "sic", "roc")


class PolicyKind(str, Enum):
    PROTECTION_REQUIREMENT = "ProtectionRequirement"
    REGULATORY_RULE = "RegulatoryRule"
    CONTRACTUAL_OBLIGATION = "ContractualObligation"


# parameter name -> validator
_POLICY_PARAMETERS = {
    "purposes": lambda v: isinstance(v, list) and all(p in Purpose._value2member_map_ for p in v),
    "required_algorithm": lambda v: isinstance(v, str) and bool(v),
    "min_key_bits": lambda v: isinstance(v, int) and not isinstance(v, bool) and v > 0,
    "require_anonymization": lambda v: isinstance(v, bool),
    "deny_purposes": lambda v: isinstance(v, list) and all(p in Purpose._value2member_map_ for p in v),
    "allowed_receivers": lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
    "denied_receivers": lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
    "allowed_phi": lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
}


@dataclass(frozen=True)
class PolicyRef:
    """A regulatory/contractual policy attached to an agreement.

    ``parameters`` may contain ``purposes`` to scope the policy to certain
    sharing purposes, plus any of the constraint keys understood by
    :func:`consentledger.authz.policy_passes`.
    """

    policy_id: str
    kind: PolicyKind
    parameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if not isinstance(self.policy_id, str) or not self.policy_id:
            raise ValueError("policy_id must be a non-empty string")
        for key, value in self.parameters.items():
            check = _POLICY_PARAMETERS.get(key)
            if check is None:
                raise ValueError(f"unknown policy parameter {key!r}")
            if not check(value):
                raise ValueError(f"invalid value for policy parameter {key!r}: {value!r}")
        object.__setattr__(self, "parameters", dict(self.parameters))

    def to_dict(self) -> dict[str, Any]:
        return {"policy_id": self.policy_id, "kind": self.kind.value, "parameters": dict(self.parameters)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PolicyRef":
        return cls(d["policy_id"], PolicyKind(d["kind"]), d.get("parameters", {}))


def _as_consent(c: SharingConsent | Mapping[str, Any]) -> SharingConsent:
    return c if isinstance(c, SharingConsent) else SharingConsent.from_dict(c)


def _as_policy(p: PolicyRef | Mapping[str, Any]) -> PolicyRef:
    return p if isinstance(p, PolicyRef) else PolicyRef.from_dict(p)


def component_digest(records: Sequence[Any]) -> Digest:
    """Digest of one ordered component list."""
    return digest_value(list(records))


def composite_digest(component_digests: Mapping[str, Digest]) -> Digest:
    return digest(concat_digests(component_digests[k] for k in COMPONENTS))


@dataclass(frozen=True)
class PatientProviderAgreement:
    ppa_id: str
    patient_id: str
    pc: tuple[Mapping[str, Any], ...]
    prc: tuple[Mapping[str, Any], ...]
    tic: tuple[Mapping[str, Any], ...]
    sic: tuple[SharingConsent, ...]
    roc: tuple[PolicyRef, ...]
    component_digests: Mapping[str, Digest]
    composite_digest: Digest
    created_at: int

    def components(self) -> dict[str, list[Any]]:
        return {
            "pc": [dict(r) for r in self.pc],
            "prc": [dict(r) for r in self.prc],
            "tic": [dict(r) for r in self.tic],
            "sic": [c.to_dict() for c in self.sic],
            "roc": [p.to_dict() for p in self.roc],
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "ppa_id": self.ppa_id,
            "patient_id": self.patient_id,
            **self.components(),
            "component_digests": dict(self.component_digests),
            "composite_digest": self.composite_digest,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PatientProviderAgreement":
        return cls(
            ppa_id=d["ppa_id"],
            patient_id=d["patient_id"],
            pc=tuple(d["pc"]),
            prc=tuple(d["prc"]),
            tic=tuple(d["tic"]),
            sic=tuple(SharingConsent.from_dict(c) for c in d["sic"]),
            roc=tuple(PolicyRef.from_dict(p) for p in d["roc"]),
            component_digests=dict(d["component_digests"]),
            composite_digest=d["composite_digest"],
            created_at=d["created_at"],
        )


def compute_digests(components: Mapping[str, Sequence[Any]]) -> tuple[dict[str, Digest], Digest]:
    per = {k: component_digest(components[k]) for k in COMPONENTS}
    return per, composite_digest(per)


class IntegrityResult(NamedTuple):
    ok: bool
    expected: Digest
    actual: Digest

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.ok, "expected": self.expected, "actual": self.actual}


class PpaRepository:
    """Append-only store of agreements plus the patient profiles that index them."""

    def __init__(
        self,
        path: str | Path | None = None,
        anchors: AnchorStore | None = None,
        *,
        clock: Clock | None = None,
        queue: CommitQueue | None = None,
        catalogue: PhiCatalogue = DEFAULT_CATALOGUE,
        fsync: bool = False,
    ) -> None:
        self.clock = clock or SystemClock()
        self.queue = queue or (anchors.queue if anchors is not None else CommitQueue())
        self.anchors = anchors if anchors is not None else AnchorStore(clock=self.clock, queue=self.queue)
        self.catalogue = catalogue
        self._file = JsonlFile(path, fsync=fsync)
        # raw stored records; verification recomputes from these
        self._records: dict[str, dict[str, Any]] = {}
        self.profiles: dict[str, list[str]] = {}
        for rec in self._file.records():
            self._records[rec["ppa_id"]] = rec
            self.profiles.setdefault(rec["patient_id"], []).append(rec["ppa_id"])

    @property
    def path(self) -> Path | None:
        return self._file.path

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, ppa_id: object) -> bool:
        return ppa_id in self._records

    def get(self, ppa_id: str) -> PatientProviderAgreement:
        try:
            return PatientProviderAgreement.from_dict(self._records[ppa_id])
        except KeyError:
            raise UnknownPpa(f"no PPA {ppa_id}") from None

    def ppas_for(self, patient_id: str) -> list[PatientProviderAgreement]:
        return [self.get(i) for i in self.profiles.get(patient_id, [])]

    def policies_for(self, patient_id: str) -> list[PolicyRef]:
        return [p for ppa in self.ppas_for(patient_id) for p in ppa.roc]

    def consent_tuples(self, patient_id: str) -> set[tuple]:
        return {c.key for ppa in self.ppas_for(patient_id) for c in ppa.sic}

    def snapshot(self) -> bytes:
        return self._file.raw()

    def _new_ppa_id(self, patient_id: str, created_at: int) -> str:
        return digest_value([patient_id, created_at, len(self._records)])[:16]

    def _check_conflicts(self, ppa_id: str, patient_id: str, sic: Sequence[SharingConsent], roc: Sequence[PolicyRef]) -> None:
        if ppa_id in self._records or self.anchors.get(AnchorKind.PPA_INTEGRITY, ppa_id) is not None:
            raise PpaConflict(f"PPA id {ppa_id} already exists")
        existing = self.consent_tuples(patient_id)
        seen: set[tuple] = set()
        for c in sic:
            if c.patient_id != patient_id:
                raise PpaConflict(f"consent {c.sic_id} belongs to patient {c.patient_id}, not {patient_id}")
            if c.key in existing or c.key in seen:
                raise PpaConflict(
                    f"consent ({c.sender}, {c.receiver}, {c.phi_id}, {c.purpose.value}) already granted"
                )
            seen.add(c.key)
        policy_ids = [p.policy_id for p in roc]
        if len(set(policy_ids)) != len(policy_ids):
            raise PpaConflict("policy ids must be unique within an agreement")

    def create(
        self,
        patient_id: str,
        pc: Iterable[Mapping[str, Any]],
        prc: Iterable[Mapping[str, Any]],
        tic: Iterable[Mapping[str, Any]],
        sic: Iterable[SharingConsent | Mapping[str, Any]],
        roc: Iterable[PolicyRef | Mapping[str, Any]],
    ) -> PatientProviderAgreement:
        pc, prc, tic = (tuple(dict(r) for r in x) for x in (pc, prc, tic))
        sic = tuple(_as_consent(c) for c in sic)
        roc = tuple(_as_policy(p) for p in roc)
        missing = [name for name, comp in zip(COMPONENTS, (pc, prc, tic, sic, roc)) if not comp]
        if missing:
            raise IncompletePpa("incomplete PPA, empty components: " + ", ".join(missing))
        for c in sic:
            self.catalogue.require(c.phi_id)

        with self.queue:
            created_at = self.clock.now()
            ppa_id = self._new_ppa_id(patient_id, created_at)
            self._check_conflicts(ppa_id, patient_id, sic, roc)
            comps = {
                "pc": list(pc), "prc": list(prc), "tic": list(tic),
                "sic": [c.to_dict() for c in sic], "roc": [p.to_dict() for p in roc],
            }
            per, composite = compute_digests(comps)
            ppa = PatientProviderAgreement(
                ppa_id, patient_id, pc, prc, tic, sic, roc, per, composite, created_at,
            )
            record = ppa.to_dict()
            # (i) repository, (ii) patient profile, (iii) integrity anchor
            self._file.append(record)
            self._records[ppa_id] = record
            self.profiles.setdefault(patient_id, []).append(ppa_id)
            self.anchors.anchor_ppa(ppa_id, composite)
            return ppa

    def verify_integrity(self, ppa_id: str) -> IntegrityResult:
        if ppa_id not in self._records:
            raise UnknownPpa(f"no PPA {ppa_id}")
        anchor = self.anchors.get(AnchorKind.PPA_INTEGRITY, ppa_id)
        if anchor is None:
            raise MissingAnchor(f"PPA {ppa_id} has no integrity anchor")
        rec = self._records[ppa_id]
        try:
            _, actual = compute_digests({k: rec[k] for k in COMPONENTS})
        except (KeyError, TypeError, ValueError, EncodingError):
            actual = ""
        return IntegrityResult(actual == anchor.anchored_hash, anchor.anchored_hash, actual)


def create_ppa(patient_id, pc, prc, tic, sic, roc, repository: PpaRepository) -> PatientProviderAgreement:
    return repository.create(patient_id, pc, prc, tic, sic, roc)


def verify_ppa_integrity(ppa_id: str, repository: PpaRepository) -> IntegrityResult:
    return repository.verify_integrity(ppa_id)
