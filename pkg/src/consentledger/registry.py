"""Per-patient consent contracts, emulated as replayable event logs.

Each patient gets exactly one contract. Its consent list is append-only; the
only other mutation is the ownership transfer from the deploying authority to
the patient, which lives in the contract's event log and never touches the
consents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .domain import (
    DEFAULT_CATALOGUE,
    Clock,
    Digest,
    PhiCatalogue,
    Purpose,
    SharingConsent,
    SystemClock,
    canonical_bytes,
    digest_value,
)
from .errors import AlreadyDeployed, DuplicateConsent, IntegrityMismatch, UnknownContract
from .store import CommitQueue, JsonlFile

AUTHORITY = "hospital-authority"

# Emulated execution cost: flat charge per write plus a charge per stored byte.
BASE_COST = 21_000
PER_BYTE_COST = 16


def consent_list_digest(consents: Sequence[SharingConsent]) -> Digest:
    return digest_value([c.to_dict() for c in consents])


def contract_address(patient_id: str, deploy_nonce: int) -> str:
    return "0x" + digest_value([patient_id, deploy_nonce])[:40]


@dataclass
class PatientContract:
    address: str
    patient_id: str
    owner: str
    created_at: int
    consents: list[SharingConsent] = field(default_factory=list)
    _by_tuple: dict[tuple, SharingConsent] = field(default_factory=dict, repr=False)

    def _append(self, consent: SharingConsent) -> None:
        self.consents.append(consent)
        self._by_tuple[consent.key] = consent


@dataclass(frozen=True)
class CostRecord:
    operation: str
    address: str
    payload_bytes: int
    cost: int


class ConsentRegistry:
    """All patient contracts, sharing one commit queue for a global write order.

    ``directory=None`` keeps the event logs in memory.
    """

    def __init__(
        self,
        directory: str | Path | None = None,
        *,
        clock: Clock | None = None,
        queue: CommitQueue | None = None,
        catalogue: PhiCatalogue = DEFAULT_CATALOGUE,
        fixed_nonce: bool = False,
        fsync: bool = False,
    ) -> None:
        self.directory = Path(directory) if directory is not None else None
        self.clock = clock or SystemClock()
        self.queue = queue or CommitQueue()
        self.catalogue = catalogue
        self.fixed_nonce = fixed_nonce
        self.fsync = fsync
        self.costs: list[CostRecord] = []
        self._contracts: dict[str, PatientContract] = {}
        self._logs: dict[str, JsonlFile] = {}
        # hospital-system index: patient -> contract address
        self.index: dict[str, str] = {}
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            for log_path in sorted(self.directory.glob("0x*.jsonl")):
                self._replay(JsonlFile(log_path, fsync=fsync))

    # -- persistence -------------------------------------------------------

    def _log_for(self, address: str) -> JsonlFile:
        log = self._logs.get(address)
        if log is None:
            path = None if self.directory is None else self.directory / f"{address}.jsonl"
            log = self._logs[address] = JsonlFile(path, fsync=self.fsync)
        return log

    def _replay(self, log: JsonlFile) -> None:
        contract: PatientContract | None = None
        for event in log.records():
            kind = event["event"]
            if kind == "deploy":
                contract = PatientContract(event["address"], event["patient_id"], event["owner"], event["at"])
                self._contracts[contract.address] = contract
                self._logs[contract.address] = log
                self.index[contract.patient_id] = contract.address
            elif kind == "transfer":
                contract.owner = event["owner"]
            elif kind == "add":
                for c in event["consents"]:
                    contract._append(SharingConsent.from_dict(c))
            self.costs.append(CostRecord(kind, event["address"], event.get("bytes", 0), event.get("cost", 0)))

    def _emit(self, event: dict[str, Any]) -> None:
        payload = len(canonical_bytes(event))
        event = {**event, "bytes": payload, "cost": BASE_COST + PER_BYTE_COST * payload}
        self._log_for(event["address"]).append(event)
        self.costs.append(CostRecord(event["event"], event["address"], payload, event["cost"]))

    # -- operations --------------------------------------------------------

    def deploy_contract(self, patient_id: str) -> str:
        if not isinstance(patient_id, str) or not patient_id:
            raise ValueError("patient_id must be a non-empty string")
        with self.queue:
            if patient_id in self.index:
                raise AlreadyDeployed(f"patient {patient_id} already has contract {self.index[patient_id]}")
            nonce = 0 if self.fixed_nonce else len(self._contracts)
            address = contract_address(patient_id, nonce)
            if address in self._contracts:
                raise AlreadyDeployed(f"address collision at {address}")
            now = self.clock.now()
            contract = PatientContract(address, patient_id, AUTHORITY, now)
            self._emit({"event": "deploy", "address": address, "patient_id": patient_id,
                        "owner": AUTHORITY, "deploy_nonce": nonce, "at": now})
            self._contracts[address] = contract
            self._emit({"event": "transfer", "address": address, "owner": patient_id, "at": now})
            contract.owner = patient_id
            self.index[patient_id] = address
            return address

    def _contract(self, address: str) -> PatientContract:
        try:
            return self._contracts[address]
        except KeyError:
            raise UnknownContract(f"no contract at {address}") from None

    def add_consents(
        self,
        address: str,
        consents: Sequence[SharingConsent | Mapping[str, Any]],
        expected_digest: Digest,
    ) -> int:
        """Append a verified consent batch, all or nothing."""
        consents = [c if isinstance(c, SharingConsent) else SharingConsent.from_dict(c) for c in consents]
        with self.queue:
            contract = self._contract(address)
            if consent_list_digest(consents) != expected_digest:
                raise IntegrityMismatch("consent set does not match the digest recorded in its agreement")
            seen: set[tuple] = set()
            for c in consents:
                if c.patient_id != contract.patient_id:
                    raise IntegrityMismatch(f"consent {c.sic_id} belongs to another patient")
                self.catalogue.require(c.phi_id)
                if c.key in contract._by_tuple or c.key in seen:
                    raise DuplicateConsent(
                        f"({c.sender}, {c.receiver}, {c.phi_id}, {c.purpose.value}) is already on record"
                    )
                seen.add(c.key)
            if consents:
                self._emit({"event": "add", "address": address, "digest": expected_digest,
                            "consents": [c.to_dict() for c in consents], "at": self.clock.now()})
                for c in consents:
                    contract._append(c)
            return len(consents)

    def find_consent(
        self, address: str, sender: str, receiver: str, phi_id: str, purpose: Purpose | str
    ) -> SharingConsent | None:
        contract = self._contract(address)
        try:
            purpose = Purpose(purpose)
        except ValueError:
            return None
        return contract._by_tuple.get((contract.patient_id, sender, receiver, phi_id, purpose))

    def list_consents(self, address: str) -> list[SharingConsent]:
        return list(self._contract(address).consents)

    # -- lookups -----------------------------------------------------------

    def contract_for(self, patient_id: str) -> str | None:
        return self.index.get(patient_id)

    def owner_of(self, address: str) -> str:
        return self._contract(address).owner

    def get_consent(self, sic_id: str) -> SharingConsent | None:
        for contract in self._contracts.values():
            for c in contract.consents:
                if c.sic_id == sic_id:
                    return c
        return None

    def addresses(self) -> list[str]:
        return list(self._contracts)

    def events(self, address: str) -> list[dict[str, Any]]:
        self._contract(address)
        return list(self._log_for(address).records())

    def state_digest(self) -> Digest:
        return digest_value({a: [c.to_dict() for c in k.consents] for a, k in self._contracts.items()})

    def snapshot(self) -> "ConsentRegistry":
        """Read-only copy of the committed state, used by auditors."""
        snap = ConsentRegistry(clock=self.clock, catalogue=self.catalogue)
        for address, contract in list(self._contracts.items()):
            copy = PatientContract(address, contract.patient_id, contract.owner, contract.created_at)
            for c in list(contract.consents):
                copy._append(c)
            snap._contracts[address] = copy
            snap.index[contract.patient_id] = address
        return snap


def deploy_agreement_consents(registry: ConsentRegistry, patient_id: str, sic: Iterable[SharingConsent], sic_digest: Digest) -> tuple[str, int]:
    """Deployment-unit flow: ensure the patient's contract exists, then add the agreement's consents."""
    address = registry.contract_for(patient_id) or registry.deploy_contract(patient_id)
    return address, registry.add_consents(address, list(sic), sic_digest)
