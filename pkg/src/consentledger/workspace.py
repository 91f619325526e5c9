"""A data directory with every store opened on one commit queue.

The CLI is a thin layer over this class; tests drive the same methods to
check that both paths leave identical persisted state.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Any, Mapping, Sequence

from .auditchain import DEFAULT_MAX_BATCH, AnchorStore, AuditChain, Fault
from .authz import AuthorizationModule, Decision, ShareRequest
from .broker import BrokerPool, ProtectionMetadata
from .domain import DEFAULT_CATALOGUE, Clock, Keyring, PhiCatalogue, Purpose, SharingConsent, SystemClock, digest_value
from .errors import UnknownPatientContract, UnknownPpa
from .netsim import NetConfig
from .poc import AuditorNode, ComplianceReport, ReportLedger, make_nodes, run_audit
from .ppa import IntegrityResult, PatientProviderAgreement, PpaRepository
from .provenance import ConsentFilter, ExecutedConsentView, executed_consents, given_consents
from .registry import ConsentRegistry
from .store import CommitQueue

BROKERS = ("broker-01", "broker-02")


class Workspace:
    def __init__(
        self,
        data_dir: str | Path | None = None,
        *,
        clock: Clock | None = None,
        max_batch: int = DEFAULT_MAX_BATCH,
        catalogue: PhiCatalogue = DEFAULT_CATALOGUE,
        keyring: Keyring | None = None,
        fsync: bool = False,
    ) -> None:
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.clock = clock or SystemClock()
        self.queue = CommitQueue()
        self.keyring = keyring or Keyring()
        self.catalogue = catalogue

        def at(name: str) -> Path | None:
            return None if self.data_dir is None else self.data_dir / name

        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
        self.anchors = AnchorStore(at("anchors.jsonl"), clock=self.clock, queue=self.queue, fsync=fsync)
        self.chain = AuditChain(
            at("audit_chain.jsonl"), self.anchors,
            max_batch=max_batch, clock=self.clock, queue=self.queue, fsync=fsync,
        )
        self.ppas = PpaRepository(
            at("ppa_repository.jsonl"), self.anchors,
            clock=self.clock, queue=self.queue, catalogue=catalogue, fsync=fsync,
        )
        self.registry = ConsentRegistry(
            at("contracts"), clock=self.clock, queue=self.queue, catalogue=catalogue, fsync=fsync,
        )
        self.reports = ReportLedger(at("reports.jsonl"), self.anchors, queue=self.queue)
        self.brokers = BrokerPool(list(BROKERS), self.keyring, self.clock)
        self._am: AuthorizationModule | None = None

    @property
    def am(self) -> AuthorizationModule:
        if self._am is None:
            self._am = AuthorizationModule(
                self.registry, self.chain, self.brokers, self.keyring,
                policy_source=self.ppas, clock=self.clock,
            )
        return self._am

    # -- agreements --------------------------------------------------------

    def _consent_from_spec(self, patient_id: str, spec: Mapping[str, Any]) -> SharingConsent:
        if "sic_id" in spec:
            return SharingConsent.from_dict({"patient_id": patient_id, **spec})
        return SharingConsent.create(
            patient_id, spec["sender"], spec["receiver"], spec["phi_id"],
            Purpose(spec["purpose"]), spec.get("granted_at", self.clock.now()),
        )

    def create_ppa(self, patient_id: str, spec: Mapping[str, Any]) -> PatientProviderAgreement:
        """Form an agreement from a JSON-shaped spec; SIC entries may omit ids and timestamps."""
        sic = [self._consent_from_spec(patient_id, c) for c in spec.get("sic", [])]
        return self.ppas.create(
            patient_id, spec.get("pc", []), spec.get("prc", []), spec.get("tic", []), sic, spec.get("roc", []),
        )

    def verify_ppa(self, ppa_id: str) -> IntegrityResult:
        return self.ppas.verify_integrity(ppa_id)

    # -- consents ----------------------------------------------------------

    def deploy_contract(self, patient_id: str) -> str:
        return self.registry.deploy_contract(patient_id)

    def add_consents(
        self,
        patient_id: str,
        consents: Sequence[Mapping[str, Any]] | None = None,
        ppa_id: str | None = None,
    ) -> tuple[str, int]:
        """Push an agreement's consents to the patient's contract.

        The expected digest always comes from the stored agreement (latest one
        unless ``ppa_id`` is given); ``consents`` overrides what is submitted,
        so an altered list is rejected.
        """
        if ppa_id is None:
            ids = self.ppas.profiles.get(patient_id)
            if not ids:
                raise UnknownPpa(f"patient {patient_id} has no agreement")
            ppa_id = ids[-1]
        ppa = self.ppas.get(ppa_id)
        if ppa.patient_id != patient_id:
            raise UnknownPpa(f"PPA {ppa_id} does not belong to {patient_id}")
        address = self.registry.contract_for(patient_id) or self.registry.deploy_contract(patient_id)
        submitted = list(ppa.sic) if consents is None else [
            self._consent_from_spec(patient_id, c) for c in consents
        ]
        return address, self.registry.add_consents(address, submitted, ppa.component_digests["sic"])

    def given(self, patient_id: str, filter: ConsentFilter | None = None) -> list[SharingConsent]:
        return given_consents(patient_id, filter, self.registry)

    def executed(self, patient_id: str, filter: ConsentFilter | None = None) -> list[ExecutedConsentView]:
        return executed_consents(patient_id, filter, self.registry, self.chain, self.reports)

    # -- sharing -----------------------------------------------------------

    def share(
        self,
        *,
        sender: str,
        receiver: str,
        patient_id: str,
        phi_id: str,
        purpose: Purpose | str,
        protection: Mapping[str, Any],
        flush: bool = True,
    ) -> tuple[Decision, str]:
        if self.registry.contract_for(patient_id) is None:
            raise UnknownPatientContract(f"patient {patient_id} has no consent contract")
        self.catalogue.require(phi_id)
        requested_at = self.clock.now()
        # the trail counter keeps ids distinct when a fixed clock repeats timestamps
        request_id = "REQ-" + digest_value([
            sender, receiver, patient_id, phi_id, Purpose(purpose).value, requested_at, self.chain.trails_issued,
        ])[:16]
        request = ShareRequest.signed(
            self.keyring, sender=sender, receiver=receiver, patient_id=patient_id,
            phi_id=phi_id, purpose=purpose, requested_at=requested_at, request_id=request_id,
        )
        metadata = ProtectionMetadata.from_dict({
            "request_id": request.request_id,
            "payload_digest": protection.get("payload_digest") or digest_value(["payload", request.request_id]),
            "mechanism": protection.get("mechanism"),
        })
        decision, trail_id = self.am.handle(request, metadata)
        if flush:
            self.chain.flush()
        return decision, trail_id

    # -- audit -------------------------------------------------------------

    def audit(
        self,
        *,
        block_range: range | None = None,
        nodes: int = 5,
        faulty: int = 0,
        seed: int = 0,
        drop_rate: float = 0.0,
        max_delay: int = 0,
        drop_to: Mapping[str, float] | None = None,
        node_list: Sequence[AuditorNode] | None = None,
        record: bool = True,
    ) -> ComplianceReport:
        self.chain.flush()
        return run_audit(
            self.chain, self.registry, node_list or make_nodes(nodes, faulty), self.keyring,
            block_range=block_range,
            netsim_config=NetConfig(seed=seed, drop_rate=drop_rate, max_delay=max_delay, drop_to=dict(drop_to or {})),
            policies_for=self.ppas.policies_for,
            clock=self.clock,
            ledger=self.reports if record else None,
        )

    def verify_chain(self) -> list[Fault]:
        return self.chain.verify_chain()

    # -- state fingerprint -------------------------------------------------

    def state_digest(self) -> str:
        """SHA-256 over every persisted file, for CLI/API equivalence checks."""
        if self.data_dir is None:
            raise ValueError("in-memory workspace has no persisted state")
        h = hashlib.sha256()
        for path in sorted(p for p in self.data_dir.rglob("*.jsonl")):
            h.update(str(path.relative_to(self.data_dir)).encode())
            h.update(b"\0")
            h.update(path.read_bytes())
        return h.hexdigest()
