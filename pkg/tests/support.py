"""Shared builders for tests: actor universes, protection fixtures and seeded histories."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any

from consentledger.authz import Decision, Outcome, ShareRequest, authorize_share
from consentledger.broker import ProtectionMetadata
from consentledger.domain import DEFAULT_CATALOGUE, FixedClock, Purpose, digest_value
from consentledger.poc import ComplianceStatus
from consentledger.workspace import Workspace

SENDERS = ("hospital-a", "hospital-b", "clinic-c")
RECEIVERS = ("lab-x", "clinic-y", "insurer-z")
PHIS = tuple(DEFAULT_CATALOGUE.ids()[:4])
PURPOSES = tuple(Purpose)

PROTECTION = {
    "aes256": {"mechanism": {"kind": "Encryption", "algorithm": "AES", "key_bits": 256}},
    "aes128": {"mechanism": {"kind": "Encryption", "algorithm": "AES", "key_bits": 128}},
    "anon": {"mechanism": {"kind": "Anonymization", "identifier_fields_remaining": []}},
    "leaky": {"mechanism": {"kind": "Anonymization", "identifier_fields_remaining": ["name", "ssn"]}},
    "none": {"mechanism": None},
}

BOILERPLATE = {
    "pc": [{"notice": "privacy notice", "version": 1}],
    "prc": [{"code": "provider code of conduct"}],
    "tic": [{"team": "care-team-1", "scope": "treatment"}],
}


def all_tuples() -> list[tuple[str, str, str, Purpose]]:
    return [(s, r, p, u) for s in SENDERS for r in RECEIVERS for p in PHIS for u in PURPOSES]


def consent_spec(sender: str, receiver: str, phi_id: str, purpose: Purpose | str) -> dict[str, Any]:
    return {"sender": sender, "receiver": receiver, "phi_id": phi_id, "purpose": Purpose(purpose).value}


def ppa_spec(consents: list[dict[str, Any]], policies: list[dict[str, Any]] | None = None, tag: str = "") -> dict[str, Any]:
    roc = policies or [{"policy_id": f"hipaa-min{tag}", "kind": "RegulatoryRule", "parameters": {}}]
    return {**BOILERPLATE, "sic": consents, "roc": roc}


def suitable_protection(purpose: Purpose) -> str:
    return "aes256" if purpose in (Purpose.TREATMENT, Purpose.DIAGNOSIS) else "anon"


@dataclass
class Shared:
    """Ground truth for one recorded trail, kept independently of the chain."""

    patient_id: str
    tuple: tuple[str, str, str, Purpose]
    outcome: Outcome
    trail_id: str
    consent_ref: str | None
    expected: ComplianceStatus | None = None


@dataclass
class History:
    ws: Workspace
    granted: dict[str, list[tuple[str, str, str, Purpose]]]
    log: list[Shared] = field(default_factory=list)


def build_history(
    seed: int,
    n_trails: int = 100,
    patients: int = 3,
    max_batch: int = 25,
    data_dir=None,
    anomalies: int = 0,
) -> History:
    """A workspace with several patients, random consents and ``n_trails`` recorded share requests.

    Roughly half the requests target a consented tuple with suitable
    protection, so histories mix Permits and every kind of Deny. With
    ``anomalies`` > 0 that many forged or report-less trails are mixed in.
    """
    rng = random.Random(seed)
    ws = Workspace(data_dir, clock=FixedClock(), max_batch=max_batch)
    universe = all_tuples()
    granted: dict[str, list[tuple]] = {}
    for i in range(patients):
        patient = f"patient-{i:02d}"
        chosen = rng.sample(universe, rng.randint(3, 12))
        policies = [{"policy_id": "baseline", "kind": "RegulatoryRule", "parameters": {}}]
        if rng.random() < 0.5:
            policies.append({
                "policy_id": "no-insurer",
                "kind": "ContractualObligation",
                "parameters": {"denied_receivers": ["insurer-z"]},
            })
        ws.create_ppa(patient, ppa_spec([consent_spec(*t) for t in chosen], policies))
        ws.add_consents(patient)
        granted[patient] = chosen
    history = History(ws, granted)
    names = sorted(granted)
    slots = set(rng.sample(range(n_trails), anomalies)) if anomalies else set()
    for n in range(n_trails):
        patient = rng.choice(names)
        if n in slots:
            history.log.append(inject_anomaly(ws, rng, patient, granted[patient]))
            continue
        if rng.random() < 0.5:
            t = rng.choice(granted[patient])
            protection = suitable_protection(t[3]) if rng.random() < 0.8 else rng.choice(sorted(PROTECTION))
        else:
            t = rng.choice(universe)
            protection = rng.choice(sorted(PROTECTION))
        s, r, p, u = t
        decision, trail_id = ws.share(sender=s, receiver=r, patient_id=patient, phi_id=p, purpose=u,
                                      protection=PROTECTION[protection], flush=False)
        history.log.append(Shared(patient, t, decision.outcome, trail_id, decision.consent_ref,
                                  ComplianceStatus.COMPLIANT))
    ws.chain.flush()
    return history


def inject_anomaly(ws: Workspace, rng: random.Random, patient: str, granted: list[tuple]) -> Shared:
    """Record either a Permit forged without a consent or a trail whose broker report is missing."""
    now = ws.clock.now()
    if rng.random() < 0.5:
        # forged Permit: an unconsented tuple with an authentic, satisfied report
        t = rng.choice([x for x in all_tuples() if x not in granted])
        request = ShareRequest.signed(ws.keyring, sender=t[0], receiver=t[1], patient_id=patient,
                                      phi_id=t[2], purpose=t[3], requested_at=now,
                                      request_id=f"REQ-forged-{now}")
        metadata = ProtectionMetadata.from_dict({
            "request_id": request.request_id, "payload_digest": digest_value(request.request_id),
            **PROTECTION[suitable_protection(t[3])],
        })
        report = ws.brokers.attest(metadata, t[3])
        # either a made-up consent id or a real one for a different tuple
        consent_ref = rng.choice(["SIC-0000000000000000", _sic_of(ws, patient, granted[0])])
        decision = Decision(request.request_id, Outcome.PERMIT, (), consent_ref, digest_value(report))
        trail_id = ws.am.record(decision, report, request, now)
        return Shared(patient, t, Outcome.PERMIT, trail_id, decision.consent_ref, ComplianceStatus.NON_COMPLIANT)
    # missing broker report: the genuine decision is kept but the report never arrived
    t = rng.choice(granted)
    request = ShareRequest.signed(ws.keyring, sender=t[0], receiver=t[1], patient_id=patient,
                                  phi_id=t[2], purpose=t[3], requested_at=now,
                                  request_id=f"REQ-noreport-{now}")
    decision = authorize_share(request, ws.registry, None, ws.ppas.policies_for(patient), ws.keyring)
    if rng.random() < 0.5:
        decision = Decision(request.request_id, Outcome.PERMIT, (), _sic_of(ws, patient, t), None)
    trail_id = ws.am.record(decision, None, request, now)
    return Shared(patient, t, decision.outcome, trail_id, decision.consent_ref, ComplianceStatus.NON_DETERMINED)


def _sic_of(ws: Workspace, patient: str, t: tuple) -> str:
    c = ws.registry.find_consent(ws.registry.contract_for(patient), *t)
    return c.sic_id
