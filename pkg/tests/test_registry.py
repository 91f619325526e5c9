from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consentledger.domain import FixedClock, Purpose, SharingConsent, canonical_bytes
from consentledger.errors import AlreadyDeployed, DuplicateConsent, IntegrityMismatch, UnknownContract, UnknownPhi
from consentledger.registry import (
    AUTHORITY,
    BASE_COST,
    PER_BYTE_COST,
    ConsentRegistry,
    consent_list_digest,
    contract_address,
    deploy_agreement_consents,
)

from support import PHIS, RECEIVERS, SENDERS


def consents_for(patient, *tuples):
    return [SharingConsent.create(patient, s, r, p, u, i) for i, (s, r, p, u) in enumerate(tuples)]


def test_deploy_transfers_ownership_and_logs_events():
    reg = ConsentRegistry(clock=FixedClock())
    address = reg.deploy_contract("P")
    assert address == contract_address("P", 0)
    assert reg.owner_of(address) == "P"
    kinds = [(e["event"], e["owner"]) for e in reg.events(address)]
    assert kinds == [("deploy", AUTHORITY), ("transfer", "P")]
    with pytest.raises(AlreadyDeployed):
        reg.deploy_contract("P")


def test_fixed_nonce_addresses_are_reproducible():
    a = ConsentRegistry(clock=FixedClock(), fixed_nonce=True)
    b = ConsentRegistry(clock=FixedClock(), fixed_nonce=True)
    a.deploy_contract("other")
    assert a.deploy_contract("P") == b.deploy_contract("P") == contract_address("P", 0)


def test_cost_accounting_formula():
    reg = ConsentRegistry(clock=FixedClock())
    address = reg.deploy_contract("P")
    batch = consents_for("P", ("s", "r", "PHI-1001", "Treatment"))
    reg.add_consents(address, batch, consent_list_digest(batch))
    for event, cost in zip(reg.events(address), reg.costs):
        body = {k: v for k, v in event.items() if k not in ("bytes", "cost")}
        size = len(canonical_bytes(body))
        assert event["bytes"] == cost.payload_bytes == size
        assert event["cost"] == cost.cost == BASE_COST + PER_BYTE_COST * size


def test_add_is_all_or_nothing():
    reg = ConsentRegistry(clock=FixedClock())
    address = reg.deploy_contract("P")
    good = consents_for("P", ("s", "r", "PHI-1001", "Treatment"))
    reg.add_consents(address, good, consent_list_digest(good))

    dup = consents_for("P", ("s", "r", "PHI-1002", "Treatment"), ("s", "r", "PHI-1001", "Treatment"))
    with pytest.raises(DuplicateConsent):
        reg.add_consents(address, dup, consent_list_digest(dup))
    foreign = consents_for("P", ("s", "r", "PHI-1003", "Treatment")) + consents_for("Q", ("s", "r", "PHI-1003", "Treatment"))
    with pytest.raises(IntegrityMismatch):
        reg.add_consents(address, foreign, consent_list_digest(foreign))
    fresh = consents_for("P", ("s", "r", "PHI-1004", "Treatment"))
    with pytest.raises(IntegrityMismatch):
        reg.add_consents(address, fresh, consent_list_digest(good))
    bad_phi = [SharingConsent("SIC-x", "P", "s", "r", "PHI-9999", Purpose.TREATMENT, 1)]
    with pytest.raises(UnknownPhi):
        reg.add_consents(address, bad_phi, consent_list_digest(bad_phi))
    with pytest.raises(UnknownContract):
        reg.add_consents("0xdead", good, consent_list_digest(good))
    assert reg.list_consents(address) == good
    assert len(reg.events(address)) == 3


def test_replay_from_disk(tmp_path):
    reg = ConsentRegistry(tmp_path, clock=FixedClock())
    address, added = deploy_agreement_consents(
        reg, "P", consents_for("P", ("s", "r", "PHI-1001", "Treatment"), ("s", "x", "PHI-1002", "Research")),
        consent_list_digest(consents_for("P", ("s", "r", "PHI-1001", "Treatment"), ("s", "x", "PHI-1002", "Research"))),
    )
    assert added == 2
    reg.deploy_contract("Q")
    again = ConsentRegistry(tmp_path)
    assert again.state_digest() == reg.state_digest()
    assert again.owner_of(address) == "P"
    assert again.contract_for("Q") == reg.contract_for("Q")
    assert sorted(c.cost for c in again.costs) == sorted(c.cost for c in reg.costs)


tuples = st.tuples(st.sampled_from(SENDERS), st.sampled_from(RECEIVERS), st.sampled_from(PHIS), st.sampled_from(list(Purpose)))


@settings(max_examples=60, deadline=None)
@given(st.lists(tuples, unique=True, max_size=20), st.lists(tuples, max_size=20))
def test_find_matches_linear_scan(granted, queries):
    reg = ConsentRegistry(clock=FixedClock())
    address = reg.deploy_contract("P")
    batch = consents_for("P", *granted)
    reg.add_consents(address, batch, consent_list_digest(batch))
    for q in queries:
        expected = next((c for c in batch if (c.sender, c.receiver, c.phi_id, c.purpose) == q), None)
        assert reg.find_consent(address, *q) == expected
    first = [c.to_dict() for c in reg.list_consents(address)]
    assert first == [c.to_dict() for c in reg.list_consents(address)] == [c.to_dict() for c in batch]


def test_snapshot_is_isolated():
    reg = ConsentRegistry(clock=FixedClock())
    address = reg.deploy_contract("P")
    snap = reg.snapshot()
    batch = consents_for("P", ("s", "r", "PHI-1001", "Treatment"))
    reg.add_consents(address, batch, consent_list_digest(batch))
    assert snap.list_consents(address) == []
    assert snap.find_consent(address, "s", "r", "PHI-1001", "Treatment") is None
    assert reg.find_consent(address, "s", "r", "PHI-1001", "NotAPurpose") is None
