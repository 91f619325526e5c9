from __future__ import annotations

from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from consentledger.broker import (
    Anonymization,
    BrokerPool,
    Encryption,
    ProtectionMetadata,
    ProtectionReport,
    Verdict,
    attest,
    evaluate_protection,
    mechanism_from_dict,
)
from consentledger.domain import FixedClock, Keyring, Purpose, digest_value
from consentledger.errors import MalformedMetadata


def metadata(mechanism, request_id="REQ-1"):
    return ProtectionMetadata.from_dict({"request_id": request_id, "payload_digest": digest_value("p"),
                                         "mechanism": mechanism})


@given(st.sampled_from(["AES", "aes", "DES", "RSA"]), st.integers(1, 4096),
       st.sampled_from([Purpose.TREATMENT, Purpose.DIAGNOSIS]))
def test_encryption_rule_oracle(algorithm, bits, purpose):
    verdict, reason = evaluate_protection(Encryption(algorithm, bits), purpose)
    expected = algorithm.upper() == "AES" and bits >= 256
    assert (verdict == Verdict.SATISFIED) == expected
    assert reason


@given(st.lists(st.sampled_from(["name", "ssn", "zip", "dob"]), unique=True),
       st.sampled_from([Purpose.MARKETING, Purpose.RESEARCH]))
def test_anonymization_rule_oracle(fields, purpose):
    verdict, _ = evaluate_protection(Anonymization(tuple(fields)), purpose)
    assert (verdict == Verdict.SATISFIED) == (not fields)


@pytest.mark.parametrize("mechanism,purpose", [
    (Anonymization(()), Purpose.TREATMENT),
    (Encryption("AES", 256), Purpose.RESEARCH),
    (None, Purpose.DIAGNOSIS),
    (None, Purpose.MARKETING),
])
def test_wrong_mechanism_for_purpose_is_unsatisfied(mechanism, purpose):
    assert evaluate_protection(mechanism, purpose)[0] == Verdict.UNSATISFIED


@pytest.mark.parametrize("bad", [
    {"kind": "Encryption", "algorithm": "", "key_bits": 256},
    {"kind": "Encryption", "algorithm": "AES", "key_bits": True},
    {"kind": "Anonymization", "identifier_fields_remaining": "name"},
    {"kind": "Hashing"},
    "Encryption",
])
def test_malformed_mechanisms(bad):
    with pytest.raises(MalformedMetadata):
        mechanism_from_dict(bad)


def test_report_is_signed_and_round_trips():
    ring = Keyring()
    report = attest(metadata({"kind": "Encryption", "algorithm": "AES", "key_bits": 256}), Purpose.TREATMENT,
                    ring.key("broker-01"), 5)
    assert report.verdict == Verdict.SATISFIED
    assert ring.verify(report.body(), report.signature)
    assert ProtectionReport.from_dict(report.to_dict()) == report
    flipped = replace(report, verdict=Verdict.UNSATISFIED)
    assert not ring.verify(flipped.body(), flipped.signature)


def test_pool_round_robin():
    pool = BrokerPool(["b1", "b2", "b3"], Keyring(), FixedClock())
    md = metadata({"kind": "Anonymization", "identifier_fields_remaining": []})
    ids = [pool.attest(md, Purpose.RESEARCH).broker_id for _ in range(6)]
    assert ids == ["b1", "b2", "b3", "b1", "b2", "b3"]
    with pytest.raises(ValueError):
        BrokerPool([], Keyring())
