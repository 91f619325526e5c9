from __future__ import annotations

import hashlib
import unicodedata

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consentledger.domain import (
    DEFAULT_CATALOGUE,
    PHI_ID_PATTERN,
    FixedClock,
    Keyring,
    KeyPair,
    PhiCatalogue,
    Purpose,
    SharingConsent,
    Signature,
    canonical_bytes,
    concat_digests,
    digest,
    digest_value,
    sign,
    verify,
)
from consentledger.errors import EncodingError, SignatureError, UnknownPhi


# -- second, independent encoder used as an oracle ---------------------------

def _oracle_str(s: str) -> str:
    out = ['"']
    for ch in unicodedata.normalize("NFC", s):
        code = ord(ch)
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch in "\b\f\n\r\t":
            out.append({"\b": "\\b", "\f": "\\f", "\n": "\\n", "\r": "\\r", "\t": "\\t"}[ch])
        elif code < 0x20:
            out.append(f"\\u{code:04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def oracle_encode(value) -> bytes:
    def enc(v) -> str:
        if v is None:
            return "null"
        if v is True:
            return "true"
        if v is False:
            return "false"
        if isinstance(v, int):
            return str(v)
        if isinstance(v, str):
            return _oracle_str(v)
        if isinstance(v, (list, tuple)):
            return "[" + ",".join(enc(x) for x in v) + "]"
        if isinstance(v, dict):
            items = sorted((unicodedata.normalize("NFC", k), x) for k, x in v.items())
            return "{" + ",".join(_oracle_str(k) + ":" + enc(x) for k, x in items) + "}"
        raise TypeError(type(v))

    return enc(value).encode("utf-8")


text = st.text(min_size=1, max_size=12)
consents = st.builds(
    SharingConsent.create,
    patient_id=text,
    sender=text,
    receiver=text,
    phi_id=st.sampled_from(DEFAULT_CATALOGUE.ids()),
    purpose=st.sampled_from(list(Purpose)),
    granted_at=st.integers(min_value=0, max_value=2**40),
)
json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**53), 2**53) | st.text(max_size=8),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=6), inner, max_size=4),
    max_leaves=12,
)


@settings(max_examples=100)
@given(consents)
def test_consent_encoding_matches_independent_encoder(consent):
    assert canonical_bytes(consent) == oracle_encode(consent.to_dict())


@given(json_values)
def test_generic_encoding_matches_independent_encoder(value):
    try:
        expected = oracle_encode(value)
    except TypeError:
        return
    # NFC can merge distinct keys; the real encoder refuses those
    try:
        got = canonical_bytes(value)
    except EncodingError:
        return
    assert got == expected


@given(consents, consents)
def test_encoding_is_injective_on_consents(a, b):
    if a != b:
        assert canonical_bytes(a) != canonical_bytes(b)


def test_floats_are_rejected():
    with pytest.raises(EncodingError):
        canonical_bytes({"x": 1.5})


def test_non_string_keys_rejected():
    with pytest.raises(EncodingError):
        canonical_bytes({1: "a"})


def test_nfc_normalization_unifies_equivalent_strings():
    composed, decomposed = "café", "café"
    assert canonical_bytes(composed) == canonical_bytes(decomposed)


def test_key_order_and_no_whitespace():
    assert canonical_bytes({"b": 1, "a": [True, None]}) == b'{"a":[true,null],"b":1}'


def test_digest_helpers():
    assert digest(b"abc") == hashlib.sha256(b"abc").hexdigest()
    assert digest_value([1, "a"]) == hashlib.sha256(b'[1,"a"]').hexdigest()
    d1, d2 = digest(b"1"), digest(b"2")
    assert concat_digests([d1, d2]) == bytes.fromhex(d1) + bytes.fromhex(d2)
    assert len(concat_digests([d1, d2])) == 64


# -- catalogue ----------------------------------------------------------------

def test_catalogue_has_ten_rows():
    assert len(DEFAULT_CATALOGUE) == 10
    assert DEFAULT_CATALOGUE.ids() == [f"PHI-{n}" for n in range(1001, 1011)]
    assert "PHI-1005" in DEFAULT_CATALOGUE
    assert DEFAULT_CATALOGUE.get("PHI-1001").name


def test_catalogue_rejects_unknown_and_malformed():
    with pytest.raises(UnknownPhi):
        DEFAULT_CATALOGUE.require("PHI-9999")
    assert not PHI_ID_PATTERN.fullmatch("PHI-1001\n")
    with pytest.raises(UnknownPhi):
        SharingConsent.create("p", "s", "r", "PHI-1", Purpose.TREATMENT, 0)


def test_catalogue_load_from_file(tmp_path):
    path = tmp_path / "cat.json"
    path.write_text('[{"phi_id":"PHI-0001","name":"n","description":"d","creators":["x"]}]')
    cat = PhiCatalogue.load(path)
    assert cat.ids() == ["PHI-0001"]


# -- consents -----------------------------------------------------------------

def test_consent_id_is_derived_from_tuple():
    a = SharingConsent.create("p", "s", "r", "PHI-1001", "Treatment", 1)
    b = SharingConsent.create("p", "s", "r", "PHI-1001", Purpose.TREATMENT, 99)
    c = SharingConsent.create("p", "s", "r", "PHI-1001", Purpose.RESEARCH, 1)
    assert a.sic_id == b.sic_id != c.sic_id
    assert SharingConsent.from_dict(a.to_dict()) == a


@pytest.mark.parametrize("field,value", [("sender", ""), ("granted_at", 1.0), ("granted_at", True)])
def test_consent_validation(field, value):
    d = SharingConsent.create("p", "s", "r", "PHI-1001", "Treatment", 1).to_dict()
    d[field] = value
    with pytest.raises(ValueError):
        SharingConsent.from_dict(d)


# -- signatures -----------------------------------------------------------------

def test_sign_verify_round_trip_and_determinism():
    k1, k2 = KeyPair.derive("alice"), KeyPair.derive("alice")
    assert k1.public_key == k2.public_key
    assert KeyPair.derive("alice", "other").public_key != k1.public_key
    sig = sign(k1, {"m": 1})
    assert verify(k1.public_key, {"m": 1}, sig)
    assert not verify(k1.public_key, {"m": 2}, sig)
    assert not verify(KeyPair.derive("bob").public_key, {"m": 1}, sig)


def test_malformed_signatures_raise():
    key = KeyPair.derive("alice")
    with pytest.raises(SignatureError):
        verify(key.public_key, 1, Signature("alice", "zz"))
    with pytest.raises(SignatureError):
        verify("00" * 31, 1, sign(key, 1))
    with pytest.raises(SignatureError):
        verify(key.public_key, 1, Signature("alice", "00" * 64, scheme="rsa"))


def test_keyring_verify_treats_bad_input_as_invalid():
    ring = Keyring()
    sig = sign(ring.key("alice"), "hello")
    assert ring.verify("hello", sig)
    assert not ring.verify("hello", None)
    assert not ring.verify("hello", Signature("alice", "not-hex"))
    assert not ring.verify("hello", Signature("bob", sig.value))


def test_fixed_clock_advances():
    clock = FixedClock(10, step=5)
    assert [clock.now() for _ in range(3)] == [10, 15, 20]
