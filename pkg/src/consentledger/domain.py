"""Core domain types, the PHI catalogue, canonical encoding, hashing and signing.

Everything that gets hashed or signed goes through :func:`canonical_bytes`
first, so two processes that agree on a value always agree on its digest.
"""

from __future__ import annotations

import functools
import hashlib
import json
import re
import threading
import time
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import EncodingError, SignatureError, UnknownPhi

PHI_ID_PATTERN = re.compile(r"^PHI-\d{4}$")
ZERO_DIGEST = "0" * 64
SIGNATURE_SCHEME = "ed25519"

Digest = str  # 64 lowercase hex chars


class Purpose(str, Enum):
    TREATMENT = "Treatment"
    DIAGNOSIS = "Diagnosis"
    MARKETING = "Marketing"
    RESEARCH = "Research"


# ---------------------------------------------------------------------------
# canonical encoding + digest
# ---------------------------------------------------------------------------

def _normalize(value: Any) -> Any:
    if value is None or isinstance(value, bool):
        return value
    if isinstance(value, Enum):
        return _normalize(value.value)
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        raise EncodingError(f"floats are not canonically encodable: {value!r}")
    if isinstance(value, str):
        return unicodedata.normalize("NFC", value)
    if hasattr(value, "to_dict"):
        return _normalize(value.to_dict())
    if isinstance(value, Mapping):
        out: dict[str, Any] = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise EncodingError(f"object keys must be strings, got {k!r}")
            nk = unicodedata.normalize("NFC", k)
            if nk in out:
                raise EncodingError(f"duplicate key after NFC normalization: {k!r}")
            out[nk] = _normalize(v)
        return out
    if isinstance(value, (list, tuple)):
        return [_normalize(v) for v in value]
    raise EncodingError(f"not canonically encodable: {type(value).__name__}")


def canonical_bytes(value: Any) -> bytes:
    """Canonical JSON: sorted keys, no whitespace, NFC strings, UTF-8.

    Python orders str keys by code point, which matches UTF-8 byte order.
    """
    normalized = _normalize(value)
    return json.dumps(
        normalized,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")


def digest(data: bytes) -> Digest:
    return hashlib.sha256(data).hexdigest()


def digest_value(value: Any) -> Digest:
    return digest(canonical_bytes(value))


def concat_digests(digests: Iterable[Digest]) -> bytes:
    """Byte concatenation of raw 32-byte digests, in the given order."""
    return b"".join(bytes.fromhex(d) for d in digests)


# ---------------------------------------------------------------------------
# clocks
# ---------------------------------------------------------------------------

class Clock(Protocol):
    def now(self) -> int: ...


class SystemClock:
    def now(self) -> int:
        return int(time.time())


class FixedClock:
    """Deterministic clock: starts at ``start`` and advances ``step`` per read."""

    def __init__(self, start: int = 1_700_000_000, step: int = 1) -> None:
        self._next = start
        self._step = step
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            t = self._next
            self._next += self._step
            return t


# ---------------------------------------------------------------------------
# PHI catalogue
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhiDescriptor:
    phi_id: str
    name: str
    description: str
    creators: tuple[str, ...]

    def __post_init__(self) -> None:
        if not PHI_ID_PATTERN.fullmatch(self.phi_id):
            raise UnknownPhi(f"malformed PHI id {self.phi_id!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "phi_id": self.phi_id,
            "name": self.name,
            "description": self.description,
            "creators": list(self.creators),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PhiDescriptor":
        return cls(d["phi_id"], d["name"], d["description"], tuple(d["creators"]))


class PhiCatalogue:
    """Lookup table of PHI record categories keyed by PHI id."""

    def __init__(self, entries: Iterable[PhiDescriptor]) -> None:
        self._entries: dict[str, PhiDescriptor] = {}
        for e in entries:
            if e.phi_id in self._entries:
                raise UnknownPhi(f"duplicate PHI id {e.phi_id}")
            self._entries[e.phi_id] = e

    @classmethod
    def load(cls, path: str | Path | None = None) -> "PhiCatalogue":
        if path is None:
            raw = resources.files("consentledger").joinpath("data/phi_catalogue.json").read_bytes()
        else:
            raw = Path(path).read_bytes()
        return cls(PhiDescriptor.from_dict(d) for d in json.loads(raw))

    def __contains__(self, phi_id: object) -> bool:
        return phi_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries.values())

    def ids(self) -> list[str]:
        return list(self._entries)

    def get(self, phi_id: str) -> PhiDescriptor:
        try:
            return self._entries[phi_id]
        except KeyError:
            raise UnknownPhi(f"{phi_id} is not in the PHI catalogue") from None

    def require(self, phi_id: str) -> None:
        self.get(phi_id)


DEFAULT_CATALOGUE = PhiCatalogue.load()


# ---------------------------------------------------------------------------
# sharing consent
# ---------------------------------------------------------------------------

def consent_tuple_id(patient_id: str, sender: str, receiver: str, phi_id: str, purpose: Purpose) -> str:
    return "SIC-" + digest_value([patient_id, sender, receiver, phi_id, Purpose(purpose).value])[:16]


@dataclass(frozen=True)
class SharingConsent:
    sic_id: str
    patient_id: str
    sender: str
    receiver: str
    phi_id: str
    purpose: Purpose
    granted_at: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "purpose", Purpose(self.purpose))
        for name in ("sic_id", "patient_id", "sender", "receiver"):
            if not isinstance(getattr(self, name), str) or not getattr(self, name):
                raise ValueError(f"SharingConsent.{name} must be a non-empty string")
        if not PHI_ID_PATTERN.fullmatch(self.phi_id):
            raise UnknownPhi(f"malformed PHI id {self.phi_id!r}")
        if isinstance(self.granted_at, bool) or not isinstance(self.granted_at, int):
            raise ValueError("granted_at must be integer seconds")

    @classmethod
    def create(
        cls,
        patient_id: str,
        sender: str,
        receiver: str,
        phi_id: str,
        purpose: Purpose | str,
        granted_at: int,
    ) -> "SharingConsent":
        purpose = Purpose(purpose)
        return cls(
            consent_tuple_id(patient_id, sender, receiver, phi_id, purpose),
            patient_id, sender, receiver, phi_id, purpose, granted_at,
        )

    @property
    def key(self) -> tuple[str, str, str, str, Purpose]:
        return (self.patient_id, self.sender, self.receiver, self.phi_id, self.purpose)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sic_id": self.sic_id,
            "patient_id": self.patient_id,
            "sender": self.sender,
            "receiver": self.receiver,
            "phi_id": self.phi_id,
            "purpose": self.purpose.value,
            "granted_at": self.granted_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SharingConsent":
        return cls(
            d["sic_id"], d["patient_id"], d["sender"], d["receiver"],
            d["phi_id"], Purpose(d["purpose"]), d["granted_at"],
        )


# ---------------------------------------------------------------------------
# signatures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Signature:
    signer: str
    value: str  # hex
    scheme: str = SIGNATURE_SCHEME

    def to_dict(self) -> dict[str, Any]:
        return {"signer": self.signer, "scheme": self.scheme, "value": self.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Signature":
        return cls(signer=d["signer"], value=d["value"], scheme=d["scheme"])


@dataclass(frozen=True)
class KeyPair:
    signer: str
    private_key: Ed25519PrivateKey = field(repr=False, compare=False)

    @classmethod
    def derive(cls, signer: str, namespace: str = "test") -> "KeyPair":
        """Deterministic test-mode key: the seed is a hash of (namespace, signer)."""
        seed = hashlib.sha256(canonical_bytes(["consentledger-key", namespace, signer])).digest()
        return cls(signer, Ed25519PrivateKey.from_private_bytes(seed))

    @property
    def public_key(self) -> str:
        raw = self.private_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return raw.hex()


def sign(key: KeyPair, value: Any) -> Signature:
    if not isinstance(key, KeyPair):
        raise SignatureError("malformed key")
    return Signature(key.signer, key.private_key.sign(canonical_bytes(value)).hex())


def _decode_hex(text: Any, size: int, what: str) -> bytes:
    if not isinstance(text, str):
        raise SignatureError(f"{what} must be hex text")
    try:
        raw = bytes.fromhex(text)
    except ValueError:
        raise SignatureError(f"{what} is not valid hex") from None
    if len(raw) != size:
        raise SignatureError(f"{what} must be {size} bytes, got {len(raw)}")
    return raw


def verify(public_key: str, value: Any, sig: Signature) -> bool:
    """True iff ``sig`` was made over ``value`` by the holder of ``public_key``.

    Raises SignatureError for structurally malformed keys or signatures.
    """
    if not isinstance(sig, Signature) or sig.scheme != SIGNATURE_SCHEME:
        raise SignatureError("malformed signature")
    raw_pk = _decode_hex(public_key, 32, "public key")
    raw_sig = _decode_hex(sig.value, 64, "signature")
    return _verify_raw(raw_pk, canonical_bytes(value), raw_sig)


@functools.lru_cache(maxsize=65536)
def _verify_raw(raw_pk: bytes, message: bytes, raw_sig: bytes) -> bool:
    # pure function of its bytes, so memoizing is safe; audit rounds re-check
    # the same signatures once per node
    try:
        Ed25519PublicKey.from_public_bytes(raw_pk).verify(raw_sig, message)
    except InvalidSignature:
        return False
    return True


class Keyring:
    """Per-actor key material, derived on demand in test mode.

    Stands in for a PKI: every component that needs to check a signature asks
    the keyring for the signer's public key.
    """

    def __init__(self, namespace: str = "test") -> None:
        self.namespace = namespace
        self._keys: dict[str, KeyPair] = {}
        self._lock = threading.Lock()

    def key(self, actor: str) -> KeyPair:
        with self._lock:
            kp = self._keys.get(actor)
            if kp is None:
                kp = self._keys[actor] = KeyPair.derive(actor, self.namespace)
            return kp

    def public_key(self, actor: str) -> str:
        return self.key(actor).public_key

    def verify(self, value: Any, sig: Signature | None) -> bool:
        """Verify ``sig`` against its claimed signer; malformed input counts as invalid."""
        if sig is None:
            return False
        try:
            return verify(self.public_key(sig.signer), value, sig)
        except SignatureError:
            return False
