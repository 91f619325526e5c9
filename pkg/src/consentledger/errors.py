"""Exception hierarchy.

Every error carries a family so the CLI can map it to an exit code without
knowing each concrete class.
"""

from __future__ import annotations


class ConsentLedgerError(Exception):
    family = "internal"

    @property
    def code(self) -> str:
        return type(self).__name__


# --- domain -----------------------------------------------------------------

class EncodingError(ConsentLedgerError):
    family = "invalid"


class SignatureError(ConsentLedgerError):
    family = "invalid"


class UnknownPhi(ConsentLedgerError):
    family = "invalid"


# --- ppa --------------------------------------------------------------------

class IncompletePpa(ConsentLedgerError):
    family = "invalid"


class PpaConflict(ConsentLedgerError):
    family = "conflict"


class UnknownPpa(ConsentLedgerError):
    family = "not_found"


class MissingAnchor(ConsentLedgerError):
    family = "integrity"


# --- registry ---------------------------------------------------------------

class AlreadyDeployed(ConsentLedgerError):
    family = "conflict"


class UnknownContract(ConsentLedgerError):
    family = "not_found"


class IntegrityMismatch(ConsentLedgerError):
    family = "integrity"


class DuplicateConsent(ConsentLedgerError):
    family = "conflict"


# --- broker / authz ---------------------------------------------------------

class MalformedMetadata(ConsentLedgerError):
    family = "invalid"


class UnknownPatientContract(ConsentLedgerError):
    family = "not_found"


class ChainUnavailable(ConsentLedgerError):
    family = "unavailable"


# --- auditchain -------------------------------------------------------------

class EmptyBatch(ConsentLedgerError):
    family = "invalid"


class ChainCorrupt(ConsentLedgerError):
    family = "integrity"


class DuplicateAnchor(ConsentLedgerError):
    family = "conflict"


class UnknownBlock(ConsentLedgerError):
    family = "not_found"


# --- poc --------------------------------------------------------------------

class InsufficientAuditors(ConsentLedgerError):
    family = "invalid"


class CommitterUnreachable(ConsentLedgerError):
    family = "unavailable"
