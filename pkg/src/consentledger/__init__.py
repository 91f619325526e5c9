"""Tamper-evident consent management and compliance checking for PHI sharing."""

__version__ = "0.1.0"

from .auditchain import AnchorKind, AnchorStore, AuditBlock, AuditChain, AuditTrail, Fault, FaultKind
from .authz import AuthorizationModule, Decision, Outcome, ReasonCode, ShareRequest, authorize_share, record_outcome
from .broker import Anonymization, BrokerPool, Encryption, ProtectionMetadata, ProtectionReport, Verdict, attest
from .domain import (
    DEFAULT_CATALOGUE,
    FixedClock,
    Keyring,
    PhiCatalogue,
    Purpose,
    SharingConsent,
    SystemClock,
    canonical_bytes,
    digest,
    digest_value,
)
from .errors import ConsentLedgerError
from .poc import AuditorNode, Behavior, ComplianceReport, ComplianceStatus, Role, make_nodes, run_audit
from .ppa import PatientProviderAgreement, PolicyKind, PolicyRef, PpaRepository, create_ppa, verify_ppa_integrity
from .provenance import ConsentFilter, Orientation, executed_consents, given_consents
from .registry import ConsentRegistry
from .workspace import Workspace

__all__ = [
    "AnchorKind", "AnchorStore", "AuditBlock", "AuditChain", "AuditTrail", "Fault", "FaultKind",
    "AuthorizationModule", "Decision", "Outcome", "ReasonCode", "ShareRequest", "authorize_share", "record_outcome",
    "Anonymization", "BrokerPool", "Encryption", "ProtectionMetadata", "ProtectionReport", "Verdict", "attest",
    "DEFAULT_CATALOGUE", "FixedClock", "Keyring", "PhiCatalogue", "Purpose", "SharingConsent", "SystemClock",
    "canonical_bytes", "digest", "digest_value",
    "ConsentLedgerError",
    "AuditorNode", "Behavior", "ComplianceReport", "ComplianceStatus", "Role", "make_nodes", "run_audit",
    "PatientProviderAgreement", "PolicyKind", "PolicyRef", "PpaRepository", "create_ppa", "verify_ppa_integrity",
    "ConsentFilter", "Orientation", "executed_consents", "given_consents",
    "ConsentRegistry",
    "Workspace",
    "__version__",
]
