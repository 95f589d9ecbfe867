from .policy import (
    ALLOWED_SUITES,
    AuditReport,
    HandshakeProfile,
    Policy,
    PolicyDecision,
    ProtocolVersion,
    Violation,
    audit_profiles,
    default_policy,
    evaluate_handshake,
    ideal_profile,
    load_profiles,
    registry_profiles,
)
from .suites import SuiteInfo, lookup, registry

__all__ = [
    "ALLOWED_SUITES", "AuditReport", "HandshakeProfile", "Policy", "PolicyDecision",
    "ProtocolVersion", "SuiteInfo", "Violation", "audit_profiles", "default_policy",
    "evaluate_handshake", "ideal_profile", "load_profiles", "lookup", "registry",
    "registry_profiles",
]
