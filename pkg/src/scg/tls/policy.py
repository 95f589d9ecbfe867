"""Accept/reject decisions for a negotiated secure channel.

The engine never touches sockets. A channel provider describes what was
negotiated as a :class:`HandshakeProfile`; :func:`evaluate_handshake` checks
it against a :class:`Policy` and reports every rule it breaks.
"""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Mapping, Optional

from ..errors import ValidationError
from . import suites


class ProtocolVersion(str, enum.Enum):
    SSL2 = "SSL2"
    SSL3 = "SSL3"
    TLS1_0 = "TLS1_0"
    TLS1_1 = "TLS1_1"
    TLS1_2 = "TLS1_2"
    TLS1_3 = "TLS1_3"
    DTLS1_2 = "DTLS1_2"

    @property
    def rank(self) -> int:
        return _RANK[self]

    @property
    def is_ssl(self) -> bool:
        return self in (ProtocolVersion.SSL2, ProtocolVersion.SSL3)


# DTLS 1.2 is held to the same rules as TLS 1.2
_RANK = {
    ProtocolVersion.SSL2: 0,
    ProtocolVersion.SSL3: 1,
    ProtocolVersion.TLS1_0: 2,
    ProtocolVersion.TLS1_1: 3,
    ProtocolVersion.TLS1_2: 4,
    ProtocolVersion.DTLS1_2: 4,
    ProtocolVersion.TLS1_3: 5,
}


class Violation(str, enum.Enum):
    V01 = "V01_VersionBelowMinimum"
    V02 = "V02_SuiteNotAllowed"
    V03 = "V03_StaticKeyExchange"
    V04 = "V04_CompressionEnabled"
    V05 = "V05_DhGroupTooSmall"
    V06 = "V06_EcdhCurveTooSmall"
    V07 = "V07_MissingClientCertificate"
    V08 = "V08_AnonymousSuite"
    V09 = "V09_SymmetricKeyTooSmall"
    V10 = "V10_BlockSizeTooSmall"
    V11 = "V11_DowngradeFallback"


ALLOWED_SUITES = (
    "TLS_DHE_RSA_WITH_AES_128_GCM_SHA256",
    "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256",
    "TLS_DHE_RSA_WITH_AES_256_GCM_SHA384",
    "TLS_ECDHE_RSA_WITH_AES_256_GCM_SHA384",
)


@dataclass(frozen=True)
class HandshakeProfile:
    protocol_version: ProtocolVersion
    cipher_suite: str
    compression_enabled: bool = False
    client_certificate_presented: bool = False
    dh_group_bits: int = 0
    ecdh_curve_bits: int = 0
    downgrade_fallback_offered: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "protocol_version", ProtocolVersion(self.protocol_version))
        except ValueError:
            raise ValidationError(f"unknown protocol version {self.protocol_version!r}") from None
        if not isinstance(self.cipher_suite, str):
            raise ValidationError("cipher_suite must be a string")
        for name in ("dh_group_bits", "ecdh_curve_bits"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ValidationError(f"{name} must be a non-negative integer")
        for name in ("compression_enabled", "client_certificate_presented", "downgrade_fallback_offered"):
            if not isinstance(getattr(self, name), bool):
                raise ValidationError(f"{name} must be a boolean")

    @classmethod
    def from_dict(cls, data: Mapping) -> "HandshakeProfile":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown profile fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["protocol_version"] = self.protocol_version.value
        return out


@dataclass(frozen=True)
class Policy:
    allowed_suites: tuple[str, ...] = ALLOWED_SUITES
    min_version: ProtocolVersion = ProtocolVersion.TLS1_2
    require_mutual_auth: bool = True
    forbid_compression: bool = True
    min_dh_bits: int = 2048
    min_ecdh_bits: int = 192
    min_symmetric_bits: int = 128
    min_block_bits: int = 128
    forbid_static_keys: bool = True
    strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "min_version", ProtocolVersion(self.min_version))
        # ordered set: keep first occurrence
        object.__setattr__(self, "allowed_suites", tuple(dict.fromkeys(self.allowed_suites)))

    def with_overrides(self, overrides: Optional[Mapping]) -> "Policy":
        if not overrides:
            return self
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ValidationError(f"unknown policy fields: {sorted(unknown)}")
        changes = dict(overrides)
        if "allowed_suites" in changes:
            changes["allowed_suites"] = tuple(changes["allowed_suites"])
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["allowed_suites"] = list(self.allowed_suites)
        out["min_version"] = self.min_version.value
        return out


def default_policy() -> Policy:
    return Policy()


@dataclass(frozen=True)
class PolicyDecision:
    violations: tuple[Violation, ...] = ()

    @property
    def accepted(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> list[str]:
        return [v.value for v in self.violations]

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "violations": self.codes}


def evaluate_handshake(profile: HandshakeProfile, policy: Optional[Policy] = None) -> PolicyDecision:
    policy = policy or default_policy()
    found = []

    version = profile.protocol_version
    if version.is_ssl or version.rank < policy.min_version.rank:
        found.append(Violation.V01)

    info = suites.lookup(profile.cipher_suite)
    if info is None or profile.cipher_suite not in policy.allowed_suites:
        found.append(Violation.V02)

    if info is not None and policy.forbid_static_keys and info.static_key_exchange and not info.anonymous:
        found.append(Violation.V03)

    if policy.forbid_compression and profile.compression_enabled:
        found.append(Violation.V04)

    dh_bits, ec_bits = profile.dh_group_bits, profile.ecdh_curve_bits
    dh_suite = info is not None and info.kex in suites.FINITE_FIELD_KEX
    ec_suite = info is not None and info.kex in suites.ELLIPTIC_KEX
    if (dh_suite and dh_bits < policy.min_dh_bits) or 0 < dh_bits < policy.min_dh_bits:
        found.append(Violation.V05)
    if (ec_suite and ec_bits < policy.min_ecdh_bits) or 0 < ec_bits < policy.min_ecdh_bits:
        found.append(Violation.V06)

    if policy.require_mutual_auth and not profile.client_certificate_presented:
        found.append(Violation.V07)

    if info is not None:
        if info.anonymous:
            found.append(Violation.V08)
        if info.key_bits < policy.min_symmetric_bits:
            found.append(Violation.V09)
        if not info.stream and info.block_bits < policy.min_block_bits:
            found.append(Violation.V10)

    if policy.strict and profile.downgrade_fallback_offered:
        found.append(Violation.V11)

    return PolicyDecision(tuple(sorted(found, key=lambda v: v.value)))


@dataclass
class AuditEntry:
    profile: HandshakeProfile
    decision: PolicyDecision


@dataclass
class AuditReport:
    entries: list[AuditEntry] = field(default_factory=list)

    @property
    def evaluated(self) -> int:
        return len(self.entries)

    @property
    def accepted(self) -> int:
        return sum(e.decision.accepted for e in self.entries)

    @property
    def rejected(self) -> int:
        return self.evaluated - self.accepted

    @property
    def all_accepted(self) -> bool:
        return self.rejected == 0

    def violation_counts(self) -> dict[str, int]:
        counts = Counter(code for e in self.entries for code in e.decision.codes)
        return {v.value: counts.get(v.value, 0) for v in Violation}

    def summary(self) -> dict:
        return {"evaluated": self.evaluated, "accepted": self.accepted, "rejected": self.rejected}

    def to_dict(self) -> dict:
        return {
            "summary": self.summary(),
            "violation_counts": self.violation_counts(),
            "profiles": [
                {"profile": e.profile.to_dict(), **e.decision.to_dict()} for e in self.entries
            ],
        }

    def render_table(self) -> str:
        head = f"{'#':>4}  {'version':<8} {'cipher suite':<48} {'verdict':<8} violations"
        lines = [head, "-" * len(head)]
        for i, e in enumerate(self.entries, 1):
            verdict = "ACCEPT" if e.decision.accepted else "REJECT"
            codes = ",".join(v.name for v in e.decision.violations) or "-"
            lines.append(
                f"{i:>4}  {e.profile.protocol_version.value:<8} {e.profile.cipher_suite:<48} {verdict:<8} {codes}"
            )
        s = self.summary()
        lines.append(f"evaluated={s['evaluated']} accepted={s['accepted']} rejected={s['rejected']}")
        return "\n".join(lines)


def audit_profiles(profiles: Iterable[HandshakeProfile], policy: Optional[Policy] = None) -> AuditReport:
    policy = policy or default_policy()
    return AuditReport([AuditEntry(p, evaluate_handshake(p, policy)) for p in profiles])


def ideal_profile(suite_name: str, version=ProtocolVersion.TLS1_2) -> HandshakeProfile:
    """A profile with the best parameters a suite can carry: the suite itself is the only variable."""
    info = suites.lookup(suite_name)
    kex = info.kex if info else ""
    return HandshakeProfile(
        protocol_version=version,
        cipher_suite=suite_name,
        compression_enabled=False,
        client_certificate_presented=True,
        dh_group_bits=4096 if kex in suites.FINITE_FIELD_KEX else 0,
        ecdh_curve_bits=384 if kex in suites.ELLIPTIC_KEX or kex == "ANY" else 0,
        downgrade_fallback_offered=False,
    )


def registry_profiles(version=ProtocolVersion.TLS1_2) -> list[HandshakeProfile]:
    return [ideal_profile(name, version) for name in suites.registry()]


def load_profiles(path) -> list[HandshakeProfile]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, Mapping):
        data = data.get("profiles")
    if not isinstance(data, list):
        raise ValidationError("profile file must hold a JSON list of handshake profiles")
    return [HandshakeProfile.from_dict(item) for item in data]
