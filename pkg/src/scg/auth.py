"""Authentication and role-based authorization for management access.

Two site categories are supported: password login for self-consumption
sites, and X.509 certificates carrying role attributes (``role=<name>`` in
any subject attribute value) for operator-controlled sites.
"""

from __future__ import annotations

import enum
import hmac
import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.x509.oid import NameOID

from .errors import (
    AuthFailed,
    Expired,
    NoRoleAttribute,
    PolicyViolation,
    UntrustedChain,
    ValidationError,
)
from .model import utcnow
from .store.crypto import KdfParams, derive_key, open_sealed, seal, write_atomic

MIN_PASSWORD_LEN = 12
ROLE_PREFIX = "role="
CREDENTIALS_FILE = "credentials.bin"

EventSink = Callable[[int, str], None]


def _no_events(severity: int, event: str) -> None:
    pass


class AuthMode(str, enum.Enum):
    PASSWORD = "password"
    CERTIFICATE = "certificate"


class Action(str, enum.Enum):
    VIEW_STATUS = "view_status"
    VIEW_ALERTS = "view_alerts"
    CONFIGURE = "configure"
    SEND_CONTROL = "send_control"
    MANAGE_USERS = "manage_users"


@dataclass(frozen=True)
class Principal:
    id: str
    auth_mode: AuthMode
    roles: frozenset
    authenticated_at: datetime


@dataclass(frozen=True)
class CredentialRecord:
    user_id: str
    kdf: KdfParams
    verifier: bytes
    roles: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "kdf": self.kdf.to_dict(),
                "verifier": self.verifier.hex(), "roles": sorted(self.roles)}

    @classmethod
    def from_dict(cls, data) -> "CredentialRecord":
        return cls(data["user_id"], KdfParams.from_dict(data["kdf"]),
                   bytes.fromhex(data["verifier"]), frozenset(data.get("roles", ())))


class UserRegistry:
    """Password users, persisted as one AEAD-sealed blob in the data directory.

    Writes are serialized; reads take a snapshot of the in-memory map.
    """

    def __init__(self, path: Optional[Path] = None, key: Optional[bytes] = None, *,
                 kdf_defaults: Optional[KdfParams] = None, min_password_len: int = MIN_PASSWORD_LEN,
                 events: EventSink = _no_events, clock=utcnow):
        self.path = Path(path) if path else None
        self._key = key
        self._kdf_defaults = kdf_defaults or KdfParams()
        self.min_password_len = min_password_len
        self._events = events
        self._clock = clock
        self._lock = threading.Lock()
        self._users: dict[str, CredentialRecord] = {}
        if self.path and self.path.exists():
            self._load()
        # derived on misses so unknown users cost the same as wrong passwords
        self._dummy = CredentialRecord("", self._kdf_defaults, bytes(self._kdf_defaults.output_bits // 8))

    def _load(self) -> None:
        raw = self.path.read_bytes()
        plain = open_sealed(self._key, raw[:12], raw[12:], b"credentials")
        for item in json.loads(plain):
            rec = CredentialRecord.from_dict(item)
            self._users[rec.user_id] = rec

    def _save(self) -> None:
        if not self.path:
            return
        plain = json.dumps([r.to_dict() for r in self._users.values()], sort_keys=True).encode()
        nonce = os.urandom(12)
        write_atomic(self.path, nonce + seal(self._key, nonce, plain, b"credentials"))

    def register_user(self, user_id: str, password: str, params: Optional[KdfParams] = None,
                      roles: Iterable[str] = ()) -> CredentialRecord:
        if not user_id:
            raise ValidationError("user id must not be empty")
        if len(password) < self.min_password_len:
            raise PolicyViolation(f"password must be at least {self.min_password_len} characters")
        base = params or self._kdf_defaults
        params = KdfParams(os.urandom(16), base.memory_cost, base.time_cost, base.parallelism, base.output_bits)
        verifier = derive_key(password.encode("utf-8"), params)
        rec = CredentialRecord(user_id, params, verifier, frozenset(roles))
        with self._lock:
            if user_id in self._users:
                raise ValidationError(f"user {user_id!r} already exists")
            self._users[user_id] = rec
            self._save()
        return rec

    def set_roles(self, user_id: str, roles: Iterable[str]) -> None:
        with self._lock:
            rec = self._users[user_id]
            self._users[user_id] = CredentialRecord(rec.user_id, rec.kdf, rec.verifier, frozenset(roles))
            self._save()

    def authenticate_password(self, user_id: str, password: str) -> Principal:
        rec = self._users.get(user_id)
        known = rec is not None
        probe = rec if known else self._dummy
        candidate = derive_key(password.encode("utf-8"), probe.kdf)
        matched = hmac.compare_digest(candidate, probe.verifier)
        if not (known and matched and rec.roles):
            self._events(4, "authentication failed (password)")
            raise AuthFailed("authentication failed")
        self._events(6, f"user {user_id} authenticated (password)")
        return Principal(user_id, AuthMode.PASSWORD, rec.roles, self._clock())

    def __contains__(self, user_id: str) -> bool:
        return user_id in self._users


def _subject_roles(cert: x509.Certificate) -> set[str]:
    roles = set()
    for attr in cert.subject:
        value = attr.value if isinstance(attr.value, str) else ""
        if value.startswith(ROLE_PREFIX) and len(value) > len(ROLE_PREFIX):
            roles.add(value[len(ROLE_PREFIX):])
    return roles


def _subject_id(cert: x509.Certificate) -> str:
    cns = cert.subject.get_attributes_for_oid(NameOID.COMMON_NAME)
    return cns[0].value if cns else cert.subject.rfc4514_string()


def _issued_by(cert: x509.Certificate, issuer: x509.Certificate) -> bool:
    try:
        cert.verify_directly_issued_by(issuer)
    except (ValueError, TypeError, InvalidSignature):
        return False
    return True


def authenticate_certificate(chain: Sequence[x509.Certificate], trust_anchors: Sequence[x509.Certificate],
                             now: Optional[datetime] = None, events: EventSink = _no_events) -> Principal:
    """Validate ``chain`` (leaf first) up to one of ``trust_anchors`` and read roles from the leaf."""
    if not chain:
        raise ValidationError("certificate chain must not be empty")
    now = now or utcnow()
    try:
        for cert in chain:
            if not cert.not_valid_before_utc <= now <= cert.not_valid_after_utc:
                raise Expired(f"certificate {cert.subject.rfc4514_string()} is outside its validity period")
        for child, parent in zip(chain, chain[1:]):
            if not _issued_by(child, parent):
                raise UntrustedChain(f"{child.subject.rfc4514_string()} is not issued by the next certificate")
        top = chain[-1]
        anchored = any(top == anchor or _issued_by(top, anchor) for anchor in trust_anchors)
        if not anchored:
            raise UntrustedChain("chain does not lead to a trust anchor")
        for anchor in trust_anchors:
            if top != anchor and _issued_by(top, anchor) and not (
                    anchor.not_valid_before_utc <= now <= anchor.not_valid_after_utc):
                raise Expired("trust anchor is outside its validity period")
        roles = _subject_roles(chain[0])
        if not roles:
            raise NoRoleAttribute("leaf certificate carries no role=<name> attribute")
    except (Expired, UntrustedChain, NoRoleAttribute) as exc:
        events(4, f"certificate authentication failed: {type(exc).__name__}")
        raise
    subject = _subject_id(chain[0])
    events(6, f"{subject} authenticated (certificate)")
    return Principal(subject, AuthMode.CERTIFICATE, frozenset(roles), now)


@dataclass(frozen=True)
class AccessRule:
    role: str
    action: Action
    allow: bool = True

    def __post_init__(self):
        object.__setattr__(self, "action", Action(self.action))


@dataclass
class AccessControl:
    """Default-deny authorization: a principal may act if any of its roles has an allow rule."""

    rules: Sequence[AccessRule] = field(default_factory=list)
    events: EventSink = _no_events

    def __post_init__(self):
        self._allowed = {(r.role, r.action) for r in self.rules if r.allow}

    @classmethod
    def from_config(cls, roles: Mapping[str, Iterable[str]], events: EventSink = _no_events) -> "AccessControl":
        rules = [AccessRule(role, action) for role, actions in roles.items() for action in actions]
        return cls(rules, events)

    def authorize(self, principal: Principal, action) -> bool:
        action = Action(action)
        if any((role, action) in self._allowed for role in principal.roles):
            return True
        self.events(4, f"access denied: {principal.id} -> {action.value}")
        return False


def load_pem_chain(path) -> list[x509.Certificate]:
    return x509.load_pem_x509_certificates(Path(path).read_bytes())
