"""Per-zone release rules: data minimization and keyed pseudonymization."""

from __future__ import annotations

import enum
import hashlib
import hmac
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from ..errors import KeyTooShort, ValidationError
from ..model import Message, ZoneTag

PSEUDONYM_HEX = 32
MIN_KEY_LEN = 16


class Transform(str, enum.Enum):
    PASS = "pass"
    PSEUDONYMIZE = "pseudonymize"
    DROP = "drop"


class ReleaseMode(str, enum.Enum):
    RAW = "raw"
    PSEUDONYMIZED = "pseudonymized"
    ANONYMIZED = "anonymized"


RELEASE_MODE = {
    ZoneTag.PREMISES: ReleaseMode.RAW,
    ZoneTag.EXTERNAL_OPERATIONS: ReleaseMode.PSEUDONYMIZED,
    ZoneTag.THIRD_PARTY: ReleaseMode.ANONYMIZED,
}

# "device" is addressed like a body field in transforms
DEVICE_FIELD = "device"


def minimize(record: Mapping[str, Any], allowlist) -> dict[str, Any]:
    allowed = set(allowlist)
    return {k: v for k, v in record.items() if k in allowed}


def pseudonymize(value: str, key: bytes, context: str) -> str:
    """Deterministic keyed pseudonym: 32 lowercase hex characters of HMAC-SHA256."""
    if len(key) < MIN_KEY_LEN:
        raise KeyTooShort(f"pseudonymization key must be at least {MIN_KEY_LEN} bytes")
    value = str(value)
    data = context.encode("utf-8") + b"\x00" + value.encode("utf-8", "surrogatepass")
    # short hex-only inputs can occur inside a digest; step a counter until they don't
    for counter in range(256):
        tag = hmac.new(key, bytes([counter]) + data, hashlib.sha256).hexdigest()[:PSEUDONYM_HEX]
        if not value or value not in tag:
            break
    return tag


def is_pseudonym(text: str) -> bool:
    return len(text) == PSEUDONYM_HEX and all(c in "0123456789abcdef" for c in text)


@dataclass(frozen=True)
class ZonePolicy:
    zone: ZoneTag
    field_allowlist: frozenset = field(default_factory=frozenset)
    transforms: Mapping[str, Transform] = field(default_factory=dict)
    anonymization: Optional[Mapping[str, Any]] = None

    def __post_init__(self):
        object.__setattr__(self, "zone", ZoneTag(self.zone))
        object.__setattr__(self, "field_allowlist", frozenset(self.field_allowlist))
        object.__setattr__(self, "transforms", {k: Transform(v) for k, v in dict(self.transforms).items()})
        if self.zone is not ZoneTag.PREMISES and self.transforms.get(DEVICE_FIELD, Transform.PSEUDONYMIZE) is Transform.PASS:
            raise ValidationError("device identifiers may not pass unmodified outside the premises")

    @property
    def release_mode(self) -> ReleaseMode:
        return RELEASE_MODE[self.zone]

    @classmethod
    def from_dict(cls, data: Mapping) -> "ZonePolicy":
        return cls(
            zone=data["zone"],
            field_allowlist=frozenset(data.get("field_allowlist", ())),
            transforms=data.get("transforms", {}),
            anonymization=data.get("anonymization"),
        )

    def apply(self, msg: Message, key: bytes) -> Message:
        """Transform one live record for release into this zone.

        Third-party zones never receive live records; use batch anonymization.
        """
        mode = self.release_mode
        if mode is ReleaseMode.RAW:
            return msg
        if mode is ReleaseMode.ANONYMIZED:
            raise ValidationError("third-party zones only receive anonymized batch releases")
        body = minimize(msg.body, self.field_allowlist) if self.field_allowlist else dict(msg.body)
        out = {}
        for name, value in body.items():
            action = self.transforms.get(name, Transform.PASS)
            if action is Transform.DROP:
                continue
            if action is Transform.PSEUDONYMIZE and value is not None:
                value = pseudonymize(str(value), key, name)
            out[name] = value
        device = pseudonymize(msg.device, key, DEVICE_FIELD)
        return msg.replace(device=device, body=out)


def default_zone_policy(zone) -> ZonePolicy:
    return ZonePolicy(zone=zone)
