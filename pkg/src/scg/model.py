"""Messages, zones and the length-prefixed wire frame.

Frame layout (bit-exact)::

    +-----------------------------+---------------------------------+
    | length: uint32, big-endian  | payload: UTF-8 canonical JSON   |
    +-----------------------------+---------------------------------+

The payload is the canonical encoding of exactly one :class:`Message`.
"""

from __future__ import annotations

import enum
import json
import math
import struct
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any, Mapping, Optional, Union

from .errors import FrameTooLarge, Incomplete, ParseError, ValidationError

PROTO_VERSION = 1
MAX_FRAME = 1 << 20
MAX_BODY = 64 << 10
MAX_DEVICE_LEN = 128
DEFAULT_SKEW = 300.0

_LEN = struct.Struct(">I")

Scalar = Union[str, int, float, bool, None]


class Kind(str, enum.Enum):
    MEASUREMENT = "measurement"
    FAULT = "fault"
    WARNING = "warning"
    ACK = "ack"
    CONTROL = "control"


class ZoneTag(str, enum.Enum):
    PREMISES = "premises"
    EXTERNAL_OPERATIONS = "external_operations"
    THIRD_PARTY = "third_party"


# EU member states, ISO 3166-1 alpha-2
EU_REGIONS = frozenset(
    "AT BE BG HR CY CZ DK EE FI FR DE GR HU IE IT LV LT LU MT NL PL PT RO SK SI ES SE".split()
)


@dataclass(frozen=True)
class Zone:
    tag: ZoneTag
    region: str

    def __post_init__(self):
        object.__setattr__(self, "tag", ZoneTag(self.tag))
        if len(self.region) != 2 or not self.region.isalpha() or not self.region.isupper():
            raise ValidationError(f"region must be an ISO 3166 alpha-2 code, got {self.region!r}")

    def in_region(self, allowlist=EU_REGIONS) -> bool:
        return self.region in allowlist


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def format_ts(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def parse_ts(text: str) -> datetime:
    if not isinstance(text, str):
        raise ValidationError("timestamp must be a string")
    src = text[:-1] + "+00:00" if text.endswith(("Z", "z")) else text
    try:
        ts = datetime.fromisoformat(src)
    except ValueError as exc:
        raise ValidationError(f"bad RFC 3339 timestamp {text!r}") from exc
    if ts.tzinfo is None:
        raise ValidationError(f"timestamp {text!r} has no UTC offset")
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True, eq=True)
class Message:
    id: str
    kind: Kind
    device: str
    ts: datetime
    body: Mapping[str, Scalar] = field(default_factory=dict)
    proto_version: int = PROTO_VERSION

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", Kind(self.kind))
        except ValueError:
            raise ValidationError(f"unknown message kind {self.kind!r}") from None
        if isinstance(self.ts, str):
            object.__setattr__(self, "ts", parse_ts(self.ts))
        object.__setattr__(self, "body", dict(self.body))

    @classmethod
    def new(cls, kind, device, body=None, ts=None, id=None) -> "Message":
        return cls(
            id=id or str(uuid.uuid4()),
            kind=kind,
            device=device,
            ts=ts or utcnow(),
            body=body or {},
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "device": self.device,
            "ts": format_ts(self.ts),
            "body": dict(self.body),
            "proto_version": self.proto_version,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Message":
        if not isinstance(data, Mapping):
            raise ParseError("message payload must be an object")
        expected = {"id", "kind", "device", "ts", "body", "proto_version"}
        if set(data) != expected:
            raise ValidationError(f"message fields must be exactly {sorted(expected)}")
        if not isinstance(data["body"], Mapping):
            raise ValidationError("body must be an object")
        msg = cls(
            id=data["id"],
            kind=data["kind"],
            device=data["device"],
            ts=parse_ts(data["ts"]),
            body=data["body"],
            proto_version=data["proto_version"],
        )
        return msg

    def replace(self, **changes) -> "Message":
        fields = {
            "id": self.id, "kind": self.kind, "device": self.device,
            "ts": self.ts, "body": self.body, "proto_version": self.proto_version,
        }
        fields.update(changes)
        return Message(**fields)


def _is_scalar(value) -> bool:
    if value is None or isinstance(value, (str, bool, int)):
        return True
    return isinstance(value, float) and math.isfinite(value)


def _dumps(obj) -> bytes:
    try:
        return json.dumps(
            obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
        ).encode("utf-8")
    except (UnicodeEncodeError, ValueError, TypeError) as exc:
        raise ValidationError(f"value is not canonically encodable: {exc}") from exc


def canonical_json(obj) -> bytes:
    """Sorted-key, whitespace-free UTF-8 JSON for arbitrary plain data."""
    return _dumps(obj)


def canonical_encode(msg: Message) -> bytes:
    for key, value in msg.body.items():
        if not isinstance(key, str):
            raise ValidationError("body keys must be strings")
        if not _is_scalar(value):
            raise ValidationError(f"body value for {key!r} is not a scalar")
    return _dumps(msg.to_dict())


def validate_message(msg: Message, now: Optional[datetime] = None, max_skew: float = DEFAULT_SKEW) -> Message:
    """Check every Message invariant; return ``msg`` unchanged on success."""
    try:
        parsed = uuid.UUID(msg.id)
    except (ValueError, TypeError, AttributeError):
        raise ValidationError(f"id {msg.id!r} is not a UUID") from None
    if parsed.version != 4 or str(parsed) != msg.id.lower():
        raise ValidationError(f"id {msg.id!r} is not a UUID v4")
    if not isinstance(msg.device, str) or not msg.device or len(msg.device) > MAX_DEVICE_LEN:
        raise ValidationError("device must be a non-empty string of at most 128 characters")
    if msg.proto_version != PROTO_VERSION or isinstance(msg.proto_version, bool):
        raise ValidationError(f"unsupported proto_version {msg.proto_version!r}")
    if not isinstance(msg.ts, datetime) or msg.ts.tzinfo is None:
        raise ValidationError("ts must be a UTC timestamp")
    now = now or utcnow()
    if msg.ts - now > timedelta(seconds=max_skew):
        raise ValidationError(f"ts {format_ts(msg.ts)} is more than {max_skew:g}s in the future")
    body = _dumps(msg.body) if all(_is_scalar(v) for v in msg.body.values()) else None
    if body is None:
        raise ValidationError("body values must be scalars")
    if len(body) > MAX_BODY:
        raise ValidationError(f"body is {len(body)} bytes, limit {MAX_BODY}")
    return msg


def encode_frame(msg: Message, now: Optional[datetime] = None, max_skew: float = DEFAULT_SKEW) -> bytes:
    payload = canonical_encode(msg)
    if len(payload) > MAX_FRAME:
        raise FrameTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_FRAME}")
    validate_message(msg, now=now, max_skew=max_skew)
    return _LEN.pack(len(payload)) + payload


def frame_length(data: bytes) -> int:
    """Declared payload length of the frame at the start of ``data``."""
    if len(data) < _LEN.size:
        raise Incomplete(_LEN.size, len(data))
    (length,) = _LEN.unpack_from(data)
    if length > MAX_FRAME:
        raise FrameTooLarge(f"declared length {length} exceeds {MAX_FRAME}")
    return length


def decode_frame(data: bytes, now: Optional[datetime] = None, max_skew: float = DEFAULT_SKEW) -> tuple[Message, bytes]:
    """Decode one frame; returns the message and the unconsumed remainder."""
    length = frame_length(data)
    end = _LEN.size + length
    if len(data) < end:
        raise Incomplete(end, len(data))
    payload = bytes(data[_LEN.size:end])
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed payload: {exc}") from exc
    msg = Message.from_dict(obj)
    validate_message(msg, now=now, max_skew=max_skew)
    return msg, bytes(data[end:])
