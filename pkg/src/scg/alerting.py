"""Alert classes over syslog severities, and fan-out of security events to roles.

Severities follow syslog: 0 emergency ... 7 debug. An alert class map folds
them into 4 to 8 classes, each covering one severity or two adjacent ones.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import sys
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .errors import ValidationError
from .model import canonical_json
from .store.crypto import open_sealed, seal, write_atomic
from .store.seclog import SecurityLog, SecurityLogEntry

log = logging.getLogger(__name__)

SEVERITY_NAMES = ("emerg", "alert", "crit", "err", "warning", "notice", "info", "debug")
DASHBOARD_SIZE = 256
MIN_CLASSES, MAX_CLASSES = 4, 8

# advisory defaults; deployments may remap events in their alert config
EVENT_SEVERITY = {
    "storage_integrity": 2,
    "channel_rejected": 3,
    "storage_failure": 3,
    "frame_rejected": 4,
    "auth_failed": 4,
    "access_denied": 4,
    "delivery_failed": 4,
    "gateway_start": 5,
    "gateway_stop": 5,
    "auth_ok": 6,
    "forwarded": 7,
}


class Channel(str, enum.Enum):
    LOG = "log"
    CONSOLE = "console"
    EMAIL_STUB = "email-stub"
    SMS_STUB = "sms-stub"
    DASHBOARD = "dashboard-buffer"


class MapViolation(str, enum.Enum):
    TOO_FEW = "TooFewClasses"
    TOO_MANY = "TooManyClasses"
    RANGE_TOO_WIDE = "RangeTooWide"
    EMPTY_RANGE = "EmptyRange"
    OUT_OF_RANGE = "SeverityOutOfRange"
    OVERLAP = "Overlap"
    GAP = "Gap"
    NOT_ORDERED = "NotOrdered"
    DUPLICATE_NAME = "DuplicateName"


@dataclass(frozen=True)
class AlertClass:
    name: str
    low: int
    high: int

    def __contains__(self, severity: int) -> bool:
        return self.low <= severity <= self.high


@dataclass(frozen=True)
class AlertClassMap:
    classes: tuple

    @classmethod
    def from_ranges(cls, ranges: Iterable) -> "AlertClassMap":
        """Build from ``(name, low, high)`` or ``(name, [severities])`` items."""
        out = []
        for item in ranges:
            if isinstance(item, Mapping):
                name, sev = item["name"], item["severities"]
                out.append(AlertClass(name, min(sev), max(sev)) if sev else AlertClass(name, 1, 0))
            elif len(item) == 3:
                out.append(AlertClass(*item))
            else:
                name, sev = item
                sev = list(sev)
                out.append(AlertClass(name, min(sev), max(sev)) if sev else AlertClass(name, 1, 0))
        return cls(tuple(out))

    def to_list(self) -> list:
        return [{"name": c.name, "severities": list(range(c.low, c.high + 1))} for c in self.classes]

    def __len__(self) -> int:
        return len(self.classes)


DEFAULT_CLASS_MAP = AlertClassMap((
    AlertClass("Critical", 0, 1),
    AlertClass("Error", 2, 3),
    AlertClass("Warning", 4, 5),
    AlertClass("Info", 6, 7),
))


def validate_class_map(cmap: AlertClassMap) -> list[MapViolation]:
    """Every violated constraint, each listed once; an empty list means the map is valid."""
    found = []
    classes = list(cmap.classes)
    if len(classes) < MIN_CLASSES:
        found.append(MapViolation.TOO_FEW)
    if len(classes) > MAX_CLASSES:
        found.append(MapViolation.TOO_MANY)
    if len({c.name for c in classes}) != len(classes):
        found.append(MapViolation.DUPLICATE_NAME)
    for c in classes:
        if c.high < c.low:
            found.append(MapViolation.EMPTY_RANGE)
        elif c.high - c.low + 1 > 2:
            found.append(MapViolation.RANGE_TOO_WIDE)
        if c.low < 0 or c.high > 7:
            found.append(MapViolation.OUT_OF_RANGE)
    valid = [c for c in classes if c.low <= c.high]
    if any(b.low < a.low for a, b in zip(valid, valid[1:])):
        found.append(MapViolation.NOT_ORDERED)
    covered = [0] * 8
    for c in valid:
        for s in range(max(c.low, 0), min(c.high, 7) + 1):
            covered[s] += 1
    if any(n > 1 for n in covered):
        found.append(MapViolation.OVERLAP)
    if any(n == 0 for n in covered):
        found.append(MapViolation.GAP)
    return list(dict.fromkeys(found))


def classify(severity: int, cmap: AlertClassMap = DEFAULT_CLASS_MAP) -> int:
    if not isinstance(severity, int) or isinstance(severity, bool) or not 0 <= severity <= 7:
        raise ValidationError(f"severity must be an integer in 0..7, got {severity!r}")
    for index, cls in enumerate(cmap.classes):
        if severity in cls:
            return index
    raise ValidationError(f"alert class map does not cover severity {severity}")


@dataclass(frozen=True)
class RoutingRules:
    class_roles: Mapping[str, frozenset] = field(default_factory=dict)
    role_channels: Mapping[str, tuple] = field(default_factory=dict)

    @classmethod
    def from_config(cls, data: Mapping) -> "RoutingRules":
        return cls(
            {name: frozenset(roles) for name, roles in data.get("classes", {}).items()},
            {role: tuple(Channel(ch) for ch in chans) for role, chans in data.get("roles", {}).items()},
        )

    def unrouted_classes(self, cmap: AlertClassMap) -> list[str]:
        return [c.name for c in cmap.classes if not self.class_roles.get(c.name)]


@dataclass(frozen=True)
class Alert:
    seq: int
    severity: int
    alert_class: str
    event: str
    ts: str

    def to_dict(self) -> dict:
        return {"seq": self.seq, "severity": self.severity, "class": self.alert_class,
                "event": self.event, "ts": self.ts}


@dataclass(frozen=True)
class Delivery:
    role: str
    channel: Channel
    alert: Alert


class Dashboard:
    """Ring buffer of recent alerts, optionally persisted sealed for ``scg status``."""

    def __init__(self, path: Optional[Path] = None, key: Optional[bytes] = None, size: int = DASHBOARD_SIZE):
        self.path = Path(path) if path else None
        self._key = key
        self._items: deque = deque(maxlen=size)
        if self.path and self.path.exists():
            self._items.extend(self.read(self.path, key))

    @staticmethod
    def read(path, key) -> list[dict]:
        raw = Path(path).read_bytes()
        return json.loads(open_sealed(key, raw[:12], raw[12:], b"dashboard"))

    def push(self, alert: Alert) -> None:
        self._items.append(alert.to_dict())
        if self.path:
            nonce = os.urandom(12)
            plain = json.dumps(list(self._items)).encode()
            write_atomic(self.path, nonce + seal(self._key, nonce, plain, b"dashboard"), sync=False)

    def recent(self) -> list[dict]:
        return list(self._items)

    def __len__(self) -> int:
        return len(self._items)


class Router:
    def __init__(self, cmap: AlertClassMap = DEFAULT_CLASS_MAP, rules: Optional[RoutingRules] = None, *,
                 outbox: Optional[Path] = None, dashboard: Optional[Dashboard] = None, stream=None,
                 failure_log: Optional[SecurityLog] = None):
        problems = validate_class_map(cmap)
        if problems:
            raise ValidationError(f"invalid alert class map: {', '.join(p.value for p in problems)}")
        self.cmap = cmap
        self.rules = rules or RoutingRules()
        self.outbox = Path(outbox) if outbox else None
        self.dashboard = dashboard if dashboard is not None else Dashboard()
        self._stream = stream
        self._failure_log = failure_log
        self._lock = threading.Lock()
        self.warnings = [f"alert class {name} routes to no role" for name in self.rules.unrouted_classes(cmap)]
        for w in self.warnings:
            log.warning(w)

    def _send(self, channel: Channel, role: str, alert: Alert) -> None:
        if channel is Channel.LOG:
            log.log(_LOG_LEVEL[alert.severity], "[%s -> %s] %s", alert.alert_class, role, alert.event)
        elif channel is Channel.CONSOLE:
            print(f"ALERT {alert.alert_class} ({SEVERITY_NAMES[alert.severity]}) -> {role}: {alert.event}",
                  file=self._stream or sys.stderr)
        elif channel is Channel.DASHBOARD:
            self.dashboard.push(alert)
        else:
            if self.outbox is None:
                raise OSError("no outbox configured for stub channels")
            line = canonical_json({"channel": channel.value, "role": role, **alert.to_dict()})
            with open(self.outbox, "ab") as fh:
                fh.write(line + b"\n")

    def route(self, entry: SecurityLogEntry) -> list[Delivery]:
        index = classify(entry.severity, self.cmap)
        cls = self.cmap.classes[index]
        alert = Alert(entry.seq, entry.severity, cls.name, entry.event, entry.ts.isoformat())
        deliveries = []
        failures = []
        with self._lock:
            for role in sorted(self.rules.class_roles.get(cls.name, ())):
                for channel in self.rules.role_channels.get(role, ()):
                    try:
                        self._send(channel, role, alert)
                    except Exception as exc:  # a broken channel must not stall ingestion
                        failures.append(f"alert delivery via {channel.value} to {role} failed: {exc}")
                        continue
                    deliveries.append(Delivery(role, channel, alert))
        for text in failures:
            log.warning(text)
            if self._failure_log is not None:
                self._failure_log.append(4, text)
        return deliveries


_LOG_LEVEL = {0: logging.CRITICAL, 1: logging.CRITICAL, 2: logging.CRITICAL, 3: logging.ERROR,
              4: logging.WARNING, 5: logging.INFO, 6: logging.INFO, 7: logging.DEBUG}


class SecurityMonitor:
    """Appends every event to the security log first, then routes it.

    The log write happens regardless of what delivery does afterwards.
    """

    def __init__(self, seclog: SecurityLog, router: Router):
        self.seclog = seclog
        self.router = router

    def emit(self, severity: int, event: str) -> list[Delivery]:
        entry = self.seclog.append(severity, event)
        return self.router.route(entry)

    __call__ = emit
