import io
import json
import logging

import pytest

from oracles import class_map_ok, contiguous_partitions
from scg.alerting import (
    DEFAULT_CLASS_MAP,
    AlertClass,
    AlertClassMap,
    Channel,
    Dashboard,
    MapViolation,
    Router,
    RoutingRules,
    SecurityMonitor,
    classify,
    validate_class_map,
)
from scg.errors import ValidationError
from scg.store.seclog import SecurityLog


def as_map(ranges):
    return AlertClassMap(tuple(AlertClass(f"c{i}", lo, hi) for i, (lo, hi) in enumerate(ranges)))


def test_examples():
    assert validate_class_map(as_map([(i, i) for i in range(8)])) == []
    assert validate_class_map(as_map([(0, 1), (2, 3), (4, 5), (6, 7)])) == []
    assert MapViolation.TOO_FEW in validate_class_map(as_map([(0, 2), (3, 5), (6, 7)]))
    assert MapViolation.RANGE_TOO_WIDE in validate_class_map(as_map([(0, 2), (3, 3), (4, 5), (6, 7)]))
    assert classify(3) == 1
    assert classify(0, as_map([(i, i) for i in range(8)])) == 0
    with pytest.raises(ValidationError):
        classify(9)


def malformed_variants():
    yield [(0, 1), (3, 3), (4, 5), (6, 7)], MapViolation.GAP
    yield [(0, 1), (1, 2), (3, 3), (4, 5), (6, 7)], MapViolation.OVERLAP
    yield [(0, 1), (2, 3), (4, 7)], MapViolation.TOO_FEW
    yield [(0, 0)] + [(i, i) for i in range(8)], MapViolation.TOO_MANY
    yield [(2, 3), (0, 1), (4, 5), (6, 7)], MapViolation.NOT_ORDERED
    yield [(0, 1), (2, 3), (4, 5), (6, 8)], MapViolation.OUT_OF_RANGE
    yield [(0, 1), (2, 3), (4, 5), (7, 6), (6, 7)], MapViolation.EMPTY_RANGE


def enumerate_agreement() -> tuple[int, int]:
    """Compare the validator with the reference rule; returns (agree, total)."""
    agree = total = 0
    for parts in contiguous_partitions(8):
        total += 1
        agree += (validate_class_map(as_map(parts)) == []) == class_map_ok(parts)
    for parts, expected in malformed_variants():
        total += 1
        found = validate_class_map(as_map(parts))
        agree += (not class_map_ok(parts)) and expected in found
    return agree, total


def test_enumerator_agreement():
    agree, total = enumerate_agreement()
    assert total == 128 + 7 and agree == total
    accepted = [p for p in contiguous_partitions(8) if class_map_ok(p)]
    assert len(accepted) == 34  # compositions of 8 into 4..8 parts of size 1 or 2


def test_duplicate_names():
    cmap = AlertClassMap((AlertClass("a", 0, 1), AlertClass("a", 2, 3), AlertClass("b", 4, 5), AlertClass("c", 6, 7)))
    assert validate_class_map(cmap) == [MapViolation.DUPLICATE_NAME]


def test_classify_total_and_monotone():
    for parts in contiguous_partitions(8):
        if not class_map_ok(parts):
            continue
        cmap = as_map(parts)
        idx = [classify(s, cmap) for s in range(8)]
        assert idx == sorted(idx)
        assert all(s in cmap.classes[i] for s, i in enumerate(idx))


def test_from_ranges_forms():
    a = AlertClassMap.from_ranges([("x", 0, 1), ("y", [2, 3]), {"name": "z", "severities": [4, 5]}, ("w", 6, 7)])
    assert validate_class_map(a) == []
    assert AlertClassMap.from_ranges(a.to_list()) == a


def _entry(tmp_path, keys, sev):
    log = SecurityLog(tmp_path, keys, sync=False)
    return log.append(sev, "test event")


def test_fanout(tmp_path, keys):
    rules = RoutingRules.from_config({"classes": {"Critical": ["admin"]},
                                      "roles": {"admin": ["console", "email-stub"]}})
    out = io.StringIO()
    router = Router(DEFAULT_CLASS_MAP, rules, outbox=tmp_path / "outbox.jsonl", stream=out)
    deliveries = router.route(_entry(tmp_path, keys, 1))
    assert [(d.role, d.channel) for d in deliveries] == [("admin", Channel.CONSOLE), ("admin", Channel.EMAIL_STUB)]
    assert "test event" in out.getvalue()
    line = json.loads((tmp_path / "outbox.jsonl").read_text())
    assert line["channel"] == "email-stub" and line["class"] == "Critical"


def test_unrouted_class_warns(tmp_path, keys, caplog):
    with caplog.at_level(logging.WARNING, logger="scg.alerting"):
        router = Router(DEFAULT_CLASS_MAP, RoutingRules())
    assert len(router.warnings) == 4 and "routes to no role" in caplog.text
    assert router.route(_entry(tmp_path, keys, 2)) == []


def test_invalid_map_refused():
    with pytest.raises(ValidationError, match="TooFewClasses"):
        Router(as_map([(0, 2), (3, 5), (6, 7)]))


def test_dashboard_ring_buffer(tmp_path, keys):
    rules = RoutingRules.from_config({"classes": {c.name: ["ops"] for c in DEFAULT_CLASS_MAP.classes},
                                      "roles": {"ops": ["dashboard-buffer"]}})
    dash = Dashboard(tmp_path / "dashboard.bin", keys.blob)
    monitor = SecurityMonitor(SecurityLog(tmp_path, keys, sync=False), Router(rules=rules, dashboard=dash))
    for i in range(300):
        monitor.emit(i % 8, f"event {i}")
    recent = dash.recent()
    assert len(recent) == 256 and recent[0]["event"] == "event 44" and recent[-1]["event"] == "event 299"
    stored = Dashboard.read(tmp_path / "dashboard.bin", keys.blob)
    assert stored == recent
    assert len(Dashboard(tmp_path / "dashboard.bin", keys.blob)) == 256


def test_channel_failure_is_logged(tmp_path, keys):
    log = SecurityLog(tmp_path, keys, sync=False)
    rules = RoutingRules.from_config({"classes": {"Critical": ["admin"]},
                                      "roles": {"admin": ["sms-stub", "dashboard-buffer"]}})
    monitor = SecurityMonitor(log, Router(rules=rules, failure_log=log))  # no outbox: sms fails
    deliveries = monitor.emit(0, "breaker tripped")
    assert [d.channel for d in deliveries] == [Channel.DASHBOARD]
    entries = list(log.entries())
    assert [e.severity for e in entries] == [0, 4]
    assert "sms-stub" in entries[1].event
    assert log.verify().ok
