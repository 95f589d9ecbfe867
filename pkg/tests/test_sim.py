import json

import pytest

from scg.errors import ValidationError
from scg.sim import (
    THIRTY_DAYS,
    Fault,
    FaultKind,
    KillPoint,
    Scenario,
    merge_intervals,
    random_crash_scenario,
    run_scenario,
    uptime,
)


def test_uptime_arithmetic():
    assert uptime([(0, 40 * 60)], THIRTY_DAYS) == pytest.approx(0.999074, abs=1e-6)
    assert uptime([(0, 50 * 60)], THIRTY_DAYS) == pytest.approx(0.998843, abs=1e-6)
    assert uptime([], 100) == 1.0
    assert uptime([(0, 100)], 100) == 0.0
    assert uptime([(0, 10), (20, 30)], 100) == pytest.approx(0.8)
    with pytest.raises(ValidationError):
        uptime([(0, 10), (5, 15)], 100)
    with pytest.raises(ValidationError):
        uptime([(90, 110)], 100)
    with pytest.raises(ValidationError):
        uptime([], 0)


def test_merge_intervals():
    assert merge_intervals([(5, 15), (0, 10), (20, 30), (30, 31)]) == [(0, 15), (20, 31)]
    assert merge_intervals([]) == []


def month(downtime_minutes, kind=FaultKind.LINK_DROP):
    return Scenario(seed=2, devices=2, rate=1 / 3600, duration=THIRTY_DAYS,
                    faults=[Fault(5 * 86400, kind, downtime_minutes * 60)])


def test_month_40_minutes_meets_target():
    r = run_scenario(month(40))
    assert r.uptime_fraction == pytest.approx(0.999074, abs=1e-6)
    assert r.meets_target and r.passed and r.lost == 0


def test_month_50_minutes_misses_target():
    r = run_scenario(month(50, FaultKind.GATEWAY_CRASH))
    assert r.uptime_fraction == pytest.approx(0.998843, abs=1e-6)
    assert not r.meets_target and not r.passed and r.lost == 0


def test_backend_outage_is_not_gateway_downtime():
    r = run_scenario(month(50, FaultKind.BACKEND_DOWN))
    assert r.uptime_fraction == 1.0 and r.lost == 0
    assert r.recovery_times[0]["recovery_seconds"] is not None


def test_no_faults_1000_messages():
    r = run_scenario(Scenario(seed=3, devices=4, rate=1 / 5, duration=1250))
    assert r.sent >= 1000 and r.lost == 0 and r.unexpected == 0
    assert r.delivered_unique == r.sent and r.uptime_fraction == 1.0


def test_deterministic():
    sc = random_crash_scenario(9)
    a, b = run_scenario(sc).to_dict(samples=True), run_scenario(sc).to_dict(samples=True)
    assert a == b


def test_scenario_validation_and_io(tmp_path):
    with pytest.raises(ValidationError):
        Scenario(duration=100, faults=[Fault(90, FaultKind.LINK_DROP, 20)])
    with pytest.raises(ValidationError):
        Scenario(devices=0)
    sc = Scenario.from_dict({"seed": 4, "devices": {"count": 2, "rate": 0.1}, "duration": 600,
                             "faults": [{"time": 100, "kind": "gateway_crash", "duration": 30}]})
    assert sc.devices == 2 and sc.rate == 0.1 and sc.faults[0].kind is FaultKind.GATEWAY_CRASH
    (tmp_path / "s.json").write_text(json.dumps(sc.to_dict()))
    assert Scenario.load(tmp_path / "s.json") == sc


def crash_campaign(seeds) -> dict:
    """Run random crash scenarios; returns aggregate counts."""
    out = {"runs": 0, "lost": 0, "unexpected": 0, "mismatch": 0, "kill_points": set()}
    for seed in seeds:
        r = run_scenario(random_crash_scenario(seed))
        out["runs"] += 1
        out["lost"] += r.lost
        out["unexpected"] += r.unexpected
        out["mismatch"] += r.delivered_unique != r.sent
        out["kill_points"].update(r.kill_points)
    return out


def test_crash_campaign_small():
    res = crash_campaign(range(20))
    assert res["lost"] == res["unexpected"] == res["mismatch"] == 0
    assert len(res["kill_points"]) >= 3


@pytest.mark.slow
def test_crash_campaign_100():
    res = crash_campaign(range(100, 200))
    assert res["runs"] == 100
    assert res["lost"] == res["unexpected"] == res["mismatch"] == 0
    assert {k.value for k in KillPoint} <= res["kill_points"]
