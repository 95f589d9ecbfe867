"""Deterministic site simulation on a simulated clock.

Devices publish on fixed periods and keep every message until the gateway
acks it. The gateway runs in-process against the loopback provider and a
real on-disk store, so simulated crashes exercise actual recovery: the
gateway objects are dropped at a kill point, optionally with a torn journal
tail, and a fresh gateway reopens the same directory.

Downtime is any window in which devices cannot reach the gateway (crashes
and link drops). A backend outage is islanded operation: ingestion goes on
and the queue grows, so it does not count as downtime.
"""

from __future__ import annotations

import enum
import heapq
import json
import random
import shutil
import tempfile
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional

from .errors import ValidationError
from .gateway.backend import MemorySink
from .gateway.channels import LoopbackProvider
from .gateway.config import config_from_dict
from .gateway.pki import make_ca, make_leaf
from .gateway.service import Gateway
from .model import Kind, Message, Zone, decode_frame, encode_frame
from .store.crypto import KeyRing
from .tls.policy import ideal_profile

EPOCH = datetime(2026, 1, 1, tzinfo=timezone.utc)
DEFAULT_TARGET = 0.999
JOURNAL_ENTRY = 53
THIRTY_DAYS = 30 * 86400


class FaultKind(str, enum.Enum):
    GATEWAY_CRASH = "gateway_crash"
    LINK_DROP = "link_drop"
    BACKEND_DOWN = "backend_down"


class KillPoint(str, enum.Enum):
    IDLE = "idle"
    STORED_NOT_ACKED = "stored_not_acked"
    TORN_ENQUEUE = "torn_enqueue"
    SENT_NOT_ACKED = "sent_not_acked"
    TORN_ACK = "torn_ack"


@dataclass(frozen=True)
class Fault:
    time: float
    kind: FaultKind
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "kind", FaultKind(self.kind))

    @property
    def end(self) -> float:
        return self.time + self.duration


@dataclass
class Scenario:
    seed: int = 0
    devices: int = 3
    rate: float = 1 / 60
    duration: float = 3600.0
    faults: list = field(default_factory=list)
    uptime_target: float = DEFAULT_TARGET
    max_messages: Optional[int] = None
    forward_interval: float = 5.0
    retry_interval: float = 30.0
    batch_size: int = 100

    def __post_init__(self):
        self.faults = sorted((f if isinstance(f, Fault) else Fault(**f) for f in self.faults),
                             key=lambda f: (f.time, f.kind.value))
        self.validate()

    def validate(self) -> None:
        if self.devices < 1 or self.rate <= 0 or self.duration <= 0:
            raise ValidationError("devices, rate and duration must be positive")
        if not 0 <= self.uptime_target <= 1:
            raise ValidationError("uptime_target must be a fraction")
        for f in self.faults:
            if f.time < 0 or f.duration < 0 or f.end > self.duration:
                raise ValidationError(f"fault {f.kind.value} at {f.time} does not fit in the scenario")

    @classmethod
    def from_dict(cls, data) -> "Scenario":
        data = dict(data)
        if "devices" in data and isinstance(data["devices"], dict):
            dev = data.pop("devices")
            data["devices"] = dev.get("count", 3)
            data["rate"] = dev.get("rate", data.get("rate", 1 / 60))
        return cls(**data)

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "devices": self.devices, "rate": self.rate, "duration": self.duration,
                "faults": [{"time": f.time, "kind": f.kind.value, "duration": f.duration} for f in self.faults],
                "uptime_target": self.uptime_target, "max_messages": self.max_messages,
                "forward_interval": self.forward_interval, "retry_interval": self.retry_interval,
                "batch_size": self.batch_size}


def merge_intervals(intervals: Iterable[tuple]) -> list[tuple]:
    out: list[list] = []
    for start, end in sorted(intervals):
        if out and start <= out[-1][1]:
            out[-1][1] = max(out[-1][1], end)
        else:
            out.append([start, end])
    return [tuple(i) for i in out]


def uptime(downtime: Iterable[tuple], duration) -> float:
    """Fraction of ``duration`` outside the given down intervals.

    Intervals are ``(start, end)`` within ``[0, duration]`` and must not
    overlap; the arithmetic is exact on the rationals, rounded only at the end.
    """
    total = Fraction(duration)
    if total <= 0:
        raise ValidationError("duration must be positive")
    spans = sorted((Fraction(s), Fraction(e)) for s, e in downtime)
    down = Fraction(0)
    prev_end = None
    for start, end in spans:
        if start < 0 or end > total or end < start:
            raise ValidationError(f"interval ({float(start)}, {float(end)}) lies outside [0, {float(total)}]")
        if prev_end is not None and start < prev_end:
            raise ValidationError("down intervals overlap")
        down += end - start
        prev_end = end
    return float((total - down) / total)


@dataclass
class ScenarioReport:
    sent: int
    delivered_unique: int
    duplicates_suppressed: int
    lost: int
    uptime_fraction: float
    uptime_target: float
    recovery_times: list
    kill_points: list
    # ids the sink holds that no device sent
    unexpected: int = 0
    samples: list = field(default_factory=list, repr=False)

    @property
    def meets_target(self) -> bool:
        return self.uptime_fraction >= self.uptime_target

    @property
    def passed(self) -> bool:
        return self.lost == 0 and self.unexpected == 0 and self.meets_target

    def to_dict(self, samples: bool = False) -> dict:
        out = {"sent": self.sent, "delivered_unique": self.delivered_unique,
               "duplicates_suppressed": self.duplicates_suppressed, "lost": self.lost,
               "unexpected": self.unexpected, "uptime_fraction": self.uptime_fraction, "uptime_target": self.uptime_target,
               "meets_target": self.meets_target, "passed": self.passed,
               "recovery_times": self.recovery_times, "kill_points": self.kill_points}
        if samples:
            out["samples"] = [list(s) for s in self.samples]
        return out


class _Crash(BaseException):
    """Unwinds out of the gateway at a kill point, like a power cut."""


class _CrashingSink:
    def __init__(self, sink: MemorySink):
        self.sink = sink
        self.zone = sink.zone

    def handshake(self):
        return self.sink.handshake()

    def send(self, messages):
        self.sink.send(messages)
        raise _Crash()

    def close(self):
        pass


class _Site:
    def __init__(self, sc: Scenario, data_dir: Path):
        self.sc = sc
        self.rng = random.Random(sc.seed)
        self.now = 0.0
        self.data_dir = data_dir
        self.events: list = []
        self._n = 0
        self.keys = KeyRing(self.rng.randbytes(32))
        self.config = config_from_dict({
            "data_dir": str(data_dir), "gateway_id": "scg-sim",
            "backend": {"zone": "external_operations", "region": "AT"},
            "forward": {"batch_size": sc.batch_size, "backoff_initial": 1, "backoff_max": 60},
        })
        ca = make_ca("sim-ca", not_before=EPOCH - timedelta(days=1), days=3650)
        self.anchors = [ca.cert]
        self.device_chain = [make_leaf(ca, "sim-device", ["device"], not_before=EPOCH - timedelta(days=1),
                                       days=3650).cert]
        self.profile = ideal_profile("TLS_ECDHE_RSA_WITH_AES_256_GCM_SHA384")
        self.sink = MemorySink(Zone("external_operations", "AT"), clock=self.clock, keep_captures=False)
        self.outbox: list[dict] = [{} for _ in range(sc.devices)]
        self.published = [0] * sc.devices
        self.sent_at: dict[str, float] = {}
        self.arrival: dict[str, float] = {}
        self.gateway: Optional[Gateway] = None
        self.session = None
        self.link_down = 0
        self.gateway_down = False
        self.down_until = 0.0
        self.forward_scheduled = False
        self.retry_scheduled = [False] * sc.devices
        self.kill_points: list = []
        self.samples: list = []
        self._boot()

    # -- plumbing ----------------------------------------------------------

    def clock(self) -> datetime:
        return EPOCH + timedelta(seconds=self.now)

    def at(self, t: float, action: str, *args) -> None:
        self._n += 1
        heapq.heappush(self.events, (t, self._n, action, args))

    def _boot(self) -> None:
        self.gateway = Gateway(self.config, self.keys, clock=self.clock, sync=False,
                               trust_anchors=self.anchors, stream=None)
        self.gateway.start()
        channel = LoopbackProvider().connect(self.profile, self.device_chain, "sim-device")
        self.session = self.gateway.open_session(channel)
        self.gateway_down = False

    def _drop_gateway(self) -> None:
        gw = self.gateway
        gw.store.close()
        gw.seclog.close()
        self.gateway = None
        self.session = None
        self.gateway_down = True

    def reachable(self) -> bool:
        return not self.gateway_down and self.link_down == 0

    # -- device side ---------------------------------------------------------

    def _new_message(self, dev: int) -> str:
        self.published[dev] += 1
        mid = str(uuid.UUID(int=self.rng.getrandbits(128), version=4))
        msg = Message(mid, Kind.MEASUREMENT, f"meter-{dev:03d}", self.clock(),
                      {"seq": self.published[dev], "kw": round(self.rng.uniform(0, 10), 3)})
        self.outbox[dev][mid] = msg
        self.sent_at[mid] = self.now
        return mid

    def publish(self, dev: int) -> None:
        if self.sc.max_messages is not None and sum(self.published) >= self.sc.max_messages:
            return
        self.transmit(dev, [self._new_message(dev)])
        nxt = self.now + 1 / self.sc.rate
        if nxt < self.sc.duration:
            self.at(nxt, "publish", dev)

    def transmit(self, dev: int, ids: list, kill: Optional[KillPoint] = None,
                 journal_before: Optional[int] = None) -> None:
        if not self.reachable():
            self.schedule_retry(dev)
            return
        for mid in ids:
            msg = self.outbox[dev].get(mid)
            if msg is None:
                continue
            reply, _ = decode_frame(self.gateway.handle_frame(self.session, encode_frame(msg, now=self.clock())),
                                    now=self.clock())
            if kill is not None:
                self.crash(kill, journal_before)
                return
            if reply.kind is Kind.ACK and reply.body.get("ref") == mid:
                del self.outbox[dev][mid]
        self.schedule_forward(self.sc.forward_interval)
        if self.outbox[dev]:
            self.schedule_retry(dev)

    def schedule_retry(self, dev: int) -> None:
        if not self.retry_scheduled[dev]:
            self.retry_scheduled[dev] = True
            self.at(self.now + self.sc.retry_interval, "retry", dev)

    def retry(self, dev: int) -> None:
        self.retry_scheduled[dev] = False
        if self.outbox[dev]:
            self.transmit(dev, list(self.outbox[dev]))

    # -- gateway side --------------------------------------------------------

    def schedule_forward(self, delay: float) -> None:
        if not self.forward_scheduled and not self.gateway_down:
            self.forward_scheduled = True
            self.at(self.now + delay, "forward")

    def forward(self, crash_sink: bool = False) -> None:
        self.forward_scheduled = False
        if self.gateway_down:
            return
        target = _CrashingSink(self.sink) if crash_sink else self.sink
        before = set(self.sink.received)
        try:
            self.gateway.forward_pending(target)
        finally:
            for mid in set(self.sink.received) - before:
                self.arrival[mid] = self.now
        if self.gateway.store.pending_count():
            self.schedule_forward(self.gateway.next_delay(self.sc.forward_interval))
        else:
            self.gateway.next_delay()

    def _journal_size(self) -> int:
        return self.gateway.store.record_paths()[1].stat().st_size

    def crash(self, point: KillPoint, journal_before: Optional[int] = None) -> None:
        _, jnl = self.gateway.store.record_paths()
        self._drop_gateway()
        if point in (KillPoint.TORN_ENQUEUE, KillPoint.TORN_ACK):
            # only bytes the interrupted operation wrote can be torn
            size = jnl.stat().st_size
            written = size - (journal_before if journal_before is not None else size)
            if written > 0:
                cut = self.rng.randint(1, min(JOURNAL_ENTRY - 1, written))
                with open(jnl, "r+b") as fh:
                    fh.truncate(size - cut)
            else:
                point = KillPoint.STORED_NOT_ACKED if point is KillPoint.TORN_ENQUEUE else KillPoint.IDLE
        self.kill_points.append(point.value)

    def begin_crash(self, fault: Fault) -> None:
        self.down_until = max(self.down_until, fault.end)
        self.at(fault.end, "restart")
        if self.gateway_down:
            return
        point = self.rng.choice(list(KillPoint))
        if point is not KillPoint.IDLE and self.link_down == 0:
            # a frame arriving right at the kill point
            dev = self.rng.randrange(self.sc.devices)
            mid = self._new_message(dev)
            if point in (KillPoint.STORED_NOT_ACKED, KillPoint.TORN_ENQUEUE):
                self.transmit(dev, [mid], kill=point, journal_before=self._journal_size())
                self.forward_scheduled = False
                return
            self.transmit(dev, [mid])
        pending = self.gateway.store.pending_count()
        before = self._journal_size()
        if point is KillPoint.SENT_NOT_ACKED and pending and self.sink.up:
            try:
                self.forward(crash_sink=True)
            except _Crash:
                pass
            self.crash(point)
        elif point is KillPoint.TORN_ACK and pending and self.sink.up:
            self.forward()
            self.crash(point, journal_before=before)
        else:
            self.crash(KillPoint.IDLE)
        self.forward_scheduled = False

    def restart(self) -> None:
        if not self.gateway_down or self.now < self.down_until:
            return
        self._boot()
        self.reconnect()

    def reconnect(self) -> None:
        for dev in range(self.sc.devices):
            if self.outbox[dev]:
                self.transmit(dev, list(self.outbox[dev]))
        self.schedule_forward(0)

    def sample(self, every: float) -> None:
        pending = self.gateway.store.pending_count() if self.gateway else None
        self.samples.append((self.now, pending, sum(len(o) for o in self.outbox), len(self.sink.received)))
        if self.now + every <= self.sc.duration:
            self.at(self.now + every, "sample", every)

    # -- main loop -----------------------------------------------------------

    def run(self) -> ScenarioReport:
        sc = self.sc
        period = 1 / sc.rate
        for dev in range(sc.devices):
            self.at(self.rng.uniform(0, min(period, sc.duration)), "publish", dev)
        for fault in sc.faults:
            self.at(fault.time, "fault_start", fault)
        every = sc.duration / 200
        self.at(0.0, "sample", every)
        horizon = sc.duration + 7 * 86400
        while self.events:
            t, _, action, args = heapq.heappop(self.events)
            if t > horizon:
                break
            self.now = t
            if action == "fault_start":
                self.fault_start(*args)
            elif action == "fault_end":
                self.fault_end(*args)
            else:
                getattr(self, action)(*args)
            if t >= sc.duration and self.drained():
                break
        return self.report()

    def fault_start(self, fault: Fault) -> None:
        if fault.kind is FaultKind.GATEWAY_CRASH:
            self.begin_crash(fault)
            return
        if fault.kind is FaultKind.LINK_DROP:
            self.link_down += 1
        else:
            self.sink.up = False
        self.at(fault.end, "fault_end", fault)

    def fault_end(self, fault: Fault) -> None:
        if fault.kind is FaultKind.LINK_DROP:
            self.link_down -= 1
            if self.link_down == 0 and not self.gateway_down:
                self.reconnect()
        else:
            self.sink.up = True

    def drained(self) -> bool:
        return (not self.gateway_down and self.link_down == 0 and self.sink.up
                and not any(self.outbox) and self.gateway.store.pending_count() == 0
                and not self.gateway.store.counts()["in_flight"])

    def report(self) -> ScenarioReport:
        sc = self.sc
        sent = set(self.sent_at)
        got = set(self.sink.received)
        windows = [(f.time, f.end) for f in sc.faults if f.kind is not FaultKind.BACKEND_DOWN]
        fraction = uptime(merge_intervals(windows), sc.duration)
        recovery = []
        for f in sc.faults:
            before = [mid for mid, t in self.sent_at.items() if t < f.end]
            arrivals = [self.arrival.get(mid) for mid in before]
            if any(a is None for a in arrivals):
                rec = None
            else:
                rec = max(0.0, max(arrivals, default=f.end) - f.end)
            recovery.append({"kind": f.kind.value, "time": f.time, "duration": f.duration,
                             "recovery_seconds": rec})
        return ScenarioReport(
            sent=len(sent),
            delivered_unique=len(got & sent),
            duplicates_suppressed=self.sink.duplicates,
            lost=len(sent - got),
            uptime_fraction=fraction,
            uptime_target=sc.uptime_target,
            recovery_times=recovery,
            kill_points=self.kill_points,
            unexpected=len(got - sent),
            samples=self.samples,
        )


def run_scenario(scenario: Scenario, data_dir=None) -> ScenarioReport:
    """Run ``scenario`` to completion; with no ``data_dir`` a temporary one is used."""
    if data_dir is not None:
        return _Site(scenario, Path(data_dir)).run()
    tmp = Path(tempfile.mkdtemp(prefix="scg-sim-"))
    try:
        return _Site(scenario, tmp).run()
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def random_crash_scenario(seed: int, crashes: int = 3, duration: float = 1800.0) -> Scenario:
    """A short scenario with gateway crashes (random kill points) plus one link drop and one backend outage."""
    rng = random.Random(seed)
    faults = []
    slots = sorted(rng.uniform(30, duration - 300) for _ in range(crashes + 2))
    kinds = [FaultKind.GATEWAY_CRASH] * crashes + [FaultKind.LINK_DROP, FaultKind.BACKEND_DOWN]
    rng.shuffle(kinds)
    for t, kind in zip(slots, kinds):
        faults.append(Fault(round(t, 3), kind, round(rng.uniform(5, 120), 3)))
    return Scenario(seed=seed, devices=rng.randint(1, 4), rate=rng.choice([1 / 10, 1 / 20, 1 / 30]),
                    duration=duration, faults=faults, retry_interval=rng.choice([10.0, 30.0]))
