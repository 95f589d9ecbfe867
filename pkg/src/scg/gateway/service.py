"""The gateway service: sessions in, store-and-forward out."""

from __future__ import annotations

import asyncio
import logging
import signal
import threading
from collections import Counter
from pathlib import Path
from typing import Callable, Optional, Sequence

from ..alerting import Dashboard, Router, SecurityMonitor
from ..auth import (
    CREDENTIALS_FILE,
    AccessControl,
    Action,
    AuthMode,
    Principal,
    UserRegistry,
    authenticate_certificate,
    load_pem_chain,
)
from ..errors import (
    ConfigError,
    DuplicateMessage,
    Infeasible,
    IntegrityError,
    ParseError,
    PolicyViolation,
    ScgError,
    StorageError,
    ValidationError,
)
from ..model import MAX_FRAME, Kind, Message, ZoneTag, decode_frame, encode_frame, utcnow
from ..privacy.io import read_hierarchies
from ..privacy.tcloseness import AnonTable, Hierarchy, PrivacyParams, anonymize
from ..privacy.transforms import ZonePolicy, minimize
from ..store.crypto import KeyRing, unlock
from ..store.queue import QueueStore, RecoveryReport
from ..store.seclog import SecurityLog
from ..tls.policy import PolicyDecision, evaluate_handshake
from .backend import Backend, TlsBackend, ack_message, fault_message
from .channels import ChannelInfo, client_context, peer_chain, profile_from_ssl, server_context
from .config import GatewayConfig

log = logging.getLogger(__name__)

OUTBOX_FILE = "outbox.jsonl"
DASHBOARD_FILE = "dashboard.bin"


class Backoff:
    """Exponential retry delay, doubling from ``initial`` up to ``cap``."""

    def __init__(self, initial: float = 1.0, cap: float = 60.0):
        self.initial, self.cap = initial, cap
        self.current = initial

    def failure(self) -> float:
        delay = self.current
        self.current = min(self.cap, self.current * 2)
        return delay

    def reset(self) -> None:
        self.current = self.initial


class Session:
    """An authenticated device connection on an accepted channel."""

    def __init__(self, principal: Principal, channel: ChannelInfo, decision: PolicyDecision):
        if not decision.accepted:
            raise PolicyViolation("a session needs an accepted channel: " + ", ".join(decision.codes))
        self.principal = principal
        self.profile = channel.profile
        self.label = channel.peer_label or principal.id
        self.devices: set[str] = set()
        self.counters: Counter = Counter()
        self.open = True

    def close(self) -> None:
        self.open = False


class Gateway:
    def __init__(self, config: GatewayConfig, keys: KeyRing, *, clock: Callable = utcnow, sync: bool = True,
                 trust_anchors: Optional[Sequence] = None, stream=None):
        config.validate()
        self.config = config
        self.keys = keys
        self.clock = clock
        self.policy = config.policy
        data_dir = Path(config.data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        self._emit_lock = threading.Lock()
        self.seclog = SecurityLog(data_dir, keys, sync=sync, clock=clock)
        dashboard = Dashboard(data_dir / DASHBOARD_FILE, keys.blob)
        self.router = Router(config.class_map, config.routing, outbox=data_dir / OUTBOX_FILE,
                             dashboard=dashboard, stream=stream, failure_log=self.seclog)
        self.monitor = SecurityMonitor(self.seclog, self.router)
        self.store = QueueStore(data_dir, keys, sync=sync, clock=clock)
        self.access = AccessControl.from_config(config.role_actions, events=self.emit)
        self.users = UserRegistry(data_dir / CREDENTIALS_FILE, keys.credentials, kdf_defaults=config.kdf,
                                  events=self.emit, clock=clock)
        for user, roles in config.users.items():
            if user in self.users:
                self.users.set_roles(user, roles)
        if trust_anchors is None and config.trust_anchors is not None:
            trust_anchors = load_pem_chain(config.trust_anchors)
        self.trust_anchors = list(trust_anchors or ())
        self.backoff = Backoff(config.backoff_initial, config.backoff_max)
        self.last_forward_ok = True
        self._backend_reachable = True
        self._hierarchies: Optional[dict] = None

    # -- lifecycle -------------------------------------------------------------

    def emit(self, severity: int, event: str) -> None:
        with self._emit_lock:
            try:
                self.monitor.emit(severity, event)
            except (StorageError, OSError) as exc:
                log.error("security event not persisted (%s): %s", exc, event)

    def start(self) -> RecoveryReport:
        report = self.store.recover()
        self.emit(5, f"gateway {self.config.gateway_id} started: restored {report.restored}, "
                     f"pending {report.pending}, quarantined {len(report.quarantined)}")
        if report.quarantined:
            self.emit(2, f"quarantined {len(report.quarantined)} corrupt queue records at startup")
        return report

    def stop(self) -> None:
        # in-flight records go back to pending so the next start resends them
        self.store.recover()
        self.emit(5, f"gateway {self.config.gateway_id} stopping")
        self.store.close()
        self.seclog.close()

    def maintain(self) -> int:
        return self.store.purge_acked(self.config.retention)

    # -- ingest ----------------------------------------------------------------

    def open_session(self, channel: ChannelInfo) -> Session:
        decision = evaluate_handshake(channel.profile, self.policy)
        if not decision.accepted:
            self.emit(3, f"channel from {channel.peer_label or 'peer'} rejected: {', '.join(decision.codes)}")
            raise PolicyViolation(", ".join(decision.codes))
        if channel.peer_chain:
            principal = authenticate_certificate(channel.peer_chain, self.trust_anchors,
                                                 now=self.clock(), events=self.emit)
        elif self.policy.require_mutual_auth:
            raise PolicyViolation("mutual authentication required")
        else:
            principal = Principal(channel.peer_label or "anonymous", AuthMode.CERTIFICATE, frozenset(), self.clock())
        return Session(principal, channel, decision)

    def _reply(self, msg: Message) -> bytes:
        return encode_frame(msg, now=msg.ts)

    def _fault(self, session: Session, ref: Optional[str], error: str) -> bytes:
        session.counters["rejected"] += 1
        return self._reply(fault_message(ref, self.config.gateway_id, error, ts=self.clock()))

    def handle_frame(self, session: Session, frame: bytes) -> bytes:
        """Ingest one frame; the ack is produced only after the record is durable."""
        if not session.open:
            raise PolicyViolation("session is closed")
        session.counters["frames"] += 1
        now = self.clock()
        try:
            msg, rest = decode_frame(frame, now=now, max_skew=self.config.clock_skew)
            if rest:
                raise ParseError(f"{len(rest)} bytes after the frame")
        except (ScgError, ValueError) as exc:
            self.emit(4, f"frame from {session.label} rejected: {exc}")
            return self._fault(session, None, "invalid_frame")
        if msg.kind is Kind.ACK:
            self.emit(4, f"frame from {session.label} rejected: devices do not send acks")
            return self._fault(session, msg.id, "unexpected_kind")
        if msg.kind is Kind.CONTROL and not self.access.authorize(session.principal, Action.SEND_CONTROL):
            return self._fault(session, msg.id, "forbidden")
        try:
            self.store.enqueue(msg)
        except DuplicateMessage:
            session.counters["duplicates"] += 1
        except (StorageError, OSError) as exc:
            self.emit(3, f"storage failure on ingest: {exc}")
            return self._fault(session, msg.id, "storage_unavailable")
        else:
            session.counters["stored"] += 1
        session.devices.add(msg.device)
        return self._reply(ack_message(msg.id, self.config.gateway_id, ts=now))

    # -- forward ---------------------------------------------------------------

    def _dequeue(self, n: int) -> list:
        try:
            return self.store.dequeue_batch(n)
        except IntegrityError as exc:
            self.emit(2, f"quarantined {len(exc.record_ids)} corrupt queue records")
            return list(exc.recovered)

    def _anon_hierarchies(self, zp: ZonePolicy) -> dict:
        if self._hierarchies is None:
            path = (zp.anonymization or {}).get("hierarchy")
            self._hierarchies = read_hierarchies(path) if path else {}
        return self._hierarchies

    def _release(self, zp: ZonePolicy, batch: list) -> tuple[list[Message], list[str]]:
        """Anonymize a batch into fresh release rows.

        Returns the rows to send and the ids they cover. Records lacking a
        released column cannot appear in a release and are covered as withheld.
        """
        spec = zp.anonymization
        qi = list(spec["qi"])
        columns = (*qi, spec["sensitive"])
        rows = []
        withheld = []
        for rid, msg in batch:
            body = minimize(msg.body, columns)
            if len(body) == len(columns):
                rows.append(tuple(body[c] for c in columns))
            else:
                withheld.append(rid)
        covered = [rid for rid, _ in batch]
        if not rows:
            return [], covered
        table = AnonTable(columns, rows, qi, spec["sensitive"], spec.get("kind", "categorical"))
        known = self._anon_hierarchies(zp)
        hierarchies = {q: known.get(q) or Hierarchy.flat(q, table.column(q)) for q in qi}
        result = anonymize(table, PrivacyParams(float(spec["t"]), hierarchies, spec.get("k"),
                                                float(spec.get("suppression_budget", 0.05))))
        now = self.clock()
        # sorted so row order carries no arrival-time signal
        out = [Message.new(Kind.MEASUREMENT, self.config.gateway_id, dict(zip(columns, row)), ts=now)
               for row in sorted(result.table.rows, key=lambda r: tuple(map(str, r)))]
        if withheld:
            log.info("withheld %d records lacking released columns", len(withheld))
        return out, covered

    def _send_batch(self, backend: Backend, batch: list) -> tuple[set[str], bool]:
        """Send one batch; returns (original ids acked, whether to keep going)."""
        zp = self.config.zone_policy(backend.zone.tag)
        ids = [rid for rid, _ in batch]
        if zp.zone is ZoneTag.THIRD_PARTY:
            try:
                rows, covered = self._release(zp, batch)
            except (Infeasible, ValidationError) as exc:
                self.emit(4, f"anonymized release held back: {exc}")
                return set(), False
            acked = backend.send(rows) if rows else set()
            done = set(covered) if acked == {m.id for m in rows} else set()
            return done, bool(done)
        outgoing = [zp.apply(msg, self.keys.pseudonym) for _, msg in batch]
        acked = backend.send(outgoing) & set(ids)
        return acked, len(acked) == len(ids)

    def forward_pending(self, backend: Backend) -> int:
        """Drain pending records to ``backend``; returns how many it acked."""
        try:
            profile = backend.handshake()
        except OSError as exc:
            self._unreachable(exc)
            return 0
        decision = evaluate_handshake(profile, self.policy)
        if not decision.accepted:
            backend.close()
            self.emit(3, f"backend channel rejected: {', '.join(decision.codes)}")
            self.last_forward_ok = False
            return 0
        self._reachable()
        total = 0
        ok = True
        try:
            while ok:
                batch = self._dequeue(self.config.batch_size)
                if not batch:
                    break
                ids = [rid for rid, _ in batch]
                try:
                    done, ok = self._send_batch(backend, batch)
                except OSError as exc:
                    self.store.release(ids)
                    self._unreachable(exc)
                    return total
                for rid in ids:
                    if rid in done:
                        self.store.ack(rid)
                self.store.release([rid for rid in ids if rid not in done])
                total += len(done)
                ok = ok and len(batch) == self.config.batch_size
        finally:
            backend.close()
        self.last_forward_ok = True
        return total

    def _unreachable(self, exc) -> None:
        self.last_forward_ok = False
        if self._backend_reachable:
            self._backend_reachable = False
            self.emit(4, f"backend unreachable, holding records: {exc}")

    def _reachable(self) -> None:
        if not self._backend_reachable:
            self._backend_reachable = True
            self.emit(5, "backend reachable again")

    def next_delay(self, idle: float = 1.0) -> float:
        if self.last_forward_ok:
            self.backoff.reset()
            return idle
        return self.backoff.failure()


# -- network service ---------------------------------------------------------

async def _serve_client(gateway: Gateway, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
    sock = writer.get_extra_info("ssl_object")
    peer = writer.get_extra_info("peername")
    label = f"{peer[0]}:{peer[1]}" if peer else "peer"
    try:
        chain = peer_chain(sock)
        profile = profile_from_ssl(sock, client_certificate_presented=bool(chain),
                                   dh_group_bits=gateway.config.dh_group_bits,
                                   ecdh_curve=gateway.config.ecdh_curve)
        session = gateway.open_session(ChannelInfo(profile, chain, label))
    except (ScgError, ValueError) as exc:
        log.warning("session from %s refused: %s", label, exc)
        writer.close()
        return
    try:
        while session.open:
            header = await reader.readexactly(4)
            length = int.from_bytes(header, "big")
            if length > MAX_FRAME:
                writer.write(gateway._fault(session, None, "frame_too_large"))
                gateway.emit(4, f"frame from {label} rejected: declared length {length}")
                break
            payload = await reader.readexactly(length)
            reply = await asyncio.to_thread(gateway.handle_frame, session, header + payload)
            writer.write(reply)
            await writer.drain()
    except (asyncio.IncompleteReadError, ConnectionError):
        pass
    finally:
        session.close()
        writer.close()


async def serve(gateway: Gateway, ssl_context, backend_factory: Callable[[], Backend], *,
                host: str, port: int, stop: asyncio.Event, ready: Optional[Callable] = None,
                idle_poll: float = 1.0) -> None:
    server = await asyncio.start_server(lambda r, w: _serve_client(gateway, r, w), host, port,
                                        ssl=ssl_context)
    if ready is not None:
        ready(server.sockets[0].getsockname())

    async def forward_loop():
        while not stop.is_set():
            await asyncio.to_thread(gateway.forward_pending, backend_factory())
            await asyncio.to_thread(gateway.maintain)
            try:
                await asyncio.wait_for(stop.wait(), gateway.next_delay(idle_poll))
            except asyncio.TimeoutError:
                pass

    worker = asyncio.create_task(forward_loop())
    async with server:
        await stop.wait()
        server.close()
        await server.wait_closed()
    await worker


def run(config: GatewayConfig, *, master_secret: Optional[bytes] = None,
        ready: Optional[Callable] = None) -> int:
    """Blocking service entry point; returns a process exit code."""
    config.validate()
    for name in ("certificate", "private_key", "trust_anchors"):
        if getattr(config, name) is None:
            raise ConfigError(f"tls.{name} is required to serve")
    keys = unlock(config.data_dir, master_secret, defaults=config.kdf)
    gateway = Gateway(config, keys)
    gateway.start()
    server_ctx = server_context(config.policy, config.certificate, config.private_key, config.trust_anchors,
                                ecdh_curve=config.ecdh_curve, dh_params=config.dh_params)
    backend_ctx = client_context(config.policy, config.trust_anchors, config.certificate, config.private_key)

    def backend_factory():
        return TlsBackend(config.backend.host, config.backend.port, config.backend.zone, backend_ctx,
                          dh_group_bits=config.dh_group_bits, ecdh_curve=config.ecdh_curve)

    async def main():
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        await serve(gateway, server_ctx, backend_factory, host=config.listen_host, port=config.listen_port,
                    stop=stop, ready=ready)

    try:
        asyncio.run(main())
    except OSError as exc:
        log.error("cannot serve on %s:%s: %s", config.listen_host, config.listen_port, exc)
        return 1
    finally:
        gateway.stop()
    return 0
