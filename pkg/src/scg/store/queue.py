"""Encrypted store-and-forward queue.

On-disk layout, inside the data directory::

    queue.current     generation number G, replaced atomically on compaction
    queue.G.rec       append-only record log
    queue.G.jnl       append-only status journal
    nonce.queue.ctr   nonce high-water mark (see NonceCounter)

Record log: magic ``SCGREC\\x00\\x01`` then records::

    u32 length of what follows
    u8  format version (1)          -+
    16B message UUID                 |
    u8  kind code                    | associated data
    u16 device length, device UTF-8  |
    i64 enqueued_at, us since epoch -+
    12B nonce
    ..  AES-256-GCM(canonical message) incl. 16B tag

Journal: magic ``SCGJNL\\x00\\x01`` then fixed 53-byte entries::

    u8 op | 16B id | u64 offset | u32 length | i64 ts_us | 16B MAC

The MAC binds generation and entry index, so entries cannot be reordered,
dropped from the middle or moved between generations. A record becomes part
of the queue only once its ENQ entry is durable; bytes past the last journaled
record are a torn write and are truncated on open.
"""

from __future__ import annotations

import heapq
import hmac
import json
import logging
import os
import struct
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from ..errors import DuplicateMessage, IntegrityError, StorageError, UnknownMessage, ValidationError
from ..model import Kind, Message, canonical_encode, utcnow
from .crypto import NONCE_LEN, TAG_LEN, KeyRing, NonceCounter, mac, open_sealed, seal, write_atomic

log = logging.getLogger(__name__)

MAGIC_REC = b"SCGREC\x00\x01"
MAGIC_JNL = b"SCGJNL\x00\x01"
FORMAT_VERSION = 1

_U32 = struct.Struct(">I")
_HEAD = struct.Struct(">B16sBH")
_I64 = struct.Struct(">q")
_ENTRY = struct.Struct(">B16sQIq16s")
_KINDS = list(Kind)
_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


class Status(str, Enum):
    PENDING = "pending"
    IN_FLIGHT = "in_flight"
    ACKED = "acked"
    QUARANTINED = "quarantined"


class Op(int, Enum):
    ENQ = 1
    IN_FLIGHT = 2
    PENDING = 3
    ACK = 4
    QUARANTINE = 5


_OP_STATUS = {
    Op.ENQ: Status.PENDING,
    Op.IN_FLIGHT: Status.IN_FLIGHT,
    Op.PENDING: Status.PENDING,
    Op.ACK: Status.ACKED,
    Op.QUARANTINE: Status.QUARANTINED,
}


def _to_us(ts: datetime) -> int:
    return (ts - _EPOCH) // timedelta(microseconds=1)


def _from_us(us: int) -> datetime:
    return _EPOCH + timedelta(microseconds=us)


@dataclass
class QueueRecord:
    """Index entry for one stored message; the sealed bytes stay on disk."""

    id: str
    seq: int
    offset: int
    length: int
    enqueued_at: datetime
    status: Status = Status.PENDING
    acked_at: Optional[datetime] = None


@dataclass
class RecoveryReport:
    restored: int
    pending: int
    quarantined: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"restored": self.restored, "pending": self.pending, "quarantined": list(self.quarantined)}


class QueueStore:
    def __init__(self, data_dir, keys: KeyRing, *, sync: bool = True,
                 clock: Callable[[], datetime] = utcnow):
        self.dir = Path(data_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._key = keys.queue
        self._mac_key = keys.queue_mac
        self._sync = sync
        self._clock = clock
        self._lock = threading.RLock()
        self._nonces = NonceCounter(self.dir / "nonce.queue.ctr", self._mac_key, sync)
        self._records: dict[str, QueueRecord] = {}
        self._pending: dict[str, int] = {}
        self._seq = 0
        self._open_generation()

    # -- files -------------------------------------------------------------

    def _paths(self, gen: int) -> tuple[Path, Path]:
        return self.dir / f"queue.{gen}.rec", self.dir / f"queue.{gen}.jnl"

    def _open_generation(self) -> None:
        current = self.dir / "queue.current"
        if current.exists():
            try:
                self._gen = int(current.read_text().strip())
            except ValueError:
                raise IntegrityError("queue.current is corrupt") from None
        else:
            self._gen = 0
            for path, magic in zip(self._paths(0), (MAGIC_REC, MAGIC_JNL)):
                if not path.exists():
                    write_atomic(path, magic, self._sync)
            write_atomic(current, b"0", self._sync)
        rec_path, jnl_path = self._paths(self._gen)
        if not rec_path.exists() or not jnl_path.exists():
            raise IntegrityError(f"queue generation {self._gen} files are missing")
        self._rec = open(rec_path, "r+b")
        self._jnl = open(jnl_path, "r+b")
        self._load_journal()
        self._check_records()

    def _load_journal(self) -> None:
        raw = self._jnl.read()
        if raw[: len(MAGIC_JNL)] != MAGIC_JNL:
            raise IntegrityError("journal has a bad magic header")
        body = raw[len(MAGIC_JNL):]
        whole, torn = divmod(len(body), _ENTRY.size)
        if torn:
            log.warning("truncating torn journal tail (%d bytes)", torn)
            self._jnl.truncate(len(MAGIC_JNL) + whole * _ENTRY.size)
        self._jcount = 0
        for i in range(whole):
            entry = _ENTRY.unpack_from(body, i * _ENTRY.size)
            self._apply(i, *entry)
            self._jcount += 1
        self._jnl.seek(0, os.SEEK_END)

    def _entry_mac(self, index: int, op: int, raw_id: bytes, offset: int, length: int, ts: int) -> bytes:
        fields = struct.pack(">QQB16sQIq", self._gen, index, op, raw_id, offset, length, ts)
        return mac(self._mac_key, b"journal", fields)

    def _apply(self, index, op, raw_id, offset, length, ts, tag) -> None:
        if not hmac.compare_digest(tag, self._entry_mac(index, op, raw_id, offset, length, ts)):
            raise IntegrityError(f"journal entry {index} failed authentication")
        try:
            op = Op(op)
        except ValueError:
            raise IntegrityError(f"journal entry {index} has unknown op {op}") from None
        rid = str(uuid.UUID(bytes=raw_id))
        if op is Op.ENQ:
            if rid in self._records:
                raise IntegrityError(f"journal entry {index} re-enqueues {rid}")
            self._seq += 1
            self._records[rid] = QueueRecord(rid, self._seq, offset, length, _from_us(ts))
            self._pending[rid] = self._seq
            return
        rec = self._records.get(rid)
        if rec is None:
            raise IntegrityError(f"journal entry {index} references unknown record {rid}")
        self._set_status(rec, _OP_STATUS[op], _from_us(ts) if op is Op.ACK else None)

    def _set_status(self, rec: QueueRecord, status: Status, acked_at=None) -> None:
        rec.status = status
        if status is Status.ACKED:
            rec.acked_at = acked_at
        if status is Status.PENDING:
            self._pending[rec.id] = rec.seq
        else:
            self._pending.pop(rec.id, None)

    def _check_records(self) -> None:
        self._rec.seek(0)
        if self._rec.read(len(MAGIC_REC)) != MAGIC_REC:
            raise IntegrityError("record log has a bad magic header")
        end = max((r.offset + r.length for r in self._records.values()), default=len(MAGIC_REC))
        size = self._rec.seek(0, os.SEEK_END)
        if size < end:
            raise IntegrityError(f"record log truncated: {size} bytes, journal expects {end}")
        if size > end:
            log.warning("truncating %d unjournaled bytes from the record log", size - end)
            self._rec.truncate(end)
            self._rec.seek(end)

    def _flush(self, fh) -> None:
        fh.flush()
        if self._sync:
            os.fsync(fh.fileno())

    def _journal(self, entries: Iterable[tuple[Op, str, int, int, datetime]]) -> None:
        buf = bytearray()
        index = self._jcount
        for op, rid, offset, length, ts in entries:
            raw_id = uuid.UUID(rid).bytes
            us = _to_us(ts)
            buf += _ENTRY.pack(op, raw_id, offset, length, us,
                               self._entry_mac(index, op, raw_id, offset, length, us))
            index += 1
        if not buf:
            return
        start = self._jnl.seek(0, os.SEEK_END)
        try:
            self._jnl.write(buf)
            self._flush(self._jnl)
        except OSError as exc:
            self._jnl.truncate(start)
            raise StorageError(f"journal write failed: {exc}") from exc
        self._jcount = index

    # -- records -----------------------------------------------------------

    @staticmethod
    def _associated_data(msg: Message, enqueued_at: datetime) -> bytes:
        device = msg.device.encode("utf-8")
        return (_HEAD.pack(FORMAT_VERSION, uuid.UUID(msg.id).bytes, _KINDS.index(msg.kind), len(device))
                + device + _I64.pack(_to_us(enqueued_at)))

    def _read(self, rec: QueueRecord) -> Message:
        try:
            self._rec.seek(rec.offset)
            raw = self._rec.read(rec.length)
            return self._parse(rec, raw)
        except IntegrityError as exc:
            exc.record_ids = [rec.id]
            raise
        except (ValueError, IndexError, struct.error, UnicodeDecodeError, KeyError, TypeError) as exc:
            raise IntegrityError(f"record {rec.id} is malformed: {exc}", record_ids=[rec.id]) from exc

    def _parse(self, rec: QueueRecord, raw: bytes) -> Message:
        if len(raw) != rec.length or _U32.unpack_from(raw)[0] != rec.length - _U32.size:
            raise IntegrityError(f"record {rec.id} has an inconsistent length")
        pos = _U32.size
        version, raw_id, kind_code, dev_len = _HEAD.unpack_from(raw, pos)
        dev_end = pos + _HEAD.size + dev_len
        ad_end = dev_end + _I64.size
        if version != FORMAT_VERSION or ad_end + NONCE_LEN + TAG_LEN > len(raw):
            raise IntegrityError(f"record {rec.id} has a bad header")
        if str(uuid.UUID(bytes=raw_id)) != rec.id:
            raise IntegrityError(f"record {rec.id} header names a different id")
        ad = raw[pos:ad_end]
        nonce = raw[ad_end:ad_end + NONCE_LEN]
        try:
            plain = open_sealed(self._key, nonce, raw[ad_end + NONCE_LEN:], ad)
        except IntegrityError:
            raise IntegrityError(f"record {rec.id} failed authentication") from None
        msg = Message.from_dict(json.loads(plain))
        device = raw[pos + _HEAD.size:dev_end].decode("utf-8")
        if msg.id != rec.id or msg.kind is not _KINDS[kind_code] or msg.device != device:
            raise IntegrityError(f"record {rec.id} header disagrees with its sealed content")
        return msg

    # -- public API ----------------------------------------------------------

    def enqueue(self, msg: Message) -> str:
        with self._lock:
            if msg.id in self._records:
                raise DuplicateMessage(msg.id)
            now = self._clock()
            ad = self._associated_data(msg, now)
            nonce = self._nonces.next()
            sealed = seal(self._key, nonce, canonical_encode(msg), ad)
            body = ad + nonce + sealed
            blob = _U32.pack(len(body)) + body
            offset = self._rec.seek(0, os.SEEK_END)
            try:
                self._rec.write(blob)
                self._flush(self._rec)
            except OSError as exc:
                self._rec.truncate(offset)
                raise StorageError(f"record write failed: {exc}") from exc
            self._journal([(Op.ENQ, msg.id, offset, len(blob), now)])
            self._seq += 1
            self._records[msg.id] = QueueRecord(msg.id, self._seq, offset, len(blob), now)
            self._pending[msg.id] = self._seq
            return msg.id

    def dequeue_batch(self, n: int) -> list[tuple[str, Message]]:
        """Move up to ``n`` oldest pending records to in-flight and return them.

        Records that fail authentication are quarantined; the rest of the
        batch is still marked in-flight and handed back on the raised
        :class:`IntegrityError` as ``recovered``.
        """
        if n < 1:
            raise ValidationError("batch size must be at least 1")
        with self._lock:
            chosen = heapq.nsmallest(n, self._pending.items(), key=lambda kv: kv[1])
            good, bad = [], []
            for rid, _ in chosen:
                rec = self._records[rid]
                try:
                    good.append((rid, self._read(rec)))
                except IntegrityError:
                    bad.append(rid)
            now = self._clock()
            self._journal([(Op.IN_FLIGHT, rid, 0, 0, now) for rid, _ in good]
                          + [(Op.QUARANTINE, rid, 0, 0, now) for rid in bad])
            for rid, _ in good:
                self._set_status(self._records[rid], Status.IN_FLIGHT)
            for rid in bad:
                self._set_status(self._records[rid], Status.QUARANTINED)
            if bad:
                raise IntegrityError(f"quarantined corrupt records: {', '.join(bad)}",
                                     record_ids=bad, recovered=good)
            return good

    def ack(self, rid: str) -> None:
        with self._lock:
            rec = self._records.get(rid)
            if rec is None:
                raise UnknownMessage(rid)
            if rec.status is Status.ACKED:
                return
            if rec.status is not Status.IN_FLIGHT:
                raise ValidationError(f"record {rid} is {rec.status.value}, not in flight")
            now = self._clock()
            self._journal([(Op.ACK, rid, 0, 0, now)])
            self._set_status(rec, Status.ACKED, now)

    def release(self, ids: Iterable[str]) -> int:
        """Return in-flight records to pending, e.g. after a failed send."""
        with self._lock:
            back = [rid for rid in ids
                    if rid in self._records and self._records[rid].status is Status.IN_FLIGHT]
            now = self._clock()
            self._journal([(Op.PENDING, rid, 0, 0, now) for rid in back])
            for rid in back:
                self._set_status(self._records[rid], Status.PENDING)
            return len(back)

    def recover(self) -> RecoveryReport:
        """Startup pass: in-flight records go back to pending, corrupt ones are quarantined."""
        with self._lock:
            inflight = [r.id for r in self._records.values() if r.status is Status.IN_FLIGHT]
            restored = self.release(inflight)
            bad = []
            for rec in sorted(self._records.values(), key=lambda r: r.seq):
                if rec.status is not Status.PENDING:
                    continue
                try:
                    self._read(rec)
                except IntegrityError:
                    bad.append(rec.id)
            now = self._clock()
            self._journal([(Op.QUARANTINE, rid, 0, 0, now) for rid in bad])
            for rid in bad:
                self._set_status(self._records[rid], Status.QUARANTINED)
            if bad:
                log.error("quarantined %d corrupt records during recovery", len(bad))
            return RecoveryReport(restored, len(self._pending), bad)

    def purge_acked(self, retention: Union[timedelta, float]) -> int:
        if not isinstance(retention, timedelta):
            retention = timedelta(seconds=retention)
        with self._lock:
            cutoff = self._clock() - retention
            victims = {r.id for r in self._records.values()
                       if r.status is Status.ACKED and r.acked_at <= cutoff}
            if victims:
                self._compact(victims)
            return len(victims)

    def _compact(self, drop: set[str]) -> None:
        keep = sorted((r for r in self._records.values() if r.id not in drop), key=lambda r: r.seq)
        new_gen = self._gen + 1
        rec_path, jnl_path = self._paths(new_gen)
        old_paths = self._paths(self._gen)
        old_gen = self._gen
        offsets = {}
        with open(rec_path, "wb") as out:
            out.write(MAGIC_REC)
            pos = len(MAGIC_REC)
            for r in keep:
                self._rec.seek(r.offset)
                out.write(self._rec.read(r.length))
                offsets[r.id] = pos
                pos += r.length
            self._flush(out)
        self._gen = new_gen
        entries = [(Op.ENQ, r.id, offsets[r.id], r.length, r.enqueued_at) for r in keep]
        status_op = {Status.IN_FLIGHT: Op.IN_FLIGHT, Status.QUARANTINED: Op.QUARANTINE}
        for r in keep:
            if r.status is Status.ACKED:
                entries.append((Op.ACK, r.id, 0, 0, r.acked_at))
            elif r.status in status_op:
                entries.append((status_op[r.status], r.id, 0, 0, r.enqueued_at))
        old_jnl, old_jcount = self._jnl, self._jcount
        with open(jnl_path, "wb") as out:
            out.write(MAGIC_JNL)
            self._jnl, self._jcount = out, 0
            try:
                self._journal(entries)
            finally:
                self._jnl, self._jcount = old_jnl, old_jcount
        write_atomic(self.dir / "queue.current", str(new_gen).encode(), self._sync)
        self._rec.close()
        self._jnl.close()
        for p in old_paths:
            p.unlink(missing_ok=True)
        log.info("compacted queue generation %d -> %d, dropped %d records", old_gen, new_gen, len(drop))
        self._records, self._pending, self._seq = {}, {}, 0
        self._rec = open(rec_path, "r+b")
        self._jnl = open(jnl_path, "r+b")
        self._load_journal()
        self._check_records()

    # -- inspection ----------------------------------------------------------

    def __contains__(self, rid: str) -> bool:
        return rid in self._records

    def __len__(self) -> int:
        return len(self._records)

    def status(self, rid: str) -> Status:
        try:
            return self._records[rid].status
        except KeyError:
            raise UnknownMessage(rid) from None

    def counts(self) -> dict[str, int]:
        out = {s.value: 0 for s in Status}
        for r in self._records.values():
            out[r.status.value] += 1
        return out

    def pending_count(self) -> int:
        return len(self._pending)

    def record_paths(self) -> tuple[Path, Path]:
        return self._paths(self._gen)

    def close(self) -> None:
        with self._lock:
            for fh in (self._rec, self._jnl):
                if not fh.closed:
                    fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
