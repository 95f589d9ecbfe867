"""Hash-chained, encrypted security event log.

``security.log`` holds magic ``SCGLOG\\x00\\x01`` followed by entries::

    u32 length of what follows | u64 seq (associated data) | 12B nonce | AES-GCM(entry JSON)

Each entry's digest is ``SHA-256(prev_digest || canonical({seq, severity, event, ts}))``;
the first entry chains from 32 zero bytes. ``security.seq`` stores the last
committed sequence number under a MAC, which is what exposes truncation of
whole entries from the tail.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import struct
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterator, Optional

from ..errors import IntegrityError, ValidationError
from ..model import canonical_json, format_ts, parse_ts, utcnow
from .crypto import NONCE_LEN, TAG_LEN, KeyRing, NonceCounter, mac, open_sealed, seal, write_atomic

MAGIC_LOG = b"SCGLOG\x00\x01"
GENESIS = bytes(32)

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


@dataclass(frozen=True)
class SecurityLogEntry:
    seq: int
    severity: int
    event: str
    ts: datetime
    prev_digest: bytes
    digest: bytes

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "severity": self.severity,
            "event": self.event,
            "ts": format_ts(self.ts),
            "prev_digest": self.prev_digest.hex(),
            "digest": self.digest.hex(),
        }


def chain_digest(prev: bytes, seq: int, severity: int, event: str, ts: datetime) -> bytes:
    body = canonical_json({"seq": seq, "severity": severity, "event": event, "ts": format_ts(ts)})
    return hashlib.sha256(prev + body).digest()


@dataclass(frozen=True)
class LogVerification:
    ok: bool
    entries: int
    first_bad_seq: Optional[int] = None
    reason: str = ""

    def to_dict(self) -> dict:
        return {"ok": self.ok, "entries": self.entries,
                "first_bad_seq": self.first_bad_seq, "reason": self.reason}


class SecurityLog:
    def __init__(self, data_dir, keys: KeyRing, *, sync: bool = True,
                 clock: Callable[[], datetime] = utcnow):
        self.dir = Path(data_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / "security.log"
        self._seq_path = self.dir / "security.seq"
        self._key = keys.log
        self._mac_key = keys.log_mac
        self._sync = sync
        self._clock = clock
        self._lock = threading.Lock()
        self._nonces = NonceCounter(self.dir / "nonce.log.ctr", self._mac_key, sync)
        if not self.path.exists():
            write_atomic(self.path, MAGIC_LOG, sync)
        self._fh = open(self.path, "r+b")
        self._seq, self._last = self._load_tail()

    # -- persistence ---------------------------------------------------------

    def _read_committed(self) -> int:
        if not self._seq_path.exists():
            return 0
        raw = self._seq_path.read_bytes()
        if len(raw) != _U64.size + 16 or not hmac.compare_digest(
                raw[_U64.size:], mac(self._mac_key, b"seq", raw[:_U64.size])):
            raise IntegrityError("security.seq failed authentication")
        return _U64.unpack(raw[:_U64.size])[0]

    def _write_committed(self, seq: int) -> None:
        body = _U64.pack(seq)
        write_atomic(self._seq_path, body + mac(self._mac_key, b"seq", body), self._sync)

    def _frames(self, data: bytes) -> Iterator[tuple[int, bytes, bool]]:
        """Yield (offset, frame bytes, complete) for each entry frame after the magic."""
        pos = len(MAGIC_LOG)
        while pos < len(data):
            if pos + _U32.size > len(data):
                yield pos, data[pos:], False
                return
            (length,) = _U32.unpack_from(data, pos)
            end = pos + _U32.size + length
            if end > len(data):
                yield pos, data[pos:], False
                return
            yield pos, data[pos:end], True
            pos = end

    def _open_frame(self, frame: bytes) -> dict:
        if len(frame) < _U32.size + _U64.size + NONCE_LEN + TAG_LEN:
            raise IntegrityError("entry frame too short")
        ad = frame[_U32.size:_U32.size + _U64.size]
        nonce = frame[_U32.size + _U64.size:_U32.size + _U64.size + NONCE_LEN]
        plain = open_sealed(self._key, nonce, frame[_U32.size + _U64.size + NONCE_LEN:], ad)
        try:
            data = json.loads(plain)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise IntegrityError("entry payload is not valid JSON") from exc
        if data.get("seq") != _U64.unpack(ad)[0]:
            raise IntegrityError("entry sequence disagrees with its header")
        return data

    def _load_tail(self) -> tuple[int, bytes]:
        self.damaged = ""
        data = self._fh.read()
        try:
            return self._scan_tail(data)
        except IntegrityError as exc:
            # keep the file untouched for verify(); appends are refused
            self.damaged = str(exc)
            return 0, GENESIS
        finally:
            self._fh.seek(0, os.SEEK_END)

    def _scan_tail(self, data: bytes) -> tuple[int, bytes]:
        if data[: len(MAGIC_LOG)] != MAGIC_LOG:
            raise IntegrityError("security log has a bad magic header")
        committed = self._read_committed()
        frames = list(self._frames(data))
        partial = bool(frames) and not frames[-1][2]
        whole = frames[:-1] if partial else frames
        if partial:
            if len(whole) != committed:
                raise IntegrityError("security log ends in a partial entry that was committed")
            # torn append that never committed
            self._fh.truncate(frames[-1][0])
        if len(whole) not in (committed, committed + 1):
            raise IntegrityError(f"security log holds {len(whole)} entries, {committed} committed")
        if not whole:
            return 0, GENESIS
        last = self._open_frame(whole[-1][1])
        if last["seq"] != len(whole):
            raise IntegrityError("last entry sequence does not match entry count")
        if len(whole) == committed + 1:
            # crash between append and counter update
            self._write_committed(len(whole))
        return last["seq"], bytes.fromhex(last["digest"])

    # -- public API ----------------------------------------------------------

    def append(self, severity: int, event: str) -> SecurityLogEntry:
        if not isinstance(severity, int) or isinstance(severity, bool) or not 0 <= severity <= 7:
            raise ValidationError(f"severity must be an integer in 0..7, got {severity!r}")
        if not isinstance(event, str):
            raise ValidationError("event must be a string")
        with self._lock:
            if self.damaged:
                raise IntegrityError(f"security log is damaged: {self.damaged}")
            seq = self._seq + 1
            ts = self._clock()
            digest = chain_digest(self._last, seq, severity, event, ts)
            entry = SecurityLogEntry(seq, severity, event, ts, self._last, digest)
            ad = _U64.pack(seq)
            nonce = self._nonces.next()
            body = ad + nonce + seal(self._key, nonce, canonical_json(entry.to_dict()), ad)
            start = self._fh.seek(0, os.SEEK_END)
            try:
                self._fh.write(_U32.pack(len(body)) + body)
                self._fh.flush()
                if self._sync:
                    os.fsync(self._fh.fileno())
            except OSError:
                self._fh.truncate(start)
                raise
            self._write_committed(seq)
            self._seq, self._last = seq, digest
            return entry

    def entries(self) -> Iterator[SecurityLogEntry]:
        """Decrypt entries in order; raises IntegrityError at the first one that fails."""
        with self._lock:
            self._fh.seek(0)
            data = self._fh.read()
            self._fh.seek(0, os.SEEK_END)
        for _, frame, complete in self._frames(data):
            if not complete:
                raise IntegrityError("security log ends in a partial entry")
            d = self._open_frame(frame)
            yield SecurityLogEntry(d["seq"], d["severity"], d["event"], parse_ts(d["ts"]),
                                   bytes.fromhex(d["prev_digest"]), bytes.fromhex(d["digest"]))

    def verify(self) -> LogVerification:
        """Walk the chain from genesis; reports the first sequence number that does not check out."""
        with self._lock:
            self._fh.seek(0)
            data = self._fh.read()
            self._fh.seek(0, os.SEEK_END)
        try:
            committed = self._read_committed()
        except IntegrityError as exc:
            committed, counter_problem = None, str(exc)
        else:
            counter_problem = ""
        if data[: len(MAGIC_LOG)] != MAGIC_LOG:
            return LogVerification(False, 0, 1, "bad magic header")
        prev, expected = GENESIS, 1
        for _, frame, complete in self._frames(data):
            if not complete:
                return LogVerification(False, expected - 1, expected, "partial entry")
            try:
                d = self._open_frame(frame)
                ok = (
                    d["seq"] == expected
                    and isinstance(d["severity"], int) and 0 <= d["severity"] <= 7
                    and isinstance(d["event"], str)
                    and bytes.fromhex(d["prev_digest"]) == prev
                    and bytes.fromhex(d["digest"])
                    == chain_digest(prev, expected, d["severity"], d["event"], parse_ts(d["ts"]))
                )
            except (IntegrityError, KeyError, ValueError, TypeError) as exc:
                return LogVerification(False, expected - 1, expected, f"entry unreadable: {exc}")
            if not ok:
                return LogVerification(False, expected - 1, expected, "chain mismatch")
            prev = bytes.fromhex(d["digest"])
            expected += 1
        count = expected - 1
        if counter_problem:
            return LogVerification(False, count, count + 1, counter_problem)
        if count < committed:
            return LogVerification(False, count, count + 1, f"{committed - count} entries missing from tail")
        if count > committed + 1:
            return LogVerification(False, count, committed + 1, "entries beyond committed sequence")
        return LogVerification(True, count)

    @property
    def last_seq(self) -> int:
        return self._seq

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
