"""Key derivation, AEAD sealing and nonce management for data at rest."""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import struct
import threading
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.argon2 import Argon2id
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from ..errors import IntegrityError, ParamsTooWeak, ValidationError

NONCE_LEN = 12
TAG_LEN = 16
MAC_LEN = 16
MASTER_SECRET_ENV = "SCG_MASTER_SECRET"


@dataclass(frozen=True)
class KdfParams:
    """Argon2id cost parameters. ``memory_cost`` is in KiB."""

    salt: bytes = field(default_factory=lambda: os.urandom(16))
    memory_cost: int = 64 * 1024
    time_cost: int = 3
    parallelism: int = 1
    output_bits: int = 256

    def validate(self) -> None:
        if self.output_bits < 128:
            raise ParamsTooWeak(f"output_bits={self.output_bits}, at least 128 required")
        if self.output_bits % 8:
            raise ValidationError("output_bits must be a multiple of 8")
        if len(self.salt) != 16:
            raise ValidationError("salt must be 16 bytes")
        if self.time_cost < 1 or self.parallelism < 1:
            raise ValidationError("time_cost and parallelism must be at least 1")
        if self.memory_cost < 8 * self.parallelism:
            raise ValidationError("memory_cost must be at least 8 KiB per lane")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["salt"] = self.salt.hex()
        return out

    @classmethod
    def from_dict(cls, data) -> "KdfParams":
        data = dict(data)
        if "salt" in data:
            data["salt"] = bytes.fromhex(data["salt"])
        return cls(**data)


def derive_key(master_secret: bytes, params: KdfParams) -> bytes:
    params.validate()
    if not master_secret:
        raise ValidationError("master secret must not be empty")
    kdf = Argon2id(
        salt=params.salt,
        length=params.output_bits // 8,
        iterations=params.time_cost,
        lanes=params.parallelism,
        memory_cost=params.memory_cost,
    )
    return kdf.derive(master_secret)


def subkey(root: bytes, label: str, length: int = 32) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=None,
                info=b"scg/" + label.encode()).derive(root)


@dataclass(frozen=True)
class KeyRing:
    """Purpose-separated keys expanded from one derived master key."""

    root: bytes

    @cached_property
    def queue(self) -> bytes:
        return subkey(self.root, "queue-aead")

    @cached_property
    def queue_mac(self) -> bytes:
        return subkey(self.root, "queue-mac")

    @cached_property
    def log(self) -> bytes:
        return subkey(self.root, "log-aead")

    @cached_property
    def log_mac(self) -> bytes:
        return subkey(self.root, "log-mac")

    @cached_property
    def pseudonym(self) -> bytes:
        return subkey(self.root, "pseudonym")

    @cached_property
    def blob(self) -> bytes:
        return subkey(self.root, "blob-aead")

    @cached_property
    def credentials(self) -> bytes:
        return subkey(self.root, "credentials-aead")


def mac(key: bytes, *parts: bytes) -> bytes:
    h = hmac.new(key, digestmod=hashlib.sha256)
    for p in parts:
        h.update(struct.pack(">I", len(p)))
        h.update(p)
    return h.digest()[:MAC_LEN]


def seal(key: bytes, nonce: bytes, plaintext: bytes, ad: bytes) -> bytes:
    return AESGCM(key).encrypt(nonce, plaintext, ad)


def open_sealed(key: bytes, nonce: bytes, ciphertext: bytes, ad: bytes) -> bytes:
    try:
        return AESGCM(key).decrypt(nonce, ciphertext, ad)
    except InvalidTag:
        raise IntegrityError("authentication tag mismatch") from None


def write_atomic(path: Path, data: bytes, sync: bool = True) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        if sync:
            os.fsync(fh.fileno())
    os.replace(tmp, path)
    if sync:
        fsync_dir(path.parent)


def fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


class NonceCounter:
    """Monotonic 96-bit nonces backed by a MAC-protected high-water mark.

    Counters are reserved in blocks: the reserved ceiling is persisted before
    any nonce below it is handed out, so a crash can skip values but never
    repeat one.
    """

    BLOCK = 1024
    _FMT = struct.Struct(">Q")

    def __init__(self, path: Path, mac_key: bytes, sync: bool = True):
        self.path = Path(path)
        self._mac_key = mac_key
        self._sync = sync
        self._lock = threading.Lock()
        self._next = self._load()
        self._ceiling = self._next

    def _load(self) -> int:
        if not self.path.exists():
            return 0
        raw = self.path.read_bytes()
        if len(raw) != self._FMT.size + MAC_LEN:
            raise IntegrityError(f"{self.path.name}: nonce counter has wrong size")
        body, tag = raw[: self._FMT.size], raw[self._FMT.size:]
        if not hmac.compare_digest(tag, mac(self._mac_key, b"nonce", body)):
            raise IntegrityError(f"{self.path.name}: nonce counter failed authentication")
        return self._FMT.unpack(body)[0]

    def next(self) -> bytes:
        with self._lock:
            if self._next >= self._ceiling:
                ceiling = self._next + self.BLOCK
                body = self._FMT.pack(ceiling)
                write_atomic(self.path, body + mac(self._mac_key, b"nonce", body), self._sync)
                self._ceiling = ceiling
            value = self._next
            self._next += 1
        return value.to_bytes(NONCE_LEN, "big")


def load_master_secret(env=None) -> bytes:
    env = os.environ if env is None else env
    raw = env.get(MASTER_SECRET_ENV)
    if not raw:
        raise ValidationError(f"{MASTER_SECRET_ENV} is not set")
    try:
        secret = bytes.fromhex(raw.strip())
    except ValueError:
        raise ValidationError(f"{MASTER_SECRET_ENV} must be hex encoded") from None
    if len(secret) < 16:
        raise ValidationError(f"{MASTER_SECRET_ENV} must hold at least 16 bytes")
    return secret


KEYPARAMS_FILE = "keyparams.json"


def load_or_create_params(data_dir: Path, defaults: KdfParams | None = None) -> KdfParams:
    """KDF parameters live next to the data they protect; the salt is created once."""
    path = Path(data_dir) / KEYPARAMS_FILE
    if path.exists():
        return KdfParams.from_dict(json.loads(path.read_text()))
    params = defaults or KdfParams()
    Path(data_dir).mkdir(parents=True, exist_ok=True)
    write_atomic(path, json.dumps(params.to_dict(), sort_keys=True).encode())
    return params


def unlock(data_dir, master_secret: bytes | None = None, defaults: KdfParams | None = None) -> KeyRing:
    params = load_or_create_params(Path(data_dir), defaults)
    secret = master_secret if master_secret is not None else load_master_secret()
    return KeyRing(derive_key(secret, params))
