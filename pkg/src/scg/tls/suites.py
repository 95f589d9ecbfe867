"""Static cipher-suite properties, loaded from the bundled IANA registry snapshot.

The snapshot (``iana_suites.csv``) lists every registered suite with its key
exchange family, authentication, cipher, effective key bits and block bits.
Stream ciphers and the NULL cipher have ``block_bits == 0``. 3DES is listed
at its effective 112-bit strength.
"""

import csv
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

EPHEMERAL_KEX = frozenset({"DHE", "ECDHE", "ANY"})
FINITE_FIELD_KEX = frozenset({"DH", "DHE"})
ELLIPTIC_KEX = frozenset({"ECDH", "ECDHE"})


@dataclass(frozen=True)
class SuiteInfo:
    name: str
    code: int
    kex: str
    auth: str
    export: bool
    cipher: str
    key_bits: int
    block_bits: int
    mode: str
    mac: str

    @property
    def static_key_exchange(self) -> bool:
        # PSK counts as static even when combined with an ephemeral exchange
        return self.kex not in EPHEMERAL_KEX or self.auth == "PSK"

    @property
    def anonymous(self) -> bool:
        return self.auth in ("anon", "NULL")

    @property
    def stream(self) -> bool:
        return self.block_bits == 0


@lru_cache(maxsize=None)
def registry() -> dict[str, SuiteInfo]:
    text = resources.files(__package__).joinpath("iana_suites.csv").read_text()
    out = {}
    for row in csv.DictReader(text.splitlines()):
        out[row["name"]] = SuiteInfo(
            name=row["name"],
            code=int(row["code"], 16),
            kex=row["kex"],
            auth=row["auth"],
            export=row["export"] == "1",
            cipher=row["cipher"],
            key_bits=int(row["key_bits"]),
            block_bits=int(row["block_bits"]),
            mode=row["mode"],
            mac=row["mac"],
        )
    return out


def lookup(name: str):
    return registry().get(name)


# OpenSSL spelling -> IANA name, for the suites the gateway can negotiate
OPENSSL_NAMES = {
    "DHE-RSA-AES128-GCM-SHA256": "TLS_DHE_RSA_WITH_AES_128_GCM_SHA256",
    "ECDHE-RSA-AES128-GCM-SHA256": "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256",
    "DHE-RSA-AES256-GCM-SHA384": "TLS_DHE_RSA_WITH_AES_256_GCM_SHA384",
    "ECDHE-RSA-AES256-GCM-SHA384": "TLS_ECDHE_RSA_WITH_AES_256_GCM_SHA384",
    "TLS_AES_128_GCM_SHA256": "TLS_AES_128_GCM_SHA256",
    "TLS_AES_256_GCM_SHA384": "TLS_AES_256_GCM_SHA384",
    "TLS_CHACHA20_POLY1305_SHA256": "TLS_CHACHA20_POLY1305_SHA256",
}
IANA_TO_OPENSSL = {v: k for k, v in OPENSSL_NAMES.items() if k != v}
