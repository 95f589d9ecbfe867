"""Throwaway certificate authority for tests, simulations and local trials.

Not CA tooling: keys are EC P-256 (or RSA-2048 for servers, since every
allowed suite authenticates with RSA) and nothing is revocable.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Optional

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, rsa
from cryptography.x509.oid import NameOID

from ..auth import ROLE_PREFIX
from ..model import utcnow


@dataclass
class Issued:
    cert: x509.Certificate
    key: object

    def cert_pem(self) -> bytes:
        return self.cert.public_bytes(serialization.Encoding.PEM)

    def key_pem(self) -> bytes:
        return self.key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
                                      serialization.NoEncryption())

    def write(self, cert_path, key_path) -> None:
        Path(cert_path).write_bytes(self.cert_pem())
        Path(key_path).write_bytes(self.key_pem())


def _name(cn: str, roles: Iterable[str] = ()) -> x509.Name:
    attrs = [x509.NameAttribute(NameOID.COMMON_NAME, cn)]
    attrs += [x509.NameAttribute(NameOID.ORGANIZATIONAL_UNIT_NAME, ROLE_PREFIX + r) for r in sorted(roles)]
    return x509.Name(attrs)


def make_ca(cn: str = "scg-test-ca", *, not_before: Optional[datetime] = None,
            days: int = 365) -> Issued:
    key = ec.generate_private_key(ec.SECP256R1())
    start = not_before or utcnow() - timedelta(hours=1)
    name = _name(cn)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name).issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(start).not_valid_after(start + timedelta(days=days))
        .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
        .add_extension(x509.KeyUsage(digital_signature=True, key_cert_sign=True, crl_sign=True,
                                     content_commitment=False, key_encipherment=False,
                                     data_encipherment=False, key_agreement=False,
                                     encipher_only=False, decipher_only=False), critical=True)
        .sign(key, hashes.SHA256())
    )
    return Issued(cert, key)


def make_leaf(ca: Issued, cn: str, roles: Iterable[str] = (), *, not_before: Optional[datetime] = None,
              days: int = 30, server: bool = False, san: Iterable[str] = ("localhost",),
              rsa_key: Optional[bool] = None) -> Issued:
    if server if rsa_key is None else rsa_key:
        key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    else:
        key = ec.generate_private_key(ec.SECP256R1())
    start = not_before or utcnow() - timedelta(hours=1)
    builder = (
        x509.CertificateBuilder()
        .subject_name(_name(cn, roles)).issuer_name(ca.cert.subject)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(start).not_valid_after(start + timedelta(days=days))
        .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
    )
    if server:
        # IP literals go into the SAN as addresses so hostname checks work on 127.0.0.1
        names = []
        for s in san:
            try:
                names.append(x509.IPAddress(ipaddress.ip_address(s)))
            except ValueError:
                names.append(x509.DNSName(s))
        builder = builder.add_extension(x509.SubjectAlternativeName(names), critical=False)
    return Issued(builder.sign(ca.key, hashes.SHA256()), key)
