"""Secure channel providers.

A provider must describe the negotiated channel as a HandshakeProfile and
hand over the peer's certificate chain before any session opens. The
loopback provider takes both as inputs; the TLS provider reads them off a
live ``ssl`` handshake.
"""

from __future__ import annotations

import ssl
from dataclasses import dataclass
from typing import Optional, Sequence

from cryptography import x509

from ..tls.policy import HandshakeProfile, Policy, ProtocolVersion
from ..tls.suites import ELLIPTIC_KEX, FINITE_FIELD_KEX, IANA_TO_OPENSSL, OPENSSL_NAMES, lookup

CURVE_BITS = {"prime256v1": 256, "secp256r1": 256, "secp384r1": 384, "secp521r1": 521,
              "X25519": 255, "X448": 448}

_VERSIONS = {
    "SSLv2": ProtocolVersion.SSL2,
    "SSLv3": ProtocolVersion.SSL3,
    "TLSv1": ProtocolVersion.TLS1_0,
    "TLSv1.1": ProtocolVersion.TLS1_1,
    "TLSv1.2": ProtocolVersion.TLS1_2,
    "TLSv1.3": ProtocolVersion.TLS1_3,
}


@dataclass(frozen=True)
class ChannelInfo:
    profile: HandshakeProfile
    peer_chain: tuple = ()
    peer_label: str = ""


class LoopbackProvider:
    """In-process channels with injected handshake outcomes."""

    def connect(self, profile: HandshakeProfile, peer_chain: Sequence[x509.Certificate] = (),
                label: str = "loopback") -> ChannelInfo:
        return ChannelInfo(profile, tuple(peer_chain), label)


def _openssl_suites(policy: Policy) -> tuple[list[str], bool]:
    tls12 = [IANA_TO_OPENSSL[s] for s in policy.allowed_suites if s in IANA_TO_OPENSSL]
    tls13 = any(OPENSSL_NAMES.get(s) == s for s in policy.allowed_suites)
    return tls12, tls13


def _restrict(ctx: ssl.SSLContext, policy: Policy) -> None:
    tls12, tls13 = _openssl_suites(policy)
    if not tls12 and not tls13:
        raise ValueError("policy allows no suite this TLS stack can negotiate")
    ctx.minimum_version = ssl.TLSVersion.TLSv1_2
    # TLS 1.3 suites are only offered when the policy lists one of them
    ctx.maximum_version = ssl.TLSVersion.TLSv1_3 if tls13 else ssl.TLSVersion.TLSv1_2
    if tls12:
        ctx.set_ciphers(":".join(tls12))
    ctx.options |= ssl.OP_NO_COMPRESSION | ssl.OP_NO_RENEGOTIATION | ssl.OP_CIPHER_SERVER_PREFERENCE


def server_context(policy: Policy, certificate, private_key, trust_anchors, *,
                   ecdh_curve: str = "prime256v1", dh_params=None) -> ssl.SSLContext:
    """Mutual-TLS server context limited to the policy's suites."""
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    _restrict(ctx, policy)
    ctx.load_cert_chain(str(certificate), str(private_key))
    ctx.load_verify_locations(str(trust_anchors))
    ctx.verify_mode = ssl.CERT_REQUIRED if policy.require_mutual_auth else ssl.CERT_OPTIONAL
    ctx.set_ecdh_curve(ecdh_curve)
    if dh_params:
        ctx.load_dh_params(str(dh_params))
    return ctx


def client_context(policy: Policy, trust_anchors, certificate=None, private_key=None, *,
                   check_hostname: bool = True) -> ssl.SSLContext:
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
    _restrict(ctx, policy)
    ctx.load_verify_locations(str(trust_anchors))
    ctx.check_hostname = check_hostname
    if certificate:
        ctx.load_cert_chain(str(certificate), str(private_key))
    return ctx


def profile_from_ssl(sock, *, client_certificate_presented: bool, dh_group_bits: int = 2048,
                     ecdh_curve: str = "prime256v1") -> HandshakeProfile:
    """Describe a completed handshake.

    Python's ssl module does not expose the negotiated group, so the
    configured DH group size and ECDH curve stand in for it; they are the
    only ones the context offers. Fallback SCSV is not visible either, and
    the version floor already rules out any downgraded version.
    """
    name, _proto, _bits = sock.cipher()
    suite = OPENSSL_NAMES.get(name, f"OPENSSL:{name}")
    info = lookup(suite)
    dh = ec = 0
    if info is not None:
        if info.kex in FINITE_FIELD_KEX:
            dh = dh_group_bits
        elif info.kex in ELLIPTIC_KEX or info.kex == "ANY":
            ec = CURVE_BITS.get(ecdh_curve, 0)
    version = _VERSIONS.get(sock.version(), ProtocolVersion.SSL2)
    return HandshakeProfile(
        protocol_version=version,
        cipher_suite=suite,
        compression_enabled=sock.compression() is not None,
        client_certificate_presented=client_certificate_presented,
        dh_group_bits=dh,
        ecdh_curve_bits=ec,
        downgrade_fallback_offered=False,
    )


def peer_chain(sock) -> tuple:
    der: Optional[bytes] = sock.getpeercert(binary_form=True)
    return (x509.load_der_x509_certificate(der),) if der else ()
