"""Shared fixtures-in-code for gateway level tests."""

from __future__ import annotations

import json

from conftest import FAST_KDF
from scg.gateway import LoopbackProvider, config_from_dict
from scg.model import Kind, Message, encode_frame
from scg.tls.policy import HandshakeProfile, ProtocolVersion

DEVICE_SUITE = "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256"


def config_dict(data_dir, **overrides) -> dict:
    cfg = {
        "data_dir": str(data_dir),
        "gateway_id": "scg-test",
        "backend": {"zone": "external_operations", "region": "AT"},
        "kdf": dict(FAST_KDF),
        "access": {"roles": {"dso-operator": ["send_control", "view_status"]}},
        "zone_policies": {"external_operations": {"field_allowlist": ["kWh", "site"],
                                                  "transforms": {"site": "pseudonymize"}}},
    }
    for key, value in overrides.items():
        cfg[key] = value
    return cfg


def make_config(data_dir, **overrides):
    return config_from_dict(config_dict(data_dir, **overrides))


def device_profile(**changes) -> HandshakeProfile:
    base = dict(protocol_version=ProtocolVersion.TLS1_2, cipher_suite=DEVICE_SUITE,
                client_certificate_presented=True, ecdh_curve_bits=256)
    base.update(changes)
    return HandshakeProfile(**base)


def device_session(gateway, cert):
    return gateway.open_session(LoopbackProvider().connect(device_profile(), [cert], "meter-1"))


def measurement(device="meter-1", **body) -> Message:
    return Message.new(Kind.MEASUREMENT, device, body or {"kWh": 1.25, "site": "s1", "household_name": "Doe"})


def frame(msg) -> bytes:
    return encode_frame(msg, now=msg.ts)


def write_json(path, data) -> None:
    path.write_text(json.dumps(data), encoding="utf-8")
