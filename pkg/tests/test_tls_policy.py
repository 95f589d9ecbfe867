import json

import pytest

from scg.errors import ValidationError
from scg.tls import suites
from scg.tls.policy import (
    ALLOWED_SUITES,
    HandshakeProfile,
    ProtocolVersion,
    Violation,
    audit_profiles,
    default_policy,
    evaluate_handshake,
    ideal_profile,
    load_profiles,
    registry_profiles,
)

ECDHE128 = "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256"
DHE128 = "TLS_DHE_RSA_WITH_AES_128_GCM_SHA256"


def good(**kw):
    base = dict(protocol_version="TLS1_2", cipher_suite=ECDHE128, compression_enabled=False,
                client_certificate_presented=True, dh_group_bits=0, ecdh_curve_bits=256,
                downgrade_fallback_offered=False)
    base.update(kw)
    return HandshakeProfile(**base)


def codes(profile, policy=None):
    return set(evaluate_handshake(profile, policy).violations)


def test_default_policy_constants():
    p = default_policy()
    assert set(p.allowed_suites) == {
        "TLS_DHE_RSA_WITH_AES_128_GCM_SHA256", "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256",
        "TLS_DHE_RSA_WITH_AES_256_GCM_SHA384", "TLS_ECDHE_RSA_WITH_AES_256_GCM_SHA384"}
    assert len(p.allowed_suites) == 4
    assert (p.min_dh_bits, p.min_ecdh_bits, p.min_symmetric_bits, p.min_block_bits) == (2048, 192, 128, 128)
    assert p.min_version is ProtocolVersion.TLS1_2
    assert all([p.require_mutual_auth, p.forbid_compression, p.forbid_static_keys, p.strict])


@pytest.mark.parametrize("profile, expected", [
    (good(), set()),
    (good(protocol_version="TLS1_1"), {Violation.V01}),
    (good(cipher_suite=DHE128, dh_group_bits=1024, ecdh_curve_bits=0), {Violation.V05}),
    (good(compression_enabled=True), {Violation.V04}),
    (good(client_certificate_presented=False), {Violation.V07}),
    (good(protocol_version="SSL3"), {Violation.V01}),
    (good(downgrade_fallback_offered=True), {Violation.V11}),
    (good(ecdh_curve_bits=160), {Violation.V06}),
])
def test_examples(profile, expected):
    assert codes(profile) == expected


def test_static_rsa_suite():
    assert codes(good(cipher_suite="TLS_RSA_WITH_AES_128_CBC_SHA", ecdh_curve_bits=0)) >= {Violation.V02, Violation.V03}


@pytest.mark.parametrize("version", ["SSL2", "SSL3", "TLS1_0", "TLS1_1"])
def test_version_floor(version):
    assert Violation.V01 in codes(good(protocol_version=version))


def test_ssl_rejected_even_if_policy_allows():
    lax = default_policy().with_overrides({"min_version": "SSL2"})
    assert Violation.V01 in codes(good(protocol_version="SSL3"), lax)
    assert not codes(good(protocol_version="TLS1_0"), lax)


def test_tls13_and_dtls():
    assert not codes(good(protocol_version="TLS1_3"))
    assert not codes(good(protocol_version="DTLS1_2"))
    assert codes(good(protocol_version="DTLS1_2", compression_enabled=True)) == {Violation.V04}


@pytest.mark.parametrize("bits, ok", [(2047, False), (2048, True)])
def test_dh_boundary(bits, ok):
    assert (not codes(good(cipher_suite=DHE128, dh_group_bits=bits, ecdh_curve_bits=0))) is ok


@pytest.mark.parametrize("bits, ok", [(191, False), (192, True)])
def test_ecdh_boundary(bits, ok):
    assert (not codes(good(ecdh_curve_bits=bits))) is ok


def test_dh_suite_without_group_size():
    assert Violation.V05 in codes(good(cipher_suite=DHE128, dh_group_bits=0, ecdh_curve_bits=0))


def test_unknown_suite_is_v02_not_exception():
    assert codes(good(cipher_suite="TLS_MADE_UP")) == {Violation.V02}


def test_exhaustive_violations():
    p = good(protocol_version="TLS1_0", cipher_suite="TLS_RSA_EXPORT_WITH_RC4_40_MD5", compression_enabled=True,
             client_certificate_presented=False, ecdh_curve_bits=0, downgrade_fallback_offered=True)
    assert codes(p) == {Violation.V01, Violation.V02, Violation.V03, Violation.V04, Violation.V07,
                        Violation.V09, Violation.V11}


def test_psk_variants_static():
    for name, info in suites.registry().items():
        if "PSK" in info.kex or info.auth == "PSK":
            assert Violation.V03 in codes(ideal_profile(name)), name


def test_anonymous_suite():
    c = codes(ideal_profile("TLS_DH_anon_WITH_AES_128_GCM_SHA256"))
    assert Violation.V08 in c and Violation.V03 not in c


def test_block_and_key_sizes():
    assert Violation.V10 in codes(ideal_profile("TLS_RSA_WITH_3DES_EDE_CBC_SHA"))
    assert Violation.V09 in codes(ideal_profile("TLS_RSA_WITH_3DES_EDE_CBC_SHA"))
    assert Violation.V10 not in codes(ideal_profile("TLS_ECDHE_RSA_WITH_CHACHA20_POLY1305_SHA256"))


def test_registry_accepts_exactly_four():
    report = audit_profiles(registry_profiles())
    accepted = {e.profile.cipher_suite for e in report.entries if e.decision.accepted}
    assert accepted == set(ALLOWED_SUITES)
    assert report.evaluated == len(suites.registry()) > 300


def test_registry_snapshot_is_consistent():
    reg = suites.registry()
    assert len({i.code for i in reg.values()}) == len(reg)
    assert all(name in reg for name in ALLOWED_SUITES)
    assert reg["TLS_ECDHE_RSA_WITH_AES_256_GCM_SHA384"].code == 0xC030


def test_deny_by_default_over_registry():
    for p in registry_profiles():
        if p.cipher_suite not in ALLOWED_SUITES:
            assert not evaluate_handshake(p).accepted


@pytest.mark.parametrize("change", [
    dict(protocol_version="TLS1_1"), dict(compression_enabled=True), dict(client_certificate_presented=False),
    dict(ecdh_curve_bits=100), dict(downgrade_fallback_offered=True), dict(cipher_suite="TLS_RSA_WITH_NULL_SHA"),
])
def test_monotone(change):
    for suite in ALLOWED_SUITES:
        base = ideal_profile(suite)
        assert evaluate_handshake(base).accepted
        assert not evaluate_handshake(HandshakeProfile(**{**base.to_dict(), **change})).accepted


def test_audit_counts_and_empty():
    assert audit_profiles([]).summary() == {"evaluated": 0, "accepted": 0, "rejected": 0}
    r = audit_profiles([good(), good(protocol_version="TLS1_0")])
    assert r.summary() == {"evaluated": 2, "accepted": 1, "rejected": 1}
    assert "REJECT" in r.render_table()
    assert r.to_dict()["violation_counts"]["V01_VersionBelowMinimum"] == 1


def test_profile_file(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps([good().to_dict(), good(compression_enabled=True).to_dict()]))
    assert len(load_profiles(path)) == 2
    path.write_text(json.dumps({"profiles": [good().to_dict()]}))
    assert len(load_profiles(path)) == 1
    path.write_text(json.dumps([{**good().to_dict(), "extra": 1}]))
    with pytest.raises(ValidationError):
        load_profiles(path)


def test_profile_validation():
    with pytest.raises(ValidationError):
        good(protocol_version="TLS9")
    with pytest.raises(ValidationError):
        good(dh_group_bits=-1)


def test_policy_overrides():
    p = default_policy().with_overrides({"min_dh_bits": 3072})
    assert Violation.V05 in codes(good(cipher_suite=DHE128, dh_group_bits=2048, ecdh_curve_bits=0), p)
    with pytest.raises(ValidationError):
        default_policy().with_overrides({"nope": 1})
