import json

import pytest

from conftest import FAST_KDF
from support import device_profile, device_session, frame, make_config, measurement
from scg.cli import EX_CONFIG, EX_DATAERR, EX_FAIL, EX_INFEASIBLE, EX_OK, EX_USAGE, main
from scg.errors import PolicyViolation
from scg.gateway import Gateway, LoopbackProvider
from scg.store.crypto import KdfParams, unlock
from scg.tls.policy import ProtocolVersion


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_usage_errors(capsys):
    assert run(capsys, "bogus")[0] == EX_USAGE
    assert run(capsys)[0] == EX_USAGE
    assert run(capsys, "audit-tls")[0] == EX_USAGE
    assert run(capsys, "anonymize", "--t", "x")[0] == EX_USAGE


def test_audit_registry(capsys, tmp_path):
    code, out, _ = run(capsys, "audit-tls", "--registry", "--format", "json", "--report-dir", str(tmp_path))
    data = json.loads(out)
    assert code == EX_FAIL and data["summary"]["accepted"] == 4
    assert sorted(data["accepted_suites"]) == sorted([
        "TLS_DHE_RSA_WITH_AES_128_GCM_SHA256", "TLS_DHE_RSA_WITH_AES_256_GCM_SHA384",
        "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256", "TLS_ECDHE_RSA_WITH_AES_256_GCM_SHA384"])
    for name in ("audit.csv", "audit_violations.csv", "audit_violations.png"):
        assert (tmp_path / name).stat().st_size > 0
    assert (tmp_path / "audit_violations.png").read_bytes()[:4] == b"\x89PNG"


def test_audit_profiles(capsys, tmp_path):
    good = {"protocol_version": "TLS1_2", "cipher_suite": "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256",
            "client_certificate_presented": True, "ecdh_curve_bits": 256}
    (tmp_path / "p.json").write_text(json.dumps([good]))
    assert run(capsys, "audit-tls", "--profiles", str(tmp_path / "p.json"))[0] == EX_OK
    (tmp_path / "q.json").write_text(json.dumps([dict(good, protocol_version="TLS1_0")]))
    code, out, _ = run(capsys, "audit-tls", "--profiles", str(tmp_path / "q.json"))
    assert code == EX_FAIL and "V01" in out
    (tmp_path / "bad.json").write_text("{not json")
    assert run(capsys, "audit-tls", "--profiles", str(tmp_path / "bad.json"))[0] == EX_DATAERR


def test_anonymize(capsys, tmp_path):
    (tmp_path / "t.csv").write_text("zip,s\nx1,A\nx1,A\nx2,B\nx2,B\n")
    (tmp_path / "h.txt").write_text("zip;x1;x*\nzip;x2;x*\n")
    args = ["anonymize", "--input", str(tmp_path / "t.csv"), "--qi", "zip", "--sensitive", "s",
            "--hierarchy", str(tmp_path / "h.txt"), "--output", str(tmp_path / "o.csv")]
    code, out, _ = run(capsys, *args, "--t", "0.4", "--report-dir", str(tmp_path / "rep"))
    assert code == EX_OK and (tmp_path / "o.csv").read_text().splitlines()[1] == "x*,A"
    for name in ("anonymize_classes.csv", "anonymize_levels.csv", "anonymize_emd.png"):
        assert (tmp_path / "rep" / name).exists()
    code, out, _ = run(capsys, *args, "--t", "0.4", "--k", "5", "--suppression-budget", "0")
    assert code == EX_INFEASIBLE and "infeasible" in out


@pytest.fixture
def gateway_dir(tmp_path, master_secret, pki):
    data = tmp_path / "gw"
    keys = unlock(data, master_secret, KdfParams(**FAST_KDF))
    gw = Gateway(make_config(data), keys, sync=False, trust_anchors=[pki.ca.cert])
    gw.start()
    s = device_session(gw, pki.device.cert)
    for _ in range(3):
        gw.handle_frame(s, frame(measurement()))
    gw.stop()
    return data


def test_verify_log_and_status(capsys, gateway_dir):
    code, out, _ = run(capsys, "verify-log", "--data-dir", str(gateway_dir))
    assert code == EX_OK and "chain intact" in out
    code, out, _ = run(capsys, "status", "--data-dir", str(gateway_dir), "--format", "json")
    assert code == EX_OK and json.loads(out)["queue"]["pending"] == 3

    log = gateway_dir / "security.log"
    raw = bytearray(log.read_bytes())
    raw[-5] ^= 1
    log.write_bytes(bytes(raw))
    code, out, _ = run(capsys, "verify-log", "--data-dir", str(gateway_dir))
    assert code == EX_FAIL and "BROKEN" in out


def test_not_a_data_dir(capsys, tmp_path, master_secret):
    assert run(capsys, "status", "--data-dir", str(tmp_path))[0] == EX_CONFIG


def test_missing_secret(capsys, gateway_dir, monkeypatch):
    monkeypatch.delenv("SCG_MASTER_SECRET")
    assert run(capsys, "verify-log", "--data-dir", str(gateway_dir))[0] == EX_DATAERR


def test_status_shows_dashboard_alerts(capsys, tmp_path, master_secret, pki):
    data = tmp_path / "gw"
    keys = unlock(data, master_secret, KdfParams(**FAST_KDF))
    routing = {"classes": {"Error": ["ops"], "Warning": ["ops"]}, "roles": {"ops": ["dashboard-buffer"]}}
    gw = Gateway(make_config(data, alerts={"routing": routing}), keys, sync=False, trust_anchors=[pki.ca.cert])
    gw.start()
    with pytest.raises(PolicyViolation):
        gw.open_session(LoopbackProvider().connect(device_profile(protocol_version=ProtocolVersion.TLS1_0)))
    gw.stop()
    code, out, _ = run(capsys, "status", "--data-dir", str(data))
    assert code == EX_OK and "rejected" in out and "[Error]" in out


def test_simulate(capsys, tmp_path):
    sc = {"seed": 1, "devices": 2, "rate": 0.2, "duration": 600,
          "faults": [{"time": 100, "kind": "gateway_crash", "duration": 30},
                     {"time": 300, "kind": "backend_down", "duration": 60}]}
    (tmp_path / "s.json").write_text(json.dumps(sc))
    code, out, _ = run(capsys, "simulate", "--scenario", str(tmp_path / "s.json"), "--format", "json",
                       "--report-dir", str(tmp_path / "rep"))
    data = json.loads(out)
    assert data["lost"] == 0 and code == (EX_OK if data["meets_target"] else EX_FAIL)
    assert code == EX_FAIL  # 30 s down in 10 minutes misses 99.9 %
    for name in ("simulate_summary.csv", "simulate_faults.csv", "simulate_samples.csv", "simulate_backlog.png"):
        assert (tmp_path / "rep" / name).exists()
    sc["faults"] = []
    (tmp_path / "s.json").write_text(json.dumps(sc))
    assert run(capsys, "simulate", "--scenario", str(tmp_path / "s.json"))[0] == EX_OK


def test_serve_bad_config(capsys, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"data_dir": "d", "backend": {"region": "US"}}))
    code, _, err = run(capsys, "serve", "--config", str(tmp_path / "c.json"))
    assert code == EX_CONFIG and "EU" in err
    assert run(capsys, "serve", "--config", str(tmp_path / "none.json"))[0] == EX_CONFIG
