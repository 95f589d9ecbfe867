"""Acceptance criteria, one PASS/FAIL line each.

Run ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
"""

import dataclasses
import os
import sys
import tempfile
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import FAST_KDF  # noqa: E402
from support import device_session, frame, make_config, measurement  # noqa: E402
from test_alerting import enumerate_agreement  # noqa: E402
from test_emd_oracle import oracle_agreement  # noqa: E402
from test_sim import crash_campaign, month  # noqa: E402
from test_store import flip_fuzz  # noqa: E402
from test_tcloseness import self_consistency  # noqa: E402

from scg.errors import ConfigError, ParamsTooWeak  # noqa: E402
from scg.gateway import Gateway, MemorySink  # noqa: E402
from scg.gateway.pki import make_ca, make_leaf  # noqa: E402
from scg.model import Zone, ZoneTag  # noqa: E402
from scg.privacy.transforms import is_pseudonym  # noqa: E402
from scg.sim import run_scenario  # noqa: E402
from scg.store.crypto import KdfParams, KeyRing, derive_key  # noqa: E402
from scg.tls.policy import (  # noqa: E402
    ALLOWED_SUITES,
    ProtocolVersion,
    Violation,
    default_policy,
    evaluate_handshake,
    ideal_profile,
    registry_profiles,
)

EXPECTED_SUITES = {
    "TLS_DHE_RSA_WITH_AES_128_GCM_SHA256",
    "TLS_DHE_RSA_WITH_AES_256_GCM_SHA384",
    "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256",
    "TLS_ECDHE_RSA_WITH_AES_256_GCM_SHA384",
}
SENTINEL = "SENTINEL-acceptance-4b7d"
PASSWORD = "acceptance-password-" + SENTINEL


def verdict(n: int, ok: bool, detail: str) -> bool:
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}", flush=True)
    return ok


@pytest.fixture
def say(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            verdict(n, ok, detail)
        return ok
    return emit


def _timed(fn, *args):
    start = time.perf_counter()
    value = fn(*args)
    return value, time.perf_counter() - start


# -- criteria -----------------------------------------------------------------------

def criterion_1():
    def run():
        policy = default_policy()
        return {p.cipher_suite for p in registry_profiles() if evaluate_handshake(p, policy).accepted}
    accepted, secs = _timed(run)
    ok = accepted == EXPECTED_SUITES and set(ALLOWED_SUITES) == EXPECTED_SUITES and secs < 1
    return ok, f"registry audit accepts {len(accepted)} suites, exact set match={accepted == EXPECTED_SUITES} ({secs:.2f} s)"


def criterion_2():
    low = [ProtocolVersion.SSL2, ProtocolVersion.SSL3, ProtocolVersion.TLS1_0, ProtocolVersion.TLS1_1]
    cases = [dataclasses.replace(ideal_profile(s), protocol_version=v) for v in low for s in sorted(EXPECTED_SUITES)]
    decisions = [evaluate_handshake(p) for p in cases]
    rejected = sum(Violation.V01 in d.violations and not d.accepted for d in decisions)
    modern = [ideal_profile(s) for s in sorted(EXPECTED_SUITES)]
    base = dataclasses.replace(ideal_profile("TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256"), ecdh_curve_bits=256)
    accepted = sum(evaluate_handshake(p).accepted for p in [*modern, base])
    ok = rejected == len(cases) and accepted == len(modern) + 1
    return ok, f"{rejected}/{len(cases)} legacy-version profiles rejected with V01; {accepted}/{len(modern) + 1} TLS1.2 accepted"


def criterion_3():
    dhe = ideal_profile("TLS_DHE_RSA_WITH_AES_128_GCM_SHA256")
    ecdhe = ideal_profile("TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256")
    checks = {
        "dh 2047 rejected": not evaluate_handshake(dataclasses.replace(dhe, dh_group_bits=2047)).accepted,
        "dh 2048 accepted": evaluate_handshake(dataclasses.replace(dhe, dh_group_bits=2048)).accepted,
        "ecdh 191 rejected": not evaluate_handshake(dataclasses.replace(ecdhe, ecdh_curve_bits=191)).accepted,
        "ecdh 192 accepted": evaluate_handshake(dataclasses.replace(ecdhe, ecdh_curve_bits=192)).accepted,
    }
    salt = os.urandom(16)
    try:
        derive_key(b"secret", KdfParams(salt, 8, 1, 1, 127))
        checks["kdf 127 refused"] = False
    except ParamsTooWeak:
        checks["kdf 127 refused"] = True
    checks["kdf 128 ok"] = len(derive_key(b"secret", KdfParams(salt, 8, 1, 1, 128))) == 16
    failed = [k for k, v in checks.items() if not v]
    return not failed, "all boundaries exact" if not failed else f"failed: {failed}"


def criterion_4():
    worst, secs = _timed(oracle_agreement, 1000, 20240)
    return worst <= 1e-9 and secs < 30, f"1000 pairs x 2 variants, max deviation {worst:.2e} ({secs:.1f} s)"


def criterion_5():
    (good, cases), secs = _timed(self_consistency, 50, 77)
    return good == cases, f"{good}/{cases} randomized tables consistent ({secs:.1f} s)"


def criterion_6():
    with tempfile.TemporaryDirectory() as tmp:
        (detected, trials), secs = _timed(flip_fuzz, Path(tmp), 1000, 1234)
    return detected == trials and secs < 60, f"{detected}/{trials} bit flips detected ({secs:.1f} s)"


def criterion_7():
    res, secs = _timed(crash_campaign, range(1000, 1100))
    ok = res["runs"] == 100 and res["lost"] == 0 and res["unexpected"] == 0 and res["mismatch"] == 0 and secs < 120
    points = ",".join(sorted(res["kill_points"]))
    return ok, (f"{res['runs']} scenarios, lost={res['lost']}, unexpected={res['unexpected']}, "
                f"set mismatches={res['mismatch']}, kill points {points} ({secs:.1f} s)")


def criterion_8():
    agree, total = enumerate_agreement()
    return agree == total, f"{agree}/{total} partitions and malformed variants agree"


def criterion_9():
    r40 = run_scenario(month(40))
    r50 = run_scenario(month(50))
    ok = (abs(r40.uptime_fraction - 0.999074) <= 1e-6 and r40.meets_target
          and abs(r50.uptime_fraction - 0.998843) <= 1e-6 and not r50.meets_target)
    return ok, f"40 min -> {r40.uptime_fraction:.6f} (meets={r40.meets_target}); 50 min -> {r50.uptime_fraction:.6f} (meets={r50.meets_target})"


def criterion_10():
    ca = make_ca()
    device = make_leaf(ca, "meter-1", ["device"])
    keys = KeyRing(os.urandom(32))
    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "gw"
        gw = Gateway(make_config(data), keys, sync=False, trust_anchors=[ca.cert])
        gw.start()
        gw.users.register_user("alice", PASSWORD, KdfParams(**FAST_KDF), roles=["prosumer"])
        s = device_session(gw, device.cert)
        ids = []
        for i in range(20):
            m = measurement(kWh=float(i), site="site-7", note=SENTINEL)
            gw.handle_frame(s, frame(m))
            ids.append(m.id)
        sink = MemorySink(Zone(ZoneTag.EXTERNAL_OPERATIONS, "AT"))
        forwarded = gw.forward_pending(sink)
        gw.stop()
        raw_ids = sum(b"meter-1" in c for c in sink.captures)
        formatted = all(is_pseudonym(m.device) for m in sink.received.values())
        blobs = [p.read_bytes() for p in data.rglob("*") if p.is_file()]
        sentinel_hits = sum(SENTINEL.encode() in b for b in blobs)
        password_hits = sum(PASSWORD.encode() in b for b in blobs)
    ok = forwarded == 20 and raw_ids == 0 and formatted and sentinel_hits == 0 and password_hits == 0
    return ok, (f"{forwarded} forwarded, raw device ids in captures={raw_ids}, pseudonym format={formatted}, "
                f"files with sentinel={sentinel_hits}, files with password={password_hits}")


def criterion_11():
    keys = KeyRing(os.urandom(32))
    with tempfile.TemporaryDirectory() as tmp:
        try:
            Gateway(make_config(Path(tmp) / "us", backend={"zone": "external_operations", "region": "US"}),
                    keys, sync=False)
            refused = False
        except ConfigError:
            refused = True
        try:
            gw = Gateway(make_config(Path(tmp) / "at", backend={"zone": "external_operations", "region": "AT"}),
                         keys, sync=False)
            gw.start()
            gw.stop()
            started = True
        except ConfigError:
            started = False
    return refused and started, f"US persistent backend refused={refused}; AT backend started={started}"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11]


@pytest.mark.parametrize("n", range(1, len(CRITERIA) + 1), ids=lambda n: f"criterion_{n}")
def test_criterion(n, say):
    ok, detail = CRITERIA[n - 1]()
    assert say(n, ok, detail), detail


if __name__ == "__main__":
    results = [verdict(n, *crit()) for n, crit in enumerate(CRITERIA, 1)]
    sys.exit(0 if all(results) else 1)
