import os
from pathlib import Path
from types import SimpleNamespace

import pytest

from scg.gateway.pki import make_ca, make_leaf
from scg.store.crypto import KdfParams, KeyRing

# Argon2id at its minimum memory so tests stay fast; production defaults are checked separately
FAST_KDF = {"memory_cost": 8, "time_cost": 1, "parallelism": 1, "output_bits": 256}


@pytest.fixture
def fast_kdf():
    return KdfParams(**FAST_KDF)


@pytest.fixture
def keys():
    return KeyRing(os.urandom(32))


@pytest.fixture
def data_dir(tmp_path) -> Path:
    d = tmp_path / "data"
    d.mkdir()
    return d


@pytest.fixture(scope="session")
def pki():
    ca = make_ca()
    return SimpleNamespace(
        ca=ca,
        device=make_leaf(ca, "meter-1", ["device"]),
        operator=make_leaf(ca, "dso-1", ["dso-operator"]),
        norole=make_leaf(ca, "plain"),
    )


@pytest.fixture
def master_secret(monkeypatch):
    secret = os.urandom(32)
    monkeypatch.setenv("SCG_MASTER_SECRET", secret.hex())
    return secret
