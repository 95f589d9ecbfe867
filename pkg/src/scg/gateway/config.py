"""Gateway configuration: a JSON document, validated before anything starts.

Schema (all keys optional unless noted)::

    {
      "gateway_id": "scg-01",
      "data_dir": "/var/lib/scg",                       # required
      "listen": {"host": "0.0.0.0", "port": 8883},
      "backend": {"host": "...", "port": 9443,
                  "zone": "external_operations",         # or "third_party"
                  "region": "AT", "persistent": true},
      "tls": {"policy": {<Policy field overrides>},
              "certificate": "gw.pem", "private_key": "gw.key",
              "trust_anchors": "ca.pem", "dh_params": "dh.pem",
              "dh_group_bits": 2048, "ecdh_curve": "prime256v1"},
      "zone_policies": {"external_operations": {"field_allowlist": [...],
                                                 "transforms": {"field": "pass|pseudonymize|drop"}},
                        "third_party": {..., "anonymization": {"qi": [...], "sensitive": "col",
                                        "kind": "categorical|numeric", "t": 0.2, "k": 2,
                                        "hierarchy": "file"}}},
      "retention_seconds": 2592000,
      "alerts": {"classes": [{"name": "Critical", "severities": [0, 1]}, ...],
                 "routing": {"classes": {"Critical": ["admin"]},
                             "roles": {"admin": ["console", "email-stub"]}}},
      "access": {"roles": {"dso-operator": ["send_control", "view_status"]},
                 "users": {"alice": ["admin"]}},
      "kdf": {"memory_cost": 65536, "time_cost": 3, "parallelism": 1, "output_bits": 256},
      "eu_region_allowlist": ["AT", "BE", ...],
      "clock_skew_seconds": 300,
      "forward": {"batch_size": 100, "backoff_initial": 1, "backoff_max": 60}
    }

Relative file paths resolve against the config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Any, Mapping, Optional

from ..alerting import DEFAULT_CLASS_MAP, AlertClassMap, RoutingRules, validate_class_map
from ..errors import ConfigError, ScgError
from ..model import DEFAULT_SKEW, EU_REGIONS, Zone, ZoneTag
from ..privacy.transforms import ZonePolicy
from ..store.crypto import KdfParams
from ..tls.policy import Policy, default_policy

DEFAULT_RETENTION = timedelta(days=30)


@dataclass
class BackendConfig:
    zone: Zone
    host: str = "127.0.0.1"
    port: int = 9443
    persistent: bool = True


@dataclass
class GatewayConfig:
    data_dir: Path
    backend: BackendConfig
    gateway_id: str = "scg"
    listen_host: str = "127.0.0.1"
    listen_port: int = 8883
    policy: Policy = field(default_factory=default_policy)
    certificate: Optional[Path] = None
    private_key: Optional[Path] = None
    trust_anchors: Optional[Path] = None
    dh_params: Optional[Path] = None
    dh_group_bits: int = 2048
    ecdh_curve: str = "prime256v1"
    zone_policies: dict = field(default_factory=dict)
    retention: timedelta = DEFAULT_RETENTION
    class_map: AlertClassMap = DEFAULT_CLASS_MAP
    routing: RoutingRules = field(default_factory=RoutingRules)
    role_actions: dict = field(default_factory=dict)
    users: dict = field(default_factory=dict)
    kdf: KdfParams = field(default_factory=KdfParams)
    eu_region_allowlist: frozenset = EU_REGIONS
    clock_skew: float = DEFAULT_SKEW
    batch_size: int = 100
    backoff_initial: float = 1.0
    backoff_max: float = 60.0

    def zone_policy(self, tag: ZoneTag) -> ZonePolicy:
        return self.zone_policies.get(ZoneTag(tag)) or ZonePolicy(zone=tag)

    def validate(self) -> None:
        """Startup refusal checks; raises ConfigError naming the first problem found."""
        problems = validate_class_map(self.class_map)
        if problems:
            raise ConfigError("invalid alert class map: " + ", ".join(p.value for p in problems))
        if self.backend.zone.tag is ZoneTag.PREMISES:
            raise ConfigError("backend zone must be external_operations or third_party")
        if self.backend.persistent and not self.backend.zone.in_region(self.eu_region_allowlist):
            raise ConfigError(
                f"backend region {self.backend.zone.region} is outside the allowed storage regions; "
                "persistent backends must store data inside the EU"
            )
        for name in ("certificate", "private_key", "trust_anchors", "dh_params"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"tls.{name} file {path} does not exist")
        for tag, zp in self.zone_policies.items():
            anon = zp.anonymization or {}
            hier = anon.get("hierarchy")
            if hier and not Path(hier).is_file():
                raise ConfigError(f"hierarchy file {hier} for zone {tag.value} does not exist")
        if self.backend.zone.tag is ZoneTag.THIRD_PARTY and not self.zone_policy(ZoneTag.THIRD_PARTY).anonymization:
            raise ConfigError("a third_party backend needs zone_policies.third_party.anonymization")
        if self.batch_size < 1:
            raise ConfigError("forward.batch_size must be at least 1")


def _path(base: Path, value) -> Optional[Path]:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def config_from_dict(data: Mapping[str, Any], base_dir: Path = Path(".")) -> GatewayConfig:
    try:
        return _build(data, Path(base_dir))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, ScgError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def _build(data: Mapping[str, Any], base: Path) -> GatewayConfig:
    if "data_dir" not in data:
        raise ConfigError("data_dir is required")
    b = data.get("backend", {})
    backend = BackendConfig(
        zone=Zone(b.get("zone", "external_operations"), b.get("region", "AT")),
        host=b.get("host", "127.0.0.1"),
        port=int(b.get("port", 9443)),
        persistent=bool(b.get("persistent", True)),
    )
    tls = data.get("tls", {})
    listen = data.get("listen", {})
    zone_policies = {}
    for tag, spec in data.get("zone_policies", {}).items():
        spec = dict(spec, zone=tag)
        anon = spec.get("anonymization")
        if anon and anon.get("hierarchy"):
            spec["anonymization"] = dict(anon, hierarchy=str(_path(base, anon["hierarchy"])))
        zone_policies[ZoneTag(tag)] = ZonePolicy.from_dict(spec)
    alerts = data.get("alerts", {})
    class_map = AlertClassMap.from_ranges(alerts["classes"]) if "classes" in alerts else DEFAULT_CLASS_MAP
    access = data.get("access", {})
    kdf_spec = data.get("kdf", {})
    fwd = data.get("forward", {})
    return GatewayConfig(
        data_dir=_path(base, data["data_dir"]),
        backend=backend,
        gateway_id=data.get("gateway_id", "scg"),
        listen_host=listen.get("host", "127.0.0.1"),
        listen_port=int(listen.get("port", 8883)),
        policy=default_policy().with_overrides(tls.get("policy")),
        certificate=_path(base, tls.get("certificate")),
        private_key=_path(base, tls.get("private_key")),
        trust_anchors=_path(base, tls.get("trust_anchors")),
        dh_params=_path(base, tls.get("dh_params")),
        dh_group_bits=int(tls.get("dh_group_bits", 2048)),
        ecdh_curve=tls.get("ecdh_curve", "prime256v1"),
        zone_policies=zone_policies,
        retention=timedelta(seconds=float(data.get("retention_seconds", DEFAULT_RETENTION.total_seconds()))),
        class_map=class_map,
        routing=RoutingRules.from_config(alerts.get("routing", {})),
        role_actions={role: list(actions) for role, actions in access.get("roles", {}).items()},
        users={user: list(roles) for user, roles in access.get("users", {}).items()},
        kdf=KdfParams(**kdf_spec),
        eu_region_allowlist=frozenset(data.get("eu_region_allowlist", EU_REGIONS)),
        clock_skew=float(data.get("clock_skew_seconds", DEFAULT_SKEW)),
        batch_size=int(fwd.get("batch_size", 100)),
        backoff_initial=float(fwd.get("backoff_initial", 1.0)),
        backoff_max=float(fwd.get("backoff_max", 60.0)),
    )


def load_config(path) -> GatewayConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data, path.parent)
