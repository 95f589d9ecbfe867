"""``scg`` command line.

Exit codes: 0 success, 1 check failed (rejected profile, broken log chain,
failed scenario), 2 no t-close generalization exists, 64 usage error,
65 unreadable or invalid input, 78 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError, Infeasible, ScgError
from .store.crypto import KEYPARAMS_FILE, unlock

EX_OK, EX_FAIL, EX_INFEASIBLE = 0, 1, 2
EX_USAGE, EX_DATAERR, EX_CONFIG = 64, 65, 78


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def _emit(args, payload: dict, text: str) -> None:
    if args.format == "json":
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))
    else:
        print(text)


def _keys(data_dir: Path):
    if not (data_dir / KEYPARAMS_FILE).exists():
        raise ConfigError(f"{data_dir} is not a gateway data directory (no {KEYPARAMS_FILE})")
    return unlock(data_dir)


# -- subcommands -------------------------------------------------------------

def cmd_serve(args) -> int:
    from .gateway.config import load_config
    from .gateway.service import run

    config = load_config(args.config)
    return run(config, ready=lambda addr: logging.getLogger("scg").info("listening on %s:%s", *addr[:2]))


def cmd_audit_tls(args) -> int:
    from .tls.policy import audit_profiles, default_policy, load_profiles, registry_profiles

    policy = default_policy()
    if args.policy:
        policy = policy.with_overrides(json.loads(Path(args.policy).read_text(encoding="utf-8")))
    profiles = registry_profiles() if args.registry else load_profiles(args.profiles)
    report = audit_profiles(profiles, policy)
    payload = report.to_dict()
    if args.registry:
        payload["accepted_suites"] = [e.profile.cipher_suite for e in report.entries if e.decision.accepted]
    if args.report_dir:
        from .report import audit_report
        payload["report_files"] = [str(p) for p in audit_report(report, args.report_dir)]
    _emit(args, payload, report.render_table())
    return EX_OK if report.all_accepted else EX_FAIL


def cmd_verify_log(args) -> int:
    from .store.seclog import SecurityLog

    data_dir = Path(args.data_dir)
    keys = _keys(data_dir)
    seclog = SecurityLog(data_dir, keys, sync=False)
    try:
        result = seclog.verify()
    finally:
        seclog.close()
    text = (f"chain intact: {result.entries} entries" if result.ok
            else f"chain BROKEN at seq {result.first_bad_seq}: {result.reason}")
    _emit(args, result.to_dict(), text)
    return EX_OK if result.ok else EX_FAIL


def cmd_anonymize(args) -> int:
    from .privacy.io import read_hierarchies, read_table, write_table
    from .privacy.tcloseness import PrivacyParams, anonymize

    qi = [c.strip() for c in args.qi.split(",") if c.strip()]
    table = read_table(args.input, qi, args.sensitive, args.kind)
    hierarchies = read_hierarchies(args.hierarchy)
    params = PrivacyParams(args.t, hierarchies, args.k, args.suppression_budget)
    try:
        result = anonymize(table, params)
    except Infeasible as exc:
        _emit(args, {"satisfied": False, "error": str(exc)}, f"infeasible: {exc}")
        return EX_INFEASIBLE
    write_table(result.table, args.output)
    payload = result.to_dict()
    payload["output"] = args.output
    if args.report_dir:
        from .report import anonymization_report
        payload["report_files"] = [str(p) for p in anonymization_report(result, args.report_dir)]
    levels = ", ".join(f"{k}={v}" for k, v in result.levels.items())
    _emit(args, payload, f"wrote {len(result.table.rows)} rows to {args.output} (levels {levels}; "
                         f"suppressed {result.suppressed}; max EMD {result.check.max_emd:.6g} <= t={args.t})")
    return EX_OK


def cmd_status(args) -> int:
    from .alerting import Dashboard
    from .gateway.service import DASHBOARD_FILE
    from .store.queue import QueueStore

    data_dir = Path(args.data_dir)
    keys = _keys(data_dir)
    with QueueStore(data_dir, keys, sync=False) as store:
        counts = store.counts()
    dash = data_dir / DASHBOARD_FILE
    alerts = Dashboard.read(dash, keys.blob)[-args.alerts:] if dash.exists() else []
    lines = [f"{k:<12} {v}" for k, v in counts.items()]
    lines.append(f"recent alerts ({len(alerts)}):")
    lines += [f"  #{a['seq']} {a['ts']} [{a['class']}] sev {a['severity']}: {a['event']}" for a in alerts]
    _emit(args, {"queue": counts, "alerts": alerts}, "\n".join(lines))
    return EX_OK


def cmd_simulate(args) -> int:
    from .sim import Scenario, run_scenario

    scenario = Scenario.load(args.scenario)
    report = run_scenario(scenario, data_dir=args.data_dir)
    payload = report.to_dict()
    if args.report_dir:
        from .report import simulation_report
        payload["report_files"] = [str(p) for p in simulation_report(report, scenario, args.report_dir)]
    lines = [f"{k:<22} {v}" for k, v in payload.items() if not isinstance(v, list)]
    lines += [f"  {r['kind']:<14} at {r['time']:>10.1f}s for {r['duration']:.1f}s, recovered in "
              f"{r['recovery_seconds'] if r['recovery_seconds'] is not None else 'never'}"
              for r in report.recovery_times]
    _emit(args, payload, "\n".join(lines))
    return EX_OK if report.passed else EX_FAIL


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scg", description="Storage communications gateway tools.")
    parser.add_argument("--log-level", default="WARNING", help="Python logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=func)
        return p

    def fmt(p):
        p.add_argument("--format", choices=("text", "json"), default="text")

    p = add("serve", cmd_serve, "Run the gateway service.")
    p.add_argument("--config", required=True, help="gateway JSON configuration")

    p = add("audit-tls", cmd_audit_tls, "Evaluate handshake profiles against the TLS policy.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--profiles", help="JSON list of handshake profiles")
    src.add_argument("--registry", action="store_true", help="audit every suite in the bundled registry")
    p.add_argument("--policy", help="JSON object of policy field overrides")
    p.add_argument("--report-dir", help="write CSV and PNG reports here")
    fmt(p)

    p = add("verify-log", cmd_verify_log, "Verify the security log hash chain.")
    p.add_argument("--data-dir", required=True)
    fmt(p)

    p = add("anonymize", cmd_anonymize, "Produce a t-close generalization of a CSV table.")
    p.add_argument("--input", required=True)
    p.add_argument("--qi", required=True, help="comma-separated quasi-identifier columns")
    p.add_argument("--sensitive", required=True)
    p.add_argument("--kind", choices=("categorical", "numeric"), default="categorical")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--suppression-budget", type=float, default=0.05)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--report-dir", help="write CSV and PNG reports here")
    fmt(p)

    p = add("status", cmd_status, "Show queue depths and recent alerts.")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--alerts", type=int, default=20, help="how many recent alerts to show")
    fmt(p)

    p = add("simulate", cmd_simulate, "Run a simulated site scenario.")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--data-dir", help="keep gateway state here instead of a temporary directory")
    p.add_argument("--report-dir", help="write CSV and PNG reports here")
    fmt(p)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EX_USAGE
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EX_USAGE
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"scg: configuration error: {exc}", file=sys.stderr)
        return EX_CONFIG
    except (ScgError, OSError, ValueError) as exc:
        print(f"scg: {exc}", file=sys.stderr)
        return EX_DATAERR


if __name__ == "__main__":
    sys.exit(main())
