"""CSV tables and PNG figures for the ``--report-dir`` option of the CLI."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

from matplotlib.figure import Figure

from .privacy.tcloseness import AnonymizationResult
from .sim import FaultKind, Scenario, ScenarioReport
from .tls.policy import AuditReport, Violation

_FAULT_COLORS = {
    FaultKind.GATEWAY_CRASH: "tab:red",
    FaultKind.LINK_DROP: "tab:orange",
    FaultKind.BACKEND_DOWN: "tab:purple",
}


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _save(fig: Figure, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def audit_report(report: AuditReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(e.profile.cipher_suite, e.profile.protocol_version.value,
             "accept" if e.decision.accepted else "reject", " ".join(v.name for v in e.decision.violations))
            for e in report.entries]
    files = [write_csv(out / "audit.csv", ("cipher_suite", "version", "verdict", "violations"), rows)]
    counts = report.violation_counts()
    files.append(write_csv(out / "audit_violations.csv", ("violation", "profiles"), counts.items()))

    fig = Figure(figsize=(8, 4.5))
    ax = fig.add_subplot()
    labels = [v.name for v in Violation]
    ax.bar(labels, [counts[v.value] for v in Violation], color="tab:blue")
    ax.set_ylabel("rejected profiles")
    ax.set_title(f"{report.accepted} of {report.evaluated} profiles accepted")
    files.append(_save(fig, out / "audit_violations.png"))
    return files


def simulation_report(report: ScenarioReport, scenario: Scenario, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = report.to_dict()
    files = [
        write_csv(out / "simulate_summary.csv", ("metric", "value"),
                  [(k, v) for k, v in summary.items() if not isinstance(v, list)]),
        write_csv(out / "simulate_faults.csv", ("kind", "time", "duration", "recovery_seconds"),
                  [(r["kind"], r["time"], r["duration"], r["recovery_seconds"]) for r in report.recovery_times]),
        write_csv(out / "simulate_samples.csv", ("time_s", "gateway_pending", "device_unacked", "sink_unique"),
                  report.samples),
    ]

    fig = Figure(figsize=(9, 4.5))
    ax = fig.add_subplot()
    t = [s[0] / 3600 for s in report.samples]
    ax.plot(t, [s[1] if s[1] is not None else float("nan") for s in report.samples], label="gateway pending")
    ax.plot(t, [s[2] for s in report.samples], label="device unacked")
    seen = set()
    for f in scenario.faults:
        label = f.kind.value if f.kind not in seen else None
        seen.add(f.kind)
        ax.axvspan(f.time / 3600, f.end / 3600, color=_FAULT_COLORS[f.kind], alpha=0.2, label=label)
    ax.set_xlabel("simulated time (h)")
    ax.set_ylabel("messages")
    verdict = "meets" if report.meets_target else "misses"
    ax.set_title(f"uptime {report.uptime_fraction:.6f} {verdict} target {report.uptime_target}, lost {report.lost}")
    ax.legend(loc="upper right")
    files.append(_save(fig, out / "simulate_backlog.png"))
    return files


def anonymization_report(result: AnonymizationResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_class = result.check.per_class
    files = [
        write_csv(out / "anonymize_classes.csv", (*result.table.quasi_identifiers, "emd"),
                  [(*key, f"{d:.12g}") for key, d in per_class]),
        write_csv(out / "anonymize_levels.csv", ("attribute", "level"), result.levels.items()),
    ]
    fig = Figure(figsize=(8, 4.5))
    ax = fig.add_subplot()
    ax.bar(range(len(per_class)), [d for _, d in per_class], color="tab:green")
    ax.axhline(result.check.t, color="tab:red", linestyle="--", label=f"t = {result.check.t}")
    ax.set_xlabel("equivalence class")
    ax.set_ylabel("EMD to table distribution")
    ax.legend()
    files.append(_save(fig, out / "anonymize_emd.png"))
    return files
