"""Post-processing of a SimulationReport into the reported quantities and files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .engine import OUTCOMES, SimulationReport

PLACEMENT_OPS = ("undeploy", "migrate", "replicate")
ALL = "all"

LABELS_FILE = "labels.jsonl"
CYCLES_FILE = "cycles.csv"
SUMMARY_CSV = "summary.csv"
SUMMARY_JSON = "summary.json"
ARTIFACTS = (LABELS_FILE, CYCLES_FILE, SUMMARY_CSV, SUMMARY_JSON)


class MetricsError(ValueError):
    pass


def pearson(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Sample Pearson r; None when either series is constant."""
    if len(xs) != len(ys):
        raise MetricsError(f"series lengths differ ({len(xs)} vs {len(ys)})")
    n = len(xs)
    if n < 2:
        raise MetricsError("need at least two points")
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        return None
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass
class CycleSeries:
    """Per-cycle vectors; ``counts[cls][kind]`` and ``handovers[cls]`` include ALL."""

    cycles: list[int]
    epochs: list[int]
    classes: list[str]
    counts: dict[str, dict[str, list[int]]] = field(default_factory=dict)
    handovers: dict[str, list[int]] = field(default_factory=dict)
    instances: dict[str, list[int]] = field(default_factory=dict)
    live: dict[str, list[int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.cycles)

    @classmethod
    def from_report(cls, report: SimulationReport) -> "CycleSeries":
        groups = list(report.classes) + [ALL]
        s = cls([r.cycle for r in report.cycles], [r.epoch for r in report.cycles], list(report.classes))
        for g in groups:
            members = report.classes if g == ALL else [g]
            s.counts[g] = {k: [sum(r.counts[c][k] for c in members) for r in report.cycles] for k in OUTCOMES}
            s.handovers[g] = [sum(r.handovers[c] for c in members) for r in report.cycles]
            s.instances[g] = [sum(r.instances[c] for c in members) for r in report.cycles]
            s.live[g] = [sum(r.live[c] for c in members) for r in report.cycles]
        return s

    def placement_ops(self, group: str = ALL) -> list[int]:
        return [sum(v) for v in zip(*(self.counts[group][k] for k in PLACEMENT_OPS))]

    def check(self) -> list[str]:
        problems = []
        for g, per_kind in self.counts.items():
            for i in range(len(self)):
                total = sum(per_kind[k][i] for k in OUTCOMES)
                if total != self.live[g][i]:
                    problems.append(f"cycle {self.cycles[i]} {g}: {total} outcomes for {self.live[g][i]} agents")
        return problems


def ops_per_movement(series: CycleSeries) -> dict[str, dict[str, Optional[float]]]:
    out = {}
    for g in series.classes + [ALL]:
        moves = sum(series.handovers[g])
        out[g] = {
            k: (sum(series.counts[g][k]) / moves if moves else None) for k in PLACEMENT_OPS
        }
    return out


def service_usage(received_rate: float, servable_rate: float) -> float:
    if servable_rate <= 0:
        raise MetricsError("servable rate must be positive")
    return received_rate / servable_rate


def mean_usage(report: SimulationReport) -> dict[str, Optional[float]]:
    """Mean over (cycle, app) samples of received / servable, per class."""
    per: dict[str, list[float]] = {c: [] for c in report.classes}
    for _, _, cls, received, servable in report.usage_samples:
        per[cls].append(service_usage(received, servable))
    per[ALL] = [u for c in report.classes for u in per[c]]
    return {g: (math.fsum(v) / len(v) if v else None) for g, v in per.items()}


def avg_response_time(report: SimulationReport) -> dict[str, Optional[float]]:
    per: dict[str, list[float]] = {c: [] for c in report.classes}
    for _, _, cls, latency in report.response_samples:
        per[cls].append(latency)
    per[ALL] = [lat for _, _, _, lat in report.response_samples]
    return {g: (math.fsum(v) / len(v) if v else None) for g, v in per.items()}


@dataclass(frozen=True)
class Convergence:
    per_epoch: dict[int, int]
    non_converged: tuple[int, ...]

    @property
    def mean(self) -> Optional[float]:
        return sum(self.per_epoch.values()) / len(self.per_epoch) if self.per_epoch else None

    @property
    def max(self) -> Optional[int]:
        return max(self.per_epoch.values()) if self.per_epoch else None


def convergence_cycles(series: CycleSeries, group: str = ALL) -> Convergence:
    """Busy cycles from the start of each disturbed epoch until the first quiet one.

    An epoch counts as disturbed when it contains handovers; epoch 0 always
    counts because the initial placement is itself a disturbance.
    """
    ops = series.placement_ops(group)
    moved = series.handovers[ALL]
    by_epoch: dict[int, list[int]] = {}
    for i, e in enumerate(series.epochs):
        by_epoch.setdefault(e, []).append(i)
    per_epoch, stuck = {}, []
    for e, idx in sorted(by_epoch.items()):
        if e != series.epochs[0] and not any(moved[i] for i in idx):
            continue
        busy = 0
        for i in idx:
            if ops[i] == 0:
                break
            busy += 1
        else:
            stuck.append(e)
        per_epoch[e] = busy
    return Convergence(per_epoch, tuple(stuck))


def total_inhibited(report: SimulationReport) -> int:
    return sum(r.counts[c]["inhibited"] for r in report.cycles for c in report.classes)


def inhibited_reduction(report_a, report_b) -> float:
    """Percent fewer inhibited operations in ``report_b`` than in ``report_a``.

    Either argument may be a report or a plain count.
    """
    a = report_a if isinstance(report_a, (int, float)) else total_inhibited(report_a)
    b = report_b if isinstance(report_b, (int, float)) else total_inhibited(report_b)
    if a == 0:
        raise MetricsError("baseline has no inhibited operations")
    return (a - b) / a * 100.0


def _policy_label(report: SimulationReport) -> str:
    return "+".join(sorted(set(report.policies.values())))


def summarise(report: SimulationReport) -> dict:
    series = CycleSeries.from_report(report)
    opm = ops_per_movement(series)
    usage = mean_usage(report)
    resp = avg_response_time(report)
    rows = []
    for g in report.classes + [ALL]:
        conv = convergence_cycles(series, g)
        rows.append({
            "class": g,
            "avg_response_ms": resp.get(g),
            "usage": usage.get(g),
            "ops_per_movement": opm[g],
            "pearson_r": pearson(series.handovers[g], series.placement_ops(g)) if len(series) >= 2 else None,
            "convergence_mean": conv.mean,
            "convergence_max": conv.max,
            "non_converged_epochs": list(conv.non_converged),
            "total_inhibited": sum(series.counts[g]["inhibited"]),
            "totals": {k: sum(series.counts[g][k]) for k in OUTCOMES if k != "nop"},
            "handovers": sum(series.handovers[g]),
        })
    return {
        "scenario": report.scenario,
        "policy": _policy_label(report),
        "policies": dict(sorted(report.policies.items())),
        "memory_window": report.memory_window,
        "cycles": len(series),
        "dropped_flows": report.dropped_flows,
        "classes": rows,
    }


SUMMARY_COLUMNS = (
    "policy", "memory_window", "class", "avg_response_ms", "usage",
    "ops_per_movement_undeploy", "ops_per_movement_migrate", "ops_per_movement_replicate",
    "pearson_r", "convergence_mean", "convergence_max", "total_inhibited",
)


def _cell(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_cycles_csv(report: SimulationReport, path: Path) -> None:
    cols = ["cycle", "time", "epoch"]
    for c in report.classes:
        cols += [f"{c}_{k}" for k in OUTCOMES] + [f"{c}_handovers", f"{c}_instances"]
    cols += [f"{ALL}_{k}" for k in OUTCOMES] + [f"{ALL}_handovers", f"{ALL}_instances"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in report.cycles:
            row = [r.cycle, _cell(float(r.time)), r.epoch]
            for c in report.classes:
                row += [r.counts[c][k] for k in OUTCOMES] + [r.handovers[c], r.instances[c]]
            row += [sum(r.counts[c][k] for c in report.classes) for k in OUTCOMES]
            row += [sum(r.handovers.values()), sum(r.instances.values())]
            w.writerow(row)


def write_summary_csv(summary: dict, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in summary["classes"]:
            opm = row["ops_per_movement"]
            w.writerow([
                summary["policy"], summary["memory_window"], row["class"],
                _cell(row["avg_response_ms"]), _cell(row["usage"]),
                _cell(opm["undeploy"]), _cell(opm["migrate"]), _cell(opm["replicate"]),
                _cell(row["pearson_r"]), _cell(row["convergence_mean"]), _cell(row["convergence_max"]),
                row["total_inhibited"],
            ])


def write_artifacts(report: SimulationReport, out_dir: Path) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = summarise(report)
    (out_dir / LABELS_FILE).write_text(report.label_log(), encoding="utf-8")
    write_cycles_csv(report, out_dir / CYCLES_FILE)
    write_summary_csv(summary, out_dir / SUMMARY_CSV)
    (out_dir / SUMMARY_JSON).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def load_summary(run_dir: Path) -> dict:
    run_dir = Path(run_dir)
    missing = [f for f in (SUMMARY_JSON, CYCLES_FILE, LABELS_FILE) if not (run_dir / f).is_file()]
    if missing:
        raise FileNotFoundError(f"{run_dir}: missing {', '.join(missing)}")
    return json.loads((run_dir / SUMMARY_JSON).read_text(encoding="utf-8"))
