"""Write a ScenarioReport to disk as JSON and CSV files.

Floats are written with fixed precision so reruns with the same inputs
produce byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import astuple, fields
from pathlib import Path

from .outage import JOURNAL_HEADER
from .simulation import IntervalRecord, ScenarioReport, WindowRow

CSV_FILES = ("availability.csv", "power_temp_util.csv", "migrations.csv", "training_curve.csv",
             "journal.csv", "sbox.csv")
SBOX_HEADER = ("interval", "cluster", "member_count", "reserve_cpu", "reserve_mem", "reserve_bw", "placements")


class ReportError(OSError):
    pass


def _cell(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.6f}"
    return str(value)


def _csv(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return out.getvalue()


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def render(report: ScenarioReport) -> dict[str, str]:
    """File name -> content for every report file."""
    files = {"summary.json": json.dumps(_clean(report.summary()), indent=2, sort_keys=True) + "\n"}
    files["availability.csv"] = _csv([f.name for f in fields(WindowRow)], (astuple(w) for w in report.windows))
    files["power_temp_util.csv"] = _csv([f.name for f in fields(IntervalRecord)],
                                        (astuple(r) for r in report.series))
    files["migrations.csv"] = _csv(("time", "vm_id", "source", "dest", "downtime_min", "kind"),
                                   ((e.time, e.vm_id, e.source, e.dest, e.downtime_min, e.kind)
                                    for e in report.events))
    curve_rows = []
    for trained_at, tr in report.trainings:
        for g, (err, p) in enumerate(zip(tr.best_rmse_curve, tr.probability_trajectory)):
            curve_rows.append((trained_at, g, float(err), float(p[0]), float(p[1]), float(p[2])))
    files["training_curve.csv"] = _csv(("trained_at", "generation", "best_rmse", "P1", "P2", "P3"), curve_rows)
    files["journal.csv"] = _csv(JOURNAL_HEADER, report.journal)
    files["sbox.csv"] = _csv(SBOX_HEADER, report.clusters)
    return files


def emit_reports(report: ScenarioReport, out_dir, formats=("csv", "json")) -> list[Path]:
    formats = set(formats)
    unknown = formats - {"csv", "json"}
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in render(report).items():
            kind = name.rsplit(".", 1)[1]
            if kind not in formats:
                continue
            path = out / name
            path.write_text(text)
            written.append(path)
    except OSError as exc:
        raise ReportError(f"cannot write reports to {out}: {exc}") from exc
    return written
