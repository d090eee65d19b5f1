"""Metrics CSV rows and FCFS-normalised comparison tables."""

from __future__ import annotations

import csv
import io
import math

COLUMNS = ["policy", "seed", "core_id", "total_requests", "reissues", "served",
           "wait_mean", "wait_p50", "wait_p95", "row_hit_rate", "mr_starvation",
           "fairness_ratio", "cpi_proxy", "dram_cycles"]
METRICS = COLUMNS[3:]
KEY_COLUMNS = ["experiment", "policy", "seed", "core_id"]


def report_rows(report, experiment=None):
    """Raw (unformatted) dict rows: one per core, then the ``ALL`` row."""
    rows = []
    for m in report.rows():
        row = {"policy": report.policy, "seed": report.seed, "core_id": m.core_id,
               "total_requests": m.total_requests, "reissues": m.reissues, "served": m.served,
               "wait_mean": m.wait_mean, "wait_p50": m.wait_p50, "wait_p95": m.wait_p95,
               "row_hit_rate": m.row_hit_rate, "mr_starvation": m.mr_starvation,
               "fairness_ratio": m.fairness_ratio, "cpi_proxy": m.cpi_proxy,
               "dram_cycles": report.dram_cycles}
        if experiment is not None:
            row["experiment"] = experiment
        rows.append(row)
    return rows


def format_value(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return format(v, ".6g")
    if hasattr(v, "item"):
        return format_value(v.item())
    return str(v)


def to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_value(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, rows, columns):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv(rows, columns))


def _core_sort_key(core_id):
    return (1, 0) if core_id == "ALL" else (0, core_id)


def sort_rows(rows):
    return sorted(rows, key=lambda r: (r.get("experiment", ""), r["policy"], r["seed"],
                                       _core_sort_key(r["core_id"])))


def _divide(v, base):
    if v is None or base is None:
        return None
    if base == 0:
        return 1.0 if v == 0 else math.inf
    return v / base


def normalize(rows, baseline="FCFS"):
    """Divide every metric by the baseline policy's value in the same
    (experiment, seed, core) cell."""
    base = {(r.get("experiment"), r["seed"], r["core_id"]): r
            for r in rows if r["policy"] == baseline}
    out = []
    for r in rows:
        b = base.get((r.get("experiment"), r["seed"], r["core_id"]))
        if b is None:
            raise KeyError(f"no {baseline} row for {r.get('experiment')}/{r['seed']}/{r['core_id']}")
        n = {k: r[k] for k in KEY_COLUMNS if k in r}
        for m in METRICS:
            n[m] = _divide(r[m], b[m])
        out.append(n)
    return out
