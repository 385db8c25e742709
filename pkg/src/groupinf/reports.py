"""Report serialization: JSON plus flat CSV tables suitable for plotting.

CSV floats use '.' decimals and 17 significant digits so that float64
values round-trip losslessly for cross-run diffing.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .oracle import BenchmarkReport, SelectionReport


def fmt(x) -> str:
    """Lossless float formatting for CSV cells."""
    if isinstance(x, float) or isinstance(x, np.floating):
        return f"{float(x):.17g}"
    return str(x)


def _write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(fmt(cell) for cell in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_attribution_report(report: BenchmarkReport, outdir: str):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report.to_dict())
    _write_csv(out / "groups.csv",
               ["group_id", "anchor", "size", "first_order", "interaction",
                "total", "truth"],
               [(r.group_id, r.anchor, r.size, r.first_order, r.interaction,
                 r.total, r.truth) for r in report.records])
    return out / "report.json", out / "groups.csv"


def write_selection_report(report: SelectionReport, outdir: str):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report.to_dict())
    _write_csv(out / "selection.csv",
               ["method", "budget", "loss_mean", "loss_std", "entropy_mean",
                "entropy_std"],
               [(r.method, r.budget, r.loss_mean, r.loss_std, r.entropy_mean,
                 r.entropy_std) for r in report.records])
    paths = [out / "report.json", out / "selection.csv"]
    for method, rows in report.traces.items():
        trace_path = out / f"trace_{method}.csv"
        _write_csv(trace_path,
                   ["step", "chosen_index", "marginal", "cumulative_estimate",
                    "entropy"],
                   [(t.step, t.index, t.marginal, t.cumulative_estimate, t.entropy)
                    for t in rows])
        paths.append(trace_path)
    return paths


def write_kappa_matrix(matrix: np.ndarray, outdir: str):
    """Headerless C x C CSV; NaN marks undefined diagonal entries."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "kappa_matrix.csv"
    lines = [",".join(fmt(v) for v in row) for row in np.asarray(matrix)]
    path.write_text("\n".join(lines) + "\n")
    return path
