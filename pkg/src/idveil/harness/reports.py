"""Report assembly and emission: grouped (mean, std) tables over evaluation
records, the perturbation-budget sweep, and the design-ladder ablation grid.

Every report cell keeps the record ids it aggregated, so any number in any
table can be traced back to, and recomputed from, its contributing rows.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from idveil.backends.base import BackendBundle
from idveil.core import ArgumentError
from idveil.harness.pipeline import (
    BASELINE_METHOD,
    ExperimentPlan,
    evaluate,
    run_edits,
    run_protection,
)
from idveil.metrics import METRIC_ORDER, aggregate

# which optimization components each design uses (the ablation grid columns)
DESIGN_COMPONENTS = {
    "cvl": {"recognizer": True, "codec": False, "pixel": False, "feature": False},
    "cvl_d": {"recognizer": True, "codec": True, "pixel": False, "feature": False},
    "cvl_dp": {"recognizer": True, "codec": True, "pixel": True, "feature": False},
    "facelock": {"recognizer": True, "codec": True, "pixel": False, "feature": True},
}
COMPONENT_COLUMNS = ("recognizer", "codec", "pixel", "feature")


@dataclass(frozen=True)
class Report:
    """Grouped metric table: one row per group key, cells in metric order."""

    grouping: tuple
    rows: tuple
    extra_columns: tuple = ()

    def row_for(self, **keys) -> dict:
        for row in self.rows:
            if all(row["keys"].get(k) == v for k, v in keys.items()):
                return row
        raise KeyError(f"no report row matching {keys}")


def _row_sort_key(keys: dict, grouping) -> tuple:
    out = []
    for g in grouping:
        v = keys[g]
        if g == "method":
            out.append((0 if v == BASELINE_METHOD else 1, str(v)))
        elif isinstance(v, (int, float)):
            out.append((0, float(v)))
        else:
            out.append((0, str(v)))
    return tuple(out)


def make_report(records, group_by=("method",), extra=None) -> Report:
    """Aggregate evaluation records into a grouped (mean, std) table.

    ``extra`` maps a group-key tuple to additional column values (used by the
    ablation grid for its component checklist).
    """
    agg = aggregate([r.to_row() for r in records], group_by=group_by)
    rows = []
    for key, cells in agg.items():
        keys = dict(zip(group_by, key))
        row = {"keys": keys, "metrics": cells}
        if extra and key in extra:
            row["extra"] = dict(extra[key])
        rows.append(row)
    rows.sort(key=lambda row: _row_sort_key(row["keys"], group_by))
    extra_columns = ()
    if extra:
        first = next(iter(extra.values()))
        extra_columns = tuple(first.keys())
    return Report(grouping=tuple(group_by), rows=tuple(rows), extra_columns=extra_columns)


def _fmt_cell(v) -> str:
    return "" if v is None else f"{v:.3f}"


def _header(report: Report) -> list:
    cols = list(report.grouping) + list(report.extra_columns)
    for name in METRIC_ORDER:
        cols += [f"{name}_mean", f"{name}_std"]
    return cols


def _data_rows(report: Report, missing="") -> list:
    out = []
    for row in report.rows:
        cells = [str(row["keys"][g]) for g in report.grouping]
        cells += [str(row.get("extra", {}).get(c, "")) for c in report.extra_columns]
        for name in METRIC_ORDER:
            cell = row["metrics"][name]
            cells.append(_fmt_cell(cell["mean"]) or missing)
            cells.append(_fmt_cell(cell["std"]) or missing)
        out.append(cells)
    return out


def emit_report(report: Report, fmt: str, path: str | Path) -> Path:
    """Write a report as csv, json, or markdown; stable column order
    (group keys, then mean/std pairs in the fixed metric order)."""
    path = Path(path)
    if fmt == "csv":
        lines = [",".join(_header(report))]
        for cells in _data_rows(report):
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif fmt == "json":
        payload = {
            "grouping": list(report.grouping),
            "extra_columns": list(report.extra_columns),
            "rows": [
                {
                    "keys": row["keys"],
                    "metrics": row["metrics"],
                    **({"extra": row["extra"]} if "extra" in row else {}),
                }
                for row in report.rows
            ],
        }
        path.write_text(
            json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="utf-8",
        )
    elif fmt == "markdown":
        header = _header(report)
        lines = ["| " + " | ".join(header) + " |",
                 "| " + " | ".join("---" for _ in header) + " |"]
        for cells in _data_rows(report, missing="-"):
            lines.append("| " + " | ".join(cells) + " |")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ArgumentError(f"unknown report format {fmt!r}; use csv, json, or markdown")
    return path


def report_from_json(path: str | Path) -> Report:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = []
    for row in payload["rows"]:
        r = {"keys": row["keys"], "metrics": row["metrics"]}
        if "extra" in row:
            r["extra"] = row["extra"]
        rows.append(r)
    return Report(
        grouping=tuple(payload["grouping"]),
        rows=tuple(rows),
        extra_columns=tuple(payload["extra_columns"]),
    )


def _run_subplan(plan: ExperimentPlan, bundle: BackendBundle, out_dir: Path):
    run_protection(plan, bundle, out_dir)
    run_edits(plan, bundle, out_dir)
    return evaluate(plan, bundle, out_dir)


def budget_sweep(
    plan: ExperimentPlan,
    bundle: BackendBundle,
    out_dir: str | Path,
    budgets=(0.01, 0.02, 0.03, 0.04, 0.05),
    method: str = "facelock",
) -> Report:
    """Rerun the protect/edit/evaluate pipeline at each perturbation budget
    and report one row per budget (the defense rows only; each budget's
    baseline records stay available in its subdirectory)."""
    out = Path(out_dir)
    rows = []
    for budget in budgets:
        sub_out = out / f"budget_{budget}"
        sub_plan = dataclasses.replace(
            plan,
            methods=(method,),
            attack=dataclasses.replace(plan.attack, epsilon=float(budget)),
        )
        records = _run_subplan(sub_plan, bundle, sub_out)
        defense = [r for r in records if r.method == method]
        agg = aggregate([r.to_row() for r in defense], group_by=("method",))
        cells = agg[(method,)]
        rows.append({"keys": {"budget": float(budget)}, "metrics": cells})
    rows.sort(key=lambda row: row["keys"]["budget"])
    return Report(grouping=("budget",), rows=tuple(rows))


def design_ablation(
    plan: ExperimentPlan,
    bundle: BackendBundle,
    out_dir: str | Path,
    designs=("cvl", "cvl_d", "cvl_dp", "facelock"),
) -> Report:
    """Run the design ladder and report metrics plus the component checklist
    (recognizer / codec / pixel / feature) per design."""
    unknown = [d for d in designs if d not in DESIGN_COMPONENTS]
    if unknown:
        raise ArgumentError(f"unknown designs: {unknown}; known: {sorted(DESIGN_COMPONENTS)}")
    sub_plan = dataclasses.replace(plan, methods=tuple(designs))
    records = _run_subplan(sub_plan, bundle, Path(out_dir))
    defense = [r for r in records if r.method != BASELINE_METHOD]
    extra = {
        (d,): {c: ("yes" if DESIGN_COMPONENTS[d][c] else "no") for c in COMPONENT_COLUMNS}
        for d in designs
    }
    report = make_report(defense, group_by=("method",), extra=extra)
    # keep ladder order rather than alphabetical
    order = {d: i for i, d in enumerate(designs)}
    rows = sorted(report.rows, key=lambda row: order[row["keys"]["method"]])
    return Report(grouping=("method",), rows=tuple(rows), extra_columns=COMPONENT_COLUMNS)
