"""Regret tables from a finished experiment directory.

Regret is ``g_0(x_hat) - g_0(grid optimum)`` with the true objective.  Only
recommendations that are truly feasible enter the regret statistics;
infeasible ones are counted in their own column.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from pathlib import Path

import numpy as np
from scipy import stats

from ..errors import NoDataError
from ..problems import grid_oracle
from .config import parse_config

TSV_COLUMNS = (
    "problem", "acquisition", "iteration", "n_feasible", "n_infeasible",
    "mean_regret", "ci95_halfwidth", "median_regret",
)


def t_interval(values, level=0.95):
    """Mean and t-based half-width; the half-width is NaN for fewer than 2 values."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    mean = float(v.mean())
    if v.size < 2:
        return mean, float("nan")
    half = stats.t.ppf(0.5 + level / 2.0, v.size - 1) * v.std(ddof=1) / np.sqrt(v.size)
    return mean, float(half)


def read_summary(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def regret_table(rows, optimum):
    """Aggregate summary rows; ``optimum`` maps problem name to the oracle value."""
    groups = defaultdict(lambda: {"regret": [], "infeasible": 0})
    for r in rows:
        key = (r["problem"], r["acquisition"], int(r["iteration"]))
        if int(r["true_feasible"]):
            groups[key]["regret"].append(
                float(r["true_g0_at_recommendation"]) - optimum[r["problem"]]
            )
        else:
            groups[key]["infeasible"] += 1
    table = []
    for key in sorted(groups):
        g = groups[key]
        mean, half = t_interval(g["regret"])
        med = float(np.median(g["regret"])) if g["regret"] else float("nan")
        table.append((*key, len(g["regret"]), g["infeasible"], mean, half, med))
    return table


def _fmt(v):
    return "nan" if isinstance(v, float) and np.isnan(v) else (
        f"{v:.6g}" if isinstance(v, float) else str(v)
    )


def report(output_dir, resolution=401):
    """Write ``report.md`` and ``regret.tsv`` into ``output_dir``; returns the table."""
    out = Path(output_dir)
    summary = out / "summary.csv"
    if not summary.exists():
        raise NoDataError(f"{out}: no summary.csv found")
    rows = read_summary(summary)
    if not rows:
        raise NoDataError(f"{out}: summary.csv has no completed runs")
    cfg = parse_config(out / "config.toml")
    optimum = {}
    for name in sorted({r["problem"] for r in rows}):
        optimum[name] = grid_oracle(cfg.problem(name), resolution)[1]
    table = regret_table(rows, optimum)

    buf = io.StringIO()
    buf.write("\t".join(TSV_COLUMNS) + "\n")
    for row in table:
        buf.write("\t".join(_fmt(v) for v in row) + "\n")
    (out / "regret.tsv").write_text(buf.getvalue(), encoding="utf-8")

    final = {}
    for row in table:
        final[(row[0], row[1])] = row
    md = [f"# Results: {cfg.name}", "",
          "Regret is true g0 at the recommendation minus the grid optimum; "
          "infeasible recommendations are excluded from it and counted separately.", "",
          "| problem | acquisition | final iteration | feasible | infeasible "
          "| mean regret | 95% CI half-width | median regret |",
          "|---|---|---|---|---|---|---|---|"]
    for (p, a), row in sorted(final.items()):
        md.append("| " + " | ".join(_fmt(v) for v in row) + " |")
    md.append("")
    md.append("| problem | grid optimum |")
    md.append("|---|---|")
    for p, v in sorted(optimum.items()):
        md.append(f"| {p} | {_fmt(v)} |")
    (out / "report.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    return table
