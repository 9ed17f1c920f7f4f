"""Execution of experiment matrices.

Layout of an output directory::

    config.toml            expanded copy of the config
    runs/<run_id>.jsonl    one record per run (header + one line per iteration)
    timing/<run_id>.json   wall times, kept apart so records stay reproducible
    failures.json          runs that raised, with the error message
    summary.csv            one row per run and iteration

``run_id`` is ``<problem>__<acquisition>__r<replication>``.  The seed of a
run is ``stable_hash(base_seed, problem, acquisition, replication)``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..engine import RunRecord, run
from ..errors import CkgError
from ..rng import stable_hash
from .config import serialize_config

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = (
    "run_id",
    "problem",
    "acquisition",
    "replication",
    "iteration",
    "best_feasible_posterior_value",
    "true_g0_at_recommendation",
    "true_feasible",
    "cumulative_evaluations",
)


def run_seed(base_seed, problem, acquisition, replication):
    return stable_hash(base_seed, problem, acquisition, replication)


def run_id(problem, acquisition, replication):
    return f"{problem}__{acquisition}__r{replication:03d}"


def _jobs(cfg):
    for cell in cfg.cells:
        for r in range(cell.replications):
            yield cell, r


def _one(args):
    cfg, cell, rep, out = args
    rid = run_id(cell.problem, cell.acquisition, rep)
    seed = run_seed(cfg.base_seed, cell.problem, cell.acquisition, rep)
    try:
        run(cfg.cell_problem(cell), cell.bo, seed,
            record_path=out / "runs" / f"{rid}.jsonl",
            timing_path=out / "timing" / f"{rid}.json")
    except (CkgError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return rid, f"{type(exc).__name__}: {exc}"
    return rid, None


def summary_rows(cfg, out):
    """Rows of ``summary.csv`` rebuilt from the run records on disk."""
    rows = []
    for cell, rep in _jobs(cfg):
        rid = run_id(cell.problem, cell.acquisition, rep)
        path = out / "runs" / f"{rid}.jsonl"
        if not path.exists():
            continue
        problem = cfg.cell_problem(cell)
        rec = RunRecord.read_jsonl(path)
        for it in rec.iterations:
            x = np.asarray(it.recommendation["x"], dtype=float)
            g = problem.true_values(x[None])[0]
            rows.append([
                rid, cell.problem, cell.acquisition, rep, it.iteration,
                repr(float(it.recommendation["value"])), repr(float(g[0])),
                int(bool(problem.feasible(x[None])[0])), it.evaluations,
            ])
    return rows


def write_summary(rows, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def run_matrix(cfg, output_dir=None, jobs=None):
    """Run every cell and replication; returns the number of failed runs."""
    out = Path(output_dir or cfg.output_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "timing").mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(serialize_config(cfg), encoding="utf-8")
    tasks = [(cfg, cell, r, out) for cell, r in _jobs(cfg)]
    jobs = jobs or cfg.jobs
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one, tasks))
    else:
        results = [_one(t) for t in tasks]
    failures = {rid: msg for rid, msg in results if msg is not None}
    for rid, msg in failures.items():
        log.error("run %s failed: %s", rid, msg)
    (out / "failures.json").write_text(
        json.dumps(failures, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    write_summary(summary_rows(cfg, out), out / "summary.csv")
    return len(failures)
