"""Experiment configuration files.

A config is a TOML document::

    [experiment]
    name = "acceptance"
    output_dir = "runs/acceptance"
    base_seed = 20240601
    jobs = 1

    [defaults]            # any BoConfig field; applies to every cell
    N = 25
    q = 1

    [defaults.sga]        # any SgaParams field
    restarts = 8

    [[cell]]              # one row of the matrix
    problem = "toy-1d"
    acquisition = "ckg"
    replications = 10
    n0 = 6                # cell-level BoConfig overrides
    noise_scale = 0.05    # optional: noise sd as a fraction of output range

    [problem.my-quad]     # optional custom problem
    lower = [-1.0]
    upper = [1.0]
    objective = "x1**2"
    constraints = ["0.2 - x1"]
    noise_sd = [0.01, 0.01]   # optional

Validation collects every problem before raising one :class:`ConfigError`,
each message naming the offending field.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from ..acquisition import AcquisitionParams
from ..engine import ACQUISITIONS, BoConfig
from ..errors import CkgError, ConfigError
from ..problems import BUILTIN, get_problem, make_problem
from ..solvers.outer import SgaParams

_BO_FIELDS = {f.name: f for f in dataclasses.fields(BoConfig)}
_SGA_FIELDS = {f.name for f in dataclasses.fields(SgaParams)}
_ACQ_FIELDS = {f.name for f in dataclasses.fields(AcquisitionParams)}
_CELL_KEYS = {"problem", "acquisition", "replications", "noise_scale"}
_EXPERIMENT_KEYS = {"name", "output_dir", "base_seed", "jobs"}
_PROBLEM_KEYS = {"lower", "upper", "objective", "constraints", "noise_sd"}


@dataclass(frozen=True)
class CellConfig:
    problem: str
    acquisition: str
    replications: int
    bo: BoConfig
    noise_scale: float | None = None

    @property
    def row_id(self):
        return f"{self.problem}/{self.acquisition}"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    output_dir: str
    base_seed: int
    jobs: int
    cells: tuple
    problems: dict = field(default_factory=dict)

    def problem(self, name):
        """Problem object for a cell, honouring custom definitions."""
        if name in self.problems:
            spec = self.problems[name]
            return make_problem(name, spec["lower"], spec["upper"], spec["objective"],
                                spec.get("constraints", ()), spec.get("noise_sd"))
        return get_problem(name)

    def cell_problem(self, cell):
        prob = self.problem(cell.problem)
        if cell.noise_scale is not None:
            prob = prob.with_noise_scale(cell.noise_scale)
        return prob


def _bo_kwargs(table, where, errors):
    out = {}
    for key, val in table.items():
        if key == "sga":
            if not isinstance(val, dict):
                errors.append(f"{where}.sga: must be a table")
                continue
            bad = set(val) - _SGA_FIELDS
            for k in sorted(bad):
                errors.append(f"{where}.sga.{k}: unknown field")
            out["sga"] = {k: v for k, v in val.items() if k not in bad}
        elif key == "acq_params":
            if not isinstance(val, dict):
                errors.append(f"{where}.acq_params: must be a table")
                continue
            bad = set(val) - _ACQ_FIELDS
            for k in sorted(bad):
                errors.append(f"{where}.acq_params.{k}: unknown field")
            out["acq_params"] = {k: v for k, v in val.items() if k not in bad}
        elif key in _BO_FIELDS and key != "acquisition":
            out[key] = val
        else:
            errors.append(f"{where}.{key}: unknown field")
    return out


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        if k in ("sga", "acq_params"):
            out[k] = {**base.get(k, {}), **v}
        else:
            out[k] = v
    return out


def _build_bo(kw, acquisition, where, errors):
    kw = dict(kw)
    try:
        sga = SgaParams(**kw.pop("sga", {}))
    except (CkgError, TypeError) as exc:
        errors.append(f"{where}.sga: {exc}")
        return None
    try:
        acq = AcquisitionParams(**kw.pop("acq_params", {}))
    except TypeError as exc:
        errors.append(f"{where}.acq_params: {exc}")
        return None
    missing = [name for name in ("n0", "N") if name not in kw]
    for name in missing:
        errors.append(f"{where}.{name}: missing field")
    if missing:
        return None
    for name, val in kw.items():
        if name in ("n0", "N", "q", "refit_every", "max_design_retries", "fit_restarts",
                    "inner_per_dim", "recommend_starts", "candidates_per_dim", "kg_R") \
                and (not isinstance(val, int) or isinstance(val, bool)):
            errors.append(f"{where}.{name}: must be an integer")
            return None
    try:
        return BoConfig(acquisition=acquisition, sga=sga, acq_params=acq, **kw)
    except (CkgError, TypeError) as exc:
        field_name = _guess_field(str(exc))
        errors.append(f"{where}.{field_name}: {exc}")
        return None


def _guess_field(message):
    head = message.split()[0] if message else ""
    return head if head in _BO_FIELDS else "config"


def _validate_problem(name, spec, errors):
    where = f"problem.{name}"
    if not isinstance(spec, dict):
        errors.append(f"{where}: must be a table")
        return
    for k in sorted(set(spec) - _PROBLEM_KEYS):
        errors.append(f"{where}.{k}: unknown field")
    for k in ("lower", "upper", "objective"):
        if k not in spec:
            errors.append(f"{where}.{k}: missing field")
    if all(k in spec for k in ("lower", "upper", "objective")):
        try:
            make_problem(name, spec["lower"], spec["upper"], spec["objective"],
                         spec.get("constraints", ()), spec.get("noise_sd"))
        except (CkgError, ValueError, TypeError) as exc:
            errors.append(f"{where}: {exc}")


def config_from_dict(doc):
    """Validate a parsed document; raises :class:`ConfigError` listing all issues."""
    errors = []
    for k in sorted(set(doc) - {"experiment", "defaults", "cell", "problem"}):
        errors.append(f"{k}: unknown section")
    exp = doc.get("experiment", {})
    for k in sorted(set(exp) - _EXPERIMENT_KEYS):
        errors.append(f"experiment.{k}: unknown field")
    name = exp.get("name", "experiment")
    output_dir = exp.get("output_dir", "runs")
    base_seed = exp.get("base_seed", 0)
    jobs = exp.get("jobs", 1)
    if not isinstance(base_seed, int) or isinstance(base_seed, bool) or base_seed < 0:
        errors.append("experiment.base_seed: must be a non-negative integer")
    if not isinstance(jobs, int) or isinstance(jobs, bool) or jobs < 1:
        errors.append("experiment.jobs: must be an integer >= 1")
    if not isinstance(name, str) or not isinstance(output_dir, str):
        errors.append("experiment.name/output_dir: must be strings")

    problems = doc.get("problem", {})
    if not isinstance(problems, dict):
        errors.append("problem: must be a table of tables")
        problems = {}
    for pname, spec in problems.items():
        if pname in BUILTIN:
            errors.append(f"problem.{pname}: shadows a built-in problem")
        _validate_problem(pname, spec, errors)

    defaults = _bo_kwargs(doc.get("defaults", {}), "defaults", errors)
    raw_cells = doc.get("cell", [])
    if not isinstance(raw_cells, list) or not raw_cells:
        errors.append("cell: at least one [[cell]] is required")
        raw_cells = []
    cells, seen = [], set()
    for j, raw in enumerate(raw_cells):
        where = f"cell[{j}]"
        if not isinstance(raw, dict):
            errors.append(f"{where}: must be a table")
            continue
        prob = raw.get("problem")
        acq = raw.get("acquisition")
        reps = raw.get("replications", 1)
        noise_scale = raw.get("noise_scale")
        if prob is None:
            errors.append(f"{where}.problem: missing field")
        elif prob not in BUILTIN and prob not in problems:
            errors.append(f"{where}.problem: unknown problem {prob!r}")
        if acq is None:
            errors.append(f"{where}.acquisition: missing field")
        elif acq not in ACQUISITIONS:
            errors.append(f"{where}.acquisition: unknown acquisition {acq!r}")
        if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
            errors.append(f"{where}.replications: must be an integer >= 1")
        if noise_scale is not None and (
            not isinstance(noise_scale, (int, float)) or noise_scale < 0
        ):
            errors.append(f"{where}.noise_scale: must be a number >= 0")
        overrides = _bo_kwargs(
            {k: v for k, v in raw.items() if k not in _CELL_KEYS}, where, errors
        )
        if prob is None or acq not in ACQUISITIONS:
            continue
        if (prob, acq) in seen:
            errors.append(f"{where}: duplicate row {prob}/{acq}")
        seen.add((prob, acq))
        bo = _build_bo(_merge(defaults, overrides), acq, where, errors)
        if bo is None or not isinstance(reps, int):
            continue
        cells.append(CellConfig(prob, acq, reps, bo,
                                None if noise_scale is None else float(noise_scale)))
    if errors:
        raise ConfigError(errors)
    # problem-dependent check: n0 >= d + 2
    cfg = ExperimentConfig(name, output_dir, base_seed, jobs, tuple(cells), dict(problems))
    for j, cell in enumerate(cells):
        d = cfg.problem(cell.problem).dim
        if cell.bo.n0 < d + 2:
            errors.append(f"cell[{j}].n0: must be >= d + 2 = {d + 2}")
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(path):
    """Read and validate a config file; see the module docstring."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from None
    return parse_config_text(text, str(path))


def parse_config_text(text, source="<string>"):
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"{source}: {exc}"]) from None
    return config_from_dict(doc)


def config_to_dict(cfg):
    """Fully expanded document; every cell carries all BoConfig fields."""
    cells = []
    for c in cfg.cells:
        bo = dataclasses.asdict(c.bo)
        bo.pop("acquisition")
        row = {"problem": c.problem, "acquisition": c.acquisition,
               "replications": c.replications}
        if c.noise_scale is not None:
            row["noise_scale"] = c.noise_scale
        row.update(bo)
        cells.append(row)
    doc = {
        "experiment": {"name": cfg.name, "output_dir": cfg.output_dir,
                       "base_seed": cfg.base_seed, "jobs": cfg.jobs},
        "cell": cells,
    }
    if cfg.problems:
        doc["problem"] = cfg.problems
    return doc


def serialize_config(cfg):
    """TOML text that parses back to an equal :class:`ExperimentConfig`."""
    return tomli_w.dumps(config_to_dict(cfg))
