"""Experiment grids: consistent right-hand sides, repeated solver runs,
and CSV/JSON result and trace files.

Experiment files are INI text::

    [experiment]
    matrices = ex29, data/jagmesh4.mtx
    solvers = pobk, grbk
    repetitions = 10
    seed = 0
    rhs = ones            ; or random
    tol = 1e-6
    max_iters = 500000
    trace_dir = traces    ; optional, one CSV per (matrix, solver, rep)

    [pobk]                ; per-solver SolverConfig overrides
    k = 5
    thr = 0.05

    [matrix:ex29]         ; per-matrix overrides, applied before solver ones
    k = 5
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Literal

import numpy as np

from .solvers import SOLVERS, SolveReport, SolverConfig, Termination
from .sparse import SparseMatrix, load_matrix_market, spmv
from .suitesparse import PREFERRED_K, canonical_name, resolve_matrix

log = logging.getLogger(__name__)

DEFAULT_K = 20
RESULT_FIELDS = (
    "matrix", "m", "nnz", "density", "solver", "k", "thr", "theta",
    "mean_it", "mean_cpu_s", "converged", "reps", "final_rse",
)
INF_TOKEN = "Inf"
NAN_TOKEN = "NAN"


def generate_rhs(A: SparseMatrix, mode: Literal["ones", "random"] = "ones", seed: int = 0):
    """Pick ``x*`` (all ones, or seeded uniform on [-1, 1]) and return ``(A x*, x*)``."""
    if A.nrows != A.ncols:
        raise ValueError("square matrix required")
    if mode == "ones":
        x_star = np.ones(A.ncols)
    elif mode in ("random", "seeded_random"):
        x_star = np.random.default_rng(seed).uniform(-1.0, 1.0, A.ncols)
    else:
        raise ValueError(f"unknown rhs mode {mode!r}")
    return spmv(A, x_star), x_star


@dataclass
class ExperimentSpec:
    matrices: list
    solvers: list
    overrides: dict = field(default_factory=dict)  # solver -> {field: value}
    matrix_overrides: dict = field(default_factory=dict)  # matrix -> {field: value}
    repetitions: int = 10
    seed: int = 0
    rhs: str = "ones"
    tol: float = 1e-6
    max_iters: int = 500_000
    trace_dir: str | None = None
    offline: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.matrices or not self.solvers:
            raise ValueError("need at least one matrix and one solver")
        unknown = set(self.solvers) - set(SOLVERS)
        if unknown:
            raise ValueError(f"unknown solvers {sorted(unknown)}")


_CONFIG_TYPES = {f.name: f.type for f in fields(SolverConfig)}


def _coerce(key: str, value: str):
    if key in ("k", "max_iters", "sample_size", "seed", "repetitions"):
        return int(float(value))
    if key == "weights":
        return np.array([float(v) for v in value.replace(",", " ").split()])
    return float(value)


def load_spec(path) -> ExperimentSpec:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path) as fh:
        parser.read_file(fh)
    if "experiment" not in parser:
        raise ValueError(f"{path}: missing [experiment] section")
    ex = parser["experiment"]
    split = lambda s: [t.strip() for t in s.replace("\n", ",").split(",") if t.strip()]
    spec = ExperimentSpec(
        matrices=split(ex.get("matrices", "")),
        solvers=split(ex.get("solvers", "")),
        repetitions=ex.getint("repetitions", 10),
        seed=ex.getint("seed", 0),
        rhs=ex.get("rhs", "ones"),
        tol=ex.getfloat("tol", 1e-6),
        max_iters=int(ex.getfloat("max_iters", 500_000)),
        trace_dir=ex.get("trace_dir"),
        offline=ex.getboolean("offline", False),
    )
    for section in parser.sections():
        if section == "experiment":
            continue
        values = {}
        for key, raw in parser[section].items():
            if key not in _CONFIG_TYPES:
                raise ValueError(f"{path}: [{section}] unknown key {key!r}")
            values[key] = _coerce(key, raw)
        if section.startswith("matrix:"):
            spec.matrix_overrides[section.split(":", 1)[1].strip()] = values
        elif section in SOLVERS:
            spec.overrides[section] = values
        else:
            raise ValueError(f"{path}: unknown section [{section}]")
    return spec


@dataclass
class ResultRow:
    matrix: str
    m: int
    nnz: int
    density: float  # nnz / m^2
    solver: str
    k: int
    thr: float
    theta: float
    mean_it: float
    mean_cpu_s: float
    converged: int
    reps: int
    final_rse: float


def _matrix_name(spec: str) -> str:
    p = Path(spec)
    name = p.name
    for suffix in (".gz", ".mtx"):
        name = name.removesuffix(suffix)
    return name


def solver_config(spec: ExperimentSpec, matrix: str, solver: str, m: int) -> SolverConfig:
    values = {"tol": spec.tol, "max_iters": spec.max_iters}
    values["k"] = PREFERRED_K.get(canonical_name(matrix), DEFAULT_K)
    values.update(spec.matrix_overrides.get(matrix, {}))
    values.update(spec.overrides.get(solver, {}))
    values["k"] = min(values["k"], m)
    return SolverConfig(**values)


def run_cell(A, f, x_star, name: str, solver: str, cfg: SolverConfig, reps: int,
             trace_dir=None) -> ResultRow:
    its, cpu, finals = [], [], []
    ok = 0
    for rep in range(reps):
        run_cfg = SolverConfig(**{**asdict(cfg), "seed": cfg.seed + rep})
        report = SOLVERS[solver](A, f, run_cfg, x_star=x_star)
        if report.termination is Termination.CONVERGED:
            ok += 1
        its.append(report.iterations)
        cpu.append(report.wall_time)
        finals.append(report.final_rse)
        if trace_dir is not None:
            emit_trace(report, Path(trace_dir) / f"{name}_{solver}_rep{rep}.csv")
    all_ok = ok == reps
    m = A.nrows
    return ResultRow(
        name, m, A.nnz, A.nnz / (m * m), solver, cfg.k, cfg.thr, cfg.theta,
        float(np.mean(its)) if all_ok else math.inf,
        float(np.mean(cpu)) if all_ok else math.nan,
        ok, reps, float(np.mean(finals)),
    )


def run_experiment(spec: ExperimentSpec,
                   loader: Callable[[str], SparseMatrix] | None = None) -> list[ResultRow]:
    """Every (matrix, solver) cell, ``spec.repetitions`` runs each.

    Run ``r`` uses seed ``spec.seed + r``. A cell whose runs do not all
    converge reports Inf iterations and NAN time; a cell that raises is
    logged and reported the same way, never aborting the grid.
    """
    if loader is None:
        loader = lambda s: load_matrix_market(resolve_matrix(s, offline=spec.offline))
    rows = []
    for mspec in spec.matrices:
        name = _matrix_name(mspec)
        try:
            A = loader(mspec)
            f, x_star = generate_rhs(A, spec.rhs, spec.seed)
        except Exception as exc:  # noqa: BLE001 - grid keeps going
            log.error("matrix %s unavailable: %s", mspec, exc)
            for solver in spec.solvers:
                rows.append(ResultRow(name, 0, 0, math.nan, solver, 0, math.nan, math.nan,
                                      math.inf, math.nan, 0, spec.repetitions, math.nan))
            continue
        for solver in spec.solvers:
            cfg = solver_config(spec, name, solver, A.nrows)
            cfg.seed = spec.seed
            t0 = time.perf_counter()
            try:
                row = run_cell(A, f, x_star, name, solver, cfg, spec.repetitions, spec.trace_dir)
            except Exception as exc:  # noqa: BLE001
                log.error("%s on %s failed: %s", solver, name, exc)
                m = A.nrows
                row = ResultRow(name, m, A.nnz, A.nnz / (m * m), solver, cfg.k, cfg.thr,
                                cfg.theta, math.inf, math.nan, 0, spec.repetitions, math.nan)
            log.info("%s/%s done in %.2fs", name, solver, time.perf_counter() - t0)
            rows.append(row)
    return rows


def _encode(v):
    if isinstance(v, float):
        if math.isnan(v):
            return NAN_TOKEN
        if math.isinf(v):
            return INF_TOKEN if v > 0 else "-" + INF_TOKEN
        return repr(v)
    return v


def _decode(key: str, v):
    if key in ("matrix", "solver"):
        return str(v)
    if key in ("m", "nnz", "k", "converged", "reps"):
        return int(v)
    if v == NAN_TOKEN:
        return math.nan
    if v == INF_TOKEN:
        return math.inf
    if v == "-" + INF_TOKEN:
        return -math.inf
    return float(v)


def emit_results(rows, fmt: Literal["csv", "json"], path) -> Path:
    """Write result rows; Inf and NaN become the literal strings "Inf"/"NAN"."""
    if not rows:
        raise ValueError("no rows to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = [{k: _encode(v) for k, v in asdict(r).items()} for r in rows]
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
            w.writeheader()
            w.writerows(records)
    elif fmt == "json":
        path.write_text(json.dumps(records, indent=1) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def read_results(path) -> list[ResultRow]:
    path = Path(path)
    if path.suffix == ".json":
        records = json.loads(path.read_text())
    else:
        with open(path, newline="") as fh:
            records = list(csv.DictReader(fh))
    return [ResultRow(**{k: _decode(k, r[k]) for k in RESULT_FIELDS}) for r in records]


def emit_trace(report: SolveReport, path) -> Path:
    """``outer_iter,rse`` rows, one per recorded iteration (initial included)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outer_iter", "rse"])
        for i, e in enumerate(report.rse_trace):
            w.writerow([i, repr(float(e))])
    return path
