"""Command line entry point: ``pobk solve | bench | reorder | fetch``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import bench
from .reorder import bandwidth, rcm_order
from .solvers import SOLVERS, SolverConfig
from .sparse import apply_permutation, load_matrix_market, write_matrix_market
from .suitesparse import MatrixUnavailable, fetch, resolve_matrix


def _fmt_from_path(path: str) -> str:
    return "json" if path.lower().endswith(".json") else "csv"


def cmd_solve(args) -> int:
    path = resolve_matrix(args.matrix, offline=args.offline)
    A = load_matrix_market(path)
    f, x_star = bench.generate_rhs(A, args.rhs, args.seed)
    name = bench._matrix_name(str(args.matrix))
    spec = bench.ExperimentSpec([name], [args.solver], repetitions=1, seed=args.seed,
                                tol=args.tol, max_iters=args.max_iters)
    cfg = bench.solver_config(spec, name, args.solver, A.nrows)
    for key in ("k", "thr", "theta", "alpha", "sample_size"):
        val = getattr(args, key)
        if val is not None:
            setattr(cfg, key, min(val, A.nrows) if key == "k" else val)
    cfg.seed = args.seed
    cfg.__post_init__()
    report = SOLVERS[args.solver](A, f, cfg, x_star=x_star)
    print(f"matrix={name} m={A.nrows} nnz={A.nnz} solver={args.solver} k={cfg.k} "
          f"it={report.iterations} projections={report.projections} "
          f"time={report.wall_time:.4f}s rse={report.final_rse:.3e} "
          f"status={report.termination.value}")
    if args.out:
        ok = report.converged
        row = bench.ResultRow(
            name, A.nrows, A.nnz, A.nnz / A.nrows**2, args.solver, cfg.k, cfg.thr, cfg.theta,
            float(report.iterations) if ok else float("inf"),
            report.wall_time if ok else float("nan"), int(ok), 1, report.final_rse,
        )
        bench.emit_results([row], _fmt_from_path(args.out), args.out)
    if args.trace:
        bench.emit_trace(report, args.trace)
    return 0 if report.converged else 2


def cmd_bench(args) -> int:
    spec = bench.load_spec(args.spec)
    if args.offline:
        spec.offline = True
    rows = bench.run_experiment(spec)
    bench.emit_results(rows, _fmt_from_path(args.out), args.out)
    for r in rows:
        print(f"{r.matrix:>12} {r.solver:>7} k={r.k:<3} IT={bench._encode(r.mean_it):>10} "
              f"CPU={bench._encode(r.mean_cpu_s):>10} converged={r.converged}/{r.reps}")
    return 0


def cmd_reorder(args) -> int:
    A = load_matrix_market(resolve_matrix(args.matrix, offline=args.offline))
    t0 = time.perf_counter()
    p = rcm_order(A)
    elapsed = time.perf_counter() - t0
    At = apply_permutation(A, p, "both")
    if args.report:
        print(f"matrix={args.matrix} m={A.nrows} nnz={A.nnz}")
        print(f"bandwidth_before={bandwidth(A)}")
        print(f"bandwidth_after={bandwidth(At)}")
        print(f"rcm_seconds={elapsed:.6f}")
    if args.out:
        write_matrix_market(At, args.out)
    return 0


def cmd_fetch(args) -> int:
    for name in args.names:
        print(fetch(name))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pobk", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one system with one solver")
    s.add_argument("--matrix", required=True, help=".mtx path or collection name")
    s.add_argument("--solver", choices=sorted(SOLVERS), default="pobk")
    s.add_argument("--k", type=int)
    s.add_argument("--thr", type=float)
    s.add_argument("--theta", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--sample-size", dest="sample_size", type=int)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iters", dest="max_iters", type=lambda v: int(float(v)), default=500_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rhs", choices=["ones", "random"], default="ones")
    s.add_argument("--out", help="result row file (.csv or .json)")
    s.add_argument("--trace", help="write the outer_iter,rse trace here")
    s.add_argument("--offline", action="store_true")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run an experiment grid")
    b.add_argument("--spec", required=True, help="INI experiment file")
    b.add_argument("--out", required=True, help="results file (.csv or .json)")
    b.add_argument("--offline", action="store_true")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("reorder", help="RCM-reorder a matrix")
    r.add_argument("--matrix", required=True)
    r.add_argument("--report", action="store_true", help="print bandwidth before/after and RCM time")
    r.add_argument("--out", help="write the reordered matrix as .mtx")
    r.add_argument("--offline", action="store_true")
    r.set_defaults(func=cmd_reorder)

    fe = sub.add_parser("fetch", help="download collection matrices into the cache")
    fe.add_argument("names", nargs="+")
    fe.set_defaults(func=cmd_fetch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MatrixUnavailable, OSError, ValueError) as exc:
        print(f"pobk: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
