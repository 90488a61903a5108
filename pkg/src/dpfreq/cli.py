"""Command-line front end.

Exit codes: 0 ok, 2 usage error, 3 budget audit failure, 4 method infeasible
for the input (skipped).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench, fileio
from .data import SyntheticSpec, TrajectorySchema, generate, read_trajectories
from .query import WorkloadSpec, evaluate, generate_workload
from .sanitized import AuditError, InfeasibleError

EXIT_OK, EXIT_USAGE, EXIT_AUDIT, EXIT_INFEASIBLE = 0, 2, 3, 4

log = logging.getLogger("dpfreq")


def _extents(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _read_config(path: str) -> dict:
    """``key=value`` lines; '#' starts a comment."""
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def cmd_generate(args) -> int:
    conf = _read_config(args.config) if args.config else {}
    get = lambda name, default=None: (getattr(args, name) if getattr(args, name) is not None
                                      else conf.get(name, default))
    kind, d = get("kind"), get("d")
    if kind is None or d is None:
        args.parser.error("--kind and --d are required (flag or config file)")
    extents = get("extents")
    spec = SyntheticSpec(
        kind=kind, d=int(d), n_points=int(float(get("n", 10**6))),
        extents=_extents(extents) if isinstance(extents, str) else extents,
        variance=None if get("var") is None else float(get("var")),
        a=None if get("a") is None else float(get("a")),
        seed=int(get("seed", 0)),
    )
    m = generate(spec)
    fileio.write_matrix(m, args.output)
    sidecar = {k: v for k, v in vars(spec).items()}
    Path(f"{args.output}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s: extents=%s cells=%d total=%d", args.output, m.extents, m.nnz, m.total)
    return EXIT_OK


def cmd_ingest(args) -> int:
    schema = TrajectorySchema(args.stops, _extents(args.grid), _floats(args.bbox))
    m, report = read_trajectories(args.trajectories, schema)
    fileio.write_matrix(m, args.output)
    log.info("accepted %d trajectories, skipped %d", report.accepted, report.skipped)
    for problem in report.problems:
        log.warning(problem)
    return EXIT_OK


def cmd_sanitize(args) -> int:
    m = fileio.read_matrix(args.matrix)
    opts = dict(q=args.q, p=args.p, stop_threshold_multiplier=args.stop_multiplier,
                eps0_fraction=args.eps0_fraction, r=args.r, cell_cap=args.cell_cap)
    try:
        sm = bench.timed_sanitize(args.method, m, args.eps, args.seed, **opts)
    except InfeasibleError as exc:
        log.error("skipped %s: %s", args.method, exc)
        return EXIT_INFEASIBLE
    except AuditError as exc:
        log.error("%s", exc)
        return EXIT_AUDIT
    if not sm.ledger.within():
        sys.stderr.write(sm.ledger.dump())
        return EXIT_AUDIT
    out = args.output or f"{Path(args.matrix).with_suffix('')}.{args.method}.san"
    fileio.write_sanitized(sm, out)
    Path(f"{out}.ledger").write_text(sm.ledger.dump())
    log.info("wrote %s (%d partitions, spent %s) in %.3fs", out, len(sm),
             sm.ledger.summary(), sm.metadata["runtime_s"])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    m = fileio.read_matrix(args.matrix)
    sm = fileio.read_sanitized(args.sanitized)
    if sm.extents != m.extents:
        args.parser.error(f"extents differ: {sm.extents} vs {m.extents}")
    if args.workload == "coverage":
        if args.pct is None:
            args.parser.error("--workload coverage needs --pct")
        spec = WorkloadSpec("fixed_coverage", args.count, args.seed, args.pct / 100)
    else:
        spec = WorkloadSpec("random_shape_size", args.count, args.seed)
    ev = evaluate(sm, m, generate_workload(spec, m.extents), args.mre_floor)
    stem = args.output or str(Path(args.sanitized).with_suffix(""))
    Path(f"{stem}.queries.csv").write_text(fileio.format_query_csv(ev))
    row = dict(method=sm.metadata.get("method"), eps=sm.metadata.get("epsilon"), d=m.d,
               dataset=args.dataset or Path(args.matrix).stem, mean_mre=ev.mean_mre,
               median_mre=ev.median_mre, seed=sm.metadata.get("seed"))
    Path(f"{stem}.summary.csv").write_text(fileio.format_summary_csv([row]))
    print(f"{row['method']} eps={row['eps']} mean_mre={ev.mean_mre:.4f} median_mre={ev.median_mre:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    plan = bench.parse_plan(Path(args.plan).read_text())
    rows = bench.run_plan(plan, args.workers)
    notes = "".join(n + "\n" for n in bench.protocol_notes(plan))
    Path(args.output).write_text(
        notes + fileio.format_summary_csv(bench.aggregate(rows), bench.AGGREGATE_FIELDS))
    if args.runs:
        fields = ["dataset", "d", "method", "eps", "seed", "status", "mean_mre", "median_mre",
                  "runtime_s", "spent", "partitions", "reason"]
        Path(args.runs).write_text(notes + fileio.format_summary_csv(rows, fields))
    failed = sum(r["status"] == "failed" for r in rows)
    log.info("sweep done: %d runs, %d failed", len(rows), failed)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpfreq", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic matrix (COO text)")
    g.add_argument("--kind", choices=["gaussian", "zipf"])
    g.add_argument("--d", type=int, help="number of dimensions")
    g.add_argument("--n", type=float, help="number of points (default 1e6)")
    g.add_argument("--extents", help="comma-separated cells per dimension (default floor(n^(1/d)))")
    g.add_argument("--var", type=float, help="gaussian per-dimension variance, in cells^2")
    g.add_argument("--a", type=float, help="zipf exponent (> 1)")
    g.add_argument("--seed", type=int)
    g.add_argument("--config", help="key=value file providing any of the flags above")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("ingest", help="build an OD matrix from a trajectory CSV")
    i.add_argument("trajectories")
    i.add_argument("--stops", type=int, default=2)
    i.add_argument("--grid", default="1000,1000", help="lat_cells,lon_cells per stop")
    i.add_argument("--bbox", required=True, help="lat_min,lon_min,lat_max,lon_max")
    i.add_argument("-o", "--output", required=True)
    i.set_defaults(func=cmd_ingest)

    s = sub.add_parser("sanitize", help="publish a differentially private matrix")
    s.add_argument("matrix")
    s.add_argument("--method", required=True, choices=bench.METHODS)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--q", type=float, help="daf-homogeneity partitioning share (default 0.3)")
    s.add_argument("--p", type=int, help="daf-homogeneity candidate sets (default 8)")
    s.add_argument("--stop-multiplier", type=float,
                   help="daf stop threshold in noise std-devs (default 2, 0 disables)")
    s.add_argument("--eps0-fraction", type=float, help="eug/ebp share spent on the total (default 0.01)")
    s.add_argument("--r", type=float, help="eug query selectivity, if known")
    s.add_argument("--cell-cap", type=int, help="identity cell cap (default 1e8)")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_sanitize)

    e = sub.add_parser("evaluate", help="MRE of a sanitized matrix over a query workload")
    e.add_argument("matrix")
    e.add_argument("sanitized")
    e.add_argument("--workload", choices=["random", "coverage"], default="random")
    e.add_argument("--pct", type=float, help="coverage per dimension, in percent")
    e.add_argument("--count", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--mre-floor", type=float, default=1.0)
    e.add_argument("--dataset", help="dataset label for the summary row")
    e.add_argument("-o", "--output", help="output stem (default: sanitized file stem)")
    e.set_defaults(func=cmd_evaluate)

    w = sub.add_parser("sweep", help=f"run an experiment plan (workers: ${bench.WORKERS_ENV})")
    w.add_argument("plan")
    w.add_argument("-o", "--output", required=True)
    w.add_argument("--runs", help="also write the per-seed rows here")
    w.add_argument("--workers", type=int)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    sub = {a.dest: a for a in parser._actions}["command"].choices[args.command]
    args.parser = sub
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        sub.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
