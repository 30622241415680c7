"""Command line front end.

Exit codes: 0 success, 1 kernel validation failed, 2 configuration or input
error, 3 disconnected instance with ``--require-connected``, 4 solver failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .experiment import ConfigError, ExperimentConfig, run_experiment
from .geometry import GeometryError, ManifoldSpec
from .graph import BACKENDS, GraphError, assemble_affinity, check_s_connected
from .kernels import PROFILE_IDS, ProfileError, get_profile, validate_profile
from .solver import (SingularSystemError, SolverError, assemble_graph_laplacian, assemble_wnll, default_mu,
                     el_mu, solve)

EXIT_OK = 0
EXIT_INVALID_KERNEL = 1
EXIT_CONFIG = 2
EXIT_DISCONNECTED = 3
EXIT_SOLVER = 4


def _print_json(obj, out=None):
    text = io.dumps_report(obj)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _load_instance(args):
    spec = ManifoldSpec(args.manifold, args.scale) if args.manifold else None
    cloud = io.load_cloud(args.cloud, spec)
    spec = cloud.spec
    labeled = io.load_labeled(args.labels, spec)
    if labeled.points.shape[1] != spec.ambient_dim:
        raise io.SchemaError("cloud and labels differ in dimension", args.labels, 1)
    profile = get_profile(args.profile, args.delta, spec.intrinsic_dim)
    graph = assemble_affinity(cloud, labeled, profile, backend=args.backend)
    return cloud, labeled, graph


def cmd_run(args) -> int:
    try:
        cfg_dict = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        cfg_dict["output"] = args.out
    cfg = ExperimentConfig.from_dict(cfg_dict)
    report = run_experiment(cfg)
    payload = report.to_dict()
    if cfg.output:
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        io.write_rows_csv(out / "rows.csv", report.rows, report.columns)
        io.save_report(out / "report.json", payload)
    for name, fit in report.fits.items():
        if fit["median_slope"] is not None:
            print(f"{name}: median slope {fit['median_slope']:.4f} over {len(fit['fits'])} fit(s)")
    print(f"{len(report.rows)} rows in {report.wall_time:.1f} s" + (f" -> {cfg.output}" if cfg.output else ""))
    return EXIT_OK


def cmd_validate(args) -> int:
    profile = get_profile(args.profile, args.delta, args.dim)
    report = validate_profile(profile, args.samples)
    if args.json:
        _print_json(report.to_dict())
    else:
        for name, clause in report.clauses.items():
            print(f"{'PASS' if clause.passed else 'FAIL'}  {name}: {clause.detail}")
        print("profile passes" if report.passed else f"profile fails: {', '.join(report.failed())}")
    return EXIT_OK if report.passed else EXIT_INVALID_KERNEL


def cmd_connectivity(args) -> int:
    _, _, graph = _load_instance(args)
    conn = check_s_connected(graph)
    _print_json({**graph.stats(), **conn.to_dict()}, args.json)
    if args.require_connected and not conn.s_connected:
        print(f"error: {conn.unreachable.size} unlabeled point(s) cannot reach a labeled point", file=sys.stderr)
        return EXIT_DISCONNECTED
    return EXIT_OK


def cmd_solve(args) -> int:
    cloud, labeled, graph = _load_instance(args)
    conn = check_s_connected(graph)
    if args.require_connected and not conn.s_connected:
        print(f"error: {conn.unreachable.size} unlabeled point(s) cannot reach a labeled point", file=sys.stderr)
        return EXIT_DISCONNECTED
    if args.gl:
        system = assemble_graph_laplacian(graph, labeled)
    else:
        if args.mu == "default":
            mu = default_mu(cloud, labeled)
        elif args.mu == "el":
            mu = el_mu(cloud, labeled)
        else:
            try:
                mu = float(args.mu)
            except ValueError:
                raise ConfigError(f"--mu takes a number, 'default' or 'el', not {args.mu!r}") from None
        system = assemble_wnll(graph, labeled, mu)
    try:
        sol, stats = solve(system, args.method, args.tol, args.max_iter)
    except SingularSystemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    io.save_solution(args.out, cloud.points, sol.u, labeled.points, labeled.values)
    _print_json({"mu": system.mu, "kind": system.kind, "s_connected": conn.s_connected, **stats.to_dict()},
                args.stats)
    return EXIT_OK if stats.converged else EXIT_SOLVER


def _instance_args(p):
    p.add_argument("cloud", help="point cloud CSV (x0,...,x{d-1}) or JSON envelope")
    p.add_argument("labels", help="labeled set CSV (x0,...,x{d-1},b) or JSON envelope")
    p.add_argument("--delta", type=float, required=True, help="kernel bandwidth")
    p.add_argument("--profile", default="wendland_c2_default", choices=PROFILE_IDS)
    p.add_argument("--manifold", choices=("circle", "sphere", "clifford_torus"),
                   help="manifold kind (default: inferred from the number of columns)")
    p.add_argument("--scale", type=float, default=1.0, help="manifold scale when --manifold is given")
    p.add_argument("--backend", default="auto", choices=BACKENDS)
    p.add_argument("--require-connected", action="store_true",
                   help="exit with code 3 when some unlabeled point cannot reach a label")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wnll", description="Weighted nonlocal Laplacian interpolation on point clouds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment described by a JSON config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory for rows.csv and report.json")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate-kernel", help="check a kernel profile against the kernel assumptions")
    p.add_argument("profile")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--dim", type=int, default=1, help="intrinsic dimension")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("check-connectivity", help="report S-connectivity of a cloud and labeled set")
    _instance_args(p)
    p.add_argument("--json", metavar="PATH", help="also write the report here")
    p.set_defaults(func=cmd_connectivity)

    p = sub.add_parser("solve", help="solve the WNLL (or graph Laplacian) interpolation problem")
    _instance_args(p)
    p.add_argument("--mu", default="default", help="number, 'default' (n/m) or 'el' ((n/m+2)/2)")
    p.add_argument("--gl", action="store_true", help="solve the graph-Laplacian baseline instead")
    p.add_argument("--method", default="cg", choices=("cg", "dense"))
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--out", required=True, help="solution CSV (x..., u, labeled)")
    p.add_argument("--stats", metavar="PATH", help="also write solve statistics JSON here")
    p.set_defaults(func=cmd_solve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ProfileError, io.SchemaError, GeometryError, GraphError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
