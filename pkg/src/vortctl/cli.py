"""Command line entry point: ``vortctl run|xi|verify``.

Exit codes: 0 success, 1 runtime or numerical failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checks
from .actuators import ActuatorError, ActuatorFamily, family_mesh
from .control import xi_estimate
from .fem import FEMSpace
from .io import ConfigError, Experiment, contour_svg, decay_report, load_config
from .mesh import MeshError
from .sim import SimConfig, SimulationError, Simulator, snapshot_csv

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
SNAPSHOT_FIELDS = ("w", "wt", "z", "psi_z", "psi_ctrl")


def max_workers(n_jobs: int) -> int:
    """Sweep parallelism, capped by ``VORTCTL_THREADS`` (default: CPU count)."""
    env = os.environ.get("VORTCTL_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"VORTCTL_THREADS must be a positive integer, got {env!r}") from exc
    return max(1, min(cap, n_jobs))


def _fan_out(func, jobs):
    n = max_workers(len(jobs))
    if n == 1:
        return [func(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, *zip(*jobs)))


def _write_run(cfg: SimConfig, out: str, svg: bool) -> str:
    """Run one configuration and write its artifacts into `out`; returns the report text."""
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    sim = Simulator(cfg)
    run = sim.run_pair()
    (path / "run.csv").write_text(run.to_csv())
    if run.controls.shape[1]:
        (path / "controls.csv").write_text(run.controls_csv())
    if run.error_exact is not None:
        (path / "error.csv").write_text(run.error_csv())
    if sim.layout is not None:
        (path / "actuators.csv").write_text(sim.layout.to_csv())
    for ts, snap in sorted(run.snapshots.items()):
        for name in SNAPSHOT_FIELDS:
            stem = f"snap_t{ts:g}_{name}"
            (path / f"{stem}.csv").write_text(snapshot_csv(run.mesh, snap[name]))
            if svg:
                (path / f"{stem}.svg").write_text(contour_svg(run.mesh, snap[name], title=f"{name} at t = {ts:g}"))
    report = decay_report(run)
    (path / "report.txt").write_text(report)
    return report


def cmd_run(args) -> int:
    exp = load_config(args.config)
    out = args.out or exp.out_dir or "vortctl-out"
    configs = exp.configs
    if args.stride is not None:
        if args.stride < 1:
            raise ConfigError("--stride must be >= 1")
        configs = [SimConfig(**{**c.__dict__, "stride": args.stride}) for c in configs]
    svg = args.svg or exp.svg
    dirs = [out if len(configs) == 1 else str(Path(out) / exp.label(c)) for c in configs]
    reports = _fan_out(_write_run, [(c, d, svg) for c, d in zip(configs, dirs)])
    for d, rep in zip(dirs, reports):
        print(f"== {d}")
        print(rep, end="")
    return EXIT_OK


def _xi_row(cfg: SimConfig, M: int, method: str):
    c = SimConfig(**{**cfg.__dict__, "M": M, "mode": "free"})
    layout = c.layout()
    mesh = family_mesh(c.domain_spec(), layout, c.mesh_level, c.mesh_h)
    space = FEMSpace(mesh)
    V = ActuatorFamily(layout, mesh).V if layout is not None else np.zeros((mesh.n_nodes, 0))
    xi = xi_estimate(V, space.K, space.M, mesh.interior_nodes, method=method)
    return M, V.shape[1], mesh.n_nodes, xi


def cmd_xi(args) -> int:
    exp: Experiment = load_config(args.config)
    if not exp.xi_M:
        raise ConfigError("xi.M must list at least one M")
    if any(m < 0 for m in exp.xi_M):
        raise ConfigError("xi.M entries must be nonnegative")
    cfg = exp.configs[0]
    rows = _fan_out(_xi_row, [(cfg, m, exp.xi_method) for m in exp.xi_M])
    text = "M,M_sigma,nodes,xi\n" + "".join(f"{m},{k},{n},{x:.17g}\n" for m, k, n, x in rows)
    out = args.out or exp.out_dir
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "xi.csv").write_text(text)
    print(f"{'M':>3} {'M_sigma':>8} {'nodes':>7} {'xi':>14}")
    for m, k, n, x in rows:
        print(f"{m:>3} {k:>8} {n:>7} {x:>14.6f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = checks.run_all(seed=args.seed, inject_fault=args.inject_fault)
    # the corrupted-Gram path must be detected by the monotonicity check
    if not args.inject_fault:
        probe = checks.check_monotonicity(args.seed, corrupt=True)
        results.append(checks.CheckResult("fault injection detected", 0.0 if not probe.passed else np.inf, 0.0))
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_RUNTIME if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vortctl", description="Vorticity Navier-Stokes with oblique-projection feedback.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment(s) described by a config file")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.add_argument("--stride", type=int, help="record every n-th step")
    r.add_argument("--svg", action="store_true", help="also write SVG contour plots of snapshots")
    r.set_defaults(func=cmd_run)
    x = sub.add_parser("xi", help="tabulate the Poincare-like constant over xi.M")
    x.add_argument("config")
    x.add_argument("--out")
    x.set_defaults(func=cmd_xi)
    v = sub.add_parser("verify", help="run the invariant checks on small built-in meshes")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--inject-fault", action="store_true", help="corrupt the cross-Gram (the check must fail)")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"vortctl: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, MeshError, ActuatorError, np.linalg.LinAlgError, ArithmeticError, RuntimeError,
            ValueError, OSError) as exc:
        print(f"vortctl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
