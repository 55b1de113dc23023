"""Command-line entry point.

Subcommands write CSV files for external plotting. Relative output paths are
resolved against ``$TILEARRAY_OUTPUT_DIR`` when it is set.

Exit codes: 0 success, 1 usage or parse error, 2 simulation timeout,
3 infeasible geometry.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from .bus import LinkTopology, route_command, validate_power_chain
from .config import bundled_scenarios, load_scenario, resolve_scenario
from .kinematics import InfeasiblePose, TileGeometry, inverse_kinematics, make_pose
from .regions import build_graph, parse_region, plan_path, segment_regions, write_region_csv
from .sim import run_scenario, write_log_csv, write_trace_csv
from .surface import build_surface, write_surface_csv
from .workspace import (ArrayConfig, PoseGrid, WorkspaceSet, enumerate_workspace,
                        radially_symmetric_subset, sweep_material, taut_assist_pose,
                        taut_curves, write_sweep_csv, write_workspace_csv)

EXIT_OK, EXIT_USAGE, EXIT_TIMEOUT, EXIT_INFEASIBLE = 0, 1, 2, 3
OUTPUT_ENV = "TILEARRAY_OUTPUT_DIR"


class UsageError(Exception):
    pass


def output_path(path) -> Path:
    p = Path(path)
    base = os.environ.get(OUTPUT_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _pose(text: str):
    try:
        d, p, r = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'delta,phi,r', got {text!r}")
    return make_pose(d, p, r)


def _pair(text: str):
    try:
        a, b = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'row,col', got {text!r}")
    return (a, b)


def _link(text: str):
    try:
        a, b = text.split("-")
        return (_pair(a), _pair(b))
    except (ValueError, argparse.ArgumentTypeError):
        raise argparse.ArgumentTypeError(f"expected 'r,c-r,c', got {text!r}")


def _geometry(args) -> TileGeometry:
    return TileGeometry(leg_length=args.leg_length, base_radius=args.base_radius,
                        effector_width=args.effector_width, effector_height=args.effector_height)


def _grid(args) -> PoseGrid:
    return PoseGrid.regular(args.n_delta, args.n_phi, args.n_r, args.phi_max, args.r_min, args.r_max)


def _add_geometry(p):
    g = TileGeometry()
    p.add_argument("--leg-length", type=float, default=g.leg_length, help="mm")
    p.add_argument("--base-radius", type=float, default=g.base_radius, help="mm")
    p.add_argument("--effector-width", type=float, default=g.effector_width, help="E_W, mm")
    p.add_argument("--effector-height", type=float, default=g.effector_height, help="E_H, mm")


def _add_grid(p, n_delta=64, n_phi=32, n_r=24):
    p.add_argument("--n-delta", type=int, default=n_delta)
    p.add_argument("--n-phi", type=int, default=n_phi)
    p.add_argument("--n-r", type=int, default=n_r)
    p.add_argument("--phi-max", type=float, default=7 * math.pi / 18, help="rad")
    p.add_argument("--r-min", type=float, default=10.0, help="mm")
    p.add_argument("--r-max", type=float, default=131.5, help="mm")


# --- subcommands -------------------------------------------------------------

def cmd_workspace(args) -> int:
    geom = _geometry(args)
    if args.grid:
        grid = PoseGrid.from_values([q.delta for q in args.grid], [q.phi for q in args.grid],
                                    [q.r for q in args.grid])
        if len(args.grid) > 1:
            # explicit poses, not their outer product
            valid = np.array([_feasible(q, geom) for q in args.grid])
            path = output_path(args.output)
            with open(path, "w") as fh:
                fh.write("delta_rad,phi_rad,r_mm,valid\n")
                for q, v in zip(args.grid, valid):
                    fh.write(f"{q.delta:.9g},{q.phi:.9g},{q.r:.9g},{int(v)}\n")
            print(f"{int(valid.sum())}/{len(valid)} poses valid -> {path}")
            return EXIT_OK
    else:
        grid = _grid(args)
    ws = enumerate_workspace(geom, grid)
    if args.radial:
        ws = radially_symmetric_subset(ws)
    path = output_path(args.output)
    write_workspace_csv(ws, path, only_valid=args.radial)
    print(f"{ws.count}/{grid.size} poses valid{' (radial subset)' if args.radial else ''} -> {path}")
    return EXIT_OK


def _feasible(pose, geom) -> bool:
    try:
        inverse_kinematics(pose, geom)
    except InfeasiblePose:
        return False
    return True


def _d_values(args):
    if args.D:
        return [float(d) for d in args.D]
    if args.d_step <= 0:
        raise UsageError("--d-step must be positive")
    if args.d_stop < args.d_start:
        raise UsageError(f"empty D range: --d-start {args.d_start} > --d-stop {args.d_stop}")
    n = int(math.floor((args.d_stop - args.d_start) / args.d_step + 1e-9)) + 1
    return [args.d_start + i * args.d_step for i in range(n)]


def _radial_ws(args) -> WorkspaceSet:
    ws = radially_symmetric_subset(enumerate_workspace(_geometry(args), _grid(args)))
    if ws.count == 0:
        raise InfeasiblePose("the radially symmetric workspace is empty on this grid")
    return ws


def cmd_sweep(args) -> int:
    Ds = _d_values(args)
    try:
        rows = sweep_material(_radial_ws(args), Ds, _geometry(args))
    except ValueError as exc:
        if isinstance(exc, InfeasiblePose):
            raise
        raise UsageError(str(exc))
    path = output_path(args.output)
    write_sweep_csv(rows, path)
    for row in rows:
        print(f"D={row.D:g}  alpha_max={row.alpha_max:.3f}  beta_max={row.beta_max:.3f}  "
              f"L_min={row.L_min:.3f}")
    print(f"-> {path}")
    return EXIT_OK


def cmd_taut(args) -> int:
    geom = _geometry(args)
    receiving = args.receiving
    inverse_kinematics(receiving, geom)  # raises InfeasiblePose
    ws = _radial_ws(args) if args.radial else enumerate_workspace(geom, _grid(args))
    config = ArrayConfig(inter_tile_distance=args.D, material_length=args.L)
    res = taut_assist_pose(receiving, config, ws, geom, tol=args.tol)
    print(f"assist pose: delta={res.pose.delta:.6f} rad  phi={res.pose.phi:.6f} rad  r={res.pose.r:.3f} mm")
    print(f"alpha={res.alpha:.3f} mm  gamma={res.gamma:.6f} rad  taut={'yes' if res.taut else 'no'}")
    if args.curve_csv:
        if args.l_step <= 0 or args.l_stop < args.l_start:
            raise UsageError("curve L range must satisfy --l-start <= --l-stop and --l-step > 0")
        n = int(math.floor((args.l_stop - args.l_start) / args.l_step + 1e-9)) + 1
        Ls = [args.l_start + i * args.l_step for i in range(n)]
        rows = taut_curves(receiving, args.D, Ls, ws, geom, tol=args.tol)
        path = output_path(args.curve_csv)
        with open(path, "w") as fh:
            fh.write("L_mm,max_phi_rad,max_gamma_rad,r_mm\n")
            for L, r, phi, gamma in rows:
                fh.write(f"{L:.9g},{phi:.9g},{gamma:.9g},{r:.9g}\n")
        print(f"curves -> {path}")
    return EXIT_OK


def cmd_regions(args) -> int:
    config = ArrayConfig(args.rows, args.cols, args.D, args.L)
    rmap = segment_regions(config, _geometry(args))
    path = output_path(args.output)
    write_region_csv(rmap, path)
    print(f"{len(rmap.regions)} regions -> {path}")
    if args.plan:
        src, dst = (parse_region(s) for s in args.plan)
        plan = plan_path(build_graph(rmap), src, dst)
        print("path: " + " -> ".join(r.label for r in plan.regions) + f"  (cost {plan.cost:.3f})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = load_scenario(resolve_scenario(args.scenario))
    out_dir = args.output_dir or os.environ.get(OUTPUT_ENV) or scenario.output_dir \
        or os.path.join("out", scenario.name)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rmap = segment_regions(scenario.array, scenario.geometry)
    write_region_csv(rmap, out / "regions.csv")
    starts = scenario.starts
    if args.start is not None:
        if not 0 <= args.start < len(starts):
            raise UsageError(f"--start must lie in 0..{len(starts) - 1}")
        starts = (starts[args.start],)
    many = len(starts) > 1
    status = EXIT_OK
    for i, start in enumerate(starts):
        trace = run_scenario(scenario, start)
        suffix = f"_start{i}" if many else ""
        write_trace_csv(trace, out / f"trace{suffix}.csv")
        write_log_csv(trace.log, out / f"controller_log{suffix}.csv")
        reached = ", ".join(f"goal {g} at {t:.2f} s" for g, t in trace.reached) or "none"
        print(f"{scenario.name} start {i} {tuple(start)}: {trace.status} at t={trace.t[-1]:.2f} s; "
              f"reached: {reached}")
        if not trace.completed:
            status = EXIT_TIMEOUT
        if args.surface_csv or scenario.surface_csv:
            poses = dict(zip(trace.tiles, trace.poses[-1]))
            surf = build_surface(poses, scenario.array, scenario.geometry, rmap, check=False)
            write_surface_csv(surf, out / f"surface{suffix}.csv", spacing=args.surface_spacing)
    print(f"artifacts -> {out}")
    return status


def cmd_route(args) -> int:
    topo = LinkTopology(args.rows, args.cols, frozenset(args.remove or ()), args.host,
                        power_chain=tuple(args.chain or ()))
    if args.target is not None:
        hops = route_command(topo, args.host, args.target)
        print(f"route {args.host} -> {args.target}: {hops} ({len(hops)} hops)")
    if args.chain:
        report = validate_power_chain(topo)
        print("power chain ok" if report.ok else f"power chain invalid: {report.reason}")
        if not report.ok:
            return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_scenarios(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tilearray", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("workspace", help="single-tile workspace CSV")
    _add_geometry(p)
    _add_grid(p)
    p.add_argument("--radial", action="store_true", help="write the radially symmetric subset only")
    p.add_argument("--grid", type=_pose, action="append", metavar="DELTA,PHI,R",
                   help="explicit pose(s) instead of the regular grid")
    p.add_argument("-o", "--output", default="workspace.csv")
    p.set_defaults(func=cmd_workspace)

    p = sub.add_parser("sweep", help="alpha/beta maxima and L_min over a D range")
    _add_geometry(p)
    _add_grid(p, 32, 16, 12)
    p.add_argument("--d-start", type=float, default=200.0)
    p.add_argument("--d-stop", type=float, default=320.0)
    p.add_argument("--d-step", type=float, default=20.0)
    p.add_argument("--D", type=float, action="append", help="explicit D value(s), mm")
    p.add_argument("-o", "--output", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("taut", help="assisting pose that pulls the strip taut")
    _add_geometry(p)
    _add_grid(p, 64, 32, 24)
    p.add_argument("--D", type=float, default=261.0)
    p.add_argument("--L", type=float, default=150.0)
    p.add_argument("--receiving", type=_pose, default=make_pose(0.0, 0.0, 90.0), metavar="DELTA,PHI,R")
    p.add_argument("--tol", type=float, default=2.0, help="taut tolerance on |alpha - L|, mm")
    p.add_argument("--radial", action="store_true", help="search the radially symmetric subset")
    p.add_argument("--curve-csv", help="write (L, max phi, max gamma, r) curves")
    p.add_argument("--l-start", type=float, default=120.0)
    p.add_argument("--l-stop", type=float, default=180.0)
    p.add_argument("--l-step", type=float, default=5.0)
    p.set_defaults(func=cmd_taut)

    p = sub.add_parser("regions", help="region map CSV and optional path plan")
    _add_geometry(p)
    p.add_argument("--rows", type=int, default=2)
    p.add_argument("--cols", type=int, default=2)
    p.add_argument("--D", type=float, default=261.0)
    p.add_argument("--L", type=float, default=150.0)
    p.add_argument("--plan", nargs=2, metavar=("FROM", "TO"), help="region labels, e.g. TILE_NW TILE_SE")
    p.add_argument("-o", "--output", default="regions.csv")
    p.set_defaults(func=cmd_regions)

    p = sub.add_parser("simulate", help="run a scenario file or bundled scenario")
    p.add_argument("scenario", help="YAML path or bundled name")
    p.add_argument("--output-dir", help=f"default: ${OUTPUT_ENV}, then the scenario's outputs.dir")
    p.add_argument("--start", type=int, help="run only this start index")
    p.add_argument("--surface-csv", action="store_true", help="also write the final surface")
    p.add_argument("--surface-spacing", type=float, default=5.0, help="mm")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("route", help="command routing and power-chain check")
    p.add_argument("--rows", type=int, default=2)
    p.add_argument("--cols", type=int, default=2)
    p.add_argument("--host", type=_pair, default=(0, 0), metavar="R,C")
    p.add_argument("--target", type=_pair, metavar="R,C")
    p.add_argument("--remove", type=_link, action="append", metavar="R,C-R,C")
    p.add_argument("--chain", type=_pair, nargs="+", metavar="R,C")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("scenarios", help="list bundled scenarios")
    p.set_defaults(func=cmd_scenarios)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except InfeasiblePose as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UsageError, ValueError, OSError) as exc:
        # ConfigError, NoPathError and UnreachableTile are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
