"""`bench` command line: tour runs, diffusion-map precomputation, shortest
path probes and the live session server."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .bench import (RunConfig, Scenario, ScenarioError, check_rows,
                    emit_report, run_scenario)
from .maps import load_map
from .metrics import DiffusionMap, GeodesicOracle
from .planner import VARIANTS


def _xy(text: str) -> tuple[float, float]:
    try:
        x, y = (float(tok) for tok in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected x,y — got {text!r}") from exc
    return (x, y)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench", description="tour benchmarks and planner tools")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a tour scenario")
    run.add_argument("--scenario", required=True, type=Path)
    run.add_argument("--variants", default="amrrt_d",
                     help=f"comma list from {','.join(sorted(VARIANTS))}")
    run.add_argument("--seeds", type=int, default=25,
                     help="number of seeds (0..n-1)")
    run.add_argument("--seed-base", type=int, default=0)
    run.add_argument("--mode", choices=("deterministic", "wallclock"),
                     default="deterministic")
    run.add_argument("--out", required=True, type=Path)
    run.add_argument("--search-cap", type=int, default=200_000,
                     help="expansion attempts per leg (deterministic mode)")
    run.add_argument("--search-cap-s", type=float, default=30.0,
                     help="seconds per leg (wallclock mode)")
    run.add_argument("--travel-cap", type=int, default=4_000,
                     help="agent steps per leg")
    run.add_argument("--sidecar-dir", type=Path, default=None,
                     help="directory of precomputed diffusion sidecars")
    run.add_argument("--quiet", action="store_true")

    dm = sub.add_parser("diffmap", help="precompute a diffusion-map sidecar")
    dm.add_argument("--map", required=True)
    dm.add_argument("--out", required=True, type=Path)
    dm.add_argument("--r-grid", type=float, default=None)
    dm.add_argument("--k", type=int, default=8)
    dm.add_argument("--t-diff", type=float, default=None)

    orc = sub.add_parser("oracle", help="grid shortest-path probe")
    orc.add_argument("--map", required=True)
    orc.add_argument("--from", dest="src", required=True, type=_xy)
    orc.add_argument("--to", dest="dst", required=True, type=_xy)

    srv = sub.add_parser("serve", help="start the live session server")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8008)
    srv.add_argument("--map", default="corridor10")
    srv.add_argument("--variant", default="amrrt_d",
                     choices=sorted(VARIANTS))
    return parser


def cmd_run(args) -> int:
    scenario = Scenario.from_file(args.scenario)
    run_cfg = RunConfig(
        mode=args.mode,
        search_cap=args.search_cap,
        search_cap_s=args.search_cap_s,
        travel_cap=args.travel_cap,
        seeds=tuple(range(args.seed_base, args.seed_base + args.seeds)),
        variants=tuple(args.variants.split(",")),
        sidecar_dir=args.sidecar_dir,
    )
    progress = None
    if not args.quiet:
        def progress(variant, seed):
            print(f"  {variant} seed {seed} done", file=sys.stderr)
    rows, summary = run_scenario(scenario, run_cfg, progress=progress)
    csv_path, json_path = emit_report(rows, summary, args.out, args.mode)
    if not args.quiet:
        for variant, agg in summary["variants"].items():
            ratio = agg.get("ratio_mean")
            print(f"{variant}: {agg['ok']}/{agg['legs']} legs ok, "
                  f"median search {agg['search_time_median']:.0f}, "
                  f"mean ratio {ratio:.3f}" if ratio is not None else
                  f"{variant}: {agg['ok']}/{agg['legs']} legs ok")
        print(f"wrote {csv_path} and {json_path}")
    problems = check_rows(rows)
    for p in problems:
        print(f"INVARIANT VIOLATION: {p}", file=sys.stderr)
    return 1 if problems else 0


def cmd_diffmap(args) -> int:
    env = load_map(args.map)
    t0 = time.perf_counter()
    dm = DiffusionMap.build(env, r_grid=args.r_grid, k=args.k,
                            t_diff=args.t_diff)
    built = time.perf_counter() - t0
    dm.save(args.out)
    print(f"{args.map}: {len(dm.graph)} lattice nodes, "
          f"{dm.graph.n_components} component(s), built in {built:.2f}s, "
          f"wrote {args.out}")
    return 0


def cmd_oracle(args) -> int:
    env = load_map(args.map)
    d = GeodesicOracle(env).distance(args.src, args.dst)
    print(f"{args.src} -> {args.dst}: {d:.6g}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(map_id=args.map, variant=args.variant)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "run": cmd_run,
        "diffmap": cmd_diffmap,
        "oracle": cmd_oracle,
        "serve": cmd_serve,
    }[args.command]
    try:
        return handler(args)
    except (ScenarioError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
