"""Command line entry point: ``snlsr {generate,solve,bench,plot}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .netgen import NetworkConfig, generate_instance, load_instance, save_instance
from .partition import patches_to_dict
from .patchloc import localized_to_dict
from .pipeline import PipelineError, SolverConfig, solve_instance
from .plotting import plot_scatter
from .refine import write_trace_csv

BENCH_COLUMNS = [
    "row",
    "seed",
    "N",
    "K",
    "r",
    "eta",
    "mode",
    "lambda",
    "registration_anchors",
    "time_s",
    "rmsd_before",
    "rmsd_after",
    "tightness_rate",
    "status",
    "error",
]


def _network_args(p):
    g = p.add_argument_group("network")
    g.add_argument("--n-sensors", type=int)
    g.add_argument("--n-anchors", type=int, help="default floor(N/10)")
    g.add_argument("--dimension", type=int)
    g.add_argument("--radio-range", type=float)
    g.add_argument("--noise", dest="noise_level", type=float)
    g.add_argument("--seed", dest="rng_seed", type=int)


def _solver_args(p):
    g = p.add_argument_group("solver")
    g.add_argument("--max-cluster-size", type=int)
    g.add_argument("--max-patch-size", type=int)
    g.add_argument("--lam", type=float)
    g.add_argument("--mode", choices=["anchored", "anchor_free"])
    g.add_argument("--registration-anchors", type=int, help="use a random subset of this many anchors")
    g.add_argument("--workers", type=int, help="patch localization workers (env SNLSR_WORKERS)")
    g.add_argument("--sdp-restarts", type=int)
    g.add_argument("--solver-seed", dest="seed", type=int)


def _pick(args, cls, base: dict) -> dict:
    out = dict(base)
    for f in fields(cls):
        value = getattr(args, f.name, None)
        if value is not None:
            out[f.name] = value
    return out


def _load_config(path) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snlsr", description="Divide-and-conquer sensor network localization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a random unit-square instance")
    _network_args(p)
    p.add_argument("--config", help="JSON config with a 'network' section")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("solve", help="run the full pipeline on a generated or loaded instance")
    _network_args(p)
    _solver_args(p)
    p.add_argument("--config", help="JSON config with 'network' and 'solver' sections")
    p.add_argument("--instance", help="instance file; overrides the network section")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plot", action="store_true", help="write before/after refinement SVGs")
    p.add_argument("--trace", action="store_true", help="write the refinement stress trace CSV")
    p.add_argument("--dump-patches", action="store_true", help="write patches and local coordinates")

    p = sub.add_parser("bench", help="run a benchmark grid")
    p.add_argument("grid", help="JSON grid file")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--seeds", help="comma separated seeds (overrides the grid file)")
    p.add_argument("--plots", help="directory for per-row scatter SVGs")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("plot", help="plot positions written by 'solve'")
    p.add_argument("--instance", required=True)
    p.add_argument("--positions", required=True, help="positions.json from 'solve'")
    p.add_argument("--stage", choices=["registered", "refined"], default="refined")
    p.add_argument("-o", "--output", required=True)
    return parser


def cmd_generate(args) -> int:
    cfg = NetworkConfig(**_pick(args, NetworkConfig, _load_config(args.config).get("network", {})))
    save_instance(generate_instance(cfg), args.output)
    return 0


def cmd_solve(args) -> int:
    config = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        solver = SolverConfig(**_pick(args, SolverConfig, config.get("solver", {})))
        if args.instance:
            instance = load_instance(args.instance)
        else:
            instance = generate_instance(NetworkConfig(**_pick(args, NetworkConfig, config.get("network", {}))))
    except (TypeError, ValueError) as exc:
        print(f"snlsr: invalid configuration: {exc}", file=sys.stderr)
        return 2

    t0 = time.perf_counter()
    try:
        result = solve_instance(instance, solver)
    except PipelineError as exc:
        print(f"snlsr: pipeline failed in stage '{exc.stage}': {exc}", file=sys.stderr)
        return 1
    elapsed = time.perf_counter() - t0

    artifacts = {}
    N = instance.n_sensors
    pos_path = out / "positions.json"
    pos_path.write_text(
        json.dumps(
            {
                "sensor_ids": list(range(N)),
                "registered": result.positions_registered.tolist(),
                "refined": result.positions_refined.tolist(),
            }
        )
    )
    artifacts["positions"] = str(pos_path)
    if args.plot and instance.config.dimension == 2:
        truth = instance.true_positions[:N]
        anchors = instance.true_positions[result.registration_anchor_ids] if result.registration_anchor_ids else None
        for stage, est in (("registered", result.positions_registered), ("refined", result.positions_refined)):
            path = out / f"scatter_{stage}.svg"
            plot_scatter(truth, est, anchors, path, title=f"{stage}: RMSD {_rmsd_of(result, stage):.2e}")
            artifacts[f"scatter_{stage}"] = str(path)
    if args.trace:
        path = out / "refine_trace.csv"
        write_trace_csv(result.refine_trace, path)
        artifacts["refine_trace"] = str(path)
    if args.dump_patches:
        path = out / "patches.json"
        path.write_text(json.dumps({**patches_to_dict(result.patches), **localized_to_dict(result.localized)}))
        artifacts["patches"] = str(path)

    report = result.summary()
    report["artifacts"] = artifacts
    report["timings"] = {**result.timings, "total": elapsed}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(
        f"M={report['patches']['count']} tightness={report['registration']['tightness']} "
        f"rmsd_before={result.rmsd_registered:.3e} rmsd_after={result.rmsd_refined:.3e} time={elapsed:.1f}s"
    )
    return 0


def _rmsd_of(result, stage):
    return result.rmsd_registered if stage == "registered" else result.rmsd_refined


def run_benchmark(grid: dict, out_csv, seeds=None, plots_dir=None, workers=None) -> list[dict]:
    """Run every grid row for every seed; write per-seed rows plus one mean row per grid row."""
    rows = grid.get("rows", [])
    seeds = seeds if seeds is not None else grid.get("seeds", [0])
    plots_dir = Path(plots_dir) if plots_dir else None
    if plots_dir:
        plots_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for idx, row in enumerate(rows):
        per_seed = []
        for seed in seeds:
            rec = _bench_one(idx, row, int(seed), plots_dir, workers)
            records.append(rec)
            per_seed.append(rec)
        ok = [r for r in per_seed if r["status"] == "ok"]
        mean = dict(per_seed[0]) if per_seed else {}
        mean.update(seed="mean", status=f"{len(ok)}/{len(per_seed)} ok", error="")
        for key in ("time_s", "rmsd_before", "rmsd_after", "tightness_rate"):
            mean[key] = float(np.mean([r[key] for r in ok])) if ok else float("nan")
        records.append(mean)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for rec in records:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})
    return records


def _bench_one(idx, row, seed, plots_dir, workers) -> dict:
    net = NetworkConfig(
        n_sensors=row["n_sensors"],
        n_anchors=row.get("n_anchors"),
        dimension=row.get("dimension", 2),
        radio_range=row["radio_range"],
        noise_level=row.get("noise_level", 0.0),
        rng_seed=seed,
    )
    solver = SolverConfig(
        lam=row.get("lam", 2.0),
        mode=row.get("mode", "anchored"),
        registration_anchors=row.get("registration_anchors"),
        max_cluster_size=row.get("max_cluster_size", 30),
        max_patch_size=row.get("max_patch_size", 45),
        workers=workers,
        seed=seed,
    )
    rec = {
        "row": idx,
        "seed": seed,
        "N": net.n_sensors,
        "K": net.n_anchors,
        "r": net.radio_range,
        "eta": net.noise_level,
        "mode": solver.mode,
        "lambda": solver.lam,
        "registration_anchors": "" if solver.registration_anchors is None else solver.registration_anchors,
        "time_s": float("nan"),
        "rmsd_before": float("nan"),
        "rmsd_after": float("nan"),
        "tightness_rate": float("nan"),
        "status": "ok",
        "error": "",
    }
    t0 = time.perf_counter()
    try:
        instance = generate_instance(net)
        result = solve_instance(instance, solver)
    except Exception as exc:  # recorded per row; the grid keeps going
        rec.update(status="error", error=str(exc), time_s=time.perf_counter() - t0)
        return rec
    rec.update(
        time_s=time.perf_counter() - t0,
        rmsd_before=result.rmsd_registered,
        rmsd_after=result.rmsd_refined,
        tightness_rate=1.0 if result.registration.tightness == "rank_d_tight" else 0.0,
    )
    if plots_dir and net.dimension == 2:
        N = net.n_sensors
        anchors = instance.true_positions[result.registration_anchor_ids] if result.registration_anchor_ids else None
        plot_scatter(
            instance.true_positions[:N],
            result.positions_refined,
            anchors,
            plots_dir / f"row{idx}_seed{seed}.svg",
            title=f"N={N} r={net.radio_range} eta={net.noise_level}: RMSD {result.rmsd_refined:.2e}",
        )
    return rec


def cmd_bench(args) -> int:
    grid = json.loads(Path(args.grid).read_text())
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    records = run_benchmark(grid, args.out, seeds, args.plots, args.workers)
    failed = sum(r["status"] == "error" for r in records)
    print(f"{len(grid.get('rows', []))} grid rows, {failed} failed runs -> {args.out}")
    return 0


def cmd_plot(args) -> int:
    instance = load_instance(args.instance)
    data = json.loads(Path(args.positions).read_text())
    N = instance.n_sensors
    plot_scatter(instance.true_positions[:N], data[args.stage], instance.anchor_positions, args.output)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"generate": cmd_generate, "solve": cmd_solve, "bench": cmd_bench, "plot": cmd_plot}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
