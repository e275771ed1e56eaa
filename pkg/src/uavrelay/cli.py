"""Command-line entry point: scene generation, tracing, satellite visibility,
placement optimization, scenario execution and coverage maps.

Every run writes its outputs plus a run-manifest JSON under the output
directory; re-running with the manifest's config and seed reproduces all
non-timing outputs byte-identically at any thread count.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, figures, harness, metrics, placement, raytrace, satellite, scene as scenemod
from .channel import RadioConfig
from .configio import load_config
from .harness import ScenarioConfig, config_hash, scenario_config_from_dict
from .placement import PlacementConfig
from .raytrace import TraceConfig
from .seeding import derive_seed

ENV_OUTPUT_DIR = "UAVRELAY_OUTPUT_DIR"


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt_cell(r.get(c, "")) for c in columns])


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _write_table(path_base: Path, rows, columns, fmt: str):
    if fmt == "json":
        out = path_base.with_suffix(".json")
        write_json(out, rows)
    else:
        out = path_base.with_suffix(".csv")
        write_csv(out, rows, columns)
    return out


def _manifest(out_dir: Path, command: str, cfg_dict, seed, outputs) -> Path:
    manifest = {
        "command": command,
        "config": cfg_dict,
        "config_hash": config_hash_dict(cfg_dict),
        "seed": seed,
        "package_version": __version__,
        "python_version": sys.version.split()[0],
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "outputs": [str(Path(p).name) for p in outputs],
    }
    path = out_dir / "manifest.json"
    write_json(path, manifest)
    return path


def config_hash_dict(d) -> str:
    import hashlib
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _out_dir(args) -> Path:
    d = Path(args.output_dir or os.environ.get(ENV_OUTPUT_DIR, "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        print(f"error: config file not found: {p}", file=sys.stderr)
        raise SystemExit(2)
    return p


# -- subcommands ----------------------------------------------------------------

def cmd_gen_scene(args) -> int:
    out_dir = _out_dir(args)
    sc = scenemod.generate_manhattan(args.blocks_x, args.blocks_y, args.block_w,
                                     args.street_w, (args.height_min, args.height_max),
                                     args.seed)
    obj = out_dir / f"{args.name}.obj"
    scenemod.save_scene(sc, obj)
    outputs = [obj, obj.with_suffix(".materials.json"), obj.with_suffix(".meta.json")]
    cfg = {"blocks_x": args.blocks_x, "blocks_y": args.blocks_y, "block_w": args.block_w,
           "street_w": args.street_w, "height_min": args.height_min,
           "height_max": args.height_max, "seed": args.seed}
    outputs.append(_manifest(out_dir, "gen-scene", cfg, args.seed, outputs))
    print(f"wrote {obj} ({sc.n_triangles} triangles, {len(sc.footprints)} buildings)")
    return 0


def _load_scene_arg(args) -> scenemod.Scene:
    path = _require_file(args.scene)
    materials = args.materials or str(Path(args.scene).with_suffix(".materials.json"))
    return scenemod.load_scene(path, materials)


def cmd_trace(args) -> int:
    out_dir = _out_dir(args)
    sc = _load_scene_arg(args)
    tx = np.array([float(v) for v in args.tx.split(",")])
    rx = np.array([float(v) for v in args.rx.split(",")])
    if args.method == "image":
        taps = raytrace.trace_image(sc, tx, rx, max_depth=args.depth, freq=args.freq)
    else:
        cfg = TraceConfig(max_depth=args.depth, ray_count=args.rays,
                          capture_radius_scale=args.capture_scale,
                          carrier_freq=args.freq, fidelity=args.fidelity)
        taps = raytrace.trace_sbr(sc, tx, rx[None, :], cfg)[0]
    rows = [{
        "alpha_db": 20 * np.log10(abs(t.amplitude)) if abs(t.amplitude) > 0 else float("-inf"),
        "delay_ns": t.delay * 1e9,
        "depth": t.depth,
        "signature": "/".join(str(s) for s in t.signature) or "los",
    } for t in taps]
    out = _write_table(out_dir / "taps", rows, ["alpha_db", "delay_ns", "depth", "signature"],
                       args.format)
    cfg_dict = {"scene": args.scene, "tx": args.tx, "rx": args.rx, "method": args.method,
                "depth": args.depth, "rays": args.rays, "freq": args.freq,
                "fidelity": args.fidelity}
    _manifest(out_dir, "trace", cfg_dict, None, [out])
    print(f"{len(taps)} taps -> {out}")
    return 0


def cmd_satvis(args) -> int:
    out_dir = _out_dir(args)
    tles = satellite.load_tle_file(_require_file(args.tle))
    obs = satellite.Observer(args.lat, args.lon, args.alt)
    start = (datetime.fromisoformat(args.start).replace(tzinfo=timezone.utc)
             if args.start else tles[0].epoch)
    thresholds = tuple(float(v) for v in args.thresholds.split(","))
    res = satellite.visibility_series(tles, obs, start, window_s=args.window_h * 3600.0,
                                      step_s=args.step_s, thresholds=thresholds)
    rows = []
    for k, t in enumerate(res.times):
        row = {"t": t.isoformat()}
        for j, th in enumerate(thresholds):
            row[f"count_{int(th)}"] = int(res.counts[k, j])
        rows.append(row)
    cols = ["t"] + [f"count_{int(th)}" for th in thresholds]
    out = _write_table(out_dir / "satvis", rows, cols, args.format)
    hist_rows = [{"elevation_deg": float(e)} for e in res.elevations]
    hist = _write_table(out_dir / "satvis_elevations", hist_rows, ["elevation_deg"], args.format)
    summary = out_dir / "satvis_summary.json"
    write_json(summary, res.summary)
    outputs = [out, hist, summary]
    if args.figures:
        outputs += figures.plot_visibility(res, out_dir)
    cfg_dict = {"tle": args.tle, "lat": args.lat, "lon": args.lon, "alt": args.alt,
                "window_h": args.window_h, "step_s": args.step_s,
                "thresholds": list(thresholds)}
    _manifest(out_dir, "satvis", cfg_dict, None, outputs)
    for th in thresholds:
        print(f"mean visible >= {th:g} deg: {res.summary[f'mean_{int(th)}']:.2f}")
    return 0


def _scenario_cfg_from_args(args) -> ScenarioConfig:
    cfg_path = _require_file(args.config)
    cfg = scenario_config_from_dict(load_config(cfg_path))
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.reps is not None:
        cfg.repetitions = args.reps
    return cfg


def cmd_optimize(args) -> int:
    out_dir = _out_dir(args)
    cfg = _scenario_cfg_from_args(args)
    sc = harness.build_scene(cfg.scene)
    ues = harness._sample_ues(cfg, sc, 0)
    gnbs = [np.asarray(p, dtype=np.float64) for p in cfg.gnb_positions]
    pcfg = replace(cfg.placement, seed=derive_seed(cfg.base_seed, "opt", 0))
    res = placement.plan_topology(sc, ues, gnbs, cfg.radio, pcfg, cfg.trace)
    chash = config_hash(cfg)
    lines = [dict(t, config_hash=chash, seed=pcfg.seed) for t in res.trials]
    pl_path = out_dir / "placements.jsonl"
    write_jsonl(pl_path, lines)
    best = {
        "method": pcfg.method,
        "uav_positions": res.topology.uav_positions.tolist(),
        "uav_count": res.topology.n_uavs,
        "kpis": res.kpis.to_dict(),
        "target_met": res.target_met,
        "seed": pcfg.seed,
        "config_hash": chash,
    }
    best_path = out_dir / "best_topology.json"
    write_json(best_path, best)
    outputs = [pl_path, best_path]
    if args.figures and res.trials:
        outputs += figures.plot_trial_trace(res.trials, out_dir)
    outputs.append(_manifest(out_dir, "optimize", harness.resolved_config_dict(cfg),
                             cfg.base_seed, outputs))
    print(f"best objective {res.kpis.objective:.4f} with {res.topology.n_uavs} UAV(s); "
          f"coverage {res.kpis.coverage:.2f} (target met: {res.target_met})")
    return 0


def cmd_scenario(args) -> int:
    out_dir = _out_dir(args)
    cfg = _scenario_cfg_from_args(args)
    result = harness.run_scenario(cfg, threads=args.threads)
    cols = ["scenario", "method", "variant", "uav_count", "rep", "seed",
            "config_hash", "metric", "value"]
    outputs = [_write_table(out_dir / "results", result.rows, cols, args.format)]
    sum_cols = ["scenario", "method", "variant", "uav_count", "metric", "mean", "ci95", "n"]
    outputs.append(_write_table(out_dir / "summary", result.summary, sum_cols, args.format))
    if result.timeline:
        tl_cols = ["scenario", "rep", "seed", "config_hash", "stage", "label",
                   "failed_gnb", "active_gnbs", "n_uavs", "sum_rate", "coverage",
                   "fairness_counts", "fairness_rates", "objective",
                   "recovery_ratio", "sched_sum_rate"]
        outputs.append(_write_table(out_dir / "timeline", result.timeline, tl_cols, args.format))
    pl_path = out_dir / "placements.jsonl"
    write_jsonl(pl_path, result.placements)
    outputs.append(pl_path)
    if args.figures:
        if cfg.kind == "scenario1":
            outputs += figures.plot_method_comparison(result.summary, out_dir)
        elif cfg.kind == "scenario2":
            outputs += figures.plot_timeline(result.timeline, out_dir)
        else:
            prefix = "gps" if cfg.kind == "scenario3_gps" else "fidelity"
            mets = ("objective", "sum_rate", "coverage")
            if cfg.kind == "scenario3_fidelity":
                mets = mets + ("wall_time_s",)
            outputs += figures.plot_sweep(result.rows, out_dir, prefix, mets)
    outputs.append(_manifest(out_dir, "scenario", harness.resolved_config_dict(cfg),
                             cfg.base_seed, outputs))
    print(f"{cfg.kind}: {len(result.rows)} result rows over {cfg.repetitions} repetition(s)")
    return 0


def cmd_coverage_map(args) -> int:
    out_dir = _out_dir(args)
    sc = _load_scene_arg(args)
    txs = []
    if args.uavs:
        for chunk in args.uavs.split(";"):
            txs.append([float(v) for v in chunk.split(",")])
    if args.placements:
        recs = [json.loads(ln) for ln in Path(args.placements).read_text().splitlines() if ln]
        if recs:
            txs += recs[-1]["positions"]
    if not txs:
        print("error: no transmitter positions given (--uavs or --placements)", file=sys.stderr)
        return 2
    radio = RadioConfig()
    grid, extent = harness.coverage_map(sc, txs, radio, nx=args.resolution, ny=args.resolution,
                                        height=args.height)
    pgm = out_dir / "coverage_map.pgm"
    harness.write_pgm(grid, pgm)
    outputs = [pgm]
    if args.figures:
        outputs += figures.plot_coverage_map(grid, extent, out_dir)
    cfg_dict = {"scene": args.scene, "uavs": args.uavs, "resolution": args.resolution,
                "height": args.height}
    outputs.append(_manifest(out_dir, "coverage-map", cfg_dict, None, outputs))
    finite = np.isfinite(grid)
    print(f"coverage map {args.resolution}x{args.resolution}; "
          f"median SINR {np.median(grid[finite]):.1f} dB over lit cells")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uavrelay",
                                description="UAV relay placement simulator and optimizer")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--output-dir", default=None,
                        help=f"output directory (default: ${ENV_OUTPUT_DIR} or cwd)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True,
                        help="render figures next to tables")

    sp = sub.add_parser("gen-scene", help="generate a synthetic block-grid city")
    common(sp)
    sp.add_argument("--blocks-x", type=int, default=4)
    sp.add_argument("--blocks-y", type=int, default=4)
    sp.add_argument("--block-w", type=float, default=40.0)
    sp.add_argument("--street-w", type=float, default=25.0)
    sp.add_argument("--height-min", type=float, default=15.0)
    sp.add_argument("--height-max", type=float, default=55.0)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--name", default="scene")
    sp.set_defaults(func=cmd_gen_scene)

    sp = sub.add_parser("trace", help="trace paths between a tx and an rx")
    common(sp)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--materials", default=None)
    sp.add_argument("--tx", required=True, help="x,y,z in meters")
    sp.add_argument("--rx", required=True, help="x,y,z in meters")
    sp.add_argument("--method", choices=("image", "sbr"), default="image")
    sp.add_argument("--depth", type=int, default=2)
    sp.add_argument("--rays", type=int, default=200_000)
    sp.add_argument("--capture-scale", type=float, default=2.0)
    sp.add_argument("--fidelity", type=float, default=1.0)
    sp.add_argument("--freq", type=float, default=2e9)
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("satvis", help="satellite visibility statistics from TLE data")
    common(sp)
    sp.add_argument("--tle", required=True)
    sp.add_argument("--lat", type=float, required=True)
    sp.add_argument("--lon", type=float, required=True)
    sp.add_argument("--alt", type=float, default=0.0)
    sp.add_argument("--start", default=None, help="ISO time (default: first TLE epoch)")
    sp.add_argument("--window-h", type=float, default=24.0)
    sp.add_argument("--step-s", type=float, default=60.0)
    sp.add_argument("--thresholds", default="60,70,80")
    sp.set_defaults(func=cmd_satvis)

    sp = sub.add_parser("optimize", help="run one placement optimization")
    common(sp)
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--reps", type=int, default=None)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("scenario", help="run a full scenario from a config file")
    common(sp)
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--reps", type=int, default=None)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_scenario)

    sp = sub.add_parser("coverage-map", help="render a max-SINR ground raster")
    common(sp)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--materials", default=None)
    sp.add_argument("--uavs", default=None, help="x,y,z;x,y,z;... transmitter list")
    sp.add_argument("--placements", default=None, help="placements.jsonl to read")
    sp.add_argument("--resolution", type=int, default=64)
    sp.add_argument("--height", type=float, default=1.5)
    sp.set_defaults(func=cmd_coverage_map)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
