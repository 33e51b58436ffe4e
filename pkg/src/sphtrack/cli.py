"""Command-line pipelines: simulate, track, eval, compare and bench.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 schema error.
Verbosity follows the ``S3KF_LOG`` environment variable
(``error``, ``warn``, ``info`` or ``debug``; default ``warn``).
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, io
from .baseline import PixelTracker
from .bench import latency_percentiles, tracker_latency
from .errors import ConfigError, EmptyLogError, IoError, SchemaError
from .metrics import evaluate, match_tracks_to_gt, planar_errors
from .simulator import DYNAMIC, Scenario, load_scenario, simulate
from .tracker import SphericalTracker, TrackerConfig

log = logging.getLogger("sphtrack")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SCHEMA = 0, 2, 3, 4
ENGINES = {"spherical": SphericalTracker, "pixel": PixelTracker}
ENGINE_LABELS = {"spherical": "spherical", "pixel": "pixel (equirectangular stand-in canvas)"}
SEAM_SCENARIO = "seam_crossing"
_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


@dataclass
class RunManifest:
    """Everything needed to reproduce one command's outputs.

    ``timing`` holds wall-clock statistics and is left empty where the output
    tree must stay byte-identical across reruns.
    """

    command: str
    tool_version: str = __version__
    seed: int | None = None
    scenario_hash: str | None = None
    scenario: dict | None = None
    config: dict | None = None
    config_hash: str | None = None
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def write(self, out_dir) -> Path:
        return io.write_json(Path(out_dir) / "manifest.json", asdict(self))


def configure_logging(env=None) -> None:
    env = os.environ if env is None else env
    name = env.get("S3KF_LOG", "warn").strip().lower()
    level = _LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.WARNING, format="%(levelname)s %(name)s: %(message)s",
                        force=True)
    if level is None:
        log.warning("S3KF_LOG=%r not recognised; using 'warn'", name)


def _scenario_meta(sc: Scenario) -> tuple[dict, str]:
    d = sc.to_dict()
    return d, io.canonical_hash(d)


def _config_meta(cfg: TrackerConfig) -> tuple[dict, str]:
    d = io.effective_config(cfg)
    return d, io.canonical_hash(d)


def _host() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__,
            "machine": platform.machine(), "processor": platform.processor() or None}


# -- pipelines (callable without the CLI) -------------------------------------------------

def write_simulation(sim, out_dir) -> list[str]:
    out = Path(out_dir)
    io.write_jsonl(out / "gt.jsonl", (io.gt_to_record(r) for r in sim.ground_truth))
    io.write_jsonl(out / "detections.jsonl", (io.frame_to_record(f) for f in sim.frames))
    io.write_jsonl(out / "lidar.jsonl", (io.lidar_to_record(o) for f in sim.frames for o in f.lidar_obs))
    return ["gt.jsonl", "detections.jsonl", "lidar.jsonl"]


def run_engine(engine: str, frames, cfg: TrackerConfig | None = None):
    """Track ``frames``; returns outputs and per-step wall-clock seconds."""
    trk = ENGINES[engine](cfg)
    outs, lat = [], np.empty(len(frames))
    clock = time.perf_counter
    for k, fr in enumerate(frames):
        t0 = clock()
        outs.extend(trk.step(fr))
        lat[k] = clock() - t0
    return outs, lat


def write_metrics(metrics: dict, matching, out_dir) -> list[str]:
    out = Path(out_dir)
    io.write_json(out / "metrics.json", metrics)
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "target_id", "track_id", "planar_error_m"])
    for t, gid, tid, err in planar_errors(matching):
        w.writerow([repr(t), gid, tid, repr(err)])
    io.atomic_write_text(out / "errors.csv", buf.getvalue())
    return ["metrics.json", "errors.csv"]


def evaluate_logs(tracks, gt, out_dir=None, radius: float = 1.0) -> dict:
    metrics = evaluate(tracks, gt, radius)
    if out_dir is not None:
        write_metrics(metrics, match_tracks_to_gt(tracks, gt, radius), out_dir)
    return metrics


def compare_scenarios(scenarios: list[Scenario], seed: int, cfg: TrackerConfig, out_dir,
                      timing: bool = False) -> dict:
    """Run both engines on each scenario; write per-engine logs and a summary table."""
    out = Path(out_dir)
    rows, files, lat_all = [], [], {e: [] for e in ENGINES}
    for sc in scenarios:
        sim = simulate(sc, seed)
        row = {"scenario": sc.name}
        for engine in ENGINES:
            outs, lat = run_engine(engine, sim.frames, cfg)
            lat_all[engine].append(lat)
            sub = out / sc.name / engine
            io.write_jsonl(sub / "tracks.jsonl", (io.track_to_record(o) for o in outs))
            m = evaluate_logs(outs, sim.ground_truth, sub)
            files += [f"{sc.name}/{engine}/{f}" for f in ("tracks.jsonl", "metrics.json", "errors.csv")]
            row[engine] = {"max_id_total": m["max_id_total"], "id_switches_total": m["id_switches_total"],
                           "rmse_max_m": max((v for v in m["rmse_m"].values() if v is not None),
                                             default=None)}
        rows.append(row)
    totals = {e: sum(r[e]["max_id_total"] for r in rows) for e in ENGINES}
    summary = {"seed": seed, "engines": ENGINE_LABELS, "scenarios": rows, "max_id_total": totals,
               "ratio_spherical_to_pixel": (totals["spherical"] / totals["pixel"]
                                            if totals["pixel"] else None)}
    io.write_json(out / "comparison.json", summary)
    io.atomic_write_text(out / "comparison.txt", format_table(summary))
    files += ["comparison.json", "comparison.txt"]
    man = RunManifest("compare", seed=seed, config=_config_meta(cfg)[0], config_hash=_config_meta(cfg)[1],
                      outputs=sorted(files))
    man.scenario = {sc.name: sc.to_dict() for sc in scenarios}
    man.scenario_hash = io.canonical_hash(man.scenario)
    if timing:
        man.timing = {e: latency_percentiles(np.concatenate(v)) for e, v in lat_all.items()}
        man.timing["host"] = _host()
    man.write(out)
    return summary


def format_table(summary: dict) -> str:
    """Side-by-side distinct-id (max_ID) and switch counts per scenario."""
    head = f"{'scenario':<24} {'spherical max_ID':>16} {'pixel max_ID':>12} {'spherical sw':>12} {'pixel sw':>8}"
    lines = [head, "-" * len(head)]
    for r in summary["scenarios"]:
        s, p = r["spherical"], r["pixel"]
        lines.append(f"{r['scenario']:<24} {s['max_id_total']:>16d} {p['max_id_total']:>12d} "
                     f"{s['id_switches_total']:>12d} {p['id_switches_total']:>8d}")
    t = summary["max_id_total"]
    lines.append("-" * len(head))
    lines.append(f"{'total':<24} {t['spherical']:>16d} {t['pixel']:>12d}")
    lines.append("pixel engine: equirectangular stand-in canvas, no azimuth wrap in motion or cost")
    return "\n".join(lines) + "\n"


# -- commands ---------------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    sim = simulate(sc, args.seed)
    files = write_simulation(sim, args.out)
    d, h = _scenario_meta(sc)
    RunManifest("simulate", seed=args.seed, scenario=d, scenario_hash=h,
                outputs=files + ["manifest.json"]).write(args.out)
    log.info("simulated %s: %d frames -> %s", sc.name, len(sim.frames), args.out)
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = io.load_tracker_config(args.config)
    frames = io.assemble_frames(io.read_jsonl(args.detections),
                                io.read_jsonl(args.lidar) if args.lidar else [],
                                str(args.detections), str(args.lidar))
    t0 = time.perf_counter()
    outs, lat = run_engine(args.engine, frames, cfg)
    wall = time.perf_counter() - t0
    io.write_jsonl(Path(args.out) / "tracks.jsonl", (io.track_to_record(o) for o in outs))
    inputs = {"detections": io.sha256_file(args.detections)}
    if args.lidar:
        inputs["lidar"] = io.sha256_file(args.lidar)
    d, h = _config_meta(cfg)
    timing = {"wall_s": wall, "per_step": latency_percentiles(lat), "host": _host()}
    RunManifest("track", config={"engine": args.engine, "tracker": d}, config_hash=h,
                inputs=inputs, outputs=["tracks.jsonl", "manifest.json"], timing=timing).write(args.out)
    log.info("%s engine: %d frames, median step %.3f ms", args.engine, len(frames),
             timing["per_step"]["median_ms"] or 0.0)
    return EXIT_OK


def cmd_eval(args) -> int:
    gt = io.read_gt(args.gt)
    tracks = io.read_tracks(args.tracks)
    metrics = evaluate_logs(tracks, gt, args.out, args.radius)
    RunManifest("eval", inputs={"tracks": io.sha256_file(args.tracks), "gt": io.sha256_file(args.gt)},
                config={"match_radius_m": args.radius},
                outputs=["metrics.json", "errors.csv", "manifest.json"]).write(args.out)
    print(io._dumps(metrics, indent=2))
    return EXIT_OK


def cmd_compare(args) -> int:
    names = args.scenario or list(DYNAMIC) + [SEAM_SCENARIO]
    scenarios = [load_scenario(s) for s in names]
    cfg = io.load_tracker_config(args.config)
    summary = compare_scenarios(scenarios, args.seed, cfg, args.out, timing=args.timing)
    sys.stdout.write(format_table(summary))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = io.load_tracker_config(args.config)
    stats = tracker_latency(lambda: ENGINES[args.engine](cfg), args.tracks, args.detections,
                            args.steps, args.seed)
    d, h = _config_meta(cfg)
    RunManifest("bench", seed=args.seed, config={"engine": args.engine, "tracker": d}, config_hash=h,
                outputs=["manifest.json"], timing={"per_step": stats, "host": _host()}).write(args.out)
    print(io._dumps(stats, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphtrack", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate ground truth and sensor logs")
    s.add_argument("--scenario", required=True, help="scenario JSON path or canned name")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("track", help="run a tracker over detection and LiDAR logs")
    s.add_argument("--detections", required=True, type=Path)
    s.add_argument("--lidar", type=Path)
    s.add_argument("--config", type=Path, help="tracker config JSON (partial overrides)")
    s.add_argument("--engine", choices=sorted(ENGINES), default="spherical")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("eval", help="score a track log against ground truth")
    s.add_argument("--tracks", required=True, type=Path)
    s.add_argument("--gt", required=True, type=Path)
    s.add_argument("--radius", type=float, default=1.0, help="planar match radius in metres")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", help="both engines side by side on the same inputs")
    s.add_argument("--scenario", action="append",
                   help="scenario path or canned name; repeatable (default: dynamic suite + seam case)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", type=Path)
    s.add_argument("--timing", action="store_true",
                   help="record wall-clock latency in the manifest (breaks byte-identical reruns)")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("bench", help="step latency on the synthetic 10-track workload")
    s.add_argument("--engine", choices=sorted(ENGINES), default="spherical")
    s.add_argument("--tracks", type=int, default=10)
    s.add_argument("--detections", type=int, default=20)
    s.add_argument("--steps", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", 0) < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, EmptyLogError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (IoError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
