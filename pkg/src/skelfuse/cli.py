"""Command-line entry points: simulate, track, evaluate, bench.

Every command is a pure function of its inputs; identical seeds and configs
reproduce identical stream, track, and report files byte for byte (run bench
with --no-timing, since measured fps columns are wall-clock).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field, replace

from . import evaluation as ev
from .ingest import StreamFormatError, UncalibratedNodeError, load_extrinsics, read_stream, replay
from .pipeline import (
    VARIANTS,
    FusionPipeline,
    PipelineConfig,
    bench_pipeline_config,
    load_pipeline_config,
    read_track_frames,
    select_cameras,
    write_track_frames,
)
from .sim import (
    BENCH_SCENES,
    PRESET_SCENES,
    SceneConfigError,
    generate_scene,
    read_truth,
    resolve_scene,
    write_scene,
)

log = logging.getLogger("skelfuse")


@dataclass
class RunConfig:
    """One benchmark cell: a scene run through one pipeline variant."""

    scene: str
    pipeline: PipelineConfig
    variant: str = "full"
    out_dir: str = "."
    seed: int = 0
    cameras: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}'")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


def _resolve_pipeline_config(path: str | None, variant: str | None) -> PipelineConfig:
    cfg = load_pipeline_config(path) if path else PipelineConfig()
    if variant:
        cfg = replace(cfg, variant=variant)
    return cfg


def cmd_simulate(args) -> int:
    scene = resolve_scene(args.scene, args.duration)
    result = generate_scene(scene, args.seed)
    paths = write_scene(args.out, result)
    n_batches = sum(len(b) for b in result.streams.values())
    print(f"scene '{scene.name}' seed {args.seed}: wrote {len(paths)} files to {args.out}")
    print(f"  {len(result.streams)} streams, {n_batches} batches, "
          f"{len(result.truth.subjects)} subject(s), {scene.duration:.1f} s")
    return 0


def cmd_track(args) -> int:
    extrinsics = load_extrinsics(args.extrinsics)
    config = _resolve_pipeline_config(args.config, args.variant)
    streams = [read_stream(p) for p in args.streams]
    if args.cameras:
        wanted = set(args.cameras.split(","))
        streams = [s for s in streams if s and s[0].camera_id in wanted]
    batches = replay(streams, mode=args.replay, seed=args.replay_seed)
    pipe = FusionPipeline(config, extrinsics)
    frames = pipe.run(batches)
    write_track_frames(args.out, frames)
    track_ids = sorted({f.track_id for f in frames})
    print(f"wrote {len(frames)} frames for {len(track_ids)} track(s) to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    frames = read_track_frames(args.tracks)
    truth = read_truth(args.truth)
    meta = {"sequence": args.sequence, "variant": args.variant}
    if args.camera_count is not None:
        meta["camera_count"] = args.camera_count
    reports = ev.evaluate_tracks(
        frames, truth, warmup_s=args.warmup,
        min_track_frames=args.min_track_frames, meta=meta,
    )
    ev.write_report_csv(args.report, reports)
    for r in reports:
        print(
            f"subject {r.meta['subject']}: e_avg {100 * r.e_avg:.2f} cm, "
            f"e_sd {100 * r.e_sd:.2f} cm, mpjpe {100 * r.mpjpe:.2f} cm "
            f"({r.n_frames} frames)"
        )
    return 0


def _aggregate(rows: list[ev.ErrorReport]) -> list[ev.ErrorReport]:
    """Mean metrics over seeds for each (sequence, variant, cameras, subject)."""
    import numpy as np

    groups: dict[tuple, list[ev.ErrorReport]] = {}
    for r in rows:
        key = (
            r.meta.get("sequence", ""),
            r.meta.get("variant", ""),
            r.meta.get("camera_count", ""),
            r.meta.get("subject", ""),
        )
        groups.setdefault(key, []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        rs = groups[key]
        meta = {
            "sequence": key[0], "variant": key[1],
            "camera_count": key[2], "subject": key[3],
        }
        fps = [r.meta["fps"] for r in rs if r.meta.get("fps") is not None]
        if fps:
            meta["fps"] = float(np.mean(fps))
        out.append(
            ev.ErrorReport(
                float(np.mean([r.e_avg for r in rs])),
                float(np.mean([r.e_sd for r in rs])),
                float(np.mean([r.mpjpe for r in rs])),
                np.nanmean(np.stack([r.per_joint for r in rs]), axis=0),
                sum(r.n_frames for r in rs),
                meta,
            )
        )
    return out


def run_bench_cell(run: RunConfig, duration: float | None = None,
                   timing: bool = True, warmup_s: float = 1.0):
    """Simulate + track + evaluate one (scene, seed, variant, cameras) cell."""
    scene = resolve_scene(run.scene, duration)
    result = generate_scene(scene, run.seed)
    all_cams = sorted(result.streams)
    cams = select_cameras(all_cams, run.cameras or len(all_cams))
    config = replace(run.pipeline, variant=run.variant)
    pipe = FusionPipeline(config, result.extrinsics)
    frames = pipe.run(replay([result.streams[c] for c in cams]))
    meta = {
        "sequence": scene.name,
        "variant": run.variant,
        "camera_count": len(cams),
        "seed": run.seed,
    }
    if timing:
        tr = ev.timing_report(pipe.timing)
        meta["fps"] = 1000.0 / tr.ms_per_update
        meta["timing"] = tr
    reports = ev.evaluate_tracks(frames, result.truth, warmup_s=warmup_s, meta=meta)
    return reports


def cmd_bench(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    scenes = args.scenes.split(",") if args.scenes else list(BENCH_SCENES)
    variants = args.variants.split(",") if args.variants else ["full", "maf", "raw"]
    counts = [int(c) for c in args.cameras.split(",")] if args.cameras else [4]
    seeds = list(range(args.seeds))
    base = load_pipeline_config(args.config) if args.config else bench_pipeline_config()

    rows: list[ev.ErrorReport] = []
    timing_rows = []
    for scene in scenes:
        for seed in seeds:
            for variant in variants:
                for count in counts:
                    run = RunConfig(scene, base, variant, args.out, seed, count)
                    reports = run_bench_cell(
                        run, args.duration, timing=not args.no_timing,
                        warmup_s=args.warmup,
                    )
                    for r in reports:
                        tr = r.meta.pop("timing", None)
                        if tr is not None:
                            timing_rows.append((r.meta, tr))
                    rows.extend(reports)
                    log.info(
                        "bench %s seed=%d %s cams=%d: %s",
                        scene, seed, variant, count,
                        ", ".join(
                            f"{r.meta['subject']} mpjpe={100 * r.mpjpe:.2f}cm"
                            for r in reports
                        ),
                    )

    report_path = os.path.join(args.out, "report.csv")
    ev.write_report_csv(report_path, _aggregate(rows))
    runs_path = os.path.join(args.out, "runs.csv")
    _write_runs_csv(runs_path, rows)
    written = [report_path, runs_path]
    if timing_rows:
        timing_path = os.path.join(args.out, "timing.csv")
        _write_timing_csv(timing_path, timing_rows)
        written.append(timing_path)
    print(f"wrote {', '.join(written)}")
    _print_summary(rows)
    return 0


def _write_runs_csv(path, rows: list[ev.ErrorReport]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ("sequence", "variant", "camera_count", "seed", "subject",
             "e_avg_m", "e_sd_m", "mpjpe_m", "n_frames")
        )
        key = lambda r: (
            r.meta.get("sequence", ""), r.meta.get("variant", ""),
            str(r.meta.get("camera_count", "")), r.meta.get("seed", 0),
            r.meta.get("subject", ""),
        )
        for r in sorted(rows, key=key):
            writer.writerow(
                [
                    r.meta.get("sequence", ""), r.meta.get("variant", ""),
                    r.meta.get("camera_count", ""), r.meta.get("seed", ""),
                    r.meta.get("subject", ""),
                    f"{r.e_avg:.6f}", f"{r.e_sd:.6f}", f"{r.mpjpe:.6f}",
                    r.n_frames,
                ]
            )


def _write_timing_csv(path, timing_rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ("sequence", "variant", "camera_count", "seed",
             "association_ms", "fusion_ms", "consistency_ms", "other_ms",
             "total_ms_per_update", "fps")
        )
        seen = set()
        for meta, tr in timing_rows:
            key = (meta.get("sequence"), meta.get("variant"),
                   meta.get("camera_count"), meta.get("seed"))
            if key in seen:
                continue
            seen.add(key)
            writer.writerow(
                [
                    *key,
                    f"{tr.stage_mean_ms['association']:.4f}",
                    f"{tr.stage_mean_ms['fusion']:.4f}",
                    f"{tr.stage_mean_ms['consistency']:.4f}",
                    f"{tr.stage_mean_ms['other']:.4f}",
                    f"{tr.ms_per_update:.4f}",
                    f"{1000.0 / tr.ms_per_update:.2f}",
                ]
            )


def _print_summary(rows: list[ev.ErrorReport]) -> None:
    import numpy as np

    combos = sorted(
        {(r.meta.get("sequence", ""), r.meta.get("variant", "")) for r in rows}
    )
    print(f"{'sequence':<22} {'variant':<15} {'mpjpe_cm':>9} {'e_avg_cm':>9}")
    for seq, var in combos:
        sel = [
            r for r in rows
            if r.meta.get("sequence") == seq and r.meta.get("variant") == var
        ]
        print(
            f"{seq:<22} {var:<15} "
            f"{100 * float(np.mean([r.mpjpe for r in sel])):>9.2f} "
            f"{100 * float(np.mean([r.e_avg for r in sel])):>9.2f}"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelfuse",
        description="Multi-camera skeletal fusion: simulate, track, evaluate, bench.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate detection streams and ground truth")
    p.add_argument("--scene", required=True,
                   help=f"preset name ({', '.join(PRESET_SCENES)}) or scene YAML path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--duration", type=float, default=None, help="override scene duration (s)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="run the fusion pipeline over stream files")
    p.add_argument("--streams", nargs="+", required=True)
    p.add_argument("--extrinsics", required=True)
    p.add_argument("--out", required=True, help="track-frames output file")
    p.add_argument("--config", default=None, help="pipeline config YAML")
    p.add_argument("--variant", default=None, choices=VARIANTS)
    p.add_argument("--cameras", default=None, help="comma-separated camera ids to keep")
    p.add_argument("--replay", default="merged", choices=("merged", "jitter"))
    p.add_argument("--replay-seed", type=int, default=0)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="score a tracks file against ground truth")
    p.add_argument("--tracks", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report", required=True, help="CSV output path")
    p.add_argument("--warmup", type=float, default=1.0,
                   help="seconds trimmed from each track before scoring")
    p.add_argument("--min-track-frames", type=int, default=10)
    p.add_argument("--sequence", default="")
    p.add_argument("--variant", default="")
    p.add_argument("--camera-count", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="full (scene x seed x variant x cameras) matrix")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", default=None,
                   help=f"comma-separated (default: {','.join(BENCH_SCENES)})")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds (0..n-1)")
    p.add_argument("--variants", default=None, help="default: full,maf,raw")
    p.add_argument("--cameras", default=None, help="camera counts, e.g. 2,3,4 (default 4)")
    p.add_argument("--config", default=None, help="pipeline config YAML (default: tuned bench config)")
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--warmup", type=float, default=1.0)
    p.add_argument("--no-timing", action="store_true",
                   help="skip wall-clock timing so outputs are byte-reproducible")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SKELFUSE_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SceneConfigError, StreamFormatError, UncalibratedNodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
