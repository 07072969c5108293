"""Accuracy metrics, baselines, ablations, and timing reports.

The headline displacement metrics follow the summed-position convention: the
per-frame quantity is the norm of the sum over joints of (estimate - truth).
Because opposing per-joint errors can cancel under that sum, every report
also carries the conventional mean per-joint position error (MPJPE), which is
what the benchmark gates on.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import N_JOINTS
from .pipeline import MafState, TrackFrame
from .sim import GroundTruthLog


@dataclass
class AlignedSequence:
    """Estimate and truth sampled at identical instants for one track."""

    track_id: int
    subject_id: str
    timestamps: np.ndarray       # (N,), strictly increasing
    estimate: np.ndarray         # (N, 15, 3), NaN where the joint was absent
    truth: np.ndarray            # (N, 15, 3)
    joint_mask: np.ndarray       # (N, 15) joints valid on both sides


@dataclass
class ErrorReport:
    e_avg: float                 # meters, summed-position convention
    e_sd: float                  # meters
    mpjpe: float                 # meters, per-joint diagnostic
    per_joint: np.ndarray        # (15,) mean joint error, NaN if never present
    n_frames: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.e_avg < 0 or self.e_sd < 0:
            raise ValueError("metrics cannot be negative")


def track_arrays(frames: list[TrackFrame]) -> tuple[np.ndarray, np.ndarray]:
    """Timestamps and joint positions of one track, deduplicated.

    When two cameras yield updates at the same instant, only the last frame
    at that timestamp is kept so the time axis is strictly increasing.
    """
    frames = sorted(frames, key=lambda f: f.timestamp)
    times: list[float] = []
    poses: list[np.ndarray] = []
    for f in frames:
        if times and f.timestamp == times[-1]:
            poses[-1] = f.pose.positions
            continue
        times.append(f.timestamp)
        poses.append(f.pose.positions)
    return np.array(times), np.array(poses)


def interp_positions(
    t_query: np.ndarray, t_ref: np.ndarray, pos_ref: np.ndarray
) -> np.ndarray:
    """Linear interpolation of (T, 15, 3) positions onto query timestamps.

    Queries must lie inside [t_ref[0], t_ref[-1]]; exact sample times return
    the stored samples.
    """
    idx = np.searchsorted(t_ref, t_query, side="right") - 1
    idx = np.clip(idx, 0, len(t_ref) - 2)
    t0 = t_ref[idx]
    t1 = t_ref[idx + 1]
    w = np.where(t1 > t0, (t_query - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0)
    return (1.0 - w)[:, None, None] * pos_ref[idx] + w[:, None, None] * pos_ref[idx + 1]


def group_frames(frames: list[TrackFrame]) -> dict[int, list[TrackFrame]]:
    grouped: dict[int, list[TrackFrame]] = {}
    for f in frames:
        grouped.setdefault(f.track_id, []).append(f)
    return grouped


def align(
    frames: list[TrackFrame],
    truth: GroundTruthLog,
    min_track_frames: int = 10,
    warmup_s: float = 0.0,
) -> list[AlignedSequence]:
    """Pair tracks with ground-truth subjects and resample truth onto them.

    Correspondence minimizes the whole-sequence mean centroid distance
    (solved jointly over all pairs). Short-lived tracks are discarded first;
    a count mismatch after that, a pair with no temporal overlap, or an
    ambiguous correspondence all raise with a diagnostic.
    """
    grouped = {
        tid: fs for tid, fs in group_frames(frames).items()
        if len(fs) >= min_track_frames
    }
    subject_ids = truth.subject_ids()
    if len(grouped) != len(subject_ids):
        raise ValueError(
            f"subject count mismatch: {len(grouped)} track(s) "
            f"{sorted(grouped)} vs {len(subject_ids)} subject(s) {subject_ids}"
        )

    track_ids = sorted(grouped)
    arrays = {tid: track_arrays(grouped[tid]) for tid in track_ids}

    dist = np.full((len(track_ids), len(subject_ids)), np.inf)
    for i, tid in enumerate(track_ids):
        times, est = arrays[tid]
        est_cent = np.nanmean(est, axis=1)
        for j, sid in enumerate(subject_ids):
            g_times, g_pos = truth.subjects[sid]
            inside = (times >= g_times[0]) & (times <= g_times[-1])
            if not inside.any():
                continue
            gt = interp_positions(times[inside], g_times, g_pos)
            gt_cent = gt.mean(axis=1)
            dist[i, j] = float(
                np.nanmean(np.linalg.norm(est_cent[inside] - gt_cent, axis=1))
            )

    rows, cols = linear_sum_assignment(np.where(np.isfinite(dist), dist, 1e12))
    out = []
    for i, j in zip(rows, cols):
        tid, sid = track_ids[i], subject_ids[j]
        if not np.isfinite(dist[i, j]):
            raise ValueError(f"track {tid} and subject {sid} have no time overlap")
        ties = [
            subject_ids[k]
            for k in range(len(subject_ids))
            if k != j and abs(dist[i, k] - dist[i, j]) < 1e-9
        ]
        if ties:
            raise ValueError(
                f"ambiguous correspondence for track {tid}: subjects "
                f"{[sid] + ties} are equally near"
            )
        times, est = arrays[tid]
        g_times, g_pos = truth.subjects[sid]
        keep = (times >= g_times[0]) & (times <= g_times[-1])
        if warmup_s > 0:
            keep &= times >= times[0] + warmup_s
        times, est = times[keep], est[keep]
        gt = interp_positions(times, g_times, g_pos)
        mask = np.isfinite(est).all(axis=2)
        out.append(AlignedSequence(tid, sid, times, est, gt, mask))
    return sorted(out, key=lambda s: s.subject_id)


def displacement_metrics(seq: AlignedSequence, meta: dict | None = None) -> ErrorReport:
    """Summed-position displacement metrics plus the per-joint diagnostic."""
    if len(seq.timestamps) < 1:
        raise ValueError("empty aligned sequence")
    diff = seq.estimate - seq.truth                      # NaN where absent
    masked = np.where(seq.joint_mask[:, :, None], diff, 0.0)
    frame_ok = seq.joint_mask.any(axis=1)
    D = masked.sum(axis=1)                               # (N, 3)
    e = np.linalg.norm(D[frame_ok], axis=1)
    e_avg = float(e.mean())
    e_sd = float(np.sqrt(np.mean((e - e_avg) ** 2)))

    joint_err = np.linalg.norm(diff, axis=2)             # (N, 15), NaN where absent
    joint_err = np.where(seq.joint_mask, joint_err, np.nan)
    with np.errstate(invalid="ignore"):
        per_joint = np.nanmean(joint_err, axis=0)
    mpjpe = float(np.nanmean(joint_err))
    return ErrorReport(e_avg, e_sd, mpjpe, per_joint, int(frame_ok.sum()), meta or {})


def evaluate_tracks(
    frames: list[TrackFrame],
    truth: GroundTruthLog,
    warmup_s: float = 1.0,
    min_track_frames: int = 10,
    meta: dict | None = None,
) -> list[ErrorReport]:
    """Align and score every track; one report per subject."""
    reports = []
    for seq in align(frames, truth, min_track_frames, warmup_s):
        m = dict(meta or {})
        m["subject"] = seq.subject_id
        reports.append(displacement_metrics(seq, m))
    return reports


# ---------------------------------------------------------------------------
# Baselines


def baseline_maf(
    detections: list, window: int
) -> list[TrackFrame]:
    """Moving-average baseline over one track's associated detection stream."""
    state = MafState(window)
    frames = []
    for det in detections:
        pose, statuses = state.update(det)
        frames.append(TrackFrame(det.timestamp, 0, pose, statuses))
    return frames


# ---------------------------------------------------------------------------
# Ablations


def ablation_camera_count(
    scene_config,
    pipeline_config,
    counts: list[int],
    seed: int = 0,
    warmup_s: float = 1.0,
) -> list[ErrorReport]:
    """Rerun the identical pipeline on camera subsets of the same scene."""
    from .ingest import replay
    from .pipeline import FusionPipeline, select_cameras
    from .sim import generate_scene

    result = generate_scene(scene_config, seed)
    all_cams = sorted(result.streams)
    reports = []
    for count in counts:
        cams = select_cameras(all_cams, count)
        streams = [result.streams[c] for c in cams]
        pipe = FusionPipeline(pipeline_config, result.extrinsics)
        frames = pipe.run(replay(streams))
        reports.extend(
            evaluate_tracks(
                frames,
                result.truth,
                warmup_s,
                meta={
                    "sequence": scene_config.name,
                    "variant": pipeline_config.variant,
                    "camera_count": count,
                    "seed": seed,
                },
            )
        )
    return reports


# ---------------------------------------------------------------------------
# Timing


@dataclass
class TimingReport:
    stage_mean_ms: dict
    stage_p95_ms: dict
    ms_per_update: float
    n_updates: int
    fps_rows: list  # (subjects, worst_case_ms, theoretical_fps)

    def lines(self) -> list[str]:
        out = ["stage timing (per update):"]
        for k in self.stage_mean_ms:
            out.append(
                f"  {k:<12} mean {self.stage_mean_ms[k]:8.3f} ms   "
                f"p95 {self.stage_p95_ms[k]:8.3f} ms"
            )
        out.append(f"  per-update total: {self.ms_per_update:.3f} ms over {self.n_updates} updates")
        out.append("theoretical throughput:")
        for k, ms, fps in self.fps_rows:
            out.append(f"  {k} subject(s): {ms:7.2f} ms -> {fps:7.1f} fps")
        return out


def timing_report(stage_times: list, max_subjects: int = 6) -> TimingReport:
    """Aggregate per-batch stage timings into per-update statistics."""
    rows = [st for st in stage_times if st.n_updates > 0]
    if not rows:
        raise ValueError("no timed updates")
    n = sum(st.n_updates for st in rows)
    stages = {
        "association": [st.association / st.n_updates for st in rows],
        "fusion": [st.fusion / st.n_updates for st in rows],
        "consistency": [st.consistency / st.n_updates for st in rows],
        "other": [
            max(0.0, (st.total - st.association - st.fusion - st.consistency))
            / st.n_updates
            for st in rows
        ],
    }
    mean_ms = {k: 1e3 * float(np.mean(v)) for k, v in stages.items()}
    p95_ms = {k: 1e3 * float(np.percentile(v, 95)) for k, v in stages.items()}
    ms_per_update = 1e3 * sum(st.total for st in rows) / n
    fps_rows = []
    for k in range(1, max_subjects + 1):
        worst = ms_per_update * k
        fps_rows.append((k, worst, 1000.0 / worst if worst > 0 else math.inf))
    return TimingReport(mean_ms, p95_ms, ms_per_update, n, fps_rows)


# ---------------------------------------------------------------------------
# CSV reports

REPORT_COLUMNS = (
    "sequence", "variant", "camera_count", "subject",
    "e_avg_m", "e_sd_m", "mpjpe_m", "fps",
)


def write_report_csv(path, reports: list[ErrorReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            fps = r.meta.get("fps")
            writer.writerow(
                [
                    r.meta.get("sequence", ""),
                    r.meta.get("variant", ""),
                    r.meta.get("camera_count", ""),
                    r.meta.get("subject", ""),
                    f"{r.e_avg:.6f}",
                    f"{r.e_sd:.6f}",
                    f"{r.mpjpe:.6f}",
                    "" if fps is None else f"{fps:.2f}",
                ]
            )


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
