"""Central tracking pipeline: association + joint fusion + consistency.

One `FusionPipeline` instance owns all track state and consumes detection
batches serially, in arrival order, from any interleaving of camera nodes.
Variants ablate individual stages (for the benchmark baselines) while reusing
the same association front end:

    full             association + fusion (confidence + outliers) + consistency
    no-consistency   fusion only
    no-outlier       fusion without outlier inflation, plus consistency
    no-confidence    fusion with all confidences forced to 1, plus consistency
    maf              per-joint moving average over the last `maf_window` positions
    raw              last observed position per joint (maf with window 1)
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

import numpy as np

from . import fusion as fu
from .association import (
    AssociationConfig,
    CentroidFilter,
    association_cost,
    solve_assignment,
    update_centroid,
)
from .consistency import (
    ConsistencyConfig,
    LimbLengths,
    enforce_consistency,
    initialize_lengths,
    update_lengths,
)
from .fusion import JointStatus, NoiseConfig, TrackState, UpdateReport
from .ingest import DetectionBatch, SkeletonDetection, ingest_batch
from .model import (
    N_JOINTS,
    BodyModel,
    RigidTransform,
    SkeletonPose,
    centroid,
    default_body_model,
)

VARIANTS = ("full", "no-consistency", "no-outlier", "no-confidence", "maf", "raw")


@dataclass
class PipelineConfig:
    association: AssociationConfig = field(default_factory=AssociationConfig)
    fusion: NoiseConfig = field(default_factory=NoiseConfig)
    consistency: ConsistencyConfig = field(default_factory=ConsistencyConfig)
    variant: str = "full"
    maf_window: int = 5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant '{self.variant}'; expected one of {VARIANTS}"
            )
        if self.maf_window < 1:
            raise ValueError("maf_window must be >= 1")


def load_pipeline_config(path) -> PipelineConfig:
    """Read a pipeline config file (YAML mapping of the config sections).

    A `fusion.calibrate_from` key pointing at a static detection stream file
    (path relative to the config file) replaces `fusion.sigma_r2` with the
    variance calibrated from that recording.
    """
    import os

    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("pipeline config must be a mapping")
    kwargs = {}
    fusion_section = dict(data.get("fusion", {}))
    calibrate_from = fusion_section.pop("calibrate_from", None)
    if calibrate_from is not None:
        from .ingest import read_stream

        stream_path = os.path.join(os.path.dirname(str(path)), calibrate_from)
        dets = [d for b in read_stream(stream_path) for d in b.detections]
        fusion_section["sigma_r2"] = fu.calibrate_sigma_r(dets)
    try:
        if "association" in data:
            kwargs["association"] = AssociationConfig(**data["association"])
        if fusion_section:
            kwargs["fusion"] = NoiseConfig(**fusion_section)
        if "consistency" in data:
            kwargs["consistency"] = ConsistencyConfig(**data["consistency"])
        if "variant" in data:
            kwargs["variant"] = data["variant"]
        if "maf_window" in data:
            kwargs["maf_window"] = int(data["maf_window"])
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ValueError(f"bad pipeline config: {exc}") from None


def save_pipeline_config(path, config: PipelineConfig) -> None:
    import yaml

    with open(path, "w") as fh:
        yaml.safe_dump(asdict(config), fh, sort_keys=True)


def bench_pipeline_config() -> PipelineConfig:
    """Tuned settings used by the benchmark on the noisy presets.

    The dataclass defaults are deliberately conservative; these values came
    out of the process-noise sweep (scripts/sweep_process_noise.py) against
    the default noisy scenes. dt matches the aggregate update cadence of a
    4-node 30 Hz network so the filter predicts between camera updates.
    """
    return PipelineConfig(
        association=AssociationConfig(gate_epsilon=40.0),
        fusion=NoiseConfig(sigma_q2=100.0, dt=0.033 / 4.0),
    )


# ---------------------------------------------------------------------------
# Output frames


@dataclass
class TrackFrame:
    """One fused output skeleton for one track at one update."""

    timestamp: float
    track_id: int
    pose: SkeletonPose
    statuses: list[JointStatus]
    refined: bool = False


def write_track_frames(path, frames: Iterable[TrackFrame]) -> None:
    with open(path, "w") as fh:
        for f in frames:
            joints = [
                [float(x) for x in row] if np.isfinite(row).all() else None
                for row in f.pose.positions
            ]
            fh.write(
                json.dumps(
                    {
                        "timestamp": f.timestamp,
                        "track_id": f.track_id,
                        "joints": joints,
                        "status": [s.value for s in f.statuses],
                        "refined": f.refined,
                    }
                )
                + "\n"
            )


def read_track_frames(path) -> list[TrackFrame]:
    frames = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pos = np.full((N_JOINTS, 3), np.nan)
                for m, row in enumerate(rec["joints"]):
                    if row is not None:
                        pos[m] = row
                frames.append(
                    TrackFrame(
                        float(rec["timestamp"]),
                        int(rec["track_id"]),
                        SkeletonPose(pos),
                        [JointStatus(s) for s in rec["status"]],
                        bool(rec.get("refined", False)),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"line {line_no}: {exc}") from None
    return frames


# ---------------------------------------------------------------------------
# Moving-average baseline state (used by the maf and raw variants)


class MafState:
    """Per-joint unweighted moving average with no dynamics."""

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.buffers = [deque(maxlen=window) for _ in range(N_JOINTS)]

    def update(self, det: SkeletonDetection) -> tuple[SkeletonPose, list[JointStatus]]:
        present = det.present
        statuses = []
        pos = np.full((N_JOINTS, 3), np.nan)
        for m in range(N_JOINTS):
            if present[m]:
                self.buffers[m].append(det.positions[m].copy())
                statuses.append(JointStatus.ACCEPTED)
            elif self.buffers[m]:
                statuses.append(JointStatus.HELD)
            else:
                statuses.append(JointStatus.UNTRACKED)
            if self.buffers[m]:
                pos[m] = np.mean(self.buffers[m], axis=0)
        return SkeletonPose(pos), statuses


# ---------------------------------------------------------------------------
# Track bookkeeping


@dataclass
class Track:
    track_id: int
    centroid: CentroidFilter
    state: TrackState | None = None
    lengths: LimbLengths = field(default_factory=LimbLengths)
    length_buffer: list[SkeletonPose] = field(default_factory=list)
    maf: MafState | None = None
    created_at: float = 0.0
    updates: int = 0


@dataclass
class StageTimes:
    association: float = 0.0
    fusion: float = 0.0
    consistency: float = 0.0
    total: float = 0.0
    n_updates: int = 0


class FusionPipeline:
    """Consumes detection batches; owns all per-track state."""

    def __init__(
        self,
        config: PipelineConfig | None = None,
        extrinsics: dict[str, RigidTransform] | None = None,
        body_model: BodyModel | None = None,
    ):
        self.config = config or PipelineConfig()
        self.extrinsics = extrinsics
        self.model = body_model or default_body_model()
        self.tracks: list[Track] = []
        self.timing: list[StageTimes] = []
        self._next_id = 0
        v = self.config.variant
        self._use_fusion = v in ("full", "no-consistency", "no-outlier", "no-confidence")
        self._use_consistency = (
            v in ("full", "no-outlier", "no-confidence") and self.config.consistency.enabled
        )
        self._noise_cfg = fu.variant_noise_config(
            self.config.fusion, outliers=(v != "no-outlier")
        )

    # -- helpers

    def _new_track(self, det: SkeletonDetection, t: float) -> tuple[Track, TrackFrame]:
        cfg = self.config
        cent = centroid(det.pose())
        track = Track(
            self._next_id,
            CentroidFilter.from_centroid(
                cent, t, cfg.fusion.sigma_q2, cfg.fusion.sigma_r2,
                cfg.association.init_velocity_sigma,
            ),
            created_at=t,
        )
        self._next_id += 1
        if self._use_fusion:
            state, report = fu.new_track_state(
                track.track_id, det, self._noise_cfg,
                cfg.association.init_velocity_sigma,
            )
            track.state = state
            frame = TrackFrame(t, track.track_id, state.pose(), report.statuses)
        else:
            track.maf = MafState(1 if cfg.variant == "raw" else cfg.maf_window)
            pose, statuses = track.maf.update(det)
            frame = TrackFrame(t, track.track_id, pose, statuses)
        track.updates = 1
        return track, frame

    def _effective_detection(self, det: SkeletonDetection) -> SkeletonDetection:
        if self.config.variant != "no-confidence":
            return det
        conf = np.where(det.present, 1.0, 0.0)
        return SkeletonDetection(det.camera_id, det.timestamp, det.positions.copy(), conf)

    def _update_fused_track(
        self, track: Track, det: SkeletonDetection, t: float
    ) -> tuple[TrackFrame, float]:
        cfg = self.config
        predicted = fu.predict(track.state, t, self._noise_cfg)
        state, report = fu.update(
            predicted, det, self._noise_cfg,
            cfg.association.init_velocity_sigma,
        )
        track.state = state
        pose = state.pose()
        refined = False
        t_cons = 0.0
        if self._use_consistency:
            c0 = time.perf_counter()
            ccfg = cfg.consistency
            if not track.lengths.initialized:
                if report.all_accepted and pose.present.all():
                    track.length_buffer.append(pose.copy())
                if len(track.length_buffer) >= ccfg.init_frames:
                    track.lengths = initialize_lengths(
                        track.length_buffer, self.model, ccfg.init_frames
                    )
                    track.length_buffer.clear()
            if track.lengths.initialized:
                refined_pose, crep = enforce_consistency(
                    pose, track.lengths, self.model, ccfg
                )
                if crep.applied:
                    # Blend in the lengths measured on the filter output, not
                    # the refined one: refined links sit at l_hat exactly, so
                    # feeding them back would freeze any initialization error.
                    if report.clean and ccfg.length_alpha > 0:
                        track.lengths = update_lengths(
                            track.lengths, pose, self.model, ccfg.length_alpha
                        )
                    pose = refined_pose
                    refined = True
            t_cons = time.perf_counter() - c0
        return TrackFrame(t, track.track_id, pose, report.statuses, refined), t_cons

    # -- main entry

    def process_batch(self, batch: DetectionBatch) -> list[TrackFrame]:
        t0 = time.perf_counter()
        cfg = self.config
        if self.extrinsics is not None:
            batch = ingest_batch(batch, self.extrinsics)
        t = batch.timestamp

        # Expire tracks unseen for longer than the timeout.
        timeout = cfg.association.track_timeout_s
        self.tracks = [
            tr for tr in self.tracks if t - tr.centroid.last_update <= timeout
        ]

        dets = [self._effective_detection(d) for d in batch.detections]
        cents = [centroid(d.pose()) for d in dets]

        a0 = time.perf_counter()
        costs = np.zeros((len(self.tracks), len(dets)))
        for i, tr in enumerate(self.tracks):
            for j, c in enumerate(cents):
                costs[i, j] = association_cost(tr.centroid, c, t)
        assignment = solve_assignment(costs, cfg.association.gate_epsilon)
        t_assoc = time.perf_counter() - a0

        frames: list[TrackFrame] = []
        t_fusion = 0.0
        t_cons = 0.0
        n_updates = 0

        for i, j in assignment.pairs:
            track = self.tracks[i]
            f0 = time.perf_counter()
            track.centroid = update_centroid(track.centroid, cents[j], t)
            if self._use_fusion:
                frame, dt_cons = self._update_fused_track(track, dets[j], t)
                t_cons += dt_cons
                t_fusion += time.perf_counter() - f0 - dt_cons
            else:
                pose, statuses = track.maf.update(dets[j])
                frame = TrackFrame(t, track.track_id, pose, statuses)
                t_fusion += time.perf_counter() - f0
            track.updates += 1
            frames.append(frame)
            n_updates += 1

        for j in assignment.unmatched_detections:
            f0 = time.perf_counter()
            track, frame = self._new_track(dets[j], t)
            self.tracks.append(track)
            frames.append(frame)
            t_fusion += time.perf_counter() - f0
            n_updates += 1

        self.timing.append(
            StageTimes(t_assoc, t_fusion, t_cons, time.perf_counter() - t0, n_updates)
        )
        return frames

    def run(self, batches: Iterable[DetectionBatch]) -> list[TrackFrame]:
        frames: list[TrackFrame] = []
        for batch in batches:
            frames.extend(self.process_batch(batch))
        return frames


def run_pipeline(
    batches: Iterable[DetectionBatch],
    config: PipelineConfig | None = None,
    extrinsics: dict[str, RigidTransform] | None = None,
) -> tuple[list[TrackFrame], FusionPipeline]:
    pipe = FusionPipeline(config, extrinsics)
    frames = pipe.run(batches)
    return frames, pipe


def select_cameras(camera_ids: list[str], count: int) -> list[str]:
    """Evenly spread subset of cameras; 2 of 4 picks opposite corners."""
    cams = sorted(camera_ids)
    if count >= len(cams):
        return cams
    if count < 1:
        raise ValueError("camera count must be >= 1")
    idx = [int(math.floor(i * len(cams) / count)) for i in range(count)]
    return [cams[i] for i in idx]
