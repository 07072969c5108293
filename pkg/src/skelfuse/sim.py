"""Synthetic camera-network simulator.

Generates ground-truth human motion with exactly constant limb lengths plus
per-node detection streams (camera frame) with configurable extrinsics, frame
rates, clock offsets, Gaussian noise, confidence decay, occlusion, and outlier
spikes. Stands in for a physical RGB-D network and a marker-based reference
system so the fusion pipeline can be verified end to end.

All randomness derives from a scene seed with one independent substream per
camera node, so identical seeds produce byte-identical output files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ingest import DetectionBatch, SkeletonDetection, write_stream
from .model import N_JOINTS, JointId, RigidTransform, SkeletonPose

# ---------------------------------------------------------------------------
# Canonical skeleton, body frame: x forward, y left, z up. Link vectors are
# fixed, so any combination of joint-group rotations and whole-body motion
# keeps segment lengths exactly constant.

_NECK = np.array([0.0, 0.0, 1.50])
_HEAD_V = np.array([0.0, 0.0, 0.18])
_LSH_V = np.array([0.0, 0.19, -0.03])
_RSH_V = np.array([0.0, -0.19, -0.03])
_LUPARM_V = np.array([0.0, 0.02, -0.28])
_LFOREARM_V = np.array([0.0, 0.01, -0.26])
_RUPARM_V = _LUPARM_V * np.array([1, -1, 1])
_RFOREARM_V = _LFOREARM_V * np.array([1, -1, 1])
_LHIP_V = np.array([0.0, -0.08, -0.52])
_RHIP_V = _LHIP_V * np.array([1, -1, 1])
_THIGH_V = np.array([0.0, 0.0, -0.42])
_SHIN_V = np.array([0.0, 0.0, -0.40])

ARM_CHAIN_LENGTH = float(np.linalg.norm(_LUPARM_V) + np.linalg.norm(_LFOREARM_V))
LEG_CHAIN_LENGTH = float(np.linalg.norm(_THIGH_V) + np.linalg.norm(_SHIN_V))


def _rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def build_pose(
    origin: np.ndarray,
    heading: float,
    arm_left: float = 0.0,
    arm_right: float = 0.0,
    leg_left: float = 0.0,
    leg_right: float = 0.0,
) -> SkeletonPose:
    """Assemble the skeleton at a world position with limb swing angles (rad)."""
    J = np.zeros((N_JOINTS, 3))
    J[JointId.NECK] = _NECK
    J[JointId.HEAD] = _NECK + _HEAD_V
    J[JointId.LEFT_SHOULDER] = _NECK + _LSH_V
    J[JointId.RIGHT_SHOULDER] = _NECK + _RSH_V
    Ral, Rar = _rot_y(arm_left), _rot_y(arm_right)
    J[JointId.LEFT_ELBOW] = J[JointId.LEFT_SHOULDER] + Ral @ _LUPARM_V
    J[JointId.LEFT_WRIST] = J[JointId.LEFT_ELBOW] + Ral @ _LFOREARM_V
    J[JointId.RIGHT_ELBOW] = J[JointId.RIGHT_SHOULDER] + Rar @ _RUPARM_V
    J[JointId.RIGHT_WRIST] = J[JointId.RIGHT_ELBOW] + Rar @ _RFOREARM_V
    J[JointId.LEFT_HIP] = J[JointId.LEFT_SHOULDER] + _LHIP_V
    J[JointId.RIGHT_HIP] = J[JointId.RIGHT_SHOULDER] + _RHIP_V
    Rll, Rlr = _rot_y(leg_left), _rot_y(leg_right)
    J[JointId.LEFT_KNEE] = J[JointId.LEFT_HIP] + Rll @ _THIGH_V
    J[JointId.LEFT_ANKLE] = J[JointId.LEFT_KNEE] + Rll @ _SHIN_V
    J[JointId.RIGHT_KNEE] = J[JointId.RIGHT_HIP] + Rlr @ _THIGH_V
    J[JointId.RIGHT_ANKLE] = J[JointId.RIGHT_KNEE] + Rlr @ _SHIN_V
    # The chest convention everywhere downstream is the central point of the
    # shoulders and hips; the true skeleton uses the same definition.
    J[JointId.CHEST] = 0.25 * (
        J[JointId.LEFT_SHOULDER] + J[JointId.RIGHT_SHOULDER]
        + J[JointId.LEFT_HIP] + J[JointId.RIGHT_HIP]
    )
    world = J @ _rot_z(heading).T
    world += np.asarray(origin, dtype=float)
    return SkeletonPose(world)


@dataclass
class MotionScript:
    """Trajectory generator for one subject.

    kind "static": stands at `position` with `heading`, swaying laterally by
    `sway_amplitude` meters. kind "oscillate": stationary body, sinusoidal
    arm/leg swing of `amplitude` meters (converted to an equivalent chain
    rotation) at `frequency` Hz. kind "walk": follows 2D `waypoints` as a
    closed loop at `speed` m/s with a procedural gait.
    """

    subject_id: str
    kind: str = "static"
    position: tuple[float, float] = (0.0, 0.0)
    heading: float = 0.0
    sway_amplitude: float = 0.005
    amplitude: float = 0.15           # meters, oscillate kind
    frequency: float = 0.8            # Hz, oscillate kind
    waypoints: list[tuple[float, float]] = field(default_factory=list)
    speed: float = 0.5                # m/s, walk kind
    stride_length: float = 0.65       # meters per step, sets the cadence
    arm_swing: float = 0.25           # rad at 1 m/s, scales with speed
    leg_swing: float = 0.3            # rad at 1 m/s
    bob_amplitude: float = 0.015      # vertical body bounce, meters

    def __post_init__(self):
        if self.kind not in ("static", "oscillate", "walk"):
            raise ValueError(f"unknown motion kind: {self.kind}")
        if self.kind == "walk":
            if len(self.waypoints) < 2:
                raise ValueError("walk script needs at least 2 waypoints")
            if self.speed <= 0:
                raise ValueError("walk speed must be > 0")


def _walk_state(script: MotionScript, t: float) -> tuple[np.ndarray, float]:
    """Position and heading along the closed waypoint loop at time t."""
    pts = [np.asarray(w, dtype=float) for w in script.waypoints]
    pts.append(pts[0])
    seg_len = [float(np.linalg.norm(pts[i + 1] - pts[i])) for i in range(len(pts) - 1)]
    total = sum(seg_len)
    s = (script.speed * t) % total
    for i, L in enumerate(seg_len):
        if s <= L or i == len(seg_len) - 1:
            d = pts[i + 1] - pts[i]
            heading = math.atan2(d[1], d[0])
            frac = s / L if L > 0 else 0.0
            xy = pts[i] + frac * d
            return xy, heading
        s -= L
    raise AssertionError("unreachable")


def pose_at(script: MotionScript, t: float) -> SkeletonPose:
    """Ground-truth pose of the subject at time t (deterministic)."""
    if script.kind == "static":
        sway = script.sway_amplitude * math.sin(2.0 * math.pi * 0.25 * t)
        origin = np.array([script.position[0], script.position[1] + sway, 0.0])
        return build_pose(origin, script.heading)
    if script.kind == "oscillate":
        angle = (script.amplitude / ARM_CHAIN_LENGTH) * math.sin(
            2.0 * math.pi * script.frequency * t
        )
        leg = (script.amplitude / LEG_CHAIN_LENGTH) * math.sin(
            2.0 * math.pi * script.frequency * t
        )
        origin = np.array([script.position[0], script.position[1], 0.0])
        return build_pose(origin, script.heading, angle, -angle, -leg, leg)
    # walk
    xy, heading = _walk_state(script, t)
    step_freq = script.speed / script.stride_length
    gait_freq = step_freq / 2.0
    phase = 2.0 * math.pi * gait_freq * t
    scale = min(script.speed, 2.0)
    arm = script.arm_swing * scale * math.sin(phase)
    leg = script.leg_swing * scale * math.sin(phase)
    bob = script.bob_amplitude * scale * math.sin(2.0 * phase)
    origin = np.array([xy[0], xy[1], bob])
    return build_pose(origin, heading, arm, -arm, -leg, leg)


# ---------------------------------------------------------------------------
# Camera nodes


@dataclass
class ConfidenceModel:
    base: float = 1.0
    distance_decay: float = 0.0       # per meter beyond reference_distance
    reference_distance: float = 2.0
    jitter: float = 0.0               # uniform [0, jitter) subtracted per joint
    occlusion_factor: float = 0.3     # multiplier in "degrade" occlusion mode


@dataclass
class OutlierModel:
    probability: float = 0.0          # per joint per frame
    magnitude: tuple[float, float] = (0.3, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("outlier probability must be in [0, 1]")


@dataclass
class OcclusionModel:
    sectors: list[tuple[float, float]] = field(default_factory=list)  # (azimuth°, width°)
    inter_subject: bool = True
    radius: float = 0.25              # torso cylinder radius, meters
    mode: str = "drop"                # "drop" or "degrade"

    def __post_init__(self):
        if self.mode not in ("drop", "degrade"):
            raise ValueError(f"unknown occlusion mode: {self.mode}")


@dataclass
class CameraNode:
    """Extrinsic pose, rate, and noise profile of one detection node."""

    camera_id: str
    extrinsic: RigidTransform         # camera frame -> global frame
    frame_rate: float = 30.0
    clock_offset: float = 0.0
    noise_sigma: float = 0.0          # per-joint per-axis Gaussian, meters
    confidence: ConfidenceModel = field(default_factory=ConfidenceModel)
    outliers: OutlierModel = field(default_factory=OutlierModel)
    occlusion: OcclusionModel = field(default_factory=OcclusionModel)

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def look_at_transform(position, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-global transform for a camera at `position` aimed at `target`.

    Camera convention: x right, y down, z forward (optical axis).
    """
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    n = np.linalg.norm(forward)
    if n == 0:
        raise ValueError("camera position coincides with target")
    forward = forward / n
    right = np.cross(forward, np.asarray(up, dtype=float))
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ValueError("camera optical axis parallel to up vector")
    right = right / rn
    down = np.cross(forward, right)
    R = np.column_stack([right, down, forward])
    return RigidTransform(R, position)


def preset_paper_layout(
    width: float = 6.0,
    depth: float = 6.0,
    height: float = 2.5,
    frame_rate: float = 30.0,
    look_at=(0.0, 0.0, 1.0),
    stagger_clocks: bool = True,
) -> list[CameraNode]:
    """Four nodes at the corners of a rectangle, aimed at the area center."""
    hw, hd = width / 2.0, depth / 2.0
    corners = [(hw, hd), (-hw, hd), (-hw, -hd), (hw, -hd)]
    nodes = []
    for i, (x, y) in enumerate(corners):
        offset = (i / (4.0 * frame_rate)) if stagger_clocks else 0.0
        nodes.append(
            CameraNode(
                camera_id=f"cam{i}",
                extrinsic=look_at_transform((x, y, height), look_at),
                frame_rate=frame_rate,
                clock_offset=offset,
            )
        )
    return nodes


# ---------------------------------------------------------------------------
# Occlusion geometry


def _segment_segment_distance(p1, q1, p2, q2) -> tuple[float, float, float]:
    """Min distance between segments [p1,q1], [p2,q2] and the parameters."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    if a <= 1e-15 and e <= 1e-15:
        return float(np.linalg.norm(r)), 0.0, 0.0
    if a <= 1e-15:
        s, t = 0.0, min(max(f / e, 0.0), 1.0)
    else:
        c = float(d1 @ r)
        if e <= 1e-15:
            t, s = 0.0, min(max(-c / a, 0.0), 1.0)
        else:
            b = float(d1 @ d2)
            denom = a * e - b * b
            s = min(max((b * f - c * e) / denom, 0.0), 1.0) if denom > 1e-15 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t, s = 0.0, min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t, s = 1.0, min(max((b - c) / a, 0.0), 1.0)
    closest1 = p1 + s * d1
    closest2 = p2 + t * d2
    return float(np.linalg.norm(closest1 - closest2)), s, t


def _torso_segment(pose: SkeletonPose) -> tuple[np.ndarray, np.ndarray]:
    neck = pose.positions[JointId.NECK]
    hip_mid = 0.5 * (
        pose.positions[JointId.LEFT_HIP] + pose.positions[JointId.RIGHT_HIP]
    )
    return neck, hip_mid


def occluded_by_subject(
    cam_pos: np.ndarray, joint: np.ndarray, other: SkeletonPose, radius: float
) -> bool:
    """True when another subject's torso blocks the camera-to-joint ray."""
    a, b = _torso_segment(other)
    dist, s, _ = _segment_segment_distance(cam_pos, joint, a, b)
    if dist >= radius:
        return False
    blocker = cam_pos + s * (joint - cam_pos)
    return float(np.linalg.norm(blocker - cam_pos)) < float(
        np.linalg.norm(joint - cam_pos)
    )


# ---------------------------------------------------------------------------
# Scene generation


@dataclass
class GroundTruthLog:
    """True poses per subject at a fixed reference rate."""

    subjects: dict[str, tuple[np.ndarray, np.ndarray]]  # id -> (times, (T,15,3))

    def subject_ids(self) -> list[str]:
        return sorted(self.subjects)


def write_truth(path, truth: GroundTruthLog) -> None:
    import json

    rows = []
    for sid in truth.subject_ids():
        times, poses = truth.subjects[sid]
        for t, pose in zip(times, poses):
            rows.append((float(t), sid, pose))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w") as fh:
        for t, sid, pose in rows:
            fh.write(
                json.dumps(
                    {"timestamp": t, "subject_id": sid, "joints": pose.tolist()}
                )
                + "\n"
            )


def read_truth(path) -> GroundTruthLog:
    import json

    acc: dict[str, list[tuple[float, list]]] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            acc.setdefault(rec["subject_id"], []).append(
                (rec["timestamp"], rec["joints"])
            )
    subjects = {}
    for sid, rows in acc.items():
        rows.sort(key=lambda r: r[0])
        times = np.array([r[0] for r in rows])
        poses = np.array([r[1] for r in rows])
        subjects[sid] = (times, poses)
    return GroundTruthLog(subjects)


@dataclass
class SceneConfig:
    name: str
    duration: float
    scripts: list[MotionScript]
    nodes: list[CameraNode]
    truth_rate: float = 100.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if not self.scripts:
            raise ValueError("scene needs at least one subject")
        if not self.nodes:
            raise ValueError("scene needs at least one camera node")
        ids = [s.subject_id for s in self.scripts]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate subject ids")
        cams = [n.camera_id for n in self.nodes]
        if len(set(cams)) != len(cams):
            raise ValueError("duplicate camera ids")


@dataclass
class SceneResult:
    truth: GroundTruthLog
    streams: dict[str, list[DetectionBatch]]
    extrinsics: dict[str, RigidTransform]


def _simulate_node(
    node: CameraNode,
    node_index: int,
    scripts: list[MotionScript],
    duration: float,
    seed: int,
) -> list[DetectionBatch]:
    rng = np.random.default_rng(np.random.SeedSequence((seed, node_index)))
    T_inv = node.extrinsic.inverse()
    cam_pos = node.extrinsic.translation
    batches = []
    k = 0
    while True:
        t = node.clock_offset + k / node.frame_rate
        k += 1
        if t >= duration:
            break
        true_poses = {s.subject_id: pose_at(s, t) for s in scripts}
        detections = []
        for script in scripts:
            sid = script.subject_id
            pose = true_poses[sid]
            # Draw every random field unconditionally so the stream is a pure
            # function of (seed, node) regardless of occlusion outcomes.
            noise = rng.normal(0.0, 1.0, (N_JOINTS, 3))
            spike_u = rng.random(N_JOINTS)
            spike_dir = rng.normal(0.0, 1.0, (N_JOINTS, 3))
            spike_mag = rng.uniform(*node.outliers.magnitude, N_JOINTS)
            conf_jitter = rng.uniform(0.0, 1.0, N_JOINTS)

            cam_pts = T_inv.apply(pose.positions)
            pos = cam_pts + node.noise_sigma * noise
            conf = np.full(N_JOINTS, node.confidence.base)
            dists = np.linalg.norm(cam_pts, axis=1)
            conf -= node.confidence.distance_decay * np.maximum(
                0.0, dists - node.confidence.reference_distance
            )
            conf -= node.confidence.jitter * conf_jitter

            if node.outliers.probability > 0:
                hit = spike_u < node.outliers.probability
                if hit.any():
                    dirs = spike_dir[hit]
                    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
                    pos[hit] += dirs * spike_mag[hit][:, None]

            drop = np.zeros(N_JOINTS, dtype=bool)
            degraded = np.zeros(N_JOINTS, dtype=bool)
            occ = node.occlusion
            if occ.sectors:
                az = np.degrees(np.arctan2(cam_pts[:, 0], cam_pts[:, 2]))
                for center, width in occ.sectors:
                    inside = np.abs((az - center + 180.0) % 360.0 - 180.0) <= width / 2.0
                    if occ.mode == "drop":
                        drop |= inside
                    else:
                        degraded |= inside
            if occ.inter_subject and len(scripts) > 1:
                for other in scripts:
                    if other.subject_id == sid:
                        continue
                    other_pose = true_poses[other.subject_id]
                    for m in range(N_JOINTS):
                        if drop[m]:
                            continue
                        if occluded_by_subject(
                            cam_pos, pose.positions[m], other_pose, occ.radius
                        ):
                            if occ.mode == "drop":
                                drop[m] = True
                            else:
                                degraded[m] = True
            conf[degraded] *= node.confidence.occlusion_factor
            conf = np.clip(conf, 0.0, 1.0)
            pos[drop] = np.nan
            if (~drop).any():
                detections.append(SkeletonDetection(node.camera_id, t, pos, conf))
        if detections:
            batches.append(DetectionBatch(node.camera_id, t, detections))
    return batches


def generate_scene(config: SceneConfig, seed: int) -> SceneResult:
    """Produce the ground-truth log and one detection stream per node."""
    n_truth = int(math.floor(config.duration * config.truth_rate))
    times = np.arange(n_truth) / config.truth_rate
    subjects = {}
    for script in config.scripts:
        poses = np.stack([pose_at(script, t).positions for t in times])
        subjects[script.subject_id] = (times.copy(), poses)
    truth = GroundTruthLog(subjects)

    streams = {}
    for idx, node in enumerate(config.nodes):
        streams[node.camera_id] = _simulate_node(
            node, idx, config.scripts, config.duration, seed
        )
    extrinsics = {n.camera_id: n.extrinsic for n in config.nodes}
    return SceneResult(truth, streams, extrinsics)


def write_scene(outdir, result: SceneResult) -> list[str]:
    """Write stream/truth/extrinsics files; returns the paths written."""
    import os

    from .ingest import save_extrinsics

    os.makedirs(outdir, exist_ok=True)
    paths = []
    for cam in sorted(result.streams):
        p = os.path.join(outdir, f"{cam}.stream.jsonl")
        write_stream(p, result.streams[cam])
        paths.append(p)
    truth_path = os.path.join(outdir, "truth.jsonl")
    write_truth(truth_path, result.truth)
    paths.append(truth_path)
    extr_path = os.path.join(outdir, "extrinsics.json")
    save_extrinsics(extr_path, result.extrinsics)
    paths.append(extr_path)
    return paths


# ---------------------------------------------------------------------------
# Preset scenes


def _noisy_nodes(
    occlusion_mode: str = "degrade",
    noise_sigma: float = 0.02,
    outlier_probability: float = 0.05,
) -> list[CameraNode]:
    nodes = preset_paper_layout()
    out = []
    for n in nodes:
        out.append(
            replace(
                n,
                noise_sigma=noise_sigma,
                confidence=ConfidenceModel(
                    base=0.95,
                    distance_decay=0.02,
                    reference_distance=2.0,
                    jitter=0.1,
                ),
                outliers=OutlierModel(probability=outlier_probability),
                occlusion=OcclusionModel(mode=occlusion_mode),
            )
        )
    return out


_SQUARE = [(-1.5, -1.5), (1.5, -1.5), (1.5, 1.5), (-1.5, 1.5)]
_SQUARE_SMALL = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]


def _preset(name: str, duration: float | None) -> SceneConfig:
    d = duration
    if name == "static-one":
        return SceneConfig(
            name, d or 10.0,
            [MotionScript("s0", "static", position=(0.3, 0.2))],
            _noisy_nodes(),
        )
    if name == "static-two":
        return SceneConfig(
            name, d or 10.0,
            [
                MotionScript("s0", "static", position=(0.9, 0.6), heading=2.0),
                MotionScript("s1", "static", position=(-0.9, -0.6), heading=-1.0),
            ],
            _noisy_nodes(),
        )
    if name == "walk-slow-one":
        return SceneConfig(
            name, d or 10.0,
            [MotionScript("s0", "walk", waypoints=_SQUARE, speed=0.5)],
            _noisy_nodes(),
        )
    if name == "walk-fast-one":
        return SceneConfig(
            name, d or 10.0,
            [MotionScript("s0", "walk", waypoints=_SQUARE, speed=1.5)],
            _noisy_nodes(),
        )
    if name in ("walk-slow-two", "paper-layout-2walkers"):
        return SceneConfig(
            name, d or 10.0,
            [
                MotionScript("s0", "walk", waypoints=_SQUARE, speed=0.5),
                MotionScript(
                    "s1", "walk", waypoints=list(reversed(_SQUARE_SMALL)), speed=0.5
                ),
            ],
            _noisy_nodes(),
        )
    if name == "walk-fast-two":
        return SceneConfig(
            name, d or 10.0,
            [
                MotionScript("s0", "walk", waypoints=_SQUARE, speed=1.5),
                MotionScript(
                    "s1", "walk", waypoints=list(reversed(_SQUARE_SMALL)), speed=1.2
                ),
            ],
            _noisy_nodes(),
        )
    if name == "static-calibration":
        nodes = preset_paper_layout()
        nodes = [replace(n, noise_sigma=0.02) for n in nodes]
        return SceneConfig(
            name, d or 15.0,
            [MotionScript("s0", "static", position=(0.0, 0.0), sway_amplitude=0.0)],
            nodes,
        )
    raise KeyError(name)


BENCH_SCENES = (
    "static-one",
    "static-two",
    "walk-slow-one",
    "walk-fast-one",
    "walk-slow-two",
    "walk-fast-two",
)

PRESET_SCENES = BENCH_SCENES + ("paper-layout-2walkers", "static-calibration")

# The canonical noisy preset used for single-knob experiments.
DEFAULT_SCENE = "walk-slow-one"


def preset_scene(name: str, duration: float | None = None) -> SceneConfig:
    """Look up a built-in scene by name; `default` aliases the canonical one."""
    if name == "default":
        name = DEFAULT_SCENE
    try:
        return _preset(name, duration)
    except KeyError:
        raise KeyError(
            f"unknown preset scene '{name}'; available: "
            + ", ".join(PRESET_SCENES + ("default",))
        ) from None


# ---------------------------------------------------------------------------
# Scene config files (YAML). Schema documented in docs/formats.md.


class SceneConfigError(ValueError):
    pass


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise SceneConfigError(f"missing key '{key}' in {context}")
    return mapping[key]


def _script_from_dict(d: dict) -> MotionScript:
    sid = _require(d, "id", "subject entry")
    kind = _require(d, "kind", f"subject '{sid}'")
    kwargs = {}
    if kind == "walk":
        kwargs["waypoints"] = [tuple(w) for w in _require(d, "waypoints", f"subject '{sid}'")]
        kwargs["speed"] = float(_require(d, "speed", f"subject '{sid}'"))
    passthrough = (
        "heading", "sway_amplitude", "amplitude", "frequency",
        "stride_length", "arm_swing", "leg_swing", "bob_amplitude",
    )
    for key in passthrough:
        if key in d:
            kwargs[key] = float(d[key])
    if "position" in d:
        kwargs["position"] = tuple(d["position"])
    try:
        return MotionScript(subject_id=sid, kind=kind, **kwargs)
    except ValueError as exc:
        raise SceneConfigError(f"subject '{sid}': {exc}") from None


def _noise_blocks(d: dict) -> dict:
    blocks = {}
    if "noise_sigma" in d:
        blocks["noise_sigma"] = float(d["noise_sigma"])
    if "confidence" in d:
        blocks["confidence"] = ConfidenceModel(**d["confidence"])
    if "outliers" in d:
        o = dict(d["outliers"])
        if "magnitude" in o:
            o["magnitude"] = tuple(o["magnitude"])
        blocks["outliers"] = OutlierModel(**o)
    if "occlusion" in d:
        o = dict(d["occlusion"])
        if "sectors" in o:
            o["sectors"] = [tuple(s) for s in o["sectors"]]
        blocks["occlusion"] = OcclusionModel(**o)
    return blocks


def _nodes_from_dict(d: dict) -> list[CameraNode]:
    shared = _noise_blocks(d)
    layout = d.get("layout", "explicit")
    if layout == "paper":
        nodes = preset_paper_layout(
            width=float(d.get("width", 6.0)),
            depth=float(d.get("depth", 6.0)),
            height=float(d.get("height", 2.5)),
            frame_rate=float(d.get("frame_rate", 30.0)),
        )
        return [replace(n, **shared) for n in nodes]
    if layout != "explicit":
        raise SceneConfigError(f"unknown camera layout '{layout}'")
    entries = _require(d, "nodes", "cameras section")
    nodes = []
    for entry in entries:
        cam = _require(entry, "camera_id", "camera entry")
        pos = _require(entry, "position", f"camera '{cam}'")
        target = _require(entry, "look_at", f"camera '{cam}'")
        blocks = dict(shared)
        blocks.update(_noise_blocks(entry))
        nodes.append(
            CameraNode(
                camera_id=cam,
                extrinsic=look_at_transform(pos, target),
                frame_rate=float(entry.get("frame_rate", d.get("frame_rate", 30.0))),
                clock_offset=float(entry.get("clock_offset", 0.0)),
                **blocks,
            )
        )
    return nodes


def load_scene(path) -> SceneConfig:
    """Parse a scene config file; errors name the offending key."""
    import os

    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise SceneConfigError("scene file must contain a mapping")
    name = data.get("name", os.path.splitext(os.path.basename(str(path)))[0])
    duration = float(_require(data, "duration", "scene"))
    subjects = _require(data, "subjects", "scene")
    scripts = [_script_from_dict(s) for s in subjects]
    cameras = _require(data, "cameras", "scene")
    nodes = _nodes_from_dict(cameras)
    try:
        return SceneConfig(
            name, duration, scripts, nodes,
            truth_rate=float(data.get("truth_rate", 100.0)),
        )
    except ValueError as exc:
        raise SceneConfigError(str(exc)) from None


def resolve_scene(spec: str, duration: float | None = None) -> SceneConfig:
    """Accept either a preset name or a path to a scene YAML file."""
    import os

    if os.path.exists(spec):
        cfg = load_scene(spec)
        if duration is not None:
            cfg = replace(cfg, duration=duration)
        return cfg
    return preset_scene(spec, duration)
