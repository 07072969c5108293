"""Detection ingestion: batches from asynchronous camera nodes.

Each detection node emits timestamped batches of single-view skeleton
detections in its own camera frame. The central pipeline consumes batches
serially in arrival order; `ingest_batch` lifts a batch into the global
frame using the node's extrinsic calibration.

Stream file format (offline replay): one JSON object per line,
    {"camera_id": str, "timestamp": float,
     "detections": [[null | {"x","y","z","c"}] * 15, ...]}
See docs/formats.md.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .model import N_JOINTS, RigidTransform, SkeletonPose


class UncalibratedNodeError(KeyError):
    """A batch arrived from a camera with no known extrinsic transform."""


class StreamFormatError(ValueError):
    """A detection stream file violates the line format."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


@dataclass(frozen=True)
class JointObservation:
    """One observed joint: position (camera or global frame) and confidence."""

    position: np.ndarray
    confidence: float

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        if not np.isfinite(p).all():
            raise ValueError("joint position must be finite")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "position", p)


@dataclass
class SkeletonDetection:
    """One single-view skeleton: 15 optional joints with confidences.

    Internally stored as dense arrays; absent joints have NaN positions and
    confidence 0.
    """

    camera_id: str
    timestamp: float
    positions: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        conf = np.asarray(self.confidences, dtype=float)
        if pos.shape != (N_JOINTS, 3) or conf.shape != (N_JOINTS,):
            raise ValueError("detection arrays must be (15, 3) and (15,)")
        if not (np.isfinite(self.timestamp) and self.timestamp >= 0.0):
            raise ValueError(f"bad timestamp {self.timestamp}")
        present = np.isfinite(pos).all(axis=1)
        if not present.any():
            raise ValueError("detection has no joints present")
        if np.any(conf[present] < 0.0) or np.any(conf[present] > 1.0):
            raise ValueError("confidences outside [0, 1]")
        conf = np.where(present, conf, 0.0)
        self.positions = pos
        self.confidences = conf

    @classmethod
    def from_observations(
        cls,
        camera_id: str,
        timestamp: float,
        joints: list[JointObservation | None],
    ) -> "SkeletonDetection":
        if len(joints) != N_JOINTS:
            raise ValueError(f"expected {N_JOINTS} joint slots, got {len(joints)}")
        pos = np.full((N_JOINTS, 3), np.nan)
        conf = np.zeros(N_JOINTS)
        for m, obs in enumerate(joints):
            if obs is not None:
                pos[m] = obs.position
                conf[m] = obs.confidence
        return cls(camera_id, timestamp, pos, conf)

    @property
    def present(self) -> np.ndarray:
        return np.isfinite(self.positions).all(axis=1)

    def joint(self, m: int) -> JointObservation | None:
        if not np.isfinite(self.positions[m]).all():
            return None
        return JointObservation(self.positions[m], float(self.confidences[m]))

    def pose(self) -> SkeletonPose:
        return SkeletonPose(self.positions.copy())


@dataclass
class DetectionBatch:
    """All detections produced by one node at one sample time."""

    camera_id: str
    timestamp: float
    detections: list[SkeletonDetection] = field(default_factory=list)

    def __post_init__(self):
        for det in self.detections:
            if det.camera_id != self.camera_id or det.timestamp != self.timestamp:
                raise ValueError(
                    "batch members must share the batch camera_id and timestamp"
                )


def ingest_batch(
    batch: DetectionBatch, extrinsics: dict[str, RigidTransform]
) -> DetectionBatch:
    """Express every joint of a batch in the global frame.

    Confidences and timestamps are untouched.
    """
    if batch.camera_id not in extrinsics:
        raise UncalibratedNodeError(f"uncalibrated node: {batch.camera_id}")
    T = extrinsics[batch.camera_id]
    out = []
    for det in batch.detections:
        out.append(
            SkeletonDetection(
                det.camera_id,
                det.timestamp,
                T.apply(det.positions),
                det.confidences.copy(),
            )
        )
    return DetectionBatch(batch.camera_id, batch.timestamp, out)


# ---------------------------------------------------------------------------
# Stream files


def _detection_to_row(det: SkeletonDetection) -> list:
    row = []
    for m in range(N_JOINTS):
        if np.isfinite(det.positions[m]).all():
            x, y, z = det.positions[m]
            row.append({"x": x, "y": y, "z": z, "c": det.confidences[m]})
        else:
            row.append(None)
    return row


def write_stream(path, batches: Iterable[DetectionBatch]) -> None:
    with open(path, "w") as fh:
        for batch in batches:
            record = {
                "camera_id": batch.camera_id,
                "timestamp": batch.timestamp,
                "detections": [_detection_to_row(d) for d in batch.detections],
            }
            fh.write(json.dumps(record) + "\n")


def _parse_batch(record: dict, line_no: int) -> DetectionBatch:
    for key in ("camera_id", "timestamp", "detections"):
        if key not in record:
            raise StreamFormatError(line_no, f"missing field '{key}'")
    cam = record["camera_id"]
    ts = record["timestamp"]
    dets = []
    for d, row in enumerate(record["detections"]):
        if len(row) != N_JOINTS:
            raise StreamFormatError(
                line_no, f"detection {d} has {len(row)} joint slots, expected {N_JOINTS}"
            )
        pos = np.full((N_JOINTS, 3), np.nan)
        conf = np.zeros(N_JOINTS)
        for m, cell in enumerate(row):
            if cell is None:
                continue
            try:
                pos[m] = (cell["x"], cell["y"], cell["z"])
                conf[m] = cell["c"]
            except (KeyError, TypeError) as exc:
                raise StreamFormatError(
                    line_no, f"joint {m} of detection {d} malformed: {exc}"
                ) from None
        try:
            dets.append(SkeletonDetection(cam, ts, pos, conf))
        except ValueError as exc:
            raise StreamFormatError(line_no, str(exc)) from None
    try:
        return DetectionBatch(cam, ts, dets)
    except ValueError as exc:
        raise StreamFormatError(line_no, str(exc)) from None


def read_stream(path) -> list[DetectionBatch]:
    batches = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StreamFormatError(line_no, f"invalid JSON: {exc.msg}") from None
            batches.append(_parse_batch(record, line_no))
    return batches


def replay(
    streams: list[list[DetectionBatch]],
    mode: str = "merged",
    seed: int | None = None,
) -> Iterator[DetectionBatch]:
    """Merge per-node batch lists into one arrival sequence.

    "merged" interleaves by timestamp (ties broken by camera_id) and is fully
    reproducible. "jitter" draws a random interleaving that still preserves
    per-node FIFO order, exercising the asynchrony contract.
    """
    if mode == "merged":
        order = []
        for batches in streams:
            order.extend(batches)
        yield from sorted(order, key=lambda b: (b.timestamp, b.camera_id))
    elif mode == "jitter":
        rng = np.random.default_rng(seed)
        cursors = [0] * len(streams)
        remaining = sum(len(s) for s in streams)
        while remaining:
            live = [i for i, s in enumerate(streams) if cursors[i] < len(s)]
            pick = live[int(rng.integers(len(live)))]
            yield streams[pick][cursors[pick]]
            cursors[pick] += 1
            remaining -= 1
    else:
        raise ValueError(f"unknown replay mode: {mode}")


class IngestQueue:
    """Thread-safe conduit from N producer nodes to the single consumer.

    Producers call submit() concurrently; the consumer iterates. Per-node
    FIFO holds because each producer submits its own batches in order and
    the underlying queue preserves insertion order.
    """

    _DONE = object()

    def __init__(self, maxsize: int = 0):
        self._q: queue.Queue = queue.Queue(maxsize=maxsize)
        self._closed = threading.Event()

    def submit(self, batch: DetectionBatch) -> None:
        if self._closed.is_set():
            raise RuntimeError("queue closed")
        self._q.put(batch)

    def close(self) -> None:
        self._closed.set()
        self._q.put(self._DONE)

    def __iter__(self) -> Iterator[DetectionBatch]:
        while True:
            item = self._q.get()
            if item is self._DONE:
                return
            yield item


# ---------------------------------------------------------------------------
# Extrinsics files


def save_extrinsics(path, extrinsics: dict[str, RigidTransform]) -> None:
    payload = {
        cam: {
            "rotation": T.rotation.tolist(),
            "translation": T.translation.tolist(),
        }
        for cam, T in sorted(extrinsics.items())
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_extrinsics(path) -> dict[str, RigidTransform]:
    with open(path) as fh:
        payload = json.load(fh)
    return {
        cam: RigidTransform(np.array(d["rotation"]), np.array(d["translation"]))
        for cam, d in payload.items()
    }
