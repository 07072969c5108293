"""skelfuse: multi-camera skeletal fusion and tracking."""

from .model import (
    BodyModel,
    JointId,
    N_JOINTS,
    RigidTransform,
    SkeletonPose,
    centroid,
    default_body_model,
    derive_chest,
    transform_pose,
)
from .ingest import DetectionBatch, JointObservation, SkeletonDetection, ingest_batch
from .fusion import JointStatus, NoiseConfig, TrackState, UpdateReport
from .pipeline import FusionPipeline, PipelineConfig, TrackFrame, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "BodyModel",
    "DetectionBatch",
    "FusionPipeline",
    "JointId",
    "JointObservation",
    "JointStatus",
    "N_JOINTS",
    "NoiseConfig",
    "PipelineConfig",
    "RigidTransform",
    "SkeletonDetection",
    "SkeletonPose",
    "TrackFrame",
    "TrackState",
    "UpdateReport",
    "centroid",
    "default_body_model",
    "derive_chest",
    "ingest_batch",
    "run_pipeline",
    "transform_pose",
    "__version__",
]
