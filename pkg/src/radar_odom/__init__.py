"""Radar-only planar ego-motion: Doppler velocity and two-way weighted ICP yaw."""

from .core import PolarPoint, Pose2, Trajectory, Vec2, se2_compose, se2_inverse, wrap_angle
from .ingest import Dataset, DopplerFrame, Heatmap, SensorSpec, load_coloradar_adapter, load_dataset
from .odometry import FrameEstimate, PipelineConfig, integrate_pose, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DopplerFrame", "FrameEstimate", "Heatmap", "PipelineConfig", "PolarPoint", "Pose2",
    "SensorSpec", "Trajectory", "Vec2", "integrate_pose", "load_coloradar_adapter", "load_dataset",
    "run_pipeline", "se2_compose", "se2_inverse", "wrap_angle",
]
