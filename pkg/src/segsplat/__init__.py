"""Segmentation-driven downsampling of multi-view point clouds for Gaussian splat initialisation."""

from .core import CameraIntrinsics, CameraPose, CameraView, DensePointSet
from .downsample import SamplerConfig, downsample
from .labeling import build_partition, context_views, label_cloud
from .mdbscan import SegmentationMap, SegmentationParams, segment
from .pipeline import PipelineConfig, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "CameraView",
    "DensePointSet",
    "SegmentationParams",
    "SegmentationMap",
    "segment",
    "context_views",
    "label_cloud",
    "build_partition",
    "SamplerConfig",
    "downsample",
    "PipelineConfig",
    "run_pipeline",
]
