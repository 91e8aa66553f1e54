"""Two-view relative camera pose estimation over epipolar correspondence
graphs: classical eight-point estimation, a trainable message-passing
regressor with a geometry-coupled loss, and visual-odometry metrics."""

from . import config, epipolar, errors, geom, graph, losses, metrics, nn, seeding, synth, train
from .geom import Intrinsics, Pose
from .graph import EpipolarGraph, GraphParams, build_graph
from .losses import LossBreakdown, LossWeights, PoseTarget
from .synth import CorrespondenceSet, SamplingSpec, Trajectory

__version__ = "0.1.0"

__all__ = [
    "CorrespondenceSet", "EpipolarGraph", "GraphParams", "Intrinsics",
    "LossBreakdown", "LossWeights", "Pose", "PoseTarget", "SamplingSpec",
    "Trajectory", "build_graph", "config", "epipolar", "errors", "geom",
    "graph", "losses", "metrics", "nn", "seeding", "synth", "train",
]
