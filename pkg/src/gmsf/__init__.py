"""Scene flow from two point clouds by global softmax matching of
transformer features."""

from .config import TrainConfig
from .data_io import SynthConfig, export_ply, read_scene, synth_scene, write_scene
from .evaluation import Metrics, compute_metrics, robust_loss
from .geometry import NeighborGraph, PointCloud, ScenePair, augment_flip, knn, random_sample
from .matcher import cross_similarity, match_flow, self_similarity, smooth_flow
from .model import GMSF
from .training import Trainer, evaluate, grad, predict, train

__all__ = [
    "GMSF", "Metrics", "NeighborGraph", "PointCloud", "ScenePair", "SynthConfig",
    "TrainConfig", "Trainer", "augment_flip", "compute_metrics", "cross_similarity",
    "evaluate", "export_ply", "grad", "knn", "match_flow", "predict", "random_sample",
    "read_scene", "robust_loss", "self_similarity", "smooth_flow", "synth_scene",
    "train", "write_scene",
]
