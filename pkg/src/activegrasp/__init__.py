"""Active learning of grasp success with a multi-armed bandit over query-synthesis strategies."""

__version__ = "0.1.0"

from .config import ExperimentConfig, desk_config
from .core import Bounds, Dataset, GraspSample, ObjectView, Source
from .model import GraspModel, ModelConfig, TrainOpts
from .pipeline import compare

__all__ = [
    "Bounds",
    "Dataset",
    "ExperimentConfig",
    "GraspModel",
    "GraspSample",
    "ModelConfig",
    "ObjectView",
    "Source",
    "TrainOpts",
    "compare",
    "desk_config",
]
