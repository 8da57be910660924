"""Conditional motion in-betweening.

Fills the frames between sparse key poses with a transformer encoder that
can be conditioned on an interior anchor pose and a semantic action label.
The package also carries the surrounding pipeline: BVH ingestion, window
datasets, smooth-path trajectory augmentation, training, evaluation,
a command line, and an HTTP inference service.
"""

from .dataset import (
    LabelTable,
    MotionWindow,
    NormStats,
    SubjectSplit,
    make_windows,
    read_window,
    write_window,
)
from .geometry import (
    MotionSequence,
    Pose,
    Skeleton,
    align_heading,
    interpolate_missing,
    piecewise_lerp,
    piecewise_slerp,
    rescale_links,
)
from .model import CMIBConfig, CMIBModel, infill, load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainingDiverged, train

__version__ = "0.1.0"

__all__ = [
    "CMIBConfig",
    "CMIBModel",
    "LabelTable",
    "MotionSequence",
    "MotionWindow",
    "NormStats",
    "Pose",
    "Skeleton",
    "SubjectSplit",
    "TrainConfig",
    "TrainingDiverged",
    "align_heading",
    "infill",
    "interpolate_missing",
    "load_checkpoint",
    "make_windows",
    "piecewise_lerp",
    "piecewise_slerp",
    "read_window",
    "rescale_links",
    "save_checkpoint",
    "train",
    "write_window",
]
