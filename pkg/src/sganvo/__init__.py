"""Stacked generative adversarial visual odometry on a small numpy autodiff engine."""

from .data import Frame, SequenceWindow, SynthSceneSpec, generate_synth
from .geometry import Intrinsics, Pose6, StereoCalibration, pose_to_transform, reproject, warp_image
from .losses import LossReport, LossWeights
from .network import SGANVONet, StackConfig, unroll_window
from .trainer import TrainConfig, train, train_step

__version__ = "0.1.0"

__all__ = [
    "Frame", "SequenceWindow", "SynthSceneSpec", "generate_synth", "Intrinsics", "Pose6",
    "StereoCalibration", "pose_to_transform", "reproject", "warp_image", "LossReport", "LossWeights",
    "SGANVONet", "StackConfig", "unroll_window", "TrainConfig", "train", "train_step", "SGANVOEstimator", "__version__",
]


def __getattr__(name):
    # scikit-learn is only imported when the estimator is asked for
    if name == "SGANVOEstimator":
        from .estimator import SGANVOEstimator

        return SGANVOEstimator
    raise AttributeError(f"module 'sganvo' has no attribute {name!r}")
