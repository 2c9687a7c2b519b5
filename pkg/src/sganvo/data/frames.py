from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..geometry import Intrinsics, invert_transform


@dataclass
class Frame:
    """One calibrated time step; images are [3, H, W] floats in [0, 1]."""

    left: np.ndarray
    intrinsics: Intrinsics
    index: int = 0
    right: Optional[np.ndarray] = None
    gt_pose: Optional[np.ndarray] = None  # camera-to-world 4x4
    gt_depth: Optional[np.ndarray] = None  # metres, 0 where unknown
    baseline: Optional[float] = None

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float64)
        if self.left.ndim != 3 or self.left.shape[0] != 3:
            raise ValueError(f"left image must be [3, H, W], got {self.left.shape}")
        h, w = self.left.shape[1:]
        if (self.intrinsics.width, self.intrinsics.height) != (w, h):
            raise ValueError(
                f"intrinsics are for {self.intrinsics.width}x{self.intrinsics.height} but image is {w}x{h}"
            )
        if self.right is not None:
            self.right = np.asarray(self.right, dtype=np.float64)
            if self.right.shape != self.left.shape:
                raise ValueError(f"right image shape {self.right.shape} != left {self.left.shape}")

    @property
    def size(self) -> tuple:
        return self.left.shape[2], self.left.shape[1]


@dataclass
class SequenceWindow:
    frames: list
    sequence_id: str = ""
    start_index: int = 0

    def __post_init__(self):
        if not self.frames:
            raise ValueError("empty window")
        k = self.frames[0].intrinsics
        for f in self.frames[1:]:
            if f.intrinsics != k:
                raise ValueError("inconsistent calibration within a window")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def intrinsics(self) -> Intrinsics:
        return self.frames[0].intrinsics

    @property
    def is_stereo(self) -> bool:
        return all(f.right is not None for f in self.frames)

    def as_batch(self) -> tuple:
        """(lefts, rights, K): lists of [1, 3, H, W] arrays; monocular windows reuse the left image."""
        lefts = [f.left[None] for f in self.frames]
        rights = [(f.right if f.right is not None else f.left)[None] for f in self.frames]
        return lefts, rights, self.intrinsics

    def relative_poses(self) -> list:
        """Ground-truth inv(T_{t-1}) @ T_t for consecutive frames."""
        poses = [f.gt_pose for f in self.frames]
        if any(p is None for p in poses):
            raise ValueError("window has no ground-truth poses")
        return [invert_transform(a) @ b for a, b in zip(poses[:-1], poses[1:])]


def stack_windows(windows: Sequence[SequenceWindow]) -> tuple:
    """Batch equal-length windows: per step [B, 3, H, W] arrays, plus shared intrinsics."""
    if not windows:
        raise ValueError("no windows to stack")
    n = len(windows[0])
    k = windows[0].intrinsics
    for w in windows:
        if len(w) != n or w.intrinsics != k:
            raise ValueError("windows in a batch must share length and calibration")
    batches = [w.as_batch() for w in windows]
    lefts = [np.concatenate([b[0][t] for b in batches], axis=0) for t in range(n)]
    rights = [np.concatenate([b[1][t] for b in batches], axis=0) for t in range(n)]
    return lefts, rights, k


def sliding_windows(frames: Sequence[Frame], n: int, stride: int = 1, sequence_id: str = "") -> list:
    """All windows of ``n`` consecutive frames; F frames give F - n + 1 windows at stride 1."""
    return [
        SequenceWindow(list(frames[s : s + n]), sequence_id, s)
        for s in range(0, len(frames) - n + 1, stride)
    ]

