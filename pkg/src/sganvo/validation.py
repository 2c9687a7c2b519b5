"""Input checks shared by the estimator and the public entry points."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .data.frames import Frame, SequenceWindow
from .geometry import Intrinsics


def check_image_batch(X, height: Optional[int] = None, width: Optional[int] = None) -> np.ndarray:
    """Validate window stacks shaped [n_windows, N, 3, H, W] with finite values in [0, 1]."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 5 or arr.shape[2] != 3:
        raise ValueError(f"expected windows shaped [n, N, 3, H, W], got {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] < 2:
        raise ValueError(f"need at least one window of two or more frames, got {arr.shape}")
    if height is not None and width is not None and arr.shape[3:] != (height, width):
        raise ValueError(f"frames are {arr.shape[4]}x{arr.shape[3]}, expected {width}x{height}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("images contain NaN or infinite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"image values must lie in [0, 1], got range [{arr.min():.3g}, {arr.max():.3g}]")
    return arr


def check_intrinsics(K, width: int, height: int) -> Intrinsics:
    if isinstance(K, Intrinsics):
        k = K
    else:
        m = np.asarray(K, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"intrinsics must be an Intrinsics or a 3x3 matrix, got shape {m.shape}")
        k = Intrinsics(m[0, 0], m[1, 1], m[0, 2], m[1, 2], width, height)
    if (k.width, k.height) != (width, height):
        k = k.scaled(width, height)
    return k


def check_windows(X, K=None, window: Optional[int] = None) -> list:
    """Normalize estimator input to a list of SequenceWindow.

    Accepts a sequence of SequenceWindow objects or an array of window stacks
    (which then needs ``K``). Right images default to the left images.
    """
    if isinstance(X, SequenceWindow):
        X = [X]
    if isinstance(X, (list, tuple)) and X and all(isinstance(w, SequenceWindow) for w in X):
        windows = list(X)
    else:
        arr = check_image_batch(X)
        if K is None:
            raise ValueError("array input needs intrinsics K")
        h, w = arr.shape[3:]
        k = check_intrinsics(K, w, h)
        windows = [SequenceWindow([Frame(img, k, t) for t, img in enumerate(win)], "", i)
                   for i, win in enumerate(arr)]
    if not windows:
        raise ValueError("no windows given")
    n = len(windows[0])
    if any(len(w) != n for w in windows):
        raise ValueError("all windows must have the same length")
    if window is not None and n != window:
        raise ValueError(f"windows have {n} frames, the model expects {window}")
    return windows


def check_pose_targets(y, n_windows: int, window: int) -> Optional[np.ndarray]:
    """Optional relative ground truth [n_windows, N-1, 4, 4]."""
    if y is None:
        return None
    arr = np.asarray(y, dtype=np.float64)
    expect = (n_windows, window - 1, 4, 4)
    if arr.shape != expect:
        raise ValueError(f"pose targets must be shaped {expect}, got {arr.shape}")
    return arr


def check_positive(name: str, value, allow_zero: bool = False) -> None:
    ok = value >= 0 if allow_zero else value > 0
    if not ok:
        raise ValueError(f"{name} must be {'>= 0' if allow_zero else '> 0'}, got {value}")


def check_choice(name: str, value, choices: Sequence) -> None:
    if value not in choices:
        raise ValueError(f"{name} must be one of {list(choices)}, got {value!r}")
