"""scikit-learn style wrapper around training and inference.

``fit`` trains on windows without labels; ``predict`` returns relative pose
vectors per window step and ``predict_depth`` per-frame depth.
"""

from __future__ import annotations

import tempfile
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .losses import LossWeights
from .network import SGANVONet, StackConfig
from .tensor import no_grad
from .trainer import TrainConfig, train
from .validation import check_pose_targets, check_positive, check_windows


class SGANVOEstimator(BaseEstimator):
    def __init__(self, n_layers: int = 1, window: int = 3, height: int = 32, width: int = 64,
                 iterations: int = 150, batch_size: int = 1, base_lr: float = 1e-4, n_critic: int = 5,
                 alpha: float = 1e-4, beta: float = 1.0, gamma: float = 0.1, lambda_D: float = 10.0,
                 lambda_l: tuple = (1.0, 0.1, 0.1), paper_literal_signs: bool = False,
                 random_state: int = 0, out_dir: Optional[str] = None):
        self.n_layers = n_layers
        self.window = window
        self.height = height
        self.width = width
        self.iterations = iterations
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.n_critic = n_critic
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.lambda_D = lambda_D
        self.lambda_l = lambda_l
        self.paper_literal_signs = paper_literal_signs
        self.random_state = random_state
        self.out_dir = out_dir

    def _configs(self) -> tuple:
        check_positive("iterations", self.iterations)
        stack = StackConfig(n_layers=self.n_layers, window=self.window, height=self.height, width=self.width)
        errors = stack.validate()
        tcfg = TrainConfig(iterations=self.iterations, batch_size=self.batch_size, base_lr=self.base_lr,
                           n_critic=self.n_critic, seed=self.random_state, window=self.window,
                           paper_literal_signs=self.paper_literal_signs, prefetch=0)
        errors += tcfg.validate()
        weights = LossWeights(self.alpha, self.beta, self.gamma, self.lambda_D, tuple(self.lambda_l))
        errors += weights.validate()
        if errors:
            raise ValueError("; ".join(errors))
        return stack, tcfg, weights

    def fit(self, X, y=None, K=None):
        """Train on windows (SequenceWindow list, or [n, N, 3, H, W] array with ``K``); ``y`` is unused."""
        stack, tcfg, weights = self._configs()
        windows = check_windows(X, K, self.window)
        check_pose_targets(y, len(windows), self.window)
        net = SGANVONet(stack, seed=self.random_state)
        if self.out_dir is not None:
            result = train(net, windows, tcfg, weights, self.out_dir)
        else:
            with tempfile.TemporaryDirectory() as tmp:
                result = train(net, windows, tcfg, weights, tmp)
        self.net_ = net
        self.history_ = [r.g_temporal for r in result.reports]
        self.n_iter_ = result.state.iteration
        return self

    def _outputs(self, X, K=None) -> list:
        check_is_fitted(self, "net_")
        windows = check_windows(X, K, self.window)
        outs = []
        with no_grad():
            for w in windows:
                outs.append(self.net_.unroll_window(*w.as_batch()))
        return outs

    def predict(self, X, K=None) -> np.ndarray:
        """Pose vectors [n_windows, N, 6]; step 0 pairs a frame with itself."""
        return np.stack([np.stack([o.pose.data[0] for o in outs]) for outs in self._outputs(X, K)])

    def predict_depth(self, X, K=None) -> np.ndarray:
        """Depth in metres [n_windows, N, H, W] from the left inverse-depth maps."""
        return np.stack([np.stack([1.0 / o.d_left.data[0, 0] for o in outs]) for outs in self._outputs(X, K)])

    def score(self, X, y=None, K=None) -> float:
        """Negative mean reconstruction error over valid pixels (higher is better)."""
        errs = []
        for outs in self._outputs(X, K):
            for o in outs[1:]:
                m = o.mask.data
                diff = np.abs(o.I_hat.data - o.A[0].data) * m
                errs.append(diff.sum() / max(m.sum() * diff.shape[1], 1.0))
        return -float(np.mean(errs))
