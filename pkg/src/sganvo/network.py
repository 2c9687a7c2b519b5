"""The stacked generator/discriminator network unrolled over a temporal window.

Within one time step the order is fixed: recurrent states are refreshed top
down, the bottom generator reconstructs the current frame, then error images
are propagated upward through the higher layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import D_MAX, D_MIN, Intrinsics, pose_to_transform, warp_image
from .layers import (
    ConvLSTMCell,
    Conv2d,
    DepthNet,
    Discriminator,
    Module,
    PoseNet,
    convlstm_step,
    depth_forward,
    pose_forward,
)
from .tensor import Rng, Tensor
from .tensor import ops


@dataclass
class StackConfig:
    n_layers: int = 2
    window: int = 3
    height: int = 128
    width: int = 416
    image_channels: int = 3
    a_channels: tuple = (32, 64)
    r_channels: tuple = (16, 32, 64)
    ahat_kernel: int = 3
    scales: int = 4
    depth_channels: tuple = (32, 64, 128, 256)
    subpixel_channels: tuple = (64, 32, 4)
    pose_channels: tuple = (16, 32, 64, 128, 256, 256, 256)
    pose_hidden: int = 128
    r_scale: float = 0.01
    pose_head_gain: float = 1e-4
    d_min: float = D_MIN
    d_max: float = D_MAX

    def __post_init__(self):
        self.a_channels = tuple(int(c) for c in self.a_channels)
        self.r_channels = tuple(int(c) for c in self.r_channels)
        self.depth_channels = tuple(int(c) for c in self.depth_channels)
        self.subpixel_channels = tuple(int(c) for c in self.subpixel_channels)
        self.pose_channels = tuple(int(c) for c in self.pose_channels)

    def validate(self) -> list:
        errors = []
        if self.n_layers < 0:
            errors.append(f"n_layers must be >= 0, got {self.n_layers}")
        if self.window < 2:
            errors.append(f"window must be >= 2, got {self.window}")
        if self.height <= 0 or self.width <= 0:
            errors.append(f"image size must be positive, got {self.width}x{self.height}")
        div = 2 ** max(self.scales, self.n_layers)
        if self.height % div or self.width % div:
            errors.append(f"image size {self.width}x{self.height} must be divisible by {div}")
        if len(self.depth_channels) != self.scales:
            errors.append(f"depth_channels needs {self.scales} entries, got {len(self.depth_channels)}")
        if not 0 < self.d_min < self.d_max:
            errors.append(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        return errors

    def a_width(self, l: int) -> int:
        """Channels of A^l (l >= 1); layer 0's target is the image."""
        if l == 0:
            return self.image_channels
        if l - 1 < len(self.a_channels):
            return self.a_channels[l - 1]
        return self.a_channels[-1] * 2 ** (l - len(self.a_channels))

    def r_width(self, l: int) -> int:
        if l < len(self.r_channels):
            return self.r_channels[l]
        return self.r_channels[-1] * 2 ** (l - len(self.r_channels) + 1)

    def e_width(self, l: int) -> int:
        return 2 * self.a_width(l)

    def layer_size(self, l: int) -> tuple:
        return self.height // 2**l, self.width // 2**l


@dataclass
class LayerState:
    layer_index: int
    R: tuple  # (hidden, cell)
    E: Tensor
    A: Tensor
    A_hat: Tensor


@dataclass
class StepOutput:
    depths: list  # per scale (d_left, d_right), finest first
    pose: Tensor  # [B, 6]
    I_hat: Tensor
    mask: Tensor  # [B,1,H,W] validity of the reconstruction
    E: list  # per layer
    A: list  # per layer; A[0] is the (masked) current frame
    A_hat: list  # per layer; A_hat[0] is the (masked) reconstruction

    @property
    def d_left(self) -> Tensor:
        return self.depths[0][0]

    @property
    def d_right(self) -> Tensor:
        return self.depths[0][1]


class GeneratorLayer(Module):
    """Units of a higher layer: A-convolution (from the layer below), A-hat generator, ConvLSTM."""

    def __init__(self, rng: Rng, cfg: StackConfig, l: int):
        below = cfg.e_width(l - 1)
        self.a_conv = Conv2d(rng, below, cfg.a_width(l), 3)
        self.ahat_conv = Conv2d(rng, cfg.r_width(l), cfg.a_width(l), cfg.ahat_kernel)
        above = cfg.r_width(l + 1) if l < cfg.n_layers else 0
        self.convlstm = ConvLSTMCell(rng, cfg.e_width(l) + above, cfg.r_width(l))


class BottomLayer(Module):
    def __init__(self, rng: Rng, cfg: StackConfig):
        above = cfg.r_width(1) if cfg.n_layers > 0 else 0
        self.convlstm = ConvLSTMCell(rng, cfg.e_width(0) + above, cfg.r_width(0))
        c = cfg.image_channels
        self.depth = DepthNet(rng, 2 * c + cfg.r_width(0), cfg.depth_channels, cfg.scales,
                              cfg.subpixel_channels, cfg.d_min, cfg.d_max)
        self.pose = PoseNet(rng, 2 * c + cfg.r_width(0), cfg.pose_channels, cfg.pose_hidden, cfg.r_scale,
                            cfg.pose_head_gain)


class SGANVONet(Module):
    """Generators of every layer plus one critic per layer."""

    def __init__(self, cfg: StackConfig, seed: int = 0):
        errors = cfg.validate()
        if errors:
            raise ValueError("; ".join(errors))
        self.cfg = cfg
        rng = Rng(seed)
        self.generators = [BottomLayer(rng, cfg)] + [GeneratorLayer(rng, cfg, l) for l in range(1, cfg.n_layers + 1)]
        self.critics = [Discriminator(rng, cfg.a_width(l)) for l in range(cfg.n_layers + 1)]
        for l, g in enumerate(self.generators):
            g.name_parameters(f"layer{l}/")
        for l, d in enumerate(self.critics):
            d.name_parameters(f"layer{l}/disc/")

    def named_parameters(self, prefix: str = ""):
        for l, g in enumerate(self.generators):
            yield from g.named_parameters(f"{prefix}layer{l}/")
        for l, d in enumerate(self.critics):
            yield from d.named_parameters(f"{prefix}layer{l}/disc/")

    def generator_parameters(self) -> list:
        return [p for g in self.generators for p in g.parameters()]

    def critic_parameters(self) -> list:
        return [p for d in self.critics for p in d.parameters()]

    # ------------------------------------------------------------------
    def init_states(self, batch: int, dtype=np.float64) -> list:
        """All-zero states for every layer (R, E, A and A-hat)."""
        cfg = self.cfg
        states = []
        for l in range(cfg.n_layers + 1):
            h, w = cfg.layer_size(l)
            R = self.generators[l].convlstm.zero_state(batch, h, w, dtype)
            zeros = lambda c: Tensor(np.zeros((batch, c, h, w), dtype=dtype))  # noqa: E731
            states.append(LayerState(l, R, zeros(cfg.e_width(l)), zeros(cfg.a_width(l)), zeros(cfg.a_width(l))))
        return states

    def top_down_pass(self, states: list) -> list:
        """Refresh R^l from the top layer down; layer l sees R^{l+1} of the same step."""
        above = None
        for l in reversed(range(len(states))):
            st = states[l]
            st.R = convlstm_step(self.generators[l].convlstm, st.E, st.R, above)
            above = st.R[0]
        return states

    def bottom_forward(self, states: list, I_prev, I_curr, right_curr, K: Intrinsics) -> StepOutput:
        R0 = states[0].R[0]
        bottom = self.generators[0]
        depths = depth_forward(bottom.depth, I_curr, right_curr, R0)
        pose = pose_forward(bottom.pose, I_prev, I_curr, R0)
        T = pose_to_transform(pose)
        I_hat, mask = warp_image(I_prev, depths[0][0], K, T)
        I_curr_m = I_curr * mask
        I_hat_m = I_hat * mask
        E0 = ops.concat([ops.relu(I_curr_m - I_hat_m), ops.relu(I_hat_m - I_curr_m)], axis=1)
        st = states[0]
        st.E, st.A, st.A_hat = E0, I_curr_m, I_hat_m
        return StepOutput(depths, pose, I_hat, mask, [E0], [I_curr_m], [I_hat_m])

    def higher_forward(self, states: list, l: int, E_below) -> tuple:
        if l < 1:
            raise ValueError("higher_forward applies to layers l >= 1")
        unit = self.generators[l]
        A = ops.max_pool2d(ops.relu(unit.a_conv(E_below)), 2)
        A_hat = ops.relu(unit.ahat_conv(states[l].R[0]))
        E = ops.concat([ops.relu(A - A_hat), ops.relu(A_hat - A)], axis=1)
        st = states[l]
        st.A, st.A_hat, st.E = A, A_hat, E
        return A, A_hat, E

    def step(self, states: list, I_prev, I_curr, right_curr, K: Intrinsics) -> StepOutput:
        self.top_down_pass(states)
        out = self.bottom_forward(states, I_prev, I_curr, right_curr, K)
        E_below = out.E[0]
        for l in range(1, self.cfg.n_layers + 1):
            A, A_hat, E_below = self.higher_forward(states, l, E_below)
            out.A.append(A)
            out.A_hat.append(A_hat)
            out.E.append(E_below)
        return out

    def unroll_window(self, lefts: Sequence, rights: Sequence, K: Intrinsics) -> list:
        """Run one temporal window from fresh zero states; the first frame doubles as its own predecessor."""
        lefts = [x if isinstance(x, Tensor) else Tensor(x) for x in lefts]
        rights = [x if isinstance(x, Tensor) else Tensor(x) for x in rights]
        if len(lefts) != len(rights):
            raise ValueError(f"window has {len(lefts)} left frames but {len(rights)} right frames")
        expect = (self.cfg.image_channels, self.cfg.height, self.cfg.width)
        for x in lefts + rights:
            if x.ndim != 4 or x.shape[1:] != expect:
                raise ValueError(f"frame shape {x.shape} does not match configured [B, {expect}]")
        states = self.init_states(lefts[0].shape[0], lefts[0].dtype)
        outputs = []
        prev = lefts[0]
        for left, right in zip(lefts, rights):
            outputs.append(self.step(states, prev, left, right, K))
            prev = left
        return outputs


def unroll_window(net: SGANVONet, window, K: Optional[Intrinsics] = None) -> list:
    """Convenience wrapper accepting a :class:`~sganvo.data.SequenceWindow` or batch."""
    lefts, rights, K_w = window.as_batch() if hasattr(window, "as_batch") else window
    return net.unroll_window(lefts, rights, K or K_w)
