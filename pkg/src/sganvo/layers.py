"""Network building blocks: parameter containers, ConvLSTM, depth/pose estimators, critic."""

from __future__ import annotations

import math
from typing import Iterator, Optional, Sequence

import numpy as np

from .geometry import D_MAX, D_MIN
from .tensor import Rng, Tensor
from .tensor import ops


class Module:
    """Minimal parameter container; children and parameters are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + "/")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}{i}/")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, arrays: dict, strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict:
            missing = params.keys() - arrays.keys()
            if missing:
                raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            if name in arrays:
                arr = np.asarray(arrays[name])
                if arr.shape != p.shape:
                    raise ValueError(f"parameter {name}: checkpoint shape {arr.shape} != model shape {p.shape}")
                p.data = arr.astype(p.dtype).copy()

    def name_parameters(self, prefix: str) -> None:
        for name, p in self.named_parameters(prefix):
            p.name = name


def _uniform(rng: Rng, shape, fan_in: int, gain: float) -> Tensor:
    bound = math.sqrt(gain / fan_in)
    return Tensor(rng.uniform(shape, -bound, bound), requires_grad=True)


class Conv2d(Module):
    """Convolution with fan-in-scaled uniform weights and zero bias.

    ``gain`` 6 suits ReLU-followed layers, 3 (variance 1/fan_in) everything else.
    """

    def __init__(self, rng: Rng, cin: int, cout: int, k: int = 3, stride: int = 1,
                 padding="same", gain: float = 6.0):
        self.weight = _uniform(rng, (cout, cin, k, k), cin * k * k, gain)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)
        self._stride = stride
        self._padding = padding

    def __call__(self, x, padding=None) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self._stride, padding or self._padding)


class Linear(Module):
    def __init__(self, rng: Rng, nin: int, nout: int, gain: float = 6.0):
        self.weight = _uniform(rng, (nin, nout), nin, gain)
        self.bias = Tensor(np.zeros(nout), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return ops.add(ops.matmul(x, self.weight), self.bias)


class ConvLSTMCell(Module):
    """ConvLSTM with 3x3 gate convolutions over concat(input, hidden)."""

    def __init__(self, rng: Rng, input_channels: int, hidden_channels: int, kernel: int = 3):
        self.input_channels = input_channels
        self.hidden_channels = hidden_channels
        self.gates = Conv2d(rng, input_channels + hidden_channels, 4 * hidden_channels, kernel, gain=3.0)

    def zero_state(self, batch: int, height: int, width: int, dtype=np.float64) -> tuple:
        z = np.zeros((batch, self.hidden_channels, height, width), dtype=dtype)
        return Tensor(z), Tensor(z.copy())

    def __call__(self, x, state: tuple) -> tuple:
        h, c = state
        if x.shape[1] != self.input_channels:
            raise ValueError(f"ConvLSTMCell: expected {self.input_channels} input channels, got {x.shape}")
        if x.shape[2:] != h.shape[2:]:
            raise ValueError(f"ConvLSTMCell: shape mismatch between input {x.shape} and state {h.shape}")
        z = self.gates(ops.concat([x, h], axis=1))
        n = self.hidden_channels
        i = ops.sigmoid(z[:, 0:n])
        f = ops.sigmoid(z[:, n : 2 * n])
        o = ops.sigmoid(z[:, 2 * n : 3 * n])
        g = ops.tanh(z[:, 3 * n : 4 * n])
        c_new = f * c + i * g
        h_new = o * ops.tanh(c_new)
        return h_new, c_new


def convlstm_step(cell: ConvLSTMCell, E_prev, R_prev: tuple, R_above: Optional[Tensor]) -> tuple:
    """One recurrent update; ``R_above`` (hidden state of the layer above) is upsampled 2x first."""
    x = E_prev if R_above is None else ops.concat([E_prev, ops.nearest_upsample2x(R_above)], axis=1)
    return cell(x, R_prev)


class SubPixelBranch(Module):
    """Three stride-1 convolutions followed by a 2x pixel shuffle."""

    def __init__(self, rng: Rng, cin: int, channels: Sequence[int] = (64, 32, 4)):
        c1, c2, c3 = channels
        if c3 % 4:
            raise ValueError(f"last sub-pixel branch width must be divisible by 4, got {c3}")
        self.conv1 = Conv2d(rng, cin, c1)
        self.conv2 = Conv2d(rng, c1, c2)
        self.conv3 = Conv2d(rng, c2, c3, gain=3.0)

    @property
    def out_channels(self) -> int:
        return self.conv3.weight.shape[0] // 4

    def __call__(self, x) -> Tensor:
        x = ops.relu(self.conv1(x))
        x = ops.relu(self.conv2(x))
        return ops.pixel_shuffle(self.conv3(x), 2)


class DepthNet(Module):
    """Encoder-decoder producing left/right inverse-depth maps at ``scales`` resolutions.

    The decoder upsamples with sub-pixel branches and emits a two-channel head
    at each level; coarser predictions are upsampled and fed to the next level.
    """

    def __init__(self, rng: Rng, in_channels: int, enc_channels: Sequence[int] = (32, 64, 128, 256),
                 scales: int = 4, subpixel: Sequence[int] = (64, 32, 4),
                 d_min: float = D_MIN, d_max: float = D_MAX):
        if scales != len(enc_channels):
            raise ValueError("DepthNet needs one encoder level per output scale")
        self.in_channels = in_channels
        self.d_min = d_min
        self.d_max = d_max
        chans = [in_channels] + list(enc_channels)
        self.enc = [Conv2d(rng, chans[k], chans[k + 1], 3, stride=2) for k in range(len(enc_channels))]
        dec_widths = [max(c // 2, 8) for c in chans[:-1]]  # decoder width per level, finest first
        self.up = []
        self.iconv = []
        self.head = []
        prev = chans[-1]
        for level in reversed(range(scales)):
            branch = SubPixelBranch(rng, prev, subpixel)
            coarse_disp = 0 if level == scales - 1 else 2
            self.up.append(branch)
            self.iconv.append(Conv2d(rng, branch.out_channels + chans[level] + coarse_disp, dec_widths[level]))
            self.head.append(Conv2d(rng, dec_widths[level], 2, gain=3.0))
            prev = dec_widths[level]

    def __call__(self, x) -> list:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"DepthNet: expected {self.in_channels} input channels, got {x.shape}")
        skips = [x]
        h = x
        for conv in self.enc:
            h = ops.relu(conv(h))
            skips.append(h)
        outputs = []
        disp = None
        n = len(self.enc)
        for k in range(n):
            level = n - 1 - k
            h = self.up[k](h)
            parts = [h, skips[level]]
            if disp is not None:
                parts.append(ops.nearest_upsample2x(disp))
            h = ops.relu(self.iconv[k](ops.concat(parts, axis=1)))
            disp = ops.add(self.d_min, ops.mul(self.d_max - self.d_min, ops.sigmoid(self.head[k](h))))
            outputs.append(disp)
        outputs.reverse()
        return [(d[:, 0:1], d[:, 1:2]) for d in outputs]


def depth_forward(net: DepthNet, left, right, R0) -> list:
    """Per-scale (d_left, d_right), finest first; input is concat(left, right, R0)."""
    return net(ops.concat([left, right, R0], axis=1))


class PoseNet(Module):
    """VGG-style trunk, global average pool, separate translation and rotation heads."""

    def __init__(self, rng: Rng, in_channels: int,
                 channels: Sequence[int] = (16, 32, 64, 128, 256, 256, 256),
                 hidden: int = 128, r_scale: float = 0.01, head_gain: float = 1e-4):
        self.in_channels = in_channels
        self.r_scale = r_scale
        chans = [in_channels] + list(channels)
        self.trunk = [
            Conv2d(rng, chans[k], chans[k + 1], 3, stride=2 if k % 2 == 0 else 1) for k in range(len(channels))
        ]
        self.trans_fc = Linear(rng, chans[-1], hidden)
        # near-zero output layers: training starts close to identity motion, so
        # the warp keeps most pixels in view instead of masking them all out
        self.trans_out = Linear(rng, hidden, 3, gain=head_gain)
        self.rot_fc = Linear(rng, chans[-1], hidden)
        self.rot_out = Linear(rng, hidden, 3, gain=head_gain)

    def __call__(self, x) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"PoseNet: expected {self.in_channels} input channels, got {x.shape}")
        h = x
        for conv in self.trunk:
            h = ops.relu(conv(h))
        feat = ops.mean(h, axis=(2, 3))
        t = self.trans_out(ops.relu(self.trans_fc(feat)))
        r = ops.mul(self.rot_out(ops.relu(self.rot_fc(feat))), self.r_scale)
        return ops.concat([t, r], axis=1)


def pose_forward(net: PoseNet, I_prev, I_curr, R0) -> Tensor:
    """Pose vectors [B, 6] for the (previous, current) frame pair."""
    return net(ops.concat([I_prev, I_curr, R0], axis=1))


class Discriminator(Module):
    """Critic: four 5x5 stride-2 convolutions with SELU, then a 4x4 stride-1 convolution.

    No normalization layers. The last convolution is unpadded unless the
    feature map is smaller than the kernel, in which case it is zero-padded up
    to 4 so low-resolution inputs still give a 1x1 score map.
    """

    widths = (16, 32, 64, 128)
    min_size = 16

    def __init__(self, rng: Rng, in_channels: int):
        self.in_channels = in_channels
        chans = [in_channels] + list(self.widths)
        self.convs = [Conv2d(rng, chans[k], chans[k + 1], 5, stride=2, gain=3.0) for k in range(4)]
        self.final = Conv2d(rng, chans[-1], 1, 4, stride=1, padding="valid", gain=3.0)

    def score_map(self, x) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"Discriminator: expected {self.in_channels} channels, got {x.shape}")
        if min(x.shape[2:]) < self.min_size:
            raise ValueError(f"Discriminator: spatial size {x.shape[2:]} below the minimum {self.min_size}")
        h = x
        for conv in self.convs:
            h = ops.selu(conv(h))
        ph = max(4 - h.shape[2], 0)
        pw = max(4 - h.shape[3], 0)
        return self.final(h, padding=(ph // 2, ph - ph // 2, pw // 2, pw - pw // 2))

    def __call__(self, x) -> Tensor:
        return critic_forward(self, x)


def critic_forward(D: Discriminator, x) -> Tensor:
    """Per-sample critic value [B]: the mean of the final one-channel map."""
    return ops.mean(D.score_map(x), axis=(1, 2, 3))
