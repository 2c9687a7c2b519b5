"""Pinhole camera, rigid poses and differentiable view reconstruction.

Pixel coordinates are (i, j) = (column, row). A pose vector is laid out as
``[tx, ty, tz, rx, ry, rz]`` with R = Rz(rz) @ Ry(ry) @ Rx(rx); the matching
transform maps points from the current camera frame into the previous one,
which is what inverse warping needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor, as_tensor
from .tensor import ops

D_MIN = 1e-3
D_MAX = 10.0
Z_MIN = 1e-3


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, width: int, height: int) -> "Intrinsics":
        """Intrinsics for the same camera resampled to ``width`` x ``height``."""
        sx = width / self.width
        sy = height / self.height
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)


@dataclass(frozen=True)
class StereoCalibration:
    intrinsics: Intrinsics
    baseline: float

    def __post_init__(self):
        if not self.baseline > 0:
            raise ValueError(f"baseline must be positive, got {self.baseline}")

    def scaled(self, width: int, height: int) -> "StereoCalibration":
        return StereoCalibration(self.intrinsics.scaled(width, height), self.baseline)

    @classmethod
    def from_file(cls, path) -> "StereoCalibration":
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, val = line.split("=", 1)
            elif ":" in line:
                key, val = line.split(":", 1)
            else:
                key, val = line.split(None, 1)
            values[key.strip()] = float(val)
        missing = {"fx", "fy", "cx", "cy", "baseline", "width", "height"} - values.keys()
        if missing:
            raise ValueError(f"{path}: missing calibration keys {sorted(missing)}")
        k = Intrinsics(values["fx"], values["fy"], values["cx"], values["cy"],
                       int(values["width"]), int(values["height"]))
        return cls(k, values["baseline"])

    def to_file(self, path) -> None:
        k = self.intrinsics
        Path(path).write_text(
            f"fx = {k.fx!r}\nfy = {k.fy!r}\ncx = {k.cx!r}\ncy = {k.cy!r}\n"
            f"baseline = {self.baseline!r}\nwidth = {k.width}\nheight = {k.height}\n"
        )


@dataclass
class Pose6:
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.r = np.asarray(self.r, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.r))):
            raise ValueError("Pose6 must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.r])

    @classmethod
    def from_vector(cls, v) -> "Pose6":
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return cls(v[:3], v[3:])


def _pose_tensor(p) -> Tensor:
    if isinstance(p, Pose6):
        p = p.as_vector()
    return as_tensor(p)


def _rotation_entries(rx, ry, rz) -> list:
    cx, sx = ops.cos(rx), ops.sin(rx)
    cy, sy = ops.cos(ry), ops.sin(ry)
    cz, sz = ops.cos(rz), ops.sin(rz)
    return [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]


def _assemble(rot: list, trans: list, batch_shape: tuple) -> Tensor:
    zero = Tensor(np.zeros(batch_shape))
    one = Tensor(np.ones(batch_shape))
    rows = [rot[0] + [trans[0]], rot[1] + [trans[1]], rot[2] + [trans[2]], [zero, zero, zero, one]]
    flat = ops.stack([e for row in rows for e in row], axis=-1)
    return ops.reshape(flat, batch_shape + (4, 4))


def pose_to_transform(p) -> Tensor:
    """6-vector(s) [..., 6] to homogeneous transform(s) [..., 4, 4]; differentiable."""
    p = _pose_tensor(p)
    if p.shape[-1] != 6:
        raise ValueError(f"pose_to_transform: expected trailing dimension 6, got {p.shape}")
    comp = [p[..., k] for k in range(6)]
    rot = _rotation_entries(comp[3], comp[4], comp[5])
    return _assemble(rot, comp[:3], p.shape[:-1])


def inverse_pose_to_transform(p) -> Tensor:
    """Transform of -p applied in reverse order: Rx(-rx) Ry(-ry) Rz(-rz) then translate by -t.

    Equals the inverse of ``pose_to_transform(p)``.
    """
    p = _pose_tensor(p)
    comp = [p[..., k] for k in range(6)]
    rot = _rotation_entries(comp[3], comp[4], comp[5])
    rot_t = [[rot[c][r] for c in range(3)] for r in range(3)]
    trans = [ops.neg(rot_t[r][0] * comp[0] + rot_t[r][1] * comp[1] + rot_t[r][2] * comp[2]) for r in range(3)]
    return _assemble(rot_t, trans, p.shape[:-1])


def pose_matrix(p) -> np.ndarray:
    """Plain numpy 4x4 for a pose vector or Pose6."""
    return pose_to_transform(np.asarray(_pose_tensor(p).data)).data


def transform_to_pose(T: np.ndarray) -> Pose6:
    """Recover the Euler-XYZ pose vector from a rigid 4x4 matrix."""
    T = np.asarray(T, dtype=np.float64)
    R = T[:3, :3]
    ry = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    rx = np.arctan2(R[2, 1], R[2, 2])
    rz = np.arctan2(R[1, 0], R[0, 0])
    return Pose6(T[:3, 3], [rx, ry, rz])


def invert_transform(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    out = np.eye(4)
    out[:3, :3] = T[:3, :3].T
    out[:3, 3] = -T[:3, :3].T @ T[:3, 3]
    return out


def _batched_transform(T) -> Tensor:
    T = as_tensor(T)
    if T.shape[-2:] != (4, 4):
        raise ValueError(f"expected [..., 4, 4] transform, got {T.shape}")
    if T.ndim == 2:
        T = ops.reshape(T, (1, 4, 4))
    return T


def reproject(i, j, d, K: Intrinsics, T, z_min: float = Z_MIN):
    """Map target pixels with inverse depth ``d`` into the source view.

    ``i``, ``j``, ``d`` broadcast to [B, ...]; ``T`` is [B,4,4] or [4,4].
    Returns continuous source coordinates (i', j') as Tensors plus a boolean
    array that is False where the point lands at or behind ``z_min``.
    """
    T = _batched_transform(T)
    d = as_tensor(d)
    i = as_tensor(i)
    j = as_tensor(j)
    nb = T.shape[0]
    extra = (1,) * max(d.ndim - 1, 0)

    def entry(r, c):
        return ops.reshape(T[:, r, c], (nb,) + extra)

    z = ops.div(1.0, d)
    X = ops.mul(ops.div(ops.sub(i, K.cx), K.fx), z)
    Y = ops.mul(ops.div(ops.sub(j, K.cy), K.fy), z)
    pts = [X, Y, z]
    Xs, Ys, Zs = [
        entry(r, 0) * pts[0] + entry(r, 1) * pts[1] + entry(r, 2) * pts[2] + entry(r, 3) for r in range(3)
    ]
    valid = Zs.data > z_min
    Zs_safe = Zs * Tensor(valid.astype(Zs.dtype)) + Tensor((~valid).astype(Zs.dtype))
    u = Xs / Zs_safe * K.fx + K.cx
    v = Ys / Zs_safe * K.fy + K.cy
    return u, v, valid


def pixel_grid(height: int, width: int, dtype=np.float64) -> tuple:
    jj, ii = np.meshgrid(np.arange(height, dtype=dtype), np.arange(width, dtype=dtype), indexing="ij")
    return ii, jj


def warp_image(src, d, K: Intrinsics, T, z_min: float = Z_MIN):
    """Inverse-warp ``src`` [B,C,H,W] into the target view.

    ``d`` is the target's inverse depth, [B,1,H,W] or [B,H,W]. Returns the
    warped Tensor and a float mask Tensor [B,1,H,W] that is 1 where the point
    is in front of the camera and all four bilinear neighbours are in bounds.
    """
    src = as_tensor(src)
    d = as_tensor(d)
    b, _, h, w = src.shape
    if d.ndim == 4:
        if d.shape[1] != 1:
            raise ValueError(f"warp_image: inverse depth must have one channel, got {d.shape}")
        d = ops.reshape(d, (d.shape[0], h, w) if d.shape[2:] == (h, w) else d.shape)
    if d.shape != (b, h, w):
        raise ValueError(f"warp_image: shape mismatch between image {src.shape} and inverse depth {d.shape}")
    ii, jj = pixel_grid(h, w, src.dtype)
    T = _batched_transform(T)
    if T.shape[0] != b:
        T = ops.broadcast_to(T, (b, 4, 4))
    u, v, front = reproject(Tensor(ii[None]), Tensor(jj[None]), d, K, T, z_min)
    warped, inb = ops.bilinear_sample(src, u, v)
    mask = inb & front[:, None]
    return warped, Tensor(mask.astype(src.dtype))


def disparity_to_inverse_depth(disp, fx: float, baseline: float, d_min: float = D_MIN, d_max: float = D_MAX):
    """Pixel disparity -> clamped inverse depth (1/m)."""
    if not baseline > 0:
        raise ValueError(f"baseline must be positive, got {baseline}")
    if isinstance(disp, Tensor):
        return ops.clip(ops.div(disp, fx * baseline), d_min, d_max)
    return np.clip(np.asarray(disp, dtype=np.float64) / (fx * baseline), d_min, d_max)
