"""Textured-plane scenes with exact ground-truth depth and poses.

The texture is a band-limited random field (a sum of low-frequency random
sinusoids per channel) evaluated analytically at the ray/plane intersection,
so bilinear resampling of a rendered frame stays close to a fresh render.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..geometry import Intrinsics, invert_transform, pose_matrix
from .frames import Frame, SequenceWindow

DEPTH_PNG_SCALE = 256.0  # stored uint16 = round(depth_m * 256), 0 = unknown


@dataclass
class SynthSceneSpec:
    width: int = 64
    height: int = 32
    fx: Optional[float] = None  # defaults to 0.75 * width
    fy: Optional[float] = None
    baseline: float = 0.3
    plane_depth: float = 2.0  # depth of the plane on the first camera's optical axis
    ramp: float = 0.0  # plane depth slope along world x (0 = fronto-parallel)
    motion: list = field(default_factory=lambda: [[0.1, 0.0, 0.05, 0.0, 0.0, 0.0]])
    n_frames: int = 3
    texture_seed: int = 0
    texture_wavelength: float = 16.0  # shortest texture wavelength, in pixels at plane_depth
    n_waves: int = 6

    def intrinsics(self) -> Intrinsics:
        fx = self.fx if self.fx is not None else 0.75 * self.width
        fy = self.fy if self.fy is not None else fx
        return Intrinsics(fx, fy, (self.width - 1) / 2.0, (self.height - 1) / 2.0, self.width, self.height)

    def step_motion(self, k: int) -> np.ndarray:
        """Relative pose vector between frame k-1 and frame k (the list repeats cyclically)."""
        motions = np.asarray(self.motion, dtype=np.float64).reshape(-1, 6)
        return motions[(k - 1) % len(motions)]


class _Texture:
    def __init__(self, spec: SynthSceneSpec):
        rng = np.random.default_rng(spec.texture_seed)
        k = spec.intrinsics()
        metres_per_px = spec.plane_depth / k.fx
        f_max = 1.0 / (spec.texture_wavelength * metres_per_px)
        n = spec.n_waves
        self.freqs = []
        self.phases = []
        self.amps = []
        for _ in range(3):
            radius = f_max * np.sqrt(rng.uniform(0.05, 1.0, size=n))
            angle = rng.uniform(0, 2 * np.pi, size=n)
            self.freqs.append(np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1))
            self.phases.append(rng.uniform(0, 2 * np.pi, size=n))
            self.amps.append(rng.uniform(0.5, 1.0, size=n) * 0.35 / n)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = []
        for f, ph, a in zip(self.freqs, self.phases, self.amps):
            arg = 2 * np.pi * (x[..., None] * f[:, 0] + y[..., None] * f[:, 1]) + ph
            out.append(0.5 + np.sum(a * np.cos(arg), axis=-1))
        return np.stack(out, axis=0)


def _render(spec: SynthSceneSpec, texture: _Texture, cam_to_world: np.ndarray) -> tuple:
    k = spec.intrinsics()
    jj, ii = np.meshgrid(np.arange(k.height, dtype=np.float64), np.arange(k.width, dtype=np.float64), indexing="ij")
    ray_c = np.stack([(ii - k.cx) / k.fx, (jj - k.cy) / k.fy, np.ones_like(ii)], axis=-1)
    R = cam_to_world[:3, :3]
    o = cam_to_world[:3, 3]
    ray_w = ray_c @ R.T
    normal = np.array([-spec.ramp, 0.0, 1.0])
    offset = spec.plane_depth
    lam = (offset - normal @ o) / (ray_w @ normal)
    if np.any(lam <= 0):
        raise ValueError("camera sees the back of the plane; reduce motion or ramp")
    pts = o + lam[..., None] * ray_w
    return texture(pts[..., 0], pts[..., 1]), lam


def camera_poses(spec: SynthSceneSpec) -> list:
    poses = [np.eye(4)]
    for k in range(1, spec.n_frames):
        poses.append(poses[-1] @ pose_matrix(spec.step_motion(k)))
    return poses


def generate_synth(spec: SynthSceneSpec, sequence_id: str = "synth") -> SequenceWindow:
    """Render ``spec.n_frames`` stereo frames with ground-truth depth and camera-to-world poses."""
    texture = _Texture(spec)
    k = spec.intrinsics()
    right_offset = np.eye(4)
    right_offset[0, 3] = spec.baseline
    frames = []
    for idx, pose in enumerate(camera_poses(spec)):
        left, depth = _render(spec, texture, pose)
        right, _ = _render(spec, texture, pose @ right_offset)
        frames.append(Frame(left, k, idx, right=right, gt_pose=pose, gt_depth=depth, baseline=spec.baseline))
    window = SequenceWindow(frames, sequence_id, 0)
    _check_visibility(window)
    return window


def _check_visibility(window: SequenceWindow, min_fraction: float = 0.8) -> None:
    from ..geometry import reproject

    k = window.intrinsics
    for prev, cur in zip(window.frames[:-1], window.frames[1:]):
        rel = invert_transform(prev.gt_pose) @ cur.gt_pose
        jj, ii = np.meshgrid(np.arange(k.height), np.arange(k.width), indexing="ij")
        u, v, front = reproject(ii[None].astype(float), jj[None].astype(float), 1.0 / cur.gt_depth[None], k, rel)
        inside = front & (u.data >= 0) & (u.data <= k.width - 1) & (v.data >= 0) & (v.data <= k.height - 1)
        if inside.mean() < min_fraction:
            raise ValueError(f"motion keeps only {inside.mean():.0%} of pixels in view (need {min_fraction:.0%})")


def save_synth(window: SequenceWindow, out_dir, spec: Optional[SynthSceneSpec] = None) -> Path:
    """Write PNG frames, 16-bit depth PNGs, poses.txt (12 values per row) and manifest.json."""
    out = Path(out_dir)
    (out / "image_02").mkdir(parents=True, exist_ok=True)
    (out / "image_03").mkdir(exist_ok=True)
    (out / "depth").mkdir(exist_ok=True)
    rows = []
    for f in window.frames:
        name = f"{f.index:06d}.png"
        _save_png(f.left, out / "image_02" / name)
        if f.right is not None:
            _save_png(f.right, out / "image_03" / name)
        if f.gt_depth is not None:
            d = np.clip(np.round(f.gt_depth * DEPTH_PNG_SCALE), 0, 65535).astype(np.uint16)
            Image.fromarray(d).save(out / "depth" / name)
        rows.append(" ".join(f"{v:.12e}" for v in f.gt_pose[:3].reshape(-1)))
    (out / "poses.txt").write_text("\n".join(rows) + "\n")
    k = window.intrinsics
    manifest = {
        "frames": len(window),
        "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height,
        "baseline": window.frames[0].baseline,
        "depth_png_scale": DEPTH_PNG_SCALE,
        "spec": asdict(spec) if spec is not None else None,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def load_synth(in_dir) -> SequenceWindow:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    k = Intrinsics(manifest["fx"], manifest["fy"], manifest["cx"], manifest["cy"], manifest["width"], manifest["height"])
    poses = np.loadtxt(src / "poses.txt", ndmin=2)
    frames = []
    for idx in range(manifest["frames"]):
        name = f"{idx:06d}.png"
        left = _load_png(src / "image_02" / name)
        right_path = src / "image_03" / name
        right = _load_png(right_path) if right_path.exists() else None
        depth_path = src / "depth" / name
        depth = np.asarray(Image.open(depth_path), dtype=np.float64) / manifest["depth_png_scale"] if depth_path.exists() else None
        T = np.eye(4)
        T[:3] = poses[idx].reshape(3, 4)
        frames.append(Frame(left, k, idx, right=right, gt_pose=T, gt_depth=depth, baseline=manifest["baseline"]))
    return SequenceWindow(frames, src.name, 0)


def _save_png(img: np.ndarray, path: Path) -> None:
    arr = np.clip(np.round(img.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _load_png(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0
