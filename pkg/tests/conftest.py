"""Shared builders for small on-disk KITTI-style trees."""

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

FX, CX, CY = 721.5377, 609.5593, 172.854
NATIVE = (1242, 375)
BASELINE = 0.54


def _write_png(path: Path, size, seed: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    w, h = size
    rng = np.random.default_rng(seed)
    small = rng.uniform(0, 255, size=(h // 25 + 1, w // 25 + 1, 3)).astype(np.uint8)
    Image.fromarray(small).resize((w, h), Image.BILINEAR).save(path)


def _proj(tx: float) -> str:
    P = np.array([[FX, 0, CX, tx], [0, FX, CY, 0], [0, 0, 1, 0]])
    return " ".join(f"{v:.6e}" for v in P.ravel())


def make_kitti_raw(root: Path, n_frames: int = 5, corrupt: int = None, drive: str = "0001") -> Path:
    date = root / "2011_09_26"
    date.mkdir(parents=True, exist_ok=True)
    (date / "calib_cam_to_cam.txt").write_text(
        "calib_time: 09-Jan-2012 13:57:47\n"
        f"S_rect_02: {NATIVE[0]} {NATIVE[1]}\n"
        "R_rect_00: 1 0 0 0 1 0 0 0 1\n"
        f"P_rect_02: {_proj(0.0)}\n"
        f"P_rect_03: {_proj(-FX * BASELINE)}\n"
    )
    # velodyne x forward, y left, z up -> camera x right, y down, z forward
    (date / "calib_velo_to_cam.txt").write_text("R: 0 -1 0 0 0 -1 1 0 0\nT: 0 0 0\n")
    drv = date / f"2011_09_26_drive_{drive}_sync"
    for k in range(n_frames):
        name = f"{k:010d}"
        for cam in ("image_02", "image_03"):
            _write_png(drv / cam / "data" / f"{name}.png", NATIVE, seed=k * 2 + (cam == "image_03"))
        pts = np.array([[10.0, 0.0, 0.0, 1.0], [20.0, -2.0, 0.5, 1.0], [90.0, 0.0, 0.0, 1.0]], dtype=np.float32)
        vdir = drv / "velodyne_points" / "data"
        vdir.mkdir(parents=True, exist_ok=True)
        pts.tofile(vdir / f"{name}.bin")
    if corrupt is not None:
        (drv / "image_02" / "data" / f"{corrupt:010d}.png").write_bytes(b"\x89PNG\r\n\x1a\nbroken")
    return root


def straight_poses(n: int, step: float = 1.0) -> list:
    out = []
    for k in range(n):
        T = np.eye(4)
        T[2, 3] = k * step
        out.append(T)
    return out


def make_kitti_odometry(root: Path, seq: str = "09", n_images: int = 6, n_poses: int = None,
                        size=(128, 64), step: float = 1.0) -> Path:
    sdir = root / "sequences" / seq
    sdir.mkdir(parents=True, exist_ok=True)
    fx = 0.6 * size[0]
    lines = []
    for k, tx in enumerate((0.0, -0.386 * fx, 0.0, -BASELINE * fx)):
        P = np.array([[fx, 0, size[0] / 2, tx], [0, fx, size[1] / 2, 0], [0, 0, 1, 0]])
        lines.append(f"P{k}: " + " ".join(f"{v:.6e}" for v in P.ravel()))
    (sdir / "calib.txt").write_text("\n".join(lines) + "\n")
    for k in range(n_images):
        _write_png(sdir / "image_2" / f"{k:06d}.png", size, seed=100 + k)
        _write_png(sdir / "image_3" / f"{k:06d}.png", size, seed=200 + k)
    poses = straight_poses(n_images if n_poses is None else n_poses, step)
    (root / "poses").mkdir(exist_ok=True)
    (root / "poses" / f"{seq}.txt").write_text(
        "\n".join(" ".join(f"{v:.9e}" for v in T[:3].ravel()) for T in poses) + "\n")
    return root


@pytest.fixture
def kitti_raw(tmp_path):
    return make_kitti_raw(tmp_path / "raw")


@pytest.fixture
def kitti_odom(tmp_path):
    return make_kitti_odometry(tmp_path / "odom")
