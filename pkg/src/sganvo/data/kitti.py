"""Readers for the public KITTI raw and odometry layouts.

Raw layout (rectified ``*_sync`` drives)::

    root/2011_09_26/calib_cam_to_cam.txt
    root/2011_09_26/calib_velo_to_cam.txt
    root/2011_09_26/2011_09_26_drive_0002_sync/image_02/data/0000000000.png
    root/2011_09_26/2011_09_26_drive_0002_sync/image_03/data/0000000000.png
    root/2011_09_26/2011_09_26_drive_0002_sync/velodyne_points/data/0000000000.bin

Odometry layout::

    root/sequences/09/calib.txt
    root/sequences/09/image_2/000000.png
    root/sequences/09/image_3/000000.png
    root/poses/09.txt
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image

from ..geometry import Intrinsics, StereoCalibration
from .frames import Frame, SequenceWindow

log = logging.getLogger(__name__)

DEPTH_CAP = 80.0


class DataError(Exception):
    """Missing or malformed dataset files."""


def read_calib_file(path) -> dict:
    """KITTI ``key: v1 v2 ...`` calibration file; non-numeric entries are skipped."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing calibration file: {path}")
    out = {}
    for line in path.read_text().splitlines():
        if ":" not in line:
            continue
        key, val = line.split(":", 1)
        try:
            out[key.strip()] = np.array([float(v) for v in val.split()])
        except ValueError:
            continue
    return out


def stereo_from_projections(P2: np.ndarray, P3: np.ndarray, width: int, height: int) -> StereoCalibration:
    """Left-camera intrinsics and baseline from rectified 3x4 projection matrices."""
    P2 = np.asarray(P2, dtype=np.float64).reshape(3, 4)
    P3 = np.asarray(P3, dtype=np.float64).reshape(3, 4)
    fx = P2[0, 0]
    k = Intrinsics(fx, P2[1, 1], P2[0, 2], P2[1, 2], int(width), int(height))
    return StereoCalibration(k, float((P2[0, 3] - P3[0, 3]) / fx))


def load_image(path, size: Optional[tuple] = None) -> np.ndarray:
    """[3, H, W] float64 in [0, 1], optionally resized to ``size`` = (width, height)."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and im.size != tuple(size):
                im = im.resize(tuple(size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise DataError(f"malformed image {path}: {exc}") from exc
    return arr.transpose(2, 0, 1) / 255.0


def _image_size(path) -> tuple:
    try:
        with Image.open(path) as im:
            return im.size
    except (OSError, ValueError) as exc:
        raise DataError(f"malformed image {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# raw
# ---------------------------------------------------------------------------

@dataclass
class RawDriveCalib:
    stereo: StereoCalibration  # at native resolution
    velo_to_image: np.ndarray  # 3x4, velodyne -> rectified left pixels
    velo_to_cam: np.ndarray  # 4x4, velodyne -> rectified left camera

    @classmethod
    def from_dir(cls, date_dir) -> "RawDriveCalib":
        date_dir = Path(date_dir)
        cam = read_calib_file(date_dir / "calib_cam_to_cam.txt")
        velo = read_calib_file(date_dir / "calib_velo_to_cam.txt")
        for key in ("P_rect_02", "P_rect_03", "R_rect_00", "S_rect_02"):
            if key not in cam:
                raise DataError(f"{date_dir / 'calib_cam_to_cam.txt'}: missing {key}")
        for key in ("R", "T"):
            if key not in velo:
                raise DataError(f"{date_dir / 'calib_velo_to_cam.txt'}: missing {key}")
        w, h = cam["S_rect_02"].astype(int)
        stereo = stereo_from_projections(cam["P_rect_02"], cam["P_rect_03"], w, h)
        rect = np.eye(4)
        rect[:3, :3] = cam["R_rect_00"].reshape(3, 3)
        v2c = np.eye(4)
        v2c[:3, :3] = velo["R"].reshape(3, 3)
        v2c[:3, 3] = velo["T"]
        # P_rect_02 already includes the left-camera offset from camera 0.
        P2 = cam["P_rect_02"].reshape(3, 4)
        shift = np.eye(4)
        shift[0, 3] = P2[0, 3] / P2[0, 0]
        return cls(stereo, P2 @ rect @ v2c, shift @ rect @ v2c)


def velodyne_depth(points: np.ndarray, calib: RawDriveCalib, cap: float = DEPTH_CAP) -> np.ndarray:
    """Sparse depth map at native resolution from velodyne points [n, >=3]; 0 marks no return.

    When several points land on one pixel the nearest wins.
    """
    k = calib.stereo.intrinsics
    pts = np.asarray(points, dtype=np.float64)[:, :3]
    pts = pts[pts[:, 0] >= 0]  # in front of the scanner
    homo = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    proj = homo @ calib.velo_to_image.T
    z = (homo @ calib.velo_to_cam.T)[:, 2]
    ok = (proj[:, 2] > 0) & (z > 0) & (z <= cap)
    proj, z = proj[ok], z[ok]
    u = np.round(proj[:, 0] / proj[:, 2]).astype(int)
    v = np.round(proj[:, 1] / proj[:, 2]).astype(int)
    inside = (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    u, v, z = u[inside], v[inside], z[inside]
    depth = np.zeros((k.height, k.width))
    order = np.argsort(-z)  # far first so near points overwrite
    depth[v[order], u[order]] = z[order]
    return depth


def read_velodyne(path) -> np.ndarray:
    data = np.fromfile(path, dtype=np.float32)
    if data.size % 4:
        raise DataError(f"malformed velodyne scan {path}: {data.size} floats is not a multiple of 4")
    return data.reshape(-1, 4)


def parse_split(lines: Sequence[str]) -> list:
    """Eigen-style split lines ``<date>/<drive> <frame> [l|r]`` -> [(drive_path, frame)]."""
    out = []
    for raw in lines:
        parts = raw.split()
        if not parts:
            continue
        if len(parts) < 2:
            raise DataError(f"malformed split line: {raw!r}")
        out.append((parts[0], int(parts[1])))
    return out


def _frame_paths(drive_dir: Path) -> list:
    return sorted((drive_dir / "image_02" / "data").glob("*.png"))


def _load_raw_frame(drive_dir: Path, idx: int, calib: RawDriveCalib, size: tuple, with_depth: bool,
                    cap: float) -> Frame:
    name = f"{idx:010d}"
    left_path = drive_dir / "image_02" / "data" / f"{name}.png"
    if not left_path.is_file():
        raise DataError(f"missing image {left_path}")
    native = _image_size(left_path)
    native_k = calib.stereo.intrinsics
    if native != (native_k.width, native_k.height):
        # rectified image size can differ slightly per drive; calibration follows the image
        native_k = native_k.scaled(*native)
    k = native_k.scaled(*size)
    left = load_image(left_path, size)
    right_path = drive_dir / "image_03" / "data" / f"{name}.png"
    right = load_image(right_path, size) if right_path.is_file() else None
    depth = None
    velo_path = drive_dir / "velodyne_points" / "data" / f"{name}.bin"
    if with_depth and velo_path.is_file():
        depth = velodyne_depth(read_velodyne(velo_path), calib, cap)
    return Frame(left, k, idx, right=right, gt_depth=depth, baseline=calib.stereo.baseline)


def load_kitti_raw(root, split: Optional[Sequence[str]] = None, window: int = 3,
                   size: tuple = (416, 128), stride: int = 1, with_depth: bool = False,
                   cap: float = DEPTH_CAP) -> Iterator[SequenceWindow]:
    """Yield windows of ``window`` consecutive frames.

    With a split, one window starts at each listed frame. Without one, every
    ``*_sync`` drive under ``root`` is cut into sliding windows. Windows that
    hit an unreadable frame are logged and skipped. Ground-truth depth stays
    at native resolution and is only read when ``with_depth`` is set.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    if split is not None:
        starts = parse_split(split)
    else:
        starts = []
        for drive_dir in sorted(root.glob("*/*_sync")):
            count = len(_frame_paths(drive_dir))
            rel = str(drive_dir.relative_to(root))
            starts.extend((rel, s) for s in range(0, count - window + 1, stride))
    calibs = {}
    for rel, start in starts:
        drive_dir = root / rel
        date_dir = drive_dir.parent
        if date_dir not in calibs:
            calibs[date_dir] = RawDriveCalib.from_dir(date_dir)
        calib = calibs[date_dir]
        try:
            frames = [_load_raw_frame(drive_dir, start + t, calib, size, with_depth, cap) for t in range(window)]
        except DataError as exc:
            log.warning("skipping window %s@%d: %s", rel, start, exc)
            continue
        yield SequenceWindow(frames, rel, start)


# ---------------------------------------------------------------------------
# odometry
# ---------------------------------------------------------------------------

def read_pose_rows(path) -> list:
    """4x4 transforms from a file of 12-value rows (row-major 3x4)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing pose file: {path}")
    try:
        rows = np.loadtxt(path, ndmin=2)
    except ValueError as exc:
        raise DataError(f"malformed pose file {path}: {exc}") from exc
    if rows.size and rows.shape[1] != 12:
        raise DataError(f"{path}: expected 12 values per row, got {rows.shape[1]}")
    out = []
    for row in rows:
        T = np.eye(4)
        T[:3] = row.reshape(3, 4)
        out.append(T)
    return out


@dataclass
class OdometrySequence:
    """Image paths plus ground-truth poses; images are read lazily."""

    sequence_id: str
    left_paths: list
    right_paths: list
    calib: StereoCalibration  # at working size
    size: tuple
    poses: Optional[list] = None
    skipped: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.left_paths)

    def frame(self, idx: int) -> Frame:
        left = load_image(self.left_paths[idx], self.size)
        right = load_image(self.right_paths[idx], self.size) if self.right_paths else None
        pose = self.poses[idx] if self.poses is not None else None
        return Frame(left, self.calib.intrinsics, idx, right=right, gt_pose=pose, baseline=self.calib.baseline)

    def windows(self, n: int, stride: int = 1) -> Iterator[SequenceWindow]:
        """Sliding windows; an unreadable frame skips the windows that contain it."""
        for s in range(0, len(self) - n + 1, stride):
            try:
                frames = [self.frame(s + t) for t in range(n)]
            except DataError as exc:
                log.warning("skipping window %s@%d: %s", self.sequence_id, s, exc)
                self.skipped.append(s)
                continue
            yield SequenceWindow(frames, self.sequence_id, s)


def load_kitti_odometry(root, sequences: Sequence, size: tuple = (416, 128),
                        require_poses: bool = True) -> list:
    """One OdometrySequence per id; pose count must equal image count."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    out = []
    for seq in sequences:
        seq_id = f"{int(seq):02d}" if str(seq).isdigit() else str(seq)
        seq_dir = root / "sequences" / seq_id
        lefts = sorted((seq_dir / "image_2").glob("*.png"))
        if not lefts:
            raise DataError(f"no images under {seq_dir / 'image_2'}")
        rights = sorted((seq_dir / "image_3").glob("*.png"))
        if rights and len(rights) != len(lefts):
            raise DataError(f"sequence {seq_id}: {len(lefts)} left images but {len(rights)} right images")
        cal = read_calib_file(seq_dir / "calib.txt")
        if "P2" not in cal or "P3" not in cal:
            raise DataError(f"{seq_dir / 'calib.txt'}: missing P2/P3")
        native = stereo_from_projections(cal["P2"], cal["P3"], *_image_size(lefts[0]))
        pose_path = root / "poses" / f"{seq_id}.txt"
        poses = None
        if pose_path.is_file() or require_poses:
            poses = read_pose_rows(pose_path)
            if len(poses) != len(lefts):
                raise DataError(f"sequence {seq_id}: {len(poses)} poses but {len(lefts)} images")
        out.append(OdometrySequence(seq_id, lefts, rights, native.scaled(*size), tuple(size), poses))
    return out
