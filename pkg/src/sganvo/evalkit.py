"""Depth and odometry metrics.

Depth: the usual Eigen-split columns (Abs Rel, Sq Rel, RMSE, RMSE log, delta
thresholds). Odometry: KITTI segment drift over 100-800 m and snippet ATE
after least-squares scale-and-translation alignment.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import invert_transform, pose_matrix

SEGMENT_LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)


@dataclass
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def as_tuple(self) -> tuple:
        return (self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3)


@dataclass
class OdomMetrics:
    t_rel: Optional[float]  # percent
    r_rel: Optional[float]  # degrees per 100 m
    ate_mean: float
    ate_std: float
    snippet: int = 5


@dataclass
class MetricReport:
    label: str = ""
    depth: Optional[DepthMetrics] = None
    odometry: list = field(default_factory=list)  # OdomMetrics per snippet length
    notes: list = field(default_factory=list)

    def rows(self) -> list:
        row = {"label": self.label}
        if self.depth is not None:
            row.update(asdict(self.depth))
        for om in self.odometry:
            row[f"t_rel"] = om.t_rel
            row[f"r_rel"] = om.r_rel
            row[f"ate{om.snippet}_mean"] = om.ate_mean
            row[f"ate{om.snippet}_std"] = om.ate_std
        row["notes"] = "; ".join(self.notes)
        return [row]

    def to_table(self) -> str:
        lines = [f"== {self.label or 'metrics'} =="]
        if self.depth is not None:
            d = self.depth
            lines.append(f"{'Abs Rel':>8} {'Sq Rel':>8} {'RMSE':>8} {'RMSE log':>8} {'d<1.25':>8} {'d<1.25^2':>8} {'d<1.25^3':>8}")
            lines.append(" ".join(f"{v:8.4f}" for v in d.as_tuple()))
        for om in self.odometry:
            t = "n/a" if om.t_rel is None else f"{om.t_rel:.3f}%"
            r = "n/a" if om.r_rel is None else f"{om.r_rel:.3f} deg/100m"
            lines.append(f"t_rel {t}  r_rel {r}  ATE({om.snippet}) {om.ate_mean:.4f} +/- {om.ate_std:.4f}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def write_reports_csv(reports: Sequence[MetricReport], path) -> Path:
    rows = [row for r in reports for row in r.rows()]
    keys = []
    for row in rows:
        keys.extend(k for k in row if k not in keys)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in keys})
    return path


# ---------------------------------------------------------------------------
# depth
# ---------------------------------------------------------------------------

def depth_metrics(pred, gt, mask=None, cap: float = 80.0, median_scaling: bool = False,
                  min_depth: float = 1e-3) -> DepthMetrics:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"depth_metrics: shape mismatch between {pred.shape} and {gt.shape}")
    valid = (gt > min_depth) & (gt < cap) if cap else gt > min_depth
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    if not valid.any():
        raise ValueError("depth_metrics: empty mask")
    p = pred[valid]
    g = gt[valid]
    if median_scaling:
        p = p * (np.median(g) / np.median(p))
    p = np.clip(p, min_depth, cap) if cap else np.maximum(p, min_depth)
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(p - g) / g)),
        sq_rel=float(np.mean((p - g) ** 2 / g)),
        rmse=float(np.sqrt(np.mean((p - g) ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
    )


def eigen_crop_mask(height: int, width: int) -> np.ndarray:
    """The crop conventionally used on the Eigen test split (fractions of the image size)."""
    mask = np.zeros((height, width), dtype=bool)
    top, bottom = int(0.40810811 * height), int(0.99189189 * height)
    left, right = int(0.03594771 * width), int(0.96405229 * width)
    mask[top:bottom, left:right] = True
    return mask


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def trajectory_from_poses(relative: Sequence) -> list:
    """Accumulate relative poses (vectors, Pose6 or 4x4) into absolute transforms from identity."""
    traj = [np.eye(4)]
    for rel in relative:
        T = np.asarray(rel, dtype=np.float64) if np.ndim(rel) == 2 else pose_matrix(rel)
        traj.append(traj[-1] @ T)
    return traj


def relative_from_trajectory(traj: Sequence) -> list:
    return [invert_transform(a) @ b for a, b in zip(traj[:-1], traj[1:])]


def _distances(traj: Sequence) -> np.ndarray:
    pos = np.array([T[:3, 3] for T in traj])
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _rotation_angle(T: np.ndarray) -> float:
    # atan2 form stays accurate near zero, where arccos of the trace does not
    R = T[:3, :3]
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.arctan2(0.5 * np.linalg.norm(axis), 0.5 * (np.trace(R) - 1.0)))


def kitti_drift(pred_traj: Sequence, gt_traj: Sequence, lengths: Sequence = SEGMENT_LENGTHS,
                step: int = 10) -> tuple:
    """Mean segment drift: (t_rel in %, r_rel in deg / 100 m), or (None, None) under 100 m.

    Segments start every ``step`` frames and end at the first frame whose
    ground-truth path length exceeds the segment length.
    """
    if len(pred_traj) != len(gt_traj):
        raise ValueError(f"kitti_drift: {len(pred_traj)} predicted vs {len(gt_traj)} ground-truth poses")
    pred_traj = [np.asarray(T, dtype=np.float64) for T in pred_traj]
    gt_traj = [np.asarray(T, dtype=np.float64) for T in gt_traj]
    dist = _distances(gt_traj)
    t_errs, r_errs = [], []
    for first in range(0, len(gt_traj), step):
        for length in lengths:
            over = np.nonzero(dist > dist[first] + length)[0]
            if over.size == 0:
                continue
            last = int(over[0])
            delta_gt = invert_transform(gt_traj[first]) @ gt_traj[last]
            delta_pred = invert_transform(pred_traj[first]) @ pred_traj[last]
            if np.array_equal(delta_pred, delta_gt):
                t_errs.append(0.0)
                r_errs.append(0.0)
                continue
            err = invert_transform(delta_pred) @ delta_gt
            t_errs.append(np.linalg.norm(err[:3, 3]) / length)
            r_errs.append(_rotation_angle(err) / length)
    if not t_errs:
        return None, None
    return float(np.mean(t_errs) * 100.0), float(np.degrees(np.mean(r_errs)) * 100.0)


def align_scale_translation(pred: np.ndarray, gt: np.ndarray) -> tuple:
    """Least-squares s, c minimising sum ||s * pred + c - gt||^2 over positions [n, 3]."""
    pm = pred.mean(axis=0)
    gm = gt.mean(axis=0)
    pc = pred - pm
    den = float(np.sum(pc * pc))
    s = float(np.sum(pc * (gt - gm)) / den) if den > 0 else 1.0
    return s, gm - s * pm


def snippet_ate(pred_snip: Sequence, gt_snip: Sequence) -> float:
    """RMSE of aligned positions for one snippet, each expressed relative to its first frame."""
    p0 = invert_transform(pred_snip[0])
    g0 = invert_transform(gt_snip[0])
    p = np.array([(p0 @ T)[:3, 3] for T in pred_snip])
    g = np.array([(g0 @ T)[:3, 3] for T in gt_snip])
    s, c = align_scale_translation(p, g)
    resid = s * p + c - g
    return float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))


def ate_snippets(pred_traj: Sequence, gt_traj: Sequence, snippet: int = 5) -> tuple:
    """Mean and standard deviation of snippet ATE over all overlapping snippets."""
    if len(pred_traj) != len(gt_traj):
        raise ValueError(f"ate_snippets: {len(pred_traj)} predicted vs {len(gt_traj)} ground-truth poses")
    if snippet > len(gt_traj):
        raise ValueError(f"snippet length {snippet} exceeds trajectory length {len(gt_traj)}")
    errs = [
        snippet_ate(pred_traj[s : s + snippet], gt_traj[s : s + snippet])
        for s in range(len(gt_traj) - snippet + 1)
    ]
    return float(np.mean(errs)), float(np.std(errs))


def odometry_report(pred_traj: Sequence, gt_traj: Sequence, snippets: Sequence = (3, 5)) -> list:
    t_rel, r_rel = kitti_drift(pred_traj, gt_traj)
    out = []
    for n in snippets:
        if n > len(gt_traj):
            continue
        mean, std = ate_snippets(pred_traj, gt_traj, n)
        out.append(OdomMetrics(t_rel, r_rel, mean, std, n))
    return out


def trajectory_xz_csv(traj: Sequence, path=None) -> str:
    """Top-down (x, z) coordinates, one row per frame."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["frame", "x", "z"])
    for k, T in enumerate(traj):
        writer.writerow([k, repr(float(T[0, 3])), repr(float(T[2, 3]))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_kitti_poses(path) -> list:
    rows = np.loadtxt(path, ndmin=2)
    if rows.shape[1] != 12:
        raise ValueError(f"{path}: expected 12 values per row, got {rows.shape[1]}")
    out = []
    for row in rows:
        T = np.eye(4)
        T[:3] = row.reshape(3, 4)
        out.append(T)
    return out


def write_kitti_poses(traj: Sequence, path) -> None:
    Path(path).write_text("\n".join(" ".join(f"{v:.12e}" for v in T[:3].reshape(-1)) for T in traj) + "\n")


