"""Glue between configuration, data, training and evaluation.

Shared by the command line and the estimator wrapper.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .config import RunConfig
from .data import Frame, SequenceWindow, generate_synth, load_synth, sliding_windows
from .data.kitti import DataError, load_kitti_odometry, load_kitti_raw
from .data.synth import DEPTH_PNG_SCALE
from .evalkit import (
    MetricReport,
    depth_metrics,
    eigen_crop_mask,
    odometry_report,
    trajectory_from_poses,
    trajectory_xz_csv,
    write_kitti_poses,
    write_reports_csv,
)
from .geometry import pose_matrix
from .network import SGANVONet, StackConfig
from .tensor import load_checkpoint, no_grad
from .trainer import TrainResult, train

log = logging.getLogger(__name__)

GRID = ((1, 2), (1, 3), (2, 3))


@dataclass
class Dataset:
    """Training windows plus the frame sequences used for evaluation."""

    windows: list
    eval_sequences: list  # list of (sequence_id, [Frame])
    source: str = "synth"


@dataclass
class Prediction:
    sequence_id: str
    depths: list  # per frame, metres at working resolution
    relative: list  # 4x4 per consecutive pair
    steps: list = field(default_factory=list)  # (frame index, I_hat [3,H,W], mask [H,W])


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def _require_root(cfg: RunConfig) -> Path:
    root = cfg.run.resolved_data_root()
    if not root:
        raise DataError("no dataset root: set [run] data_root or SGANVO_DATA_ROOT")
    path = Path(root)
    if not path.is_dir():
        raise DataError(f"dataset root not found: {path}")
    return path


def load_dataset(cfg: RunConfig) -> Dataset:
    n = cfg.stack.window
    size = (cfg.stack.width, cfg.stack.height)
    src = cfg.run.source
    if src == "synth":
        if cfg.run.synth_dir:
            path = Path(cfg.run.synth_dir)
            if not (path / "manifest.json").is_file():
                raise DataError(f"synthetic scene not found: {path}")
            scene = load_synth(path)
            if (scene.intrinsics.width, scene.intrinsics.height) != size:
                raise DataError(f"synthetic scene {path} is {scene.intrinsics.width}x{scene.intrinsics.height}, "
                                f"config expects {size[0]}x{size[1]}")
        else:
            scene = generate_synth(cfg.synth)
        frames = scene.frames
        windows = sliding_windows(frames, n, 1, scene.sequence_id)
        if not windows:
            raise DataError(f"synthetic scene has {len(frames)} frames, fewer than the window {n}")
        return Dataset(windows, [(scene.sequence_id, frames)], src)
    root = _require_root(cfg)
    if src == "kitti-raw":
        split = None
        if cfg.run.split:
            split_path = Path(cfg.run.split)
            if not split_path.is_file():
                raise DataError(f"split file not found: {split_path}")
            split = split_path.read_text().splitlines()
        windows = list(load_kitti_raw(root, split, n, size, with_depth=True, cap=cfg.run.depth_cap))
        if not windows:
            raise DataError(f"no readable windows under {root}")
        return Dataset(windows, [], src)
    seqs = load_kitti_odometry(root, cfg.run.sequences, size)
    windows = [w for s in seqs for w in s.windows(n)]
    evals = []
    for s in load_kitti_odometry(root, cfg.run.eval_sequences, size) if cfg.run.eval_sequences else []:
        evals.append((s.sequence_id, [s.frame(i) for i in range(len(s))]))
    return Dataset(windows, evals, src)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def build_net(cfg: RunConfig) -> SGANVONet:
    errors = cfg.stack.validate()
    if errors:
        from .config import ConfigError

        raise ConfigError([f"[stack] {e}" for e in errors])
    return SGANVONet(cfg.stack, seed=cfg.run.seed)


def load_net(checkpoint, expect: Optional[StackConfig] = None) -> SGANVONet:
    arrays, meta = load_checkpoint(checkpoint)
    stack = StackConfig(**meta["stack"])
    if expect is not None and (stack.width, stack.height) != (expect.width, expect.height):
        raise ValueError(f"checkpoint was trained at {stack.width}x{stack.height} "
                         f"but {expect.width}x{expect.height} was requested")
    net = SGANVONet(stack, seed=0)
    net.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("adam_")})
    return net


def predict_frames(net: SGANVONet, frames: Sequence[Frame], sequence_id: str = "",
                   keep_steps: bool = False) -> Prediction:
    """Depth for every frame and a relative pose for every consecutive pair.

    The sequence is cut into windows that overlap by one frame, so every pair
    is predicted exactly once with fresh recurrent states per window.
    """
    n = net.cfg.window
    if len(frames) < 2:
        raise ValueError("need at least two frames to predict motion")
    depths = [None] * len(frames)
    relative = []
    steps = []
    start = 0
    with no_grad():
        while start < len(frames) - 1:
            chunk = list(frames[start : start + n])
            lefts, rights, K = SequenceWindow(chunk, sequence_id, start).as_batch()
            outs = net.unroll_window(lefts, rights, K)
            for k, o in enumerate(outs):
                idx = start + k
                if depths[idx] is None:
                    depths[idx] = 1.0 / o.d_left.data[0, 0]
                if k > 0:
                    relative.append(pose_matrix(o.pose.data[0]))
                    if keep_steps:
                        steps.append((idx, o.I_hat.data[0], o.mask.data[0, 0]))
            start += len(chunk) - 1
    return Prediction(sequence_id, depths, relative, steps)


def _resize_depth(depth: np.ndarray, shape: tuple) -> np.ndarray:
    if depth.shape == shape:
        return depth
    im = Image.fromarray(depth.astype(np.float32), mode="F").resize((shape[1], shape[0]), Image.BILINEAR)
    return np.asarray(im, dtype=np.float64)


def depth_report_arrays(pred_depths: Sequence, gt_depths: Sequence, cfg: RunConfig, kitti: bool) -> tuple:
    """Concatenate valid pixels over frames; returns (pred, gt, mask) flat arrays."""
    preds, gts, masks = [], [], []
    for p, g in zip(pred_depths, gt_depths):
        if g is None:
            continue
        p = _resize_depth(p, g.shape)
        m = (g > 0) & (g < cfg.run.depth_cap)
        if kitti:
            m &= eigen_crop_mask(*g.shape)
        preds.append(p.ravel())
        gts.append(g.ravel())
        masks.append(m.ravel())
    if not preds:
        raise DataError("no ground-truth depth available for evaluation")
    return np.concatenate(preds), np.concatenate(gts), np.concatenate(masks)


def evaluate(net: SGANVONet, dataset: Dataset, cfg: RunConfig, label: str = "",
             out_dir=None) -> MetricReport:
    report = MetricReport(label=label)
    kitti = dataset.source != "synth"
    if kitti:
        report.notes.append("Eigen crop applied to depth evaluation")
    if cfg.run.median_scaling:
        report.notes.append("depth median-scaled per evaluation set")
    # depth
    pred_d, gt_d = [], []
    if dataset.eval_sequences:
        preds = [(sid, predict_frames(net, frames, sid, keep_steps=cfg.run.dump_outputs), frames)
                 for sid, frames in dataset.eval_sequences]
        for _, p, frames in preds:
            pred_d.extend(p.depths)
            gt_d.extend(f.gt_depth for f in frames)
    else:
        preds = []
        with no_grad():
            for w in dataset.windows:
                outs = net.unroll_window(*w.as_batch())
                pred_d.extend(1.0 / o.d_left.data[0, 0] for o in outs)
                gt_d.extend(f.gt_depth for f in w.frames)
    if any(g is not None for g in gt_d):
        p, g, m = depth_report_arrays(pred_d, gt_d, cfg, kitti)
        report.depth = depth_metrics(p, g, m, cap=cfg.run.depth_cap, median_scaling=cfg.run.median_scaling)
    # odometry
    for sid, pred, frames in preds:
        if any(f.gt_pose is None for f in frames):
            continue
        gt_traj = [f.gt_pose for f in frames]
        origin = np.linalg.inv(gt_traj[0])
        gt_traj = [origin @ T for T in gt_traj]
        traj = trajectory_from_poses(pred.relative)
        report.odometry.extend(odometry_report(traj, gt_traj, cfg.run.snippets))
        if report.odometry and report.odometry[0].t_rel is None:
            note = f"{sid}: path shorter than 100 m, drift metrics absent"
            if note not in report.notes:
                report.notes.append(note)
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            trajectory_xz_csv(traj, out / f"trajectory_{sid or 'seq'}_pred.csv")
            trajectory_xz_csv(gt_traj, out / f"trajectory_{sid or 'seq'}_gt.csv")
            if cfg.run.dump_outputs:
                dump_prediction(pred, out / "steps")
    return report


def dump_prediction(pred: Prediction, out_dir) -> Path:
    """Per-step reconstructions and depth as PNGs, plus the predicted trajectory as poses.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for idx, I_hat, mask in pred.steps:
        arr = np.clip(np.round(I_hat.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(out / f"{idx:06d}_reconstruction.png")
        Image.fromarray((mask * 255).astype(np.uint8)).save(out / f"{idx:06d}_mask.png")
    for idx, d in enumerate(pred.depths):
        if d is not None:
            png = np.clip(np.round(d * DEPTH_PNG_SCALE), 0, 65535).astype(np.uint16)
            Image.fromarray(png).save(out / f"{idx:06d}_depth.png")
    write_kitti_poses(trajectory_from_poses(pred.relative), out / "poses.txt")
    return out


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

def run_training(cfg: RunConfig, out_dir=None, resume: Optional[str] = None,
                 dataset: Optional[Dataset] = None, label: str = "") -> tuple:
    """Train, evaluate and write metrics; returns (TrainResult, MetricReport)."""
    out = Path(out_dir or cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = dataset or load_dataset(cfg)
    net = build_net(cfg)
    result: TrainResult = train(net, dataset.windows, cfg.train, cfg.loss, out, resume=resume)
    report = evaluate(net, dataset, cfg, label=label or f"L={cfg.stack.n_layers} N={cfg.stack.window}",
                      out_dir=out)
    write_reports_csv([report], out / "metrics.csv")
    (out / "metrics.txt").write_text(report.to_table() + "\n")
    return result, report


def grid_config(cfg: RunConfig, n_layers: int, window: int) -> RunConfig:
    """The base config with (L, N) swapped in; the image grows when a critic input would fall below 16 px."""
    stack = dataclasses.replace(cfg.stack, n_layers=n_layers, window=window)
    synth = dataclasses.replace(cfg.synth, n_frames=max(cfg.synth.n_frames, window))
    scale = 1
    while min(stack.height, stack.width) * scale // 2**n_layers < 16:
        scale *= 2
    if scale > 1:
        stack.height *= scale
        stack.width *= scale
        synth.height *= scale
        synth.width *= scale
    train_cfg = dataclasses.replace(cfg.train, window=window)
    return dataclasses.replace(cfg, stack=stack, synth=synth, train=train_cfg)


def run_grid(cfg: RunConfig, out_dir=None, cells: Sequence = GRID) -> list:
    """Layers x window ablation: one training run and one MetricReport per cell."""
    out = Path(out_dir or cfg.run.out)
    reports = []
    for L, N in cells:
        cell_cfg = grid_config(cfg, L, N)
        label = f"L={L} N={N} {cell_cfg.stack.width}x{cell_cfg.stack.height}"
        _, report = run_training(cell_cfg, out / f"L{L}_N{N}", label=label)
        reports.append(report)
    write_reports_csv(reports, out / "grid.csv")
    (out / "grid.txt").write_text("\n\n".join(r.to_table() for r in reports) + "\n")
    return reports
