"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical abort
(and, for ``gradcheck``, 1 when any check fails).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import gradcheck
from .config import ConfigError, RunConfig, load_config, write_resolved
from .data.kitti import DataError, read_pose_rows
from .data.synth import DEPTH_PNG_SCALE, generate_synth, save_synth
from .evalkit import (
    MetricReport,
    depth_metrics,
    odometry_report,
    write_reports_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

log = logging.getLogger("sganvo")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors, not data errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="run configuration (INI)")
    p.add_argument("--seed", type=int, default=None, help="override [run] seed")
    p.add_argument("--out", default=None, help="override [run] out")
    p.add_argument("--paper-literal-signs", action="store_true",
                   help="use the adversarial signs exactly as printed instead of standard WGAN-GP")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sganvo", description="Stacked adversarial visual odometry")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train, then evaluate and write metrics.csv")
    _add_common(p)
    p.add_argument("--grid", action="store_true", help="run the layers x window ablation grid")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    for name, what in (("eval-depth", "depth"), ("eval-odom", "odometry")):
        p = sub.add_parser(name, help=f"{what} metrics for a checkpoint or precomputed predictions")
        _add_common(p)
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--predictions", default=None,
                       help="depth PNG directory" if what == "depth" else "absolute poses, 12 values per row")
        p.add_argument("--grid", action="store_true", help="evaluate <out>/L*_N*/checkpoint_final.npz cells")

    p = sub.add_parser("gradcheck", help="finite-difference checks of every differentiable op")
    p.add_argument("scope", nargs="?", default="all", help="'all', a module name or a check name")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth-gen", help="render a synthetic scene to disk")
    _add_common(p, config_required=False)
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, out=args.out,
                              paper_literal_signs=getattr(args, "paper_literal_signs", False))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .pipeline import run_grid, run_training

    cfg = _load(args)
    out = Path(cfg.run.out)
    write_resolved(cfg, out)
    if args.grid:
        reports = run_grid(cfg, out)
        for r in reports:
            print(r.to_table())
        print(f"wrote {out / 'grid.csv'}")
        return EXIT_OK
    result, report = run_training(cfg, out, resume=args.resume)
    print(report.to_table())
    if result.state.skipped:
        print(f"note: {result.state.skipped} non-finite updates were skipped")
    print(f"wrote {out / 'metrics.csv'}")
    return EXIT_OK


def _report_out(cfg: RunConfig, reports: Sequence[MetricReport], stem: str) -> None:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    write_reports_csv(reports, out / f"{stem}.csv")
    (out / f"{stem}.txt").write_text("\n\n".join(r.to_table() for r in reports) + "\n")
    for r in reports:
        print(r.to_table())
    print(f"wrote {out / (stem + '.csv')}")


def _grid_checkpoints(cfg: RunConfig) -> list:
    from .pipeline import GRID

    out = []
    for L, N in GRID:
        path = Path(cfg.run.out) / f"L{L}_N{N}" / "checkpoint_final.npz"
        if not path.is_file():
            raise DataError(f"grid checkpoint not found: {path}")
        out.append((f"L={L} N={N}", path))
    return out


def _network_reports(cfg: RunConfig, args, keep: str) -> list:
    from .pipeline import evaluate, grid_config, load_dataset, load_net

    if args.grid:
        cells = _grid_checkpoints(cfg)
    elif args.checkpoint:
        if not Path(args.checkpoint).is_file():
            raise DataError(f"checkpoint not found: {args.checkpoint}")
        cells = [(Path(args.checkpoint).stem, Path(args.checkpoint))]
    else:
        raise ConfigError(["either --checkpoint, --predictions or --grid is required"])
    reports = []
    for label, path in cells:
        net = load_net(path)
        cell_cfg = grid_config(cfg, net.cfg.n_layers, net.cfg.window) if args.grid else cfg
        if (net.cfg.width, net.cfg.height) != (cell_cfg.stack.width, cell_cfg.stack.height):
            raise ConfigError([f"checkpoint {path} expects {net.cfg.width}x{net.cfg.height} images "
                               f"but the config requests {cell_cfg.stack.width}x{cell_cfg.stack.height}"])
        cell_cfg.stack = net.cfg
        report = evaluate(net, load_dataset(cell_cfg), cell_cfg, label=label, out_dir=cfg.run.out)
        if keep == "depth":
            report.odometry = []
        else:
            report.depth = None
        reports.append(report)
    return reports


def _read_depth_dir(path: Path, n: int) -> list:
    from PIL import Image

    out = []
    for idx in range(n):
        f = path / f"{idx:06d}.png"
        if not f.is_file():
            f = path / f"{idx:06d}_depth.png"
        if not f.is_file():
            raise DataError(f"missing predicted depth {path / f'{idx:06d}.png'}")
        out.append(np.asarray(Image.open(f), dtype=np.float64) / DEPTH_PNG_SCALE)
    return out


def cmd_eval_depth(args) -> int:
    from .pipeline import depth_report_arrays, load_dataset

    cfg = _load(args)
    if args.predictions:
        data = load_dataset(cfg)
        frames = data.eval_sequences[0][1] if data.eval_sequences else [f for w in data.windows for f in w.frames]
        pred = _read_depth_dir(Path(args.predictions), len(frames))
        p, g, m = depth_report_arrays(pred, [f.gt_depth for f in frames], cfg, data.source != "synth")
        report = MetricReport(label=Path(args.predictions).name,
                              depth=depth_metrics(p, g, m, cap=cfg.run.depth_cap,
                                                  median_scaling=cfg.run.median_scaling))
        reports = [report]
    else:
        reports = _network_reports(cfg, args, "depth")
    _report_out(cfg, reports, "depth_metrics")
    return EXIT_OK


def cmd_eval_odom(args) -> int:
    from .pipeline import load_dataset

    cfg = _load(args)
    if args.predictions:
        data = load_dataset(cfg)
        if not data.eval_sequences:
            raise DataError("no evaluation sequence with ground-truth poses")
        sid, frames = data.eval_sequences[0]
        pred = read_pose_rows(args.predictions)
        if len(pred) != len(frames):
            raise DataError(f"{args.predictions}: {len(pred)} poses but {len(frames)} frames")
        gt = [f.gt_pose for f in frames]
        reports = [MetricReport(label=sid, odometry=odometry_report(pred, gt, cfg.run.snippets))]
    else:
        reports = _network_reports(cfg, args, "odometry")
    _report_out(cfg, reports, "odometry_metrics")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    try:
        gradcheck.select(args.scope)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    results = gradcheck.run_all(args.scope, seed=args.seed, verbose=print)
    print(gradcheck.summarize(results))
    return EXIT_OK if all(r.passed for r in results) else 1


def cmd_synth_gen(args) -> int:
    cfg = _load(args)
    out = Path(cfg.run.out)
    window = generate_synth(cfg.synth)
    save_synth(window, out, cfg.synth)
    write_resolved(cfg, out)
    print(f"wrote {len(window)} frames to {out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval-depth": cmd_eval_depth,
    "eval-odom": cmd_eval_odom,
    "gradcheck": cmd_gradcheck,
    "synth-gen": cmd_synth_gen,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
