"""Adversarial training loop: n_critic critic updates, then one generator update per window batch."""

from __future__ import annotations

import csv
import logging
import math
import queue
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .losses import (
    LossReport,
    LossWeights,
    discriminator_layer_loss,
    discriminator_total,
    disparity_consistency,
    generator_adversarial,
    generator_final,
    generator_temporal,
)
from .network import SGANVONet, StackConfig
from .tensor import Adam, Rng, Tensor, clip_grad_norm, grad, load_checkpoint, save_checkpoint
from .tensor import ops

logger = logging.getLogger(__name__)

LOG_HEADER = ["iter", "lr", "g_adv", "g_temporal", "g_disparity", "g_final", "d_final", "wall_ms"]


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    iterations: Optional[int] = None  # total; None -> epochs * batches per epoch
    base_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    n_critic: int = 5
    seed: int = 0
    window: int = 3
    checkpoint_every: int = 0
    grad_clip: float = 100.0
    augment_color: bool = False
    augment_rotation: bool = False
    augment_lr_swap: bool = False
    paper_literal_signs: bool = False
    prefetch: int = 2

    def validate(self) -> list:
        errors = []
        for name in ("epochs", "n_critic", "checkpoint_every", "prefetch"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("batch_size", "window"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.iterations is not None and self.iterations < 0:
            errors.append(f"iterations must be >= 0, got {self.iterations}")
        if not self.base_lr > 0:
            errors.append(f"base_lr must be > 0, got {self.base_lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            errors.append(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        return errors


def lr_schedule(iteration: int, total: int, base: float = 1e-4) -> float:
    """Halve the rate after every fifth of the run: base * 0.5**floor(5 * iter / total)."""
    if total <= 0:
        return base
    iteration = min(max(iteration, 0), total - 1)
    return base * 0.5 ** math.floor(5 * iteration / total)


class TrainState:
    def __init__(self, net: SGANVONet, cfg: TrainConfig):
        self.net = net
        self.cfg = cfg
        self.g_params = net.generator_parameters()
        self.d_params = net.critic_parameters()
        self.g_opt = Adam(self.g_params, cfg.beta1, cfg.beta2)
        self.d_opt = Adam(self.d_params, cfg.beta1, cfg.beta2)
        self.iteration = 0
        self.rng = Rng(cfg.seed)
        self.best_loss = math.inf
        self.skipped = 0

    def save(self, path, extra_meta: Optional[dict] = None) -> Path:
        arrays = dict(self.net.state_dict())
        arrays.update({f"adam_g/{k}": v for k, v in self.g_opt.state_arrays().items()})
        arrays.update({f"adam_d/{k}": v for k, v in self.d_opt.state_arrays().items()})
        meta = {
            "iteration": self.iteration,
            "adam_g_t": self.g_opt.t,
            "adam_d_t": self.d_opt.t,
            "rng_state": _jsonable(self.rng.get_state()),
            "best_loss": None if math.isinf(self.best_loss) else self.best_loss,
            "stack": asdict(self.net.cfg),
            "train": asdict(self.cfg),
        }
        meta.update(extra_meta or {})
        return save_checkpoint(path, arrays, meta)

    def load(self, path) -> dict:
        arrays, meta = load_checkpoint(path)
        self.net.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("adam_")})
        self.g_opt.load_state_arrays({k[7:]: v for k, v in arrays.items() if k.startswith("adam_g/")}, meta["adam_g_t"])
        self.d_opt.load_state_arrays({k[7:]: v for k, v in arrays.items() if k.startswith("adam_d/")}, meta["adam_d_t"])
        self.iteration = int(meta["iteration"])
        self.rng.set_state(_from_jsonable(meta["rng_state"]))
        self.best_loss = math.inf if meta.get("best_loss") is None else float(meta["best_loss"])
        return meta


def _jsonable(state: dict) -> dict:
    def conv(v):
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, np.ndarray):
            return {"__array__": v.tolist(), "dtype": str(v.dtype)}
        if isinstance(v, np.integer):
            return int(v)
        return v

    return conv(state)


def _from_jsonable(state: dict) -> dict:
    def conv(v):
        if isinstance(v, dict):
            if "__array__" in v:
                return np.array(v["__array__"], dtype=v["dtype"])
            return {k: conv(x) for k, x in v.items()}
        return v

    return conv(state)


def critic_inputs(outputs: list, n_layers: int) -> tuple:
    """Per-layer (real, fake) batches with the time steps stacked along the batch axis."""
    reals = [ops.concat([o.A[l] for o in outputs], axis=0) for l in range(n_layers + 1)]
    fakes = [ops.concat([o.A_hat[l] for o in outputs], axis=0) for l in range(n_layers + 1)]
    return reals, fakes


def generator_losses(outputs: list, critics: Sequence, fakes: Sequence, weights: LossWeights,
                     n_layers: int, paper_literal_signs: bool = False) -> tuple:
    lam_l = weights.layer_weights(n_layers)
    lam_t = weights.step_weights(len(outputs))
    if weights.alpha > 0:
        means = [ops.mean(D(x)) for D, x in zip(critics, fakes)]
        g_adv = generator_adversarial(means, lam_l, paper_literal_signs)
    else:
        g_adv = Tensor(0.0)
    g_temp = generator_temporal([o.E for o in outputs], lam_t, lam_l)
    g_disp = disparity_consistency([[d[0] for d in o.depths] for o in outputs],
                                   [[d[1] for d in o.depths] for o in outputs])
    return g_adv, g_temp, g_disp


def train_step(state: TrainState, batch: tuple, weights: LossWeights, total_iterations: int) -> LossReport:
    """One window batch: ``n_critic`` critic updates on detached samples, then one generator update.

    A non-finite loss or gradient skips the affected update and is logged; the
    iteration counter still advances.
    """
    lefts, rights, K = batch
    cfg = state.cfg
    net = state.net
    L = net.cfg.n_layers
    lr = lr_schedule(state.iteration, total_iterations, cfg.base_lr)
    report = LossReport()

    outputs = net.unroll_window(lefts, rights, K)
    reals, fakes = critic_inputs(outputs, L)
    lam_l = weights.layer_weights(L)

    for _ in range(cfg.n_critic):
        per_layer = [
            discriminator_layer_loss(D, r.detach(), f.detach(), state.rng, weights.lambda_D, cfg.paper_literal_signs)
            for D, r, f in zip(net.critics, reals, fakes)
        ]
        d_total = discriminator_total(per_layer, lam_l)
        report.d_per_layer = [float(x.data) for x in per_layer]
        report.d_final = float(d_total.data)
        if not np.isfinite(report.d_final):
            logger.warning("iter %d: non-finite critic loss, update skipped", state.iteration)
            state.skipped += 1
            continue
        d_grads, _ = clip_grad_norm(grad(d_total, state.d_params), cfg.grad_clip)
        try:
            state.d_opt.step(d_grads, lr)
        except FloatingPointError as exc:
            logger.warning("iter %d: %s; critic update skipped", state.iteration, exc)
            state.skipped += 1

    g_adv, g_temp, g_disp = generator_losses(outputs, net.critics, fakes, weights, L, cfg.paper_literal_signs)
    report.g_adv = float(g_adv.data)
    report.g_temporal = float(g_temp.data)
    report.g_disparity = float(g_disp.data)
    try:
        g_final = generator_final([g_adv, g_temp, g_disp], weights)
    except FloatingPointError as exc:
        logger.warning("iter %d: %s; generator update skipped", state.iteration, exc)
        report.g_final = float("nan")
        state.skipped += 1
        state.iteration += 1
        return report
    report.g_final = float(g_final.data)
    g_grads, _ = clip_grad_norm(grad(g_final, state.g_params), cfg.grad_clip)
    try:
        state.g_opt.step(g_grads, lr)
    except FloatingPointError as exc:
        logger.warning("iter %d: %s; generator update skipped", state.iteration, exc)
        state.skipped += 1
    state.best_loss = min(state.best_loss, report.g_final)
    state.iteration += 1
    return report


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    state: TrainState
    log_path: Path
    checkpoint: Path
    reports: list = field(default_factory=list)


def _epoch_order(n_windows: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.Generator(np.random.Philox(seed * 7919 + epoch)).permutation(n_windows)


def batch_schedule(n_windows: int, batch_size: int, seed: int, start: int, total: int):
    """Yield (iteration, window indices); deterministic in (seed, iteration) so resumes line up."""
    per_epoch = max(1, math.ceil(n_windows / batch_size))
    for it in range(start, total):
        epoch, pos = divmod(it, per_epoch)
        order = _epoch_order(n_windows, seed, epoch)
        yield it, order[pos * batch_size : (pos + 1) * batch_size]


def total_iterations(cfg: TrainConfig, n_windows: int) -> int:
    if cfg.iterations is not None:
        return cfg.iterations
    return cfg.epochs * max(1, math.ceil(n_windows / cfg.batch_size))


def _augment(lefts: list, rights: list, cfg: TrainConfig, rng: np.random.Generator) -> tuple:
    if cfg.augment_color:
        gain = rng.uniform(0.8, 1.2, size=(lefts[0].shape[0], 3, 1, 1))
        lefts = [np.clip(x * gain, 0, 1) for x in lefts]
        rights = [np.clip(x * gain, 0, 1) for x in rights]
    if cfg.augment_lr_swap and rng.uniform() < 0.5:
        # mirrored right view stands in for the left one; poses mirror accordingly
        lefts, rights = [x[..., ::-1].copy() for x in rights], [x[..., ::-1].copy() for x in lefts]
    return lefts, rights


def _prefetch(produce: Callable, items, depth: int):
    """Run ``produce`` on a helper thread, handing results over through a bounded queue."""
    if depth <= 0:
        for item in items:
            yield produce(item)
        return
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()

    def worker():
        try:
            for item in items:
                q.put(produce(item))
        except BaseException as exc:  # surfaced on the consumer side
            q.put(exc)
        q.put(done)

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    while True:
        got = q.get()
        if got is done:
            break
        if isinstance(got, BaseException):
            raise got
        yield got
    thread.join()


def train(net: SGANVONet, windows: Sequence, cfg: TrainConfig, weights: LossWeights, out_dir,
          resume: Optional[str] = None, stop_at: Optional[int] = None,
          callback: Optional[Callable] = None) -> TrainResult:
    """Iterate window batches across epochs, writing a CSV log and checkpoints to ``out_dir``.

    ``windows`` holds SequenceWindow objects or zero-argument loaders returning
    one; a loader that raises is skipped and logged. ``stop_at`` ends the run
    early at that iteration without changing the schedule (used for split runs).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = TrainState(net, cfg)
    if resume:
        state.load(resume)
    total = total_iterations(cfg, len(windows))
    end = total if stop_at is None else min(stop_at, total)
    log_path = out / "train_log.csv"
    if not resume or not log_path.exists():
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOG_HEADER)

    from .data import stack_windows

    def produce(item):
        it, idx = item
        picked = []
        for i in idx:
            w = windows[i]
            try:
                picked.append(w() if callable(w) else w)
            except Exception as exc:  # corrupt sample
                logger.warning("skipping window %d: %s", i, exc)
        if not picked:
            return it, None
        lefts, rights, K = stack_windows(picked)
        aug_rng = np.random.Generator(np.random.Philox(cfg.seed * 104729 + it))
        lefts, rights = _augment(lefts, rights, cfg, aug_rng)
        return it, (lefts, rights, K)

    reports = []
    if state.iteration == 0 and not resume:
        state.save(out / "checkpoint_000000.npz")
    checkpoint = out / "checkpoint_000000.npz"
    schedule = batch_schedule(len(windows), cfg.batch_size, cfg.seed, state.iteration, end)
    with open(log_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        for it, batch in _prefetch(produce, schedule, cfg.prefetch):
            if batch is None:
                state.iteration += 1
                continue
            t0 = time.perf_counter()
            lr = lr_schedule(state.iteration, total, cfg.base_lr)
            report = train_step(state, batch, weights, total)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            writer.writerow([it, repr(lr), repr(report.g_adv), repr(report.g_temporal), repr(report.g_disparity),
                             repr(report.g_final), repr(report.d_final), f"{wall_ms:.1f}"])
            fh.flush()
            reports.append(report)
            if callback is not None:
                callback(state, report)
            if cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                checkpoint = state.save(out / f"checkpoint_{state.iteration:06d}.npz")
    if state.iteration > 0:
        checkpoint = state.save(out / "checkpoint_final.npz")
    return TrainResult(state, log_path, checkpoint, reports)
