"""Generator and critic objectives.

Sign convention (standard WGAN-GP): the critic minimizes
E[D(fake)] - E[D(real)] + lambda_D * GP and the generator minimizes
-sum_l lambda_l E[D(fake_l)]. ``paper_literal_signs=True`` flips both
adversarial terms to the literal printed form for comparison runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Rng, Tensor, grad
from .tensor import ops


@dataclass
class LossWeights:
    alpha: float = 1e-4
    beta: float = 1.0
    gamma: float = 0.1
    lambda_D: float = 10.0
    lambda_l: tuple = (1.0, 0.1, 0.1)
    lambda_t: Optional[tuple] = None  # None -> uniform 1/N

    def __post_init__(self):
        self.lambda_l = tuple(float(v) for v in self.lambda_l)
        if self.lambda_t is not None:
            self.lambda_t = tuple(float(v) for v in self.lambda_t)

    def validate(self) -> list:
        errors = []
        for name in ("alpha", "beta", "gamma", "lambda_D"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be non-negative, got {getattr(self, name)}")
        if any(v < 0 for v in self.lambda_l):
            errors.append(f"lambda_l must be non-negative, got {self.lambda_l}")
        if self.lambda_t is not None and any(v < 0 for v in self.lambda_t):
            errors.append(f"lambda_t must be non-negative, got {self.lambda_t}")
        return errors

    def layer_weights(self, n_layers: int) -> tuple:
        """lambda_l for layers 0..n_layers; the last given value repeats."""
        vals = list(self.lambda_l) or [1.0]
        while len(vals) < n_layers + 1:
            vals.append(vals[-1])
        return tuple(vals[: n_layers + 1])

    def step_weights(self, n_steps: int) -> tuple:
        if self.lambda_t is None:
            return (1.0 / n_steps,) * n_steps
        if len(self.lambda_t) != n_steps:
            raise ValueError(f"lambda_t has {len(self.lambda_t)} entries for a {n_steps}-step window")
        return self.lambda_t


@dataclass
class LossReport:
    g_adv: float = 0.0
    g_temporal: float = 0.0
    g_disparity: float = 0.0
    g_final: float = 0.0
    d_per_layer: list = field(default_factory=list)
    d_final: float = 0.0


def _scalar(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(float(x))


def generator_adversarial(critic_means: Sequence, lambda_l: Sequence, paper_literal_signs: bool = False) -> Tensor:
    """-sum_l lambda_l * E[D(fake_l)] (positive sum under the literal convention)."""
    total = None
    for value, lam in zip(critic_means, lambda_l):
        term = ops.mul(_scalar(value), float(lam))
        total = term if total is None else ops.add(total, term)
    if total is None:
        return Tensor(0.0)
    return total if paper_literal_signs else ops.neg(total)


def generator_temporal(E_all: Sequence[Sequence], lambda_t: Sequence, lambda_l: Sequence) -> Tensor:
    """sum_t lambda_t sum_l (lambda_l / n_l) ||E_t^l||_1, n_l = element count of E_t^l.

    ``E_all[t][l]`` is the error Tensor of layer l at step t.
    """
    total = None
    for lam_t, errors in zip(lambda_t, E_all):
        for lam_l, E in zip(lambda_l, errors):
            term = ops.mul(ops.l1_norm(E), float(lam_t) * float(lam_l) / E.size)
            total = term if total is None else ops.add(total, term)
    return total if total is not None else Tensor(0.0)


def disparity_consistency(d_left: Sequence, d_right: Sequence) -> Tensor:
    """sum over steps (and scales) of mean_ij |d_left - d_right|.

    Each entry may be a single map or a list of per-scale maps; coarser scales
    are upsampled to the finest resolution before differencing.
    """
    total = None
    for dl, dr in zip(d_left, d_right):
        dl = dl if isinstance(dl, (list, tuple)) else [dl]
        dr = dr if isinstance(dr, (list, tuple)) else [dr]
        finest = dl[0].shape[-2:]
        for a, b in zip(dl, dr):
            diff = ops.sub(a, b)
            while diff.shape[-2:] != finest:
                diff = ops.nearest_upsample2x(diff)
            term = ops.mean(ops.abs(diff))
            total = term if total is None else ops.add(total, term)
    return total if total is not None else Tensor(0.0)


def generator_final(parts: Sequence, w: LossWeights) -> Tensor:
    """alpha * adversarial + beta * temporal + gamma * disparity."""
    names = ("adversarial", "temporal", "disparity")
    parts = [_scalar(p) for p in parts]
    for name, p in zip(names, parts):
        if not np.all(np.isfinite(p.data)):
            raise FloatingPointError(f"generator_final: non-finite {name} term ({p.data})")
    adv, temporal, disp = parts
    return ops.add(ops.add(ops.mul(adv, w.alpha), ops.mul(temporal, w.beta)), ops.mul(disp, w.gamma))


def gradient_penalty(D: Callable, x_interp: Tensor) -> Tensor:
    """E[(||grad_x D(x)||_2 - 1)^2] over the batch, differentiable w.r.t. D's parameters."""
    x_interp = x_interp if x_interp.requires_grad else Tensor(x_interp.data, requires_grad=True)
    scores = D(x_interp)
    (gx,) = grad(ops.sum(scores), [x_interp], create_graph=True)
    axes = tuple(range(1, gx.ndim))
    norms = ops.l2_norm(gx, axis=axes) if axes else ops.abs(gx)
    return ops.mean(ops.power(ops.sub(norms, 1.0), 2.0))


def interpolate(x_real, x_fake, eps: np.ndarray) -> Tensor:
    """x' = x * eps + x_hat * (1 - eps), eps broadcast per batch element."""
    xr = x_real.data if isinstance(x_real, Tensor) else np.asarray(x_real)
    xf = x_fake.data if isinstance(x_fake, Tensor) else np.asarray(x_fake)
    e = np.asarray(eps, dtype=xr.dtype).reshape((xr.shape[0],) + (1,) * (xr.ndim - 1))
    return Tensor(xr * e + xf * (1.0 - e), requires_grad=True)


def discriminator_layer_loss(D: Callable, x_real, x_fake, rng: Rng, lambda_D: float = 10.0,
                             paper_literal_signs: bool = False, return_parts: bool = False):
    """E[D(fake)] - E[D(real)] + lambda_D * gradient penalty at random interpolates.

    Inputs are detached; one eps ~ U(0,1) is drawn per batch element.
    """
    xr = Tensor(x_real.data if isinstance(x_real, Tensor) else x_real)
    xf = Tensor(x_fake.data if isinstance(x_fake, Tensor) else x_fake)
    eps = rng.uniform((xr.shape[0],))
    real = ops.mean(D(xr))
    fake = ops.mean(D(xf))
    critic = ops.sub(real, fake) if paper_literal_signs else ops.sub(fake, real)
    penalty = gradient_penalty(D, interpolate(xr, xf, eps))
    loss = ops.add(critic, ops.mul(penalty, float(lambda_D)))
    if return_parts:
        return loss, critic, penalty
    return loss


def discriminator_total(per_layer: Sequence, lambda_l: Sequence) -> Tensor:
    total = None
    for loss, lam in zip(per_layer, lambda_l):
        term = ops.mul(_scalar(loss), float(lam))
        total = term if total is None else ops.add(total, term)
    return total if total is not None else Tensor(0.0)

