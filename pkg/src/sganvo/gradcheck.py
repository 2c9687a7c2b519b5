"""Finite-difference checks for every differentiable primitive and composite.

Each check builds a small function of one or more float64 arrays, projects
its output onto a fixed random direction to get a scalar, and compares the
reverse-mode gradient with central differences. Second-order checks do the
same for a gradient norm, which is what the gradient penalty differentiates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import Intrinsics, pose_to_transform, reproject, warp_image
from .layers import ConvLSTMCell, Discriminator, SubPixelBranch, convlstm_step
from .losses import disparity_consistency, generator_temporal, gradient_penalty
from .tensor import Rng, Tensor, grad, ops

STEP = 1e-5
TOL = 1e-4
GEOMETRY_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    module: str
    error: float
    tol: float
    seconds: float
    message: str = ""

    @property
    def passed(self) -> bool:
        return not self.message and self.error < self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = f" ({self.message})" if self.message else ""
        return f"{status} {self.module}.{self.name}: rel err {self.error:.2e} (tol {self.tol:g}) {self.seconds:.2f}s{detail}"


@dataclass
class Check:
    name: str
    module: str
    build: Callable  # rng -> (fn, inputs, tol_override or None)
    second_order: bool = False
    max_elements: int = 64  # per input; larger inputs are spot-checked at random coordinates


REGISTRY: dict = {}


def register(name: str, module: str, second_order: bool = False, max_elements: int = 64):
    def deco(build):
        REGISTRY[name] = Check(name, module, build, second_order, max_elements)
        return build

    return deco


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(diff / scale)


def _scalarize(out, proj: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(proj)))


def _objective(fn: Callable, proj_box: list, second_order: bool) -> Callable:
    """tensors -> scalar Tensor; second-order objectives are a gradient norm."""

    def first(*ts):
        out = fn(*ts)
        if not proj_box:
            proj_box.append(np.random.default_rng(1234).normal(size=out.shape))
        return _scalarize(out, proj_box[0])

    if not second_order:
        return first

    def second(*ts):
        inner = first(*ts)
        gs = grad(inner, list(ts), create_graph=True)
        total = ops.sum(ops.mul(gs[0], gs[0]))
        for g in gs[1:]:
            total = ops.add(total, ops.sum(ops.mul(g, g)))
        return total

    return second


def numeric_gradient(f: Callable, arrays: list, k: int, coords: np.ndarray, h: float = STEP) -> np.ndarray:
    out = np.zeros(len(coords))
    base = arrays[k]
    for n, c in enumerate(coords):
        vals = []
        for sign in (1.0, -1.0):
            pert = base.copy()
            pert.flat[c] += sign * h
            # graph building stays on: objectives may call grad() internally
            args = [Tensor(pert if m == k else a, requires_grad=True) for m, a in enumerate(arrays)]
            vals.append(float(f(*args).data))
        out[n] = (vals[0] - vals[1]) / (2 * h)
    return out


def run_check(check: Check, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    try:
        fn, arrays, tol = check.build(rng)
        tol = tol or TOL
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        f = _objective(fn, [], check.second_order)
        tensors = [Tensor(a, requires_grad=True) for a in arrays]
        grads = grad(f(*tensors), tensors)
        worst = 0.0
        for k, a in enumerate(arrays):
            coords = np.arange(a.size)
            if a.size > check.max_elements:
                coords = np.sort(rng.choice(a.size, check.max_elements, replace=False))
            num = numeric_gradient(f, arrays, k, coords)
            worst = max(worst, relative_error(grads[k].data.reshape(-1)[coords], num))
        return CheckResult(check.name, check.module, worst, tol, time.perf_counter() - t0)
    except Exception as exc:  # a crash is a failure of that check, not of the suite
        return CheckResult(check.name, check.module, float("inf"), TOL, time.perf_counter() - t0,
                           f"{type(exc).__name__}: {exc}")


def select(scope: str = "all") -> list:
    if scope == "all":
        return list(REGISTRY.values())
    picked = [c for c in REGISTRY.values() if scope in (c.module, c.name)]
    if not picked:
        modules = sorted({c.module for c in REGISTRY.values()})
        raise ValueError(f"unknown gradcheck scope {scope!r}; use 'all', a module {modules} or a check name")
    return picked


def run_all(scope: str = "all", seed: int = 0, verbose: Optional[Callable] = None) -> list:
    results = []
    for check in select(scope):
        res = run_check(check, seed)
        results.append(res)
        if verbose is not None:
            verbose(res.line())
    return results


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------

def _away_from(rng, shape, points=(0.0,), margin=0.1, scale=1.0):
    """Normal samples pushed at least ``margin`` away from each kink in ``points``."""
    x = rng.normal(size=shape) * scale
    for p in points:
        close = np.abs(x - p) < margin
        x[close] = p + np.where(x[close] >= p, margin, -margin) * 2
    return x


def _distinct(rng, shape):
    """Values with pairwise gaps well above the finite-difference step."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.1 + rng.uniform(0, 0.01, n)).reshape(shape) - 0.05 * n


# ---------------------------------------------------------------------------
# elementwise and reductions
# ---------------------------------------------------------------------------

def _unary(name, op, make):
    register(name, "tensor")(lambda rng: (op, [make(rng)], None))


_unary("neg", ops.neg, lambda r: r.normal(size=(3, 4)))
_unary("exp", ops.exp, lambda r: r.normal(size=(3, 4)))
_unary("log", ops.log, lambda r: r.uniform(0.5, 2.0, size=(3, 4)))
_unary("sqrt", ops.sqrt, lambda r: r.uniform(0.5, 2.0, size=(3, 4)))
_unary("abs", ops.abs, lambda r: _away_from(r, (3, 4)))
_unary("sin", ops.sin, lambda r: r.normal(size=(3, 4)))
_unary("cos", ops.cos, lambda r: r.normal(size=(3, 4)))
_unary("relu", ops.relu, lambda r: _away_from(r, (3, 4)))
_unary("selu", ops.selu, lambda r: _away_from(r, (3, 4)))
_unary("sigmoid", ops.sigmoid, lambda r: r.normal(size=(3, 4)) * 3)
_unary("tanh", ops.tanh, lambda r: r.normal(size=(3, 4)))
_unary("power", lambda x: ops.power(x, 2.5), lambda r: r.uniform(0.5, 2.0, size=(3, 4)))
_unary("minimum_const", lambda x: ops.minimum_const(x, 0.3), lambda r: _away_from(r, (3, 4), (0.3,)))
_unary("clip", lambda x: ops.clip(x, -0.5, 0.5), lambda r: _away_from(r, (3, 4), (-0.5, 0.5)))
_unary("sum", lambda x: ops.sum(x, axis=1, keepdims=True), lambda r: r.normal(size=(2, 3, 4)))
_unary("mean", lambda x: ops.mean(x, axis=(0, 2)), lambda r: r.normal(size=(2, 3, 4)))
_unary("l1_norm", lambda x: ops.l1_norm(x), lambda r: _away_from(r, (2, 5)))
_unary("l2_norm", lambda x: ops.l2_norm(x, axis=1), lambda r: r.normal(size=(3, 4)))
_unary("reshape", lambda x: ops.reshape(x, (4, 6)), lambda r: r.normal(size=(2, 3, 4)))
_unary("transpose", lambda x: ops.transpose(x, (2, 0, 1)), lambda r: r.normal(size=(2, 3, 4)))
_unary("getitem", lambda x: x[1:, ::2, 1], lambda r: r.normal(size=(3, 4, 2)))
_unary("broadcast_to", lambda x: ops.broadcast_to(x, (2, 3, 4)), lambda r: r.normal(size=(3, 1)))
_unary("sum_to", lambda x: ops.sum_to(x, (3, 1)), lambda r: r.normal(size=(2, 3, 4)))
_unary("max_pool2d", lambda x: ops.max_pool2d(x, 2), lambda r: _distinct(r, (1, 2, 4, 6)))
_unary("nearest_upsample2x", ops.nearest_upsample2x, lambda r: r.normal(size=(1, 2, 2, 3)))
_unary("pixel_shuffle", lambda x: ops.pixel_shuffle(x, 2), lambda r: r.normal(size=(1, 8, 2, 3)))
_unary("pixel_unshuffle", lambda x: ops.pixel_unshuffle(x, 2), lambda r: r.normal(size=(1, 2, 4, 6)))
_unary("gather_flat", lambda x: ops.gather_flat(x, np.array([[0, 3], [3, 7]])), lambda r: r.normal(size=(2, 4)))
_unary("scatter_flat", lambda g: ops.scatter_flat(g, np.array([0, 2, 2, 5]), (2, 3)), lambda r: r.normal(size=(4,)))
_unary("im2col", lambda x: ops.im2col(x, 3, 3, 2, (1, 1, 0, 1)), lambda r: r.normal(size=(1, 2, 5, 4)))
_unary("col2im", lambda c: ops.col2im(c, (1, 2, 5, 4), 3, 3, 2, (1, 1, 0, 1)), lambda r: r.normal(size=(1, 18, 6)))


def _binary(name, op, make_a, make_b):
    register(name, "tensor")(lambda rng: (op, [make_a(rng), make_b(rng)], None))


_binary("add", ops.add, lambda r: r.normal(size=(3, 4)), lambda r: r.normal(size=(4,)))
_binary("sub", ops.sub, lambda r: r.normal(size=(3, 1)), lambda r: r.normal(size=(3, 4)))
_binary("mul", ops.mul, lambda r: r.normal(size=(3, 4)), lambda r: r.normal(size=(1, 4)))
_binary("div", ops.div, lambda r: r.normal(size=(3, 4)), lambda r: r.uniform(0.5, 2.0, size=(3, 4)))
_binary("matmul", ops.matmul, lambda r: r.normal(size=(2, 3, 4)), lambda r: r.normal(size=(4, 5)))
_binary("concat", lambda a, b: ops.concat([a, b], axis=1), lambda r: r.normal(size=(2, 3)), lambda r: r.normal(size=(2, 2)))
_binary("stack", lambda a, b: ops.stack([a, b], axis=0), lambda r: r.normal(size=(2, 3)), lambda r: r.normal(size=(2, 3)))


@register("conv2d", "tensor")
def _conv2d(rng):
    fn = lambda x, w, b: ops.conv2d(x, w, b, stride=1, padding="same")  # noqa: E731
    return fn, [rng.normal(size=(2, 3, 5, 6)), rng.normal(size=(4, 3, 3, 3)) * 0.3, rng.normal(size=(4,))], None


@register("conv2d_strided", "tensor")
def _conv2d_strided(rng):
    fn = lambda x, w: ops.conv2d(x, w, None, stride=2, padding="same")  # noqa: E731
    return fn, [rng.normal(size=(1, 2, 7, 6)), rng.normal(size=(3, 2, 5, 5)) * 0.3], None


@register("conv2d_transpose", "tensor")
def _conv2d_transpose(rng):
    fn = lambda x, w, b: ops.conv2d_transpose(x, w, b, stride=2)  # noqa: E731
    return fn, [rng.normal(size=(1, 3, 3, 4)), rng.normal(size=(3, 2, 3, 3)) * 0.3, rng.normal(size=(2,))], None


@register("bilinear_sample", "tensor")
def _bilinear(rng):
    img = rng.normal(size=(1, 2, 5, 6))
    # keep fractional parts away from integers so no cell boundary is crossed
    x = rng.integers(0, 5, size=(1, 3, 4)) + rng.uniform(0.2, 0.8, size=(1, 3, 4))
    y = rng.integers(0, 4, size=(1, 3, 4)) + rng.uniform(0.2, 0.8, size=(1, 3, 4))
    return (lambda im, u, v: ops.bilinear_sample(im, u, v)[0]), [img, x, y], None


# second order: these are the ops the critic penalty differentiates twice

def _second(name, op, make):
    register(name, "tensor", second_order=True)(lambda rng: (op, make(rng), None))


_second("mul_double", ops.mul, lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 4))])
_second("selu_double", ops.selu, lambda r: [_away_from(r, (3, 4))])
_second("sigmoid_double", ops.sigmoid, lambda r: [r.normal(size=(3, 4))])
_second("exp_double", ops.exp, lambda r: [r.normal(size=(3, 4)) * 0.5])
# a plain norm has a unit-length gradient, so weight the entries to make the check informative
_L2_WEIGHTS = np.linspace(0.5, 2.0, 12).reshape(3, 4)
_second("l2_norm_double", lambda x: ops.l2_norm(ops.mul(x, Tensor(_L2_WEIGHTS)), axis=1), lambda r: [r.normal(size=(3, 4))])
_second(
    "conv2d_double",
    lambda x, w: ops.selu(ops.conv2d(x, w, None, stride=2)),
    lambda r: [r.normal(size=(1, 2, 6, 6)), r.normal(size=(3, 2, 3, 3)) * 0.3],
)
_second("matmul_double", lambda a, b: ops.tanh(ops.matmul(a, b)), lambda r: [r.normal(size=(3, 4)), r.normal(size=(4, 2))])


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

_K = Intrinsics(12.0, 11.0, 4.5, 3.0, 10, 7)


def _pose(rng):
    return np.concatenate([rng.uniform(-0.1, 0.1, 3), rng.uniform(-0.05, 0.05, 3)])[None]


@register("pose_to_transform", "geometry")
def _pose_to_transform(rng):
    return pose_to_transform, [_pose(rng)], GEOMETRY_TOL


@register("reproject", "geometry")
def _reproject(rng):
    ii, jj = np.meshgrid(np.arange(_K.width, dtype=float), np.arange(_K.height, dtype=float))
    d = rng.uniform(0.3, 0.7, size=(1, _K.height, _K.width))

    def fn(dd, p):
        u, v, _ = reproject(Tensor(ii[None]), Tensor(jj[None]), dd, _K, pose_to_transform(p))
        return ops.stack([u, v], axis=0)

    return fn, [d, _pose(rng)], GEOMETRY_TOL


@register("warp_image", "geometry")
def _warp(rng):
    from .data.synth import SynthSceneSpec, _Texture

    tex = _Texture(SynthSceneSpec(width=_K.width, height=_K.height, texture_wavelength=8.0))
    yy, xx = np.meshgrid(np.linspace(-1, 1, _K.height), np.linspace(-1, 1, _K.width), indexing="ij")
    img = tex(xx, yy)[None]
    ii, jj = np.meshgrid(np.arange(_K.width, dtype=float), np.arange(_K.height, dtype=float))
    # bilinear sampling has kinks at integer coordinates; draw until every
    # sample point sits clear of them so central differences stay on one piece
    for _ in range(200):
        d = 0.5 + rng.uniform(-0.05, 0.05, size=(1, _K.height, _K.width))
        pose = _pose(rng) * 0.3
        u, v, _ = reproject(Tensor(ii[None]), Tensor(jj[None]), Tensor(d), _K, pose_to_transform(pose))
        coords = np.concatenate([u.data.ravel(), v.data.ravel()])
        if np.min(np.abs(coords - np.round(coords))) > 2e-3:
            break

    def fn(dd, p):
        warped, mask = warp_image(Tensor(img), dd, _K, pose_to_transform(p))
        return ops.mul(warped, mask)

    return fn, [d, pose], GEOMETRY_TOL


# ---------------------------------------------------------------------------
# losses and layers
# ---------------------------------------------------------------------------

@register("gradient_penalty_linear", "losses")
def _gp_linear(rng):
    x = rng.normal(size=(3, 2))

    def fn(w):
        return gradient_penalty(lambda z: ops.sum(ops.mul(z, w), axis=1), Tensor(x))

    return fn, [rng.normal(size=(2,))], None


@register("gradient_penalty_critic", "losses", max_elements=24)
def _gp_critic(rng):
    D = Discriminator(Rng(3), 2)
    params = D.parameters()
    x = rng.uniform(0, 1, size=(2, 2, 16, 16))
    # check the penalty w.r.t. the first and last convolution weights
    picked = [params[0], params[-2]]

    def fn(w_first, w_last):
        try:
            D.convs[0].weight, D.final.weight = w_first, w_last
            return gradient_penalty(D, Tensor(x))
        finally:
            D.convs[0].weight, D.final.weight = picked

    return fn, [picked[0].data.copy(), picked[1].data.copy()], None


@register("generator_temporal", "losses")
def _temporal(rng):
    fn = lambda e1, e2: generator_temporal([[e1], [e2]], (0.4, 0.6), (1.0,))  # noqa: E731
    return fn, [_away_from(rng, (1, 2, 3, 3)), _away_from(rng, (1, 2, 3, 3))], None


@register("disparity_consistency", "losses")
def _disparity(rng):
    fn = lambda a, b: disparity_consistency([[a]], [[b]])  # noqa: E731
    a = rng.normal(size=(1, 1, 4, 4))
    return fn, [a, a + _away_from(rng, (1, 1, 4, 4))], None


@register("convlstm_step", "layers", max_elements=32)
def _convlstm(rng):
    cell = ConvLSTMCell(Rng(5), 2 + 4, 3)

    def fn(e, h, c, above):
        h1, c1 = convlstm_step(cell, e, (h, c), above)
        return ops.concat([h1, c1], axis=1)

    return fn, [rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(1, 3, 4, 4)),
                rng.normal(size=(1, 3, 4, 4)), rng.normal(size=(1, 4, 2, 2))], None


@register("subpixel_branch", "layers", max_elements=32)
def _subpixel(rng):
    branch = SubPixelBranch(Rng(6), 3, (4, 4, 4))
    return branch, [_away_from(rng, (1, 3, 3, 3))], None


@register("critic_forward", "layers", max_elements=32)
def _critic(rng):
    D = Discriminator(Rng(7), 1)
    return D, [rng.uniform(0, 1, size=(1, 1, 16, 20))], None


def summarize(results: Sequence[CheckResult]) -> str:
    failed = [r for r in results if not r.passed]
    head = f"{len(results) - len(failed)}/{len(results)} checks passed"
    if failed:
        head += "; FAILED: " + ", ".join(f"{r.module}.{r.name}" for r in failed)
    return head
