"""Differentiable primitives.

Each backward closure is composed from the primitives in this module, which is
what makes second derivatives (gradient penalties) available for free.
Images use the [batch, channel, height, width] layout.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import Tensor, as_tensor, check_finite, make_node

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


def _t(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return as_tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch between {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------

def sum_to(x: Tensor, shape: tuple) -> Tensor:
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    src_shape = x.shape

    def backward(g, needs):
        return (broadcast_to(g, src_shape),)

    return make_node(data.reshape(shape), (x,), backward, "sum_to")


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src_shape = x.shape

    def backward(g, needs):
        return (sum_to(g, src_shape),)

    return make_node(np.broadcast_to(x.data, shape).copy(), (x,), backward, "broadcast_to")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("add", a, b)
    check_finite("add", a.data, b.data)

    def backward(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None, sum_to(g, b.shape) if needs[1] else None)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("sub", a, b)
    check_finite("sub", a.data, b.data)

    def backward(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None, sum_to(neg(g), b.shape) if needs[1] else None)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("mul", a, b)
    check_finite("mul", a.data, b.data)

    def backward(g, needs):
        return (
            sum_to(mul(g, b), a.shape) if needs[0] else None,
            sum_to(mul(g, a), b.shape) if needs[1] else None,
        )

    return make_node(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("div", a, b)
    check_finite("div", a.data, b.data)

    def backward(g, needs):
        ga = sum_to(div(g, b), a.shape) if needs[0] else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if needs[1] else None
        return ga, gb

    return make_node(a.data / b.data, (a, b), backward, "div")


def neg(x) -> Tensor:
    x = _t(x)

    def backward(g, needs):
        return (neg(g),)

    return make_node(-x.data, (x,), backward, "neg")


def power(x, p: float) -> Tensor:
    x = _t(x)
    p = float(p)
    check_finite("power", x.data)

    def backward(g, needs):
        return (mul(g, mul(p, power(x, p - 1.0))),)

    return make_node(x.data**p, (x,), backward, "power")


def exp(x) -> Tensor:
    x = _t(x)
    check_finite("exp", x.data)
    out = None

    def backward(g, needs):
        return (mul(g, out),)

    out = make_node(np.exp(x.data), (x,), backward, "exp")
    return out


def log(x) -> Tensor:
    x = _t(x)
    check_finite("log", x.data)

    def backward(g, needs):
        return (div(g, x),)

    return make_node(np.log(x.data), (x,), backward, "log")


def sqrt(x) -> Tensor:
    """Square root whose derivative at 0 is taken as 0 rather than inf."""
    x = _t(x)
    check_finite("sqrt", x.data)
    out = None

    def backward(g, needs):
        zero = out.data == 0
        safe = add(out, Tensor(zero.astype(out.dtype)))
        return (mul(div(mul(g, 0.5), safe), Tensor((~zero).astype(out.dtype))),)

    out = make_node(np.sqrt(x.data), (x,), backward, "sqrt")
    return out


def abs(x) -> Tensor:
    x = _t(x)
    check_finite("abs", x.data)
    sign = Tensor(np.sign(x.data))

    def backward(g, needs):
        return (mul(g, sign),)

    return make_node(np.abs(x.data), (x,), backward, "abs")


def sin(x) -> Tensor:
    x = _t(x)
    check_finite("sin", x.data)

    def backward(g, needs):
        return (mul(g, cos(x)),)

    return make_node(np.sin(x.data), (x,), backward, "sin")


def cos(x) -> Tensor:
    x = _t(x)
    check_finite("cos", x.data)

    def backward(g, needs):
        return (neg(mul(g, sin(x))),)

    return make_node(np.cos(x.data), (x,), backward, "cos")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x) -> Tensor:
    x = _t(x)
    check_finite("relu", x.data)
    mask = Tensor((x.data > 0).astype(x.dtype))

    def backward(g, needs):
        return (mul(g, mask),)

    return make_node(x.data * mask.data, (x,), backward, "relu")


def selu(x) -> Tensor:
    x = _t(x)
    check_finite("selu", x.data)
    pos = x.data > 0
    pos_t = Tensor((SELU_SCALE * pos).astype(x.dtype))
    neg_t = Tensor((SELU_SCALE * SELU_ALPHA * ~pos).astype(x.dtype))
    data = np.where(pos, SELU_SCALE * x.data, SELU_SCALE * SELU_ALPHA * np.expm1(np.minimum(x.data, 0.0)))

    def backward(g, needs):
        # d/dx = scale on the positive side, scale*alpha*exp(x) on the negative side
        return (mul(g, add(pos_t, mul(neg_t, exp(minimum_const(x, 0.0))))),)

    return make_node(data, (x,), backward, "selu")


def minimum_const(x, c: float) -> Tensor:
    x = _t(x)
    keep = Tensor((x.data <= c).astype(x.dtype))

    def backward(g, needs):
        return (mul(g, keep),)

    return make_node(np.minimum(x.data, c), (x,), backward, "minimum_const")


def clip(x, lo: float, hi: float) -> Tensor:
    x = _t(x)
    inside = Tensor(((x.data >= lo) & (x.data <= hi)).astype(x.dtype))

    def backward(g, needs):
        return (mul(g, inside),)

    return make_node(np.clip(x.data, lo, hi), (x,), backward, "clip")


def sigmoid(x) -> Tensor:
    x = _t(x)
    check_finite("sigmoid", x.data)
    out = None

    def backward(g, needs):
        return (mul(g, mul(out, sub(1.0, out))),)

    data = np.empty_like(x.data)
    pos = x.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    data[~pos] = ex / (1.0 + ex)
    out = make_node(data, (x,), backward, "sigmoid")
    return out


def tanh(x) -> Tensor:
    x = _t(x)
    check_finite("tanh", x.data)
    out = None

    def backward(g, needs):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = make_node(np.tanh(x.data), (x,), backward, "tanh")
    return out


# ---------------------------------------------------------------------------
# reductions and norms
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _t(x)
    axes = _norm_axes(axis, x.ndim)
    data = x.data.sum(axis=axes, keepdims=True)
    kept_shape = data.shape
    src_shape = x.shape
    if not keepdims:
        data = data.reshape([s for i, s in enumerate(src_shape) if i not in axes])

    def backward(g, needs):
        return (broadcast_to(reshape(g, kept_shape), src_shape),)

    return make_node(np.asarray(data), (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _t(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def l1_norm(x, axis=None) -> Tensor:
    return sum(abs(x), axis=axis)


def l2_norm(x, axis=None) -> Tensor:
    x = _t(x)
    return sqrt(sum(mul(x, x), axis=axis))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _t(x)
    src_shape = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {src_shape} into {tuple(shape)}") from None

    def backward(g, needs):
        return (reshape(g, src_shape),)

    return make_node(data, (x,), backward, "reshape")


def transpose(x, axes=None) -> Tensor:
    x = _t(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g, needs):
        return (transpose(g, inv),)

    return make_node(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward, "transpose")


def swap_last(x) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def getitem(x, key) -> Tensor:
    x = _t(x)
    src_shape = x.shape

    def backward(g, needs):
        return (scatter_slice(g, key, src_shape),)

    return make_node(np.array(x.data[key]), (x,), backward, "slice")


slice_ = getitem


def scatter_slice(g, key, shape) -> Tensor:
    """Place ``g`` at ``key`` inside zeros of ``shape`` (the adjoint of slicing)."""
    g = _t(g)
    data = np.zeros(shape, dtype=g.dtype)
    np.add.at(data, key, g.data)

    def backward(gg, needs):
        return (getitem(gg, key),)

    return make_node(data, (g,), backward, "scatter_slice")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [_t(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        other = [s for i, s in enumerate(t.shape) if i != axis]
        first = [s for i, s in enumerate(tensors[0].shape) if i != axis]
        if t.ndim != ndim or other != first:
            raise ValueError(f"concat: shape mismatch between {tensors[0].shape} and {t.shape} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g, needs):
        out = []
        for i, need in enumerate(needs):
            if not need:
                out.append(None)
                continue
            key = [slice(None)] * ndim
            key[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
            out.append(getitem(g, tuple(key)))
        return tuple(out)

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [_t(t) for t in tensors]
    axis = axis % (tensors[0].ndim + 1)
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def gather_flat(x, index: np.ndarray) -> Tensor:
    """``x.ravel()[index]`` with an integer index array of any shape."""
    x = _t(x)
    index = np.asarray(index)
    src_shape = x.shape

    def backward(g, needs):
        return (scatter_flat(g, index, src_shape),)

    return make_node(x.data.reshape(-1)[index], (x,), backward, "gather")


def scatter_flat(g, index: np.ndarray, shape) -> Tensor:
    g = _t(g)
    size = int(np.prod(shape))
    data = np.bincount(index.reshape(-1), weights=g.data.reshape(-1), minlength=size)
    data = data.astype(g.dtype, copy=False).reshape(shape)

    def backward(gg, needs):
        return (gather_flat(gg, index),)

    return make_node(data, (g,), backward, "scatter")


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shape mismatch between {a.shape} and {b.shape}")
    check_finite("matmul", a.data, b.data)

    def backward(g, needs):
        ga = sum_to(matmul(g, swap_last(b)), a.shape) if needs[0] else None
        gb = sum_to(matmul(swap_last(a), g), b.shape) if needs[1] else None
        return ga, gb

    return make_node(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def _same_pad(size: int, k: int, stride: int) -> tuple:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _resolve_padding(padding, h, w, kh, kw, stride) -> tuple:
    if padding == "same":
        return _same_pad(h, kh, stride) + _same_pad(w, kw, stride)
    if padding == "valid":
        return (0, 0, 0, 0)
    if isinstance(padding, int):
        return (padding,) * 4
    return tuple(padding)


def _col_geometry(shape, kh, kw, stride, pads):
    _, _, h, w = shape
    pt, pb, pl, pr = pads
    oh = (h + pt + pb - kh) // stride + 1
    ow = (w + pl + pr - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"conv: input {tuple(shape)} too small for kernel {kh}x{kw} stride {stride}")
    return oh, ow


def im2col(x, kh: int, kw: int, stride: int, pads: tuple) -> Tensor:
    """Unfold patches into columns: [B,C,H,W] -> [B, C*kh*kw, OH*OW]."""
    x = _t(x)
    b, c, h, w = x.shape
    pt, pb, pl, pr = pads
    oh, ow = _col_geometry(x.shape, kh, kw, stride, pads)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if any(pads) else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow]  # [B,C,OH,OW,kh,kw]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kh * kw, oh * ow)
    src_shape = x.shape

    def backward(g, needs):
        return (col2im(g, src_shape, kh, kw, stride, pads),)

    return make_node(np.ascontiguousarray(cols), (x,), backward, "im2col")


def col2im(cols, shape, kh: int, kw: int, stride: int, pads: tuple) -> Tensor:
    """Fold columns back, summing overlaps; the exact adjoint of ``im2col``."""
    cols = _t(cols)
    b, c, h, w = shape
    pt, pb, pl, pr = pads
    oh, ow = _col_geometry(shape, kh, kw, stride, pads)
    hp, wp = h + pt + pb, w + pl + pr
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    blocks = cols.data.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += blocks[:, :, i, j]
    out = out[:, :, pt : pt + h, pl : pl + w]

    def backward(g, needs):
        return (im2col(g, kh, kw, stride, pads),)

    return make_node(np.ascontiguousarray(out), (cols,), backward, "col2im")


def conv2d(x, weight, bias=None, stride: int = 1, padding="same") -> Tensor:
    """2-D cross-correlation. ``weight`` is [out, in, kh, kw].

    ``padding="same"`` gives ceil(input/stride) outputs; "valid" pads nothing.
    """
    x, weight = _t(x), _t(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d: shape mismatch between input {x.shape} and weight {weight.shape}")
    o, c, kh, kw = weight.shape
    pads = _resolve_padding(padding, x.shape[2], x.shape[3], kh, kw, stride)
    oh, ow = _col_geometry(x.shape, kh, kw, stride, pads)
    cols = im2col(x, kh, kw, stride, pads)
    out = matmul(reshape(weight, (o, c * kh * kw)), cols)
    out = reshape(out, (x.shape[0], o, oh, ow))
    if bias is not None:
        out = add(out, reshape(_t(bias), (1, o, 1, 1)))
    return out


def conv2d_transpose(x, weight, bias=None, stride: int = 1, padding="same", output_size=None) -> Tensor:
    """Adjoint of ``conv2d`` with respect to its input. ``weight`` is [in, out, kh, kw].

    ``output_size`` defaults to (H*stride, W*stride).
    """
    x, weight = _t(x), _t(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"conv2d_transpose: shape mismatch between input {x.shape} and weight {weight.shape}")
    cin, cout, kh, kw = weight.shape
    b, _, h, w = x.shape
    oh, ow = output_size if output_size is not None else (h * stride, w * stride)
    pads = _resolve_padding(padding, oh, ow, kh, kw, stride)
    if _col_geometry((b, cout, oh, ow), kh, kw, stride, pads) != (h, w):
        raise ValueError(f"conv2d_transpose: output size {(oh, ow)} inconsistent with input {x.shape}")
    wmat = swap_last(reshape(weight, (cin, cout * kh * kw)))
    cols = matmul(wmat, reshape(x, (b, cin, h * w)))
    out = col2im(cols, (b, cout, oh, ow), kh, kw, stride, pads)
    if bias is not None:
        out = add(out, reshape(_t(bias), (1, cout, 1, 1)))
    return out


def max_pool2d(x, size: int = 2, stride: int | None = None) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped."""
    x = _t(x)
    stride = stride or size
    if stride != size:
        raise ValueError("max_pool2d: only stride == size is supported")
    b, c, h, w = x.shape
    oh, ow = h // size, w // size
    if oh < 1 or ow < 1:
        raise ValueError(f"max_pool2d: input {x.shape} smaller than window {size}")
    flat_idx = np.arange(x.size).reshape(x.shape)[:, :, : oh * size, : ow * size]
    win = x.data[:, :, : oh * size, : ow * size].reshape(b, c, oh, size, ow, size)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, size * size)
    idx_win = flat_idx.reshape(b, c, oh, size, ow, size).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, -1)
    arg = win.argmax(axis=-1)
    index = np.take_along_axis(idx_win, arg[..., None], axis=-1)[..., 0]
    out = gather_flat(x, index)
    out.op = "max_pool2d"
    return out


def nearest_upsample2x(x) -> Tensor:
    x = _t(x)
    b, c, h, w = x.shape
    y = broadcast_to(reshape(x, (b, c, h, 1, w, 1)), (b, c, h, 2, w, 2))
    return reshape(y, (b, c, 2 * h, 2 * w))


def pixel_shuffle(x, factor: int) -> Tensor:
    """[B, C*r*r, H, W] -> [B, C, H*r, W*r]."""
    x = _t(x)
    b, c, h, w = x.shape
    r = int(factor)
    if c % (r * r):
        raise ValueError(f"pixel_shuffle: channels {c} not divisible by factor^2={r * r}")
    y = reshape(x, (b, c // (r * r), r, r, h, w))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (b, c // (r * r), h * r, w * r))


def pixel_unshuffle(x, factor: int) -> Tensor:
    """[B, C, H*r, W*r] -> [B, C*r*r, H, W]; inverse of ``pixel_shuffle``."""
    x = _t(x)
    b, c, hr, wr = x.shape
    r = int(factor)
    if hr % r or wr % r:
        raise ValueError(f"pixel_unshuffle: spatial size {(hr, wr)} not divisible by {r}")
    h, w = hr // r, wr // r
    y = reshape(x, (b, c, h, r, w, r))
    y = transpose(y, (0, 1, 3, 5, 2, 4))
    return reshape(y, (b, c * r * r, h, w))


def bilinear_sample(img, x, y):
    """Sample ``img`` [B,C,H,W] at continuous pixel coordinates.

    ``x`` (column) and ``y`` (row) are [B,H',W'] Tensors. Neighbours outside the
    image contribute zero. Returns the sampled Tensor [B,C,H',W'] and a boolean
    array [B,1,H',W'] that is True where all four neighbours are in bounds.
    Gradients flow to ``img`` and to both coordinate maps.
    """
    img, x, y = _t(img), _t(x), _t(y)
    b, c, h, w = img.shape
    if x.shape != y.shape or x.ndim != 3 or x.shape[0] != b:
        raise ValueError(f"bilinear_sample: shape mismatch between image {img.shape} and grid {x.shape}/{y.shape}")
    x0 = np.floor(x.data)
    y0 = np.floor(y.data)
    wx1 = reshape(sub(x, Tensor(x0)), (b, 1) + x.shape[1:])
    wy1 = reshape(sub(y, Tensor(y0)), (b, 1) + y.shape[1:])
    wx0 = sub(1.0, wx1)
    wy0 = sub(1.0, wy1)
    with np.errstate(invalid="ignore"):  # NaN coordinates land out of bounds
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
    base = (np.arange(b)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * (h * w)
    out = None
    valid = np.ones((b, 1) + x.shape[1:], dtype=bool)
    for dy, wy in ((0, wy0), (1, wy1)):
        for dx, wx in ((0, wx0), (1, wx1)):
            xi = x0 + dx
            yi = y0 + dy
            inb = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            valid &= inb[:, None]
            flat = np.where(inb, yi * w + xi, 0)[:, None]
            index = base + flat
            weight = mul(mul(wx, wy), Tensor(inb[:, None].astype(img.dtype)))
            term = mul(gather_flat(img, index), weight)
            out = term if out is None else add(out, term)
    return out, valid


__all__ = [
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "sqrt", "abs", "sin", "cos",
    "relu", "selu", "clip", "minimum_const", "sigmoid", "tanh", "sum", "mean", "l1_norm", "l2_norm", "reshape",
    "transpose", "getitem", "slice_", "concat", "stack", "matmul", "conv2d", "conv2d_transpose",
    "max_pool2d", "nearest_upsample2x", "pixel_shuffle", "pixel_unshuffle", "bilinear_sample",
    "im2col", "col2im", "gather_flat", "scatter_flat", "sum_to", "broadcast_to",
]

